//! A minimal scalar algebra abstraction so the network forward pass is
//! written once and instantiated both with plain `f64` (inference,
//! verification) and with tape values (training).
//!
//! `mul_add` is specified as multiply-then-add with two roundings, not a
//! fused operation, so both instantiations produce bit-identical values.

pub trait Algebra {
    type Value: Copy;

    fn constant(&mut self, x: f64) -> Self::Value;
    fn add(&mut self, a: Self::Value, b: Self::Value) -> Self::Value;
    fn sub(&mut self, a: Self::Value, b: Self::Value) -> Self::Value;
    fn mul(&mut self, a: Self::Value, b: Self::Value) -> Self::Value;
    /// `a * b + acc`, rounded twice.
    fn mul_add(&mut self, a: Self::Value, b: Self::Value, acc: Self::Value) -> Self::Value;
    fn scale(&mut self, a: Self::Value, k: f64) -> Self::Value;
    fn relu(&mut self, a: Self::Value) -> Self::Value;
    fn value(&self, a: Self::Value) -> f64;

    fn zero(&mut self) -> Self::Value {
        self.constant(0.0)
    }

    /// Dot product accumulated in ascending index order.
    fn dot(&mut self, a: &[Self::Value], b: &[Self::Value]) -> Self::Value {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = self.zero();
        for (&x, &y) in a.iter().zip(b) {
            acc = self.mul_add(x, y, acc);
        }
        acc
    }

    /// `w` is a row-major `rows × cols` matrix; returns `w · x`.
    fn matvec(&mut self, w: &[Self::Value], rows: usize, cols: usize, x: &[Self::Value]) -> Vec<Self::Value> {
        debug_assert_eq!(w.len(), rows * cols);
        debug_assert_eq!(x.len(), cols);
        (0..rows).map(|r| self.dot(&w[r * cols..(r + 1) * cols], x)).collect()
    }

    fn add_assign(&mut self, acc: &mut [Self::Value], rhs: &[Self::Value]) {
        debug_assert_eq!(acc.len(), rhs.len());
        for (a, &b) in acc.iter_mut().zip(rhs) {
            *a = self.add(*a, b);
        }
    }
}

/// Plain IEEE double arithmetic.
#[derive(Debug, Default, Clone, Copy)]
pub struct RealAlgebra;

impl Algebra for RealAlgebra {
    type Value = f64;

    #[inline]
    fn constant(&mut self, x: f64) -> f64 {
        x
    }

    #[inline]
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }

    #[inline]
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }

    #[inline]
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }

    #[inline]
    fn mul_add(&mut self, a: f64, b: f64, acc: f64) -> f64 {
        a * b + acc
    }

    #[inline]
    fn scale(&mut self, a: f64, k: f64) -> f64 {
        a * k
    }

    #[inline]
    fn relu(&mut self, a: f64) -> f64 {
        a.max(0.0)
    }

    #[inline]
    fn value(&self, a: f64) -> f64 {
        a
    }
}
