//! Reverse-mode automatic differentiation on a flat tape of scalar nodes.
//!
//! A [`TapeValue`] is a handle to one recorded scalar: it carries the
//! forward value and, after [`Tape::backward`], its adjoint — the
//! derivative of the loss with respect to it. The tape is an arena that is
//! cleared and reused between passes; nodes hold their operands' indices so
//! the backward sweep is a single reverse loop.

use thiserror::Error;

use crate::scalar::Algebra;

#[derive(Debug, Error)]
pub enum TapeError {
    #[error("backward on a value recorded on a different tape (tape {value_tape}, this is {tape})")]
    ForeignValue { value_tape: u64, tape: u64 },
    #[error("backward on an unrecorded value (index {index}, tape has {len} nodes)")]
    Unrecorded { index: usize, len: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Input,
    Const,
    Add(u32, u32),
    Sub(u32, u32),
    Mul(u32, u32),
    /// a*b + c
    MulAdd(u32, u32, u32),
    Scale(u32),
    Relu(u32),
}

#[derive(Debug, Clone, Copy)]
struct Node {
    op: Op,
    value: f64,
    /// Constant factor for `Scale`; unused otherwise.
    aux: f64,
}

/// A scalar recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TapeValue {
    tape_id: u64,
    index: u32,
}

impl TapeValue {
    pub fn index(&self) -> usize {
        self.index as usize
    }
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
    adjoints: Vec<f64>,
}

static TAPE_COUNTER: std::sync::atomic::AtomicU64 = std::sync::atomic::AtomicU64::new(1);

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: TAPE_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed),
            nodes: Vec::new(),
            adjoints: Vec::new(),
        }
    }

    /// Clears recorded nodes, keeping capacity. The tape gets a fresh
    /// identity so stale handles are rejected.
    pub fn reset(&mut self) {
        self.id = TAPE_COUNTER.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
        self.nodes.clear();
        self.adjoints.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: f64, aux: f64) -> TapeValue {
        let index = self.nodes.len() as u32;
        self.nodes.push(Node { op, value, aux });
        TapeValue {
            tape_id: self.id,
            index,
        }
    }

    /// Records a differentiable input (e.g. a parameter).
    pub fn input(&mut self, value: f64) -> TapeValue {
        self.push(Op::Input, value, 0.0)
    }

    pub fn value(&self, v: TapeValue) -> f64 {
        self.nodes[v.index()].value
    }

    /// Adjoint of `v` after the latest [`Tape::backward`] call.
    pub fn adjoint(&self, v: TapeValue) -> f64 {
        self.adjoints[v.index()]
    }

    /// Propagates adjoints from `loss` back to every recorded node and
    /// returns the full adjoint table (indexable by [`TapeValue::index`]).
    pub fn backward(&mut self, loss: TapeValue) -> Result<&[f64], TapeError> {
        if loss.tape_id != self.id {
            return Err(TapeError::ForeignValue {
                value_tape: loss.tape_id,
                tape: self.id,
            });
        }
        let n = self.nodes.len();
        if loss.index() >= n {
            return Err(TapeError::Unrecorded {
                index: loss.index(),
                len: n,
            });
        }
        self.adjoints.clear();
        self.adjoints.resize(n, 0.0);
        self.adjoints[loss.index()] = 1.0;
        for i in (0..n).rev() {
            let bar = self.adjoints[i];
            if bar == 0.0 {
                continue;
            }
            let node = self.nodes[i];
            match node.op {
                Op::Input | Op::Const => {}
                Op::Add(a, b) => {
                    self.adjoints[a as usize] += bar;
                    self.adjoints[b as usize] += bar;
                }
                Op::Sub(a, b) => {
                    self.adjoints[a as usize] += bar;
                    self.adjoints[b as usize] -= bar;
                }
                Op::Mul(a, b) => {
                    let va = self.nodes[a as usize].value;
                    let vb = self.nodes[b as usize].value;
                    self.adjoints[a as usize] += bar * vb;
                    self.adjoints[b as usize] += bar * va;
                }
                Op::MulAdd(a, b, c) => {
                    let va = self.nodes[a as usize].value;
                    let vb = self.nodes[b as usize].value;
                    self.adjoints[a as usize] += bar * vb;
                    self.adjoints[b as usize] += bar * va;
                    self.adjoints[c as usize] += bar;
                }
                Op::Scale(a) => {
                    self.adjoints[a as usize] += bar * node.aux;
                }
                Op::Relu(a) => {
                    if self.nodes[a as usize].value > 0.0 {
                        self.adjoints[a as usize] += bar;
                    }
                }
            }
        }
        Ok(&self.adjoints)
    }
}

impl Algebra for Tape {
    type Value = TapeValue;

    fn constant(&mut self, x: f64) -> TapeValue {
        self.push(Op::Const, x, 0.0)
    }

    fn add(&mut self, a: TapeValue, b: TapeValue) -> TapeValue {
        let value = self.value(a) + self.value(b);
        self.push(Op::Add(a.index, b.index), value, 0.0)
    }

    fn sub(&mut self, a: TapeValue, b: TapeValue) -> TapeValue {
        let value = self.value(a) - self.value(b);
        self.push(Op::Sub(a.index, b.index), value, 0.0)
    }

    fn mul(&mut self, a: TapeValue, b: TapeValue) -> TapeValue {
        let value = self.value(a) * self.value(b);
        self.push(Op::Mul(a.index, b.index), value, 0.0)
    }

    fn mul_add(&mut self, a: TapeValue, b: TapeValue, acc: TapeValue) -> TapeValue {
        let value = self.value(a) * self.value(b) + self.value(acc);
        self.push(Op::MulAdd(a.index, b.index, acc.index), value, 0.0)
    }

    fn scale(&mut self, a: TapeValue, k: f64) -> TapeValue {
        let value = self.value(a) * k;
        self.push(Op::Scale(a.index), value, k)
    }

    fn relu(&mut self, a: TapeValue) -> TapeValue {
        let value = self.value(a).max(0.0);
        self.push(Op::Relu(a.index), value, 0.0)
    }

    fn value(&self, a: TapeValue) -> f64 {
        self.nodes[a.index()].value
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gradient_of_identity_is_one() {
        let mut tape = Tape::new();
        let p = tape.input(4.2);
        let grads = tape.backward(p).unwrap();
        assert_eq!(grads[p.index()], 1.0);
    }

    #[test]
    fn gradient_of_square() {
        let mut tape = Tape::new();
        let p = tape.input(3.0);
        let loss = tape.mul(p, p);
        assert_eq!(tape.value(loss), 9.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[p.index()], 6.0);
    }

    #[test]
    fn foreign_and_unrecorded_values_are_rejected() {
        let mut a = Tape::new();
        let mut b = Tape::new();
        let x = a.input(1.0);
        assert!(matches!(
            b.backward(x),
            Err(TapeError::ForeignValue { .. })
        ));
        let y = b.input(1.0);
        b.reset();
        assert!(b.backward(y).is_err());
    }

    #[test]
    fn matches_finite_differences_on_a_compound_expression() {
        let f = |x: &[f64]| -> f64 {
            let a = x[0] * x[1] + x[2];
            let b = (a * x[0] - x[1]).max(0.0);
            let c = b * 0.5 + a * a;
            (c - x[2]).max(0.0) * c
        };
        let record = |tape: &mut Tape, x: &[TapeValue]| -> TapeValue {
            let a = {
                let m = tape.mul(x[0], x[1]);
                tape.add(m, x[2])
            };
            let b = {
                let m = tape.mul(a, x[0]);
                let s = tape.sub(m, x[1]);
                tape.relu(s)
            };
            let c = {
                let h = tape.scale(b, 0.5);
                let aa = tape.mul(a, a);
                tape.add(h, aa)
            };
            let d = tape.sub(c, x[2]);
            let r = tape.relu(d);
            tape.mul(r, c)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mut tape = Tape::new();
            let inputs: Vec<TapeValue> = x.iter().map(|&v| tape.input(v)).collect();
            let loss = record(&mut tape, &inputs);
            assert_eq!(tape.value(loss), f(&x));
            let grads = tape.backward(loss).unwrap().to_vec();
            for i in 0..3 {
                let mut hi = x.clone();
                let mut lo = x.clone();
                let step = 1e-6;
                hi[i] += step;
                lo[i] -= step;
                let fd = (f(&hi) - f(&lo)) / (2.0 * step);
                let ad = grads[inputs[i].index()];
                assert!(
                    (ad - fd).abs() <= 1e-5 * ad.abs().max(fd.abs()).max(1.0),
                    "param {i}: ad={ad} fd={fd}"
                );
            }
        }
    }

    #[test]
    fn reset_reuses_capacity() {
        let mut tape = Tape::new();
        for _ in 0..100 {
            tape.input(1.0);
        }
        let cap_hint = tape.len();
        tape.reset();
        assert!(tape.is_empty());
        assert_eq!(cap_hint, 100);
    }
}
