//! Activations as dense functions on finite groups.
//!
//! A [`GroupFunction`] is a table from the elements of a [`FiniteGroup`] to
//! channel vectors. Group actions, narrowing, promotion and group
//! convolution all operate on these tables. Path activations use the
//! compact [`PositionSignal`] form with zero-padded symmetric-filter
//! convolution instead of a dense table, since the translation group of a
//! path has no finite table.
//!
//! Element orders are canonical and deterministic: symmetric groups list
//! elements in lexicographic one-line order, dihedral groups as
//! `e, r, …, r^{m−1}, s, rs, …, r^{m−1}s`, cyclic groups as `e, r, …`.
//! All arithmetic is IEEE double precision.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use thiserror::Error;

use crate::perm::{all_permutations, OrderedSubset, PermError, Permutation};

/// Dense symmetric-group tables are refused beyond this degree (7! = 5040 rows).
pub const MAX_DENSE_SYMMETRIC: usize = 7;

/// Cayley tables are materialized only for groups up to this order.
const CAYLEY_CAP: usize = 4096;

#[derive(Debug, Error)]
pub enum GroupFnError {
    #[error("dense S_{0} table refused: degree exceeds cap {MAX_DENSE_SYMMETRIC}")]
    DegreeCap(usize),
    #[error("dihedral group needs m >= 3, got {0}")]
    DihedralTooSmall(usize),
    #[error("element set is not a group: {0}")]
    NotAGroup(String),
    #[error("operation requires a {expected} group, found {found}")]
    KindMismatch { expected: String, found: String },
    #[error("functions live on different groups")]
    GroupMismatch,
    #[error("channel mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error("table length {len} does not match {rows} rows x {channels} channels")]
    ShapeMismatch {
        len: usize,
        rows: usize,
        channels: usize,
    },
    #[error("permutation is not an element of the group")]
    NotInGroup,
    #[error("non-finite entry at row {row}, channel {channel}")]
    NonFinite { row: usize, channel: usize },
    #[error("position {position} out of range for length {len}")]
    PositionRange { position: usize, len: usize },
    #[error("filter channel count {0} does not match signal channels {1}")]
    FilterChannels(usize, usize),
    #[error("asymmetric filter: tap {tap} differs between +j and -j")]
    AsymmetricFilter { tap: usize },
    #[error("invalid edge ({0}, {1})")]
    InvalidEdge(usize, usize),
    #[error(transparent)]
    Perm(#[from] PermError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GroupKind {
    Symmetric(usize),
    Dihedral(usize),
    Cyclic(usize),
    Trivial,
    /// A brute-forced automorphism group that is none of the named families
    /// on its natural domain.
    Generic,
}

impl std::fmt::Display for GroupKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GroupKind::Symmetric(m) => write!(f, "S_{m}"),
            GroupKind::Dihedral(m) => write!(f, "D_{m}"),
            GroupKind::Cyclic(m) => write!(f, "C_{m}"),
            GroupKind::Trivial => write!(f, "trivial"),
            GroupKind::Generic => write!(f, "generic"),
        }
    }
}

/// A finite permutation group realized on its natural domain, with a
/// canonical element order (identity first) and composition lookup.
#[derive(Debug)]
pub struct FiniteGroup {
    kind: GroupKind,
    degree: usize,
    elements: Vec<Permutation>,
    index: HashMap<Permutation, usize>,
    inverse: Vec<usize>,
    cayley: OnceLock<Vec<u32>>,
}

impl PartialEq for FiniteGroup {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.elements == other.elements
    }
}

impl FiniteGroup {
    fn build(kind: GroupKind, elements: Vec<Permutation>) -> Result<Arc<Self>, GroupFnError> {
        let degree = elements.first().map(|e| e.degree()).unwrap_or(0);
        let mut index = HashMap::with_capacity(elements.len());
        for (i, e) in elements.iter().enumerate() {
            if e.degree() != degree {
                return Err(GroupFnError::NotAGroup("mixed degrees".into()));
            }
            if index.insert(e.clone(), i).is_some() {
                return Err(GroupFnError::NotAGroup(format!("duplicate element {e:?}")));
            }
        }
        if elements.is_empty() || !elements[0].is_identity() {
            return Err(GroupFnError::NotAGroup("identity must be element 0".into()));
        }
        let mut inverse = Vec::with_capacity(elements.len());
        for e in &elements {
            let inv = e.inverse();
            let j = *index
                .get(&inv)
                .ok_or_else(|| GroupFnError::NotAGroup(format!("missing inverse of {e:?}")))?;
            inverse.push(j);
        }
        let group = Self {
            kind,
            degree,
            elements,
            index,
            inverse,
            cayley: OnceLock::new(),
        };
        group.check_closure()?;
        Ok(Arc::new(group))
    }

    fn check_closure(&self) -> Result<(), GroupFnError> {
        for a in &self.elements {
            for b in &self.elements {
                let ab = a.compose(b)?;
                if !self.index.contains_key(&ab) {
                    return Err(GroupFnError::NotAGroup(format!(
                        "{a:?} . {b:?} = {ab:?} is not in the set"
                    )));
                }
            }
        }
        Ok(())
    }

    /// `S_m` in lexicographic one-line order; refused above degree 7.
    pub fn symmetric(m: usize) -> Result<Arc<Self>, GroupFnError> {
        if m > MAX_DENSE_SYMMETRIC {
            return Err(GroupFnError::DegreeCap(m));
        }
        Self::build(GroupKind::Symmetric(m), all_permutations(m))
    }

    /// `D_m` acting on `{1..m}` as the symmetries of the standard cycle
    /// `1-2-…-m-1`: rotation `r(p) = p mod m + 1`, reflection fixing 1.
    /// Satisfies `s² = e`, `rᵐ = e`, `srs = r⁻¹`.
    pub fn dihedral(m: usize) -> Result<Arc<Self>, GroupFnError> {
        if m < 3 {
            return Err(GroupFnError::DihedralTooSmall(m));
        }
        let rot = rotation_perm(m);
        let refl = reflection_perm(m);
        let mut elements = Vec::with_capacity(2 * m);
        let mut power = Permutation::identity(m);
        for _ in 0..m {
            elements.push(power.clone());
            power = rot.compose(&power)?;
        }
        for i in 0..m {
            elements.push(elements[i].compose(&refl)?);
        }
        Self::build(GroupKind::Dihedral(m), elements)
    }

    /// The rotation subgroup `C_m` of [`FiniteGroup::dihedral`].
    pub fn cyclic(m: usize) -> Result<Arc<Self>, GroupFnError> {
        if m == 0 {
            return Err(GroupFnError::NotAGroup("cyclic group of size 0".into()));
        }
        let rot = rotation_perm(m);
        let mut elements = Vec::with_capacity(m);
        let mut power = Permutation::identity(m);
        for _ in 0..m {
            elements.push(power.clone());
            power = rot.compose(&power)?;
        }
        Self::build(GroupKind::Cyclic(m), elements)
    }

    /// The trivial group on a single point.
    pub fn trivial() -> Arc<Self> {
        Self::build(GroupKind::Trivial, vec![Permutation::identity(1)])
            .expect("trivial group is always valid")
    }

    /// Builds a group from an explicit element set (e.g. a brute-forced
    /// automorphism group), sorting elements into canonical lexicographic
    /// order and classifying the kind where it matches a named family.
    pub fn from_elements(mut elements: Vec<Permutation>) -> Result<Arc<Self>, GroupFnError> {
        elements.sort();
        elements.dedup();
        let degree = elements.first().map(|e| e.degree()).unwrap_or(0);
        let kind = classify(&elements, degree);
        Self::build(kind, elements)
    }

    pub fn kind(&self) -> &GroupKind {
        &self.kind
    }

    /// Degree of the natural permutation domain.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn elements(&self) -> &[Permutation] {
        &self.elements
    }

    pub fn element(&self, i: usize) -> &Permutation {
        &self.elements[i]
    }

    pub fn index_of(&self, p: &Permutation) -> Option<usize> {
        self.index.get(p).copied()
    }

    pub fn contains(&self, p: &Permutation) -> bool {
        self.index.contains_key(p)
    }

    pub fn inverse_index(&self, i: usize) -> usize {
        self.inverse[i]
    }

    /// Index of `elements[i] ∘ elements[j]`.
    pub fn compose_index(&self, i: usize, j: usize) -> usize {
        let n = self.order();
        if n <= CAYLEY_CAP {
            let table = self.cayley.get_or_init(|| {
                let mut t = vec![0u32; n * n];
                for a in 0..n {
                    for b in 0..n {
                        let ab = self.elements[a]
                            .compose(&self.elements[b])
                            .expect("group elements share a degree");
                        t[a * n + b] = self.index[&ab] as u32;
                    }
                }
                t
            });
            table[i * n + j] as usize
        } else {
            let ab = self.elements[i]
                .compose(&self.elements[j])
                .expect("group elements share a degree");
            self.index[&ab]
        }
    }

    /// Index of `elements[i] ∘ elements[j]⁻¹`, the lookup used by convolution.
    pub fn compose_with_inverse_index(&self, i: usize, j: usize) -> usize {
        self.compose_index(i, self.inverse[j])
    }
}

fn rotation_perm(m: usize) -> Permutation {
    let images: Vec<usize> = (1..=m).map(|p| p % m + 1).collect();
    Permutation::from_images(images).expect("rotation is a bijection")
}

fn reflection_perm(m: usize) -> Permutation {
    let images: Vec<usize> = (1..=m).map(|p| if p == 1 { 1 } else { m - p + 2 }).collect();
    Permutation::from_images(images).expect("reflection is a bijection")
}

fn classify(elements: &[Permutation], degree: usize) -> GroupKind {
    if elements.len() == 1 {
        return GroupKind::Trivial;
    }
    let factorial: usize = (1..=degree).product();
    if elements.len() == factorial {
        return GroupKind::Symmetric(degree);
    }
    if degree >= 3 {
        let canonical = |with_reflection: bool| -> Vec<Permutation> {
            let rot = rotation_perm(degree);
            let mut out = Vec::new();
            let mut power = Permutation::identity(degree);
            for _ in 0..degree {
                out.push(power.clone());
                power = rot.compose(&power).unwrap();
            }
            if with_reflection {
                let refl = reflection_perm(degree);
                let rotations = out.clone();
                out.extend(rotations.iter().map(|r| r.compose(&refl).unwrap()));
            }
            out.sort();
            out
        };
        if elements.len() == 2 * degree && *elements == canonical(true) {
            return GroupKind::Dihedral(degree);
        }
        if elements.len() == degree && *elements == canonical(false) {
            return GroupKind::Cyclic(degree);
        }
    }
    GroupKind::Generic
}

/// A dense table from group elements to channel vectors, row order matching
/// the group's canonical element order.
#[derive(Debug, Clone)]
pub struct GroupFunction {
    group: Arc<FiniteGroup>,
    channels: usize,
    values: Vec<f64>,
}

impl PartialEq for GroupFunction {
    fn eq(&self, other: &Self) -> bool {
        self.group == other.group && self.channels == other.channels && self.values == other.values
    }
}

impl GroupFunction {
    pub fn from_values(
        group: Arc<FiniteGroup>,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self, GroupFnError> {
        if values.len() != group.order() * channels {
            return Err(GroupFnError::ShapeMismatch {
                len: values.len(),
                rows: group.order(),
                channels,
            });
        }
        let f = Self {
            group,
            channels,
            values,
        };
        f.check_finite()?;
        Ok(f)
    }

    pub fn zero(group: Arc<FiniteGroup>, channels: usize) -> Self {
        let values = vec![0.0; group.order() * channels];
        Self {
            group,
            channels,
            values,
        }
    }

    pub fn constant(group: Arc<FiniteGroup>, value: &[f64]) -> Result<Self, GroupFnError> {
        let values: Vec<f64> = std::iter::repeat(value)
            .take(group.order())
            .flatten()
            .copied()
            .collect();
        Self::from_values(group, value.len(), values)
    }

    /// Zero everywhere except `value` at element index `at`.
    pub fn delta(
        group: Arc<FiniteGroup>,
        at: usize,
        value: &[f64],
    ) -> Result<Self, GroupFnError> {
        let mut f = Self::zero(group, value.len());
        f.row_mut(at).copy_from_slice(value);
        Ok(f)
    }

    fn check_finite(&self) -> Result<(), GroupFnError> {
        for (i, v) in self.values.iter().enumerate() {
            if !v.is_finite() {
                return Err(GroupFnError::NonFinite {
                    row: i / self.channels,
                    channel: i % self.channels,
                });
            }
        }
        Ok(())
    }

    pub fn group(&self) -> &Arc<FiniteGroup> {
        &self.group
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.channels..(i + 1) * self.channels]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.channels..(i + 1) * self.channels]
    }

    /// Left-translation action `f^{(σ)}(π) = f(σ⁻¹π)`; `σ` must be a group
    /// element of matching degree.
    pub fn act(&self, sigma: &Permutation) -> Result<Self, GroupFnError> {
        if sigma.degree() != self.group.degree() {
            return Err(GroupFnError::Perm(PermError::DegreeMismatch(
                sigma.degree(),
                self.group.degree(),
            )));
        }
        let s = self.group.index_of(sigma).ok_or(GroupFnError::NotInGroup)?;
        let s_inv = self.group.inverse_index(s);
        let mut out = Self::zero(Arc::clone(&self.group), self.channels);
        for i in 0..self.group.order() {
            let j = self.group.compose_index(s_inv, i);
            out.row_mut(i).copy_from_slice(self.row(j));
        }
        Ok(out)
    }

    /// Narrowing to an ordered subset: `f↓_D(ω)` is the average of `f(τ)`
    /// over all `τ ∈ S_m|_D` with `τ↓_D = ω`, with normalization `(m−k)!`
    /// taken from the degree of the function being narrowed.
    pub fn narrow(&self, domain: &OrderedSubset) -> Result<Self, GroupFnError> {
        let m = match self.group.kind() {
            GroupKind::Symmetric(m) => *m,
            other => {
                return Err(GroupFnError::KindMismatch {
                    expected: "symmetric".into(),
                    found: other.to_string(),
                })
            }
        };
        if domain.ambient_degree() != m {
            return Err(GroupFnError::Perm(PermError::DegreeMismatch(
                domain.ambient_degree(),
                m,
            )));
        }
        let k = domain.size();
        let target = FiniteGroup::symmetric(k)?;
        let mut out = Self::zero(Arc::clone(&target), self.channels);
        for (i, tau) in self.group.elements().iter().enumerate() {
            if !tau.sends_into(domain) {
                continue;
            }
            let omega = tau.restrict(domain)?;
            let j = target.index_of(&omega).expect("restriction lives in S_k");
            let row = self.row(i);
            let acc = out.row_mut(j);
            for c in 0..self.channels {
                acc[c] += row[c];
            }
        }
        let norm = 1.0 / factorial_f64(m - k);
        for v in &mut out.values {
            *v *= norm;
        }
        Ok(out)
    }

    /// Promotion to `S_m` over an ordered subset: `g↑(τ) = g(τ↓_D)` when
    /// `τ ∈ S_m|_D`, zero otherwise.
    pub fn promote(&self, domain: &OrderedSubset, m: usize) -> Result<Self, GroupFnError> {
        let k = match self.group.kind() {
            GroupKind::Symmetric(k) => *k,
            other => {
                return Err(GroupFnError::KindMismatch {
                    expected: "symmetric".into(),
                    found: other.to_string(),
                })
            }
        };
        if domain.size() != k {
            return Err(GroupFnError::Perm(PermError::SubsetTooLarge {
                size: domain.size(),
                ambient: k,
            }));
        }
        if domain.ambient_degree() != m {
            return Err(GroupFnError::Perm(PermError::DegreeMismatch(
                domain.ambient_degree(),
                m,
            )));
        }
        let target = FiniteGroup::symmetric(m)?;
        let mut out = Self::zero(Arc::clone(&target), self.channels);
        for (i, tau) in target.elements().iter().enumerate() {
            if !tau.sends_into(domain) {
                continue;
            }
            let omega = tau.restrict(domain)?;
            let j = self.group.index_of(&omega).expect("restriction lives in S_k");
            out.row_mut(i).copy_from_slice(self.row(j));
        }
        Ok(out)
    }

    /// Group convolution `(f ∗ w)(u) = Σ_v f(u·v⁻¹)·w(v)` with channel
    /// mixing: `w` holds a `d_in × d_out` matrix per element, flattened
    /// row-major, so `out(u)[o] = Σ_v Σ_i f(u·v⁻¹)[i] · w(v)[i·d_out + o]`.
    pub fn convolve(&self, w: &Self) -> Result<Self, GroupFnError> {
        if self.group != w.group {
            return Err(GroupFnError::GroupMismatch);
        }
        let d_in = self.channels;
        if d_in == 0 || w.channels % d_in != 0 {
            return Err(GroupFnError::ChannelMismatch(w.channels, d_in));
        }
        let d_out = w.channels / d_in;
        let n = self.group.order();
        let mut out = Self::zero(Arc::clone(&self.group), d_out);
        for u in 0..n {
            let acc = &mut out.values[u * d_out..(u + 1) * d_out];
            for v in 0..n {
                let fv = self.row(self.group.compose_with_inverse_index(u, v));
                let wv = w.row(v);
                for i in 0..d_in {
                    let fi = fv[i];
                    for (o, a) in acc.iter_mut().enumerate() {
                        *a += fi * wv[i * d_out + o];
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn factorial_f64(n: usize) -> f64 {
    (1..=n).map(|x| x as f64).product()
}

/// Convolution on `D_m`, computing the rotation-indexed and
/// reflection-indexed output entries as two explicit sums:
///
/// ```text
/// (f∗w)(rⁱ)  = Σ_j f(r^{i−j})·w(rʲ)   + Σ_j f(r^{i+j}s)·w(rʲs)
/// (f∗w)(rⁱs) = Σ_j f(r^{i−j})·w(rʲs)  + Σ_j f(r^{i+j}s)·w(rʲ)
/// ```
///
/// Channel mixing follows the same `d_in × d_out` convention as
/// [`GroupFunction::convolve`], which this specialization matches entrywise.
pub fn dihedral_convolve(
    f: &GroupFunction,
    w: &GroupFunction,
) -> Result<GroupFunction, GroupFnError> {
    let m = match (f.group().kind(), w.group().kind()) {
        (GroupKind::Dihedral(a), GroupKind::Dihedral(b)) if a == b => *a,
        _ => {
            return Err(GroupFnError::KindMismatch {
                expected: "matching dihedral".into(),
                found: format!("{} and {}", f.group().kind(), w.group().kind()),
            })
        }
    };
    if f.group() != w.group() {
        return Err(GroupFnError::GroupMismatch);
    }
    let d_in = f.channels();
    if d_in == 0 || w.channels() % d_in != 0 {
        return Err(GroupFnError::ChannelMismatch(w.channels(), d_in));
    }
    let d_out = w.channels() / d_in;
    let group = Arc::clone(f.group());
    let mut out = GroupFunction::zero(Arc::clone(&group), d_out);
    // Row i is rⁱ, row m+i is rⁱs.
    let rot = |i: usize| i % m;
    let refl = |i: usize| m + i % m;
    for i in 0..m {
        let mut rot_sum = vec![0.0; d_out];
        let mut refl_sum = vec![0.0; d_out];
        for j in 0..m {
            let f_rot = f.row(rot(i + m - j));
            let w_rot = w.row(rot(j));
            let f_refl = f.row(refl(i + j));
            let w_refl = w.row(refl(j));
            for c in 0..d_in {
                for o in 0..d_out {
                    rot_sum[o] += f_rot[c] * w_rot[c * d_out + o];
                    refl_sum[o] += f_refl[c] * w_refl[c * d_out + o];
                }
            }
        }
        let acc = out.row_mut(rot(i));
        for o in 0..d_out {
            acc[o] = rot_sum[o] + refl_sum[o];
        }

        let mut rot_sum = vec![0.0; d_out];
        let mut refl_sum = vec![0.0; d_out];
        for j in 0..m {
            let f_rot = f.row(rot(i + m - j));
            let w_refl = w.row(refl(j));
            let f_refl = f.row(refl(i + j));
            let w_rot = w.row(rot(j));
            for c in 0..d_in {
                for o in 0..d_out {
                    rot_sum[o] += f_rot[c] * w_refl[c * d_out + o];
                    refl_sum[o] += f_refl[c] * w_rot[c * d_out + o];
                }
            }
        }
        let acc = out.row_mut(refl(i));
        for o in 0..d_out {
            acc[o] = rot_sum[o] + refl_sum[o];
        }
    }
    Ok(out)
}

/// A chain activation indexed by 1-based position along a path.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionSignal {
    len: usize,
    channels: usize,
    values: Vec<f64>,
}

impl PositionSignal {
    pub fn from_values(
        len: usize,
        channels: usize,
        values: Vec<f64>,
    ) -> Result<Self, GroupFnError> {
        if values.len() != len * channels {
            return Err(GroupFnError::ShapeMismatch {
                len: values.len(),
                rows: len,
                channels,
            });
        }
        for (i, v) in values.iter().enumerate() {
            if !v.is_finite() {
                return Err(GroupFnError::NonFinite {
                    row: i / channels,
                    channel: i % channels,
                });
            }
        }
        Ok(Self {
            len,
            channels,
            values,
        })
    }

    pub fn zero(len: usize, channels: usize) -> Self {
        Self {
            len,
            channels,
            values: vec![0.0; len * channels],
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row at 1-based position `u`.
    pub fn row(&self, u: usize) -> &[f64] {
        &self.values[(u - 1) * self.channels..u * self.channels]
    }

    pub fn row_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.values[(u - 1) * self.channels..u * self.channels]
    }

    pub fn reverse(&self) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for u in (1..=self.len).rev() {
            values.extend_from_slice(self.row(u));
        }
        Self {
            len: self.len,
            channels: self.channels,
            values,
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.values.len(), other.values.len());
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Per-channel filter taps with `w(j) = w(−j)` enforced structurally: only
/// the taps for `j ≥ 0` are stored and the negative side is mirrored at
/// application time.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricFilter {
    channels: usize,
    /// `half_taps[j * channels + c]` is `w(j)[c]` for `j = 0..=h`.
    half_taps: Vec<f64>,
}

impl SymmetricFilter {
    /// `half_taps[j]` is the tap vector for offset `j ≥ 0`.
    pub fn new(half_taps: Vec<Vec<f64>>) -> Result<Self, GroupFnError> {
        let channels = half_taps.first().map(|t| t.len()).unwrap_or(0);
        let mut flat = Vec::with_capacity(half_taps.len() * channels);
        for tap in &half_taps {
            if tap.len() != channels {
                return Err(GroupFnError::ChannelMismatch(tap.len(), channels));
            }
            flat.extend_from_slice(tap);
        }
        Ok(Self {
            channels,
            half_taps: flat,
        })
    }

    /// Single-channel convenience constructor.
    pub fn from_scalars(half_taps: Vec<f64>) -> Self {
        let flat = half_taps;
        Self {
            channels: 1,
            half_taps: flat,
        }
    }

    /// Validates a full tap table indexed `j = −h..h`; rejects any
    /// asymmetry between `+j` and `−j`.
    pub fn from_full_taps(full: Vec<Vec<f64>>) -> Result<Self, GroupFnError> {
        if full.len() % 2 == 0 {
            return Err(GroupFnError::AsymmetricFilter { tap: full.len() / 2 });
        }
        let h = full.len() / 2;
        for j in 1..=h {
            if full[h + j] != full[h - j] {
                return Err(GroupFnError::AsymmetricFilter { tap: j });
            }
        }
        Self::new(full[h..].to_vec())
    }

    pub fn half_width(&self) -> usize {
        if self.channels == 0 {
            0
        } else {
            self.half_taps.len() / self.channels - 1
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Tap vector at offset `j` (mirrored for negative offsets by callers).
    pub fn tap(&self, j: usize) -> &[f64] {
        &self.half_taps[j * self.channels..(j + 1) * self.channels]
    }
}

/// Ordinary zero-padded convolution along the chain:
/// `out(u) = Σ_{j=−h..h} f(u−j)·w(j)` per channel, positions outside
/// `1..=k` reading as zero. Symmetric taps make this reflection-equivariant.
pub fn path_convolve(
    f: &PositionSignal,
    w: &SymmetricFilter,
) -> Result<PositionSignal, GroupFnError> {
    if w.channels() != f.channels() {
        return Err(GroupFnError::FilterChannels(w.channels(), f.channels()));
    }
    let k = f.len();
    let h = w.half_width() as isize;
    let d = f.channels();
    let mut out = PositionSignal::zero(k, d);
    for u in 1..=k as isize {
        let row = out.row_mut(u as usize);
        for j in -h..=h {
            let src = u - j;
            if src < 1 || src > k as isize {
                continue;
            }
            let tap = w.tap(j.unsigned_abs());
            let f_row = f.row(src as usize);
            for c in 0..d {
                row[c] += f_row[c] * tap[c];
            }
        }
    }
    Ok(out)
}

/// Builds the function on `S_n` induced by edge values: choosing an origin
/// pair `(p, q)`, the function at `g` is the value of the edge
/// `{g(p), g(q)}`, or zero when that image is a non-edge. The value is
/// constant on cosets of the origin pair's pointwise stabilizer.
pub fn lift_from_base_space(
    n: usize,
    edge_values: &[((usize, usize), f64)],
    origin: (usize, usize),
) -> Result<GroupFunction, GroupFnError> {
    if n > MAX_DENSE_SYMMETRIC {
        return Err(GroupFnError::DegreeCap(n));
    }
    let (p, q) = origin;
    if p == q || p < 1 || q < 1 || p > n || q > n {
        return Err(GroupFnError::InvalidEdge(p, q));
    }
    let mut table: HashMap<(usize, usize), f64> = HashMap::new();
    for &((u, v), value) in edge_values {
        if u == v || u < 1 || v < 1 || u > n || v > n {
            return Err(GroupFnError::InvalidEdge(u, v));
        }
        let key = (u.min(v), u.max(v));
        table.insert(key, value);
    }
    let group = FiniteGroup::symmetric(n)?;
    let mut out = GroupFunction::zero(Arc::clone(&group), 1);
    for (i, g) in group.elements().iter().enumerate() {
        let a = g.apply(p);
        let b = g.apply(q);
        if let Some(&value) = table.get(&(a.min(b), a.max(b))) {
            out.row_mut(i)[0] = value;
        }
    }
    Ok(out)
}
