//! The Autobahn neuron: narrow incoming activations to intersections,
//! promote into the target reference domain, aggregate with a symmetric
//! polynomial, then apply an automorphism-group-equivariant convolution and
//! a pointwise nonlinearity.
//!
//! Cycle activations are dense functions on `D_m`; path activations are
//! position signals convolved with symmetric filters; star activations are
//! single invariant vectors. Promotion into a cycle places half the value
//! on each of the two dihedral elements sending the origin to the target
//! position, and per-vertex narrowing sums that stabilizer coset back up,
//! so lifting a value to a domain and narrowing it back is the identity.

use std::sync::Arc;

use thiserror::Error;

use crate::graph::{GraphError, SubgraphInstance, SubgraphKind};
use crate::groupfn::{
    path_convolve, FiniteGroup, GroupFnError, GroupFunction, PositionSignal, SymmetricFilter,
};
use crate::perm::Permutation;
use crate::scalar::{Algebra, RealAlgebra};

#[derive(Debug, Error)]
pub enum LayerError {
    #[error("vertex {vertex} is not in the neuron's reference domain")]
    VertexNotInDomain { vertex: usize },
    #[error("position {position} out of range for size {size}")]
    PositionRange { position: usize, size: usize },
    #[error("activation shape does not match its owner: {0}")]
    ShapeMismatch(String),
    #[error("channel mismatch: {0} vs {1}")]
    ChannelMismatch(usize, usize),
    #[error("symmetric polynomial order must be at least 1")]
    PolyOrder,
    #[error("no inputs and no target shape to infer")]
    EmptyInputs,
    #[error("filter does not fit {kind}: {reason}")]
    FilterMismatch { kind: String, reason: String },
    #[error(transparent)]
    Group(#[from] GroupFnError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// The symmetry a neuron's linear map must respect.
#[derive(Debug, Clone)]
pub enum DomainSymmetry {
    /// Cycles convolve over their dihedral automorphism group.
    Dihedral(Arc<FiniteGroup>),
    /// Paths use translation-window convolution with symmetric filters;
    /// the chain's reflection symmetry is subsumed by the filter symmetry.
    PathTranslation,
    /// Stars aggregate into a single invariant vector.
    Trivial,
}

/// One Autobahn neuron: a subgraph instance, the symmetry group of its
/// kind, and the alignment permutation sending the canonical position to
/// the current labeling (the traversal itself is canonical here, so freshly
/// built specs carry the identity alignment).
#[derive(Debug, Clone)]
pub struct NeuronSpec {
    pub instance: SubgraphInstance,
    pub symmetry: DomainSymmetry,
    pub alignment: Permutation,
}

impl NeuronSpec {
    pub fn for_instance(instance: SubgraphInstance) -> Result<Self, LayerError> {
        let (symmetry, degree) = match instance.kind() {
            SubgraphKind::Cycle(m) => (DomainSymmetry::Dihedral(FiniteGroup::dihedral(m)?), m),
            SubgraphKind::Path(k) => (DomainSymmetry::PathTranslation, k),
            SubgraphKind::Star { .. } => (DomainSymmetry::Trivial, 1),
        };
        Ok(Self {
            instance,
            symmetry,
            alignment: Permutation::identity(degree),
        })
    }

    pub fn with_alignment(mut self, alignment: Permutation) -> Self {
        self.alignment = alignment;
        self
    }

    /// Deterministic ordering key used to fix summation orders.
    pub fn sort_key(&self) -> (SubgraphKind, Vec<usize>) {
        (self.instance.kind(), self.instance.traversal().to_vec())
    }
}

/// A neuron's activation, in the compact representation of its kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Activation {
    Cycle(GroupFunction),
    Path(PositionSignal),
    Invariant(Vec<f64>),
}

impl Activation {
    pub fn channels(&self) -> usize {
        match self {
            Activation::Cycle(f) => f.channels(),
            Activation::Path(s) => s.channels(),
            Activation::Invariant(v) => v.len(),
        }
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        match (self, other) {
            (Activation::Cycle(a), Activation::Cycle(b)) => a.max_abs_diff(b),
            (Activation::Path(a), Activation::Path(b)) => a.max_abs_diff(b),
            (Activation::Invariant(a), Activation::Invariant(b)) => a
                .iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max),
            _ => f64::INFINITY,
        }
    }
}

/// Copies a value into a cycle's dihedral table: half the value at `r^z`
/// and half at `r^z s`, zero elsewhere. `z` is the 0-based cycle position.
pub fn lift_to_cycle(value: &[f64], z: usize, m: usize) -> Result<GroupFunction, LayerError> {
    if z >= m {
        return Err(LayerError::PositionRange {
            position: z,
            size: m,
        });
    }
    let group = FiniteGroup::dihedral(m)?;
    let mut f = GroupFunction::zero(group, value.len());
    for (c, &v) in value.iter().enumerate() {
        f.row_mut(z)[c] = 0.5 * v;
        f.row_mut(m + z)[c] = 0.5 * v;
    }
    Ok(f)
}

/// Copies a value into a path signal at 1-based position `u`.
pub fn lift_to_path(value: &[f64], u: usize, k: usize) -> Result<PositionSignal, LayerError> {
    if u < 1 || u > k {
        return Err(LayerError::PositionRange {
            position: u,
            size: k,
        });
    }
    let mut s = PositionSignal::zero(k, value.len());
    s.row_mut(u).copy_from_slice(value);
    Ok(s)
}

/// Narrows an activation to a single vertex of its reference domain.
///
/// Cycles sum the two rows `{r^z, r^z s}` that place the vertex at the
/// origin (inverting [`lift_to_cycle`]'s half-and-half copy); paths read
/// the row at the vertex's position; stars return the stored vector.
pub fn narrow_to_vertex(
    spec: &NeuronSpec,
    activation: &Activation,
    vertex: usize,
) -> Result<Vec<f64>, LayerError> {
    let position = spec
        .instance
        .position_of(vertex)
        .ok_or(LayerError::VertexNotInDomain { vertex })?;
    match (spec.instance.kind(), activation) {
        (SubgraphKind::Cycle(m), Activation::Cycle(f)) => {
            if f.group().order() != 2 * m {
                return Err(LayerError::ShapeMismatch(format!(
                    "cycle of {m} vertices with a table of {} rows",
                    f.group().order()
                )));
            }
            let z = position - 1;
            let d = f.channels();
            let mut out = vec![0.0; d];
            for c in 0..d {
                out[c] = f.row(z)[c] + f.row(m + z)[c];
            }
            Ok(out)
        }
        (SubgraphKind::Path(k), Activation::Path(s)) => {
            if s.len() != k {
                return Err(LayerError::ShapeMismatch(format!(
                    "path of {k} vertices with a signal of length {}",
                    s.len()
                )));
            }
            Ok(s.row(position).to_vec())
        }
        (SubgraphKind::Star { .. }, Activation::Invariant(v)) => Ok(v.clone()),
        (kind, _) => Err(LayerError::ShapeMismatch(format!(
            "activation variant does not match {kind}"
        ))),
    }
}

/// The q'th-order symmetric polynomial `S^q = Σ_{i₁≤…≤i_q} ∏ f_i`,
/// evaluated pointwise. Inputs are sorted by neuron key first, so the
/// result is exactly invariant to input order.
pub fn symmetric_poly(
    q: usize,
    inputs: &[(&NeuronSpec, &Activation)],
) -> Result<Activation, LayerError> {
    if q == 0 {
        return Err(LayerError::PolyOrder);
    }
    let mut ordered: Vec<&(&NeuronSpec, &Activation)> = inputs.iter().collect();
    ordered.sort_by_key(|(spec, _)| spec.sort_key());
    let tables: Vec<Vec<f64>> = ordered
        .iter()
        .map(|(_, a)| match a {
            Activation::Cycle(f) => f.values().to_vec(),
            Activation::Path(s) => s.values().to_vec(),
            Activation::Invariant(v) => v.clone(),
        })
        .collect();
    let first = tables.first().ok_or(LayerError::EmptyInputs)?;
    let len = first.len();
    if tables.iter().any(|t| t.len() != len) {
        return Err(LayerError::ShapeMismatch(
            "symmetric polynomial inputs must share a shape".into(),
        ));
    }
    // Multisets i₁ ≤ … ≤ i_q in lexicographic order.
    let mut sum = vec![0.0; len];
    let mut combo = vec![0usize; q];
    'combos: loop {
        for (entry, acc) in sum.iter_mut().enumerate() {
            *acc += combo.iter().map(|&i| tables[i][entry]).product::<f64>();
        }
        let mut pos = q;
        while pos > 0 {
            pos -= 1;
            if combo[pos] + 1 < tables.len() {
                let next = combo[pos] + 1;
                for slot in combo.iter_mut().skip(pos) {
                    *slot = next;
                }
                continue 'combos;
            }
        }
        break;
    }
    rebuild_like(&ordered[0].1, sum)
}

fn rebuild_like(template: &Activation, values: Vec<f64>) -> Result<Activation, LayerError> {
    Ok(match template {
        Activation::Cycle(f) => Activation::Cycle(GroupFunction::from_values(
            Arc::clone(f.group()),
            f.channels(),
            values,
        )?),
        Activation::Path(s) => {
            Activation::Path(PositionSignal::from_values(s.len(), s.channels(), values)?)
        }
        Activation::Invariant(_) => Activation::Invariant(values),
    })
}

/// Per-kind filter taps for the equivariant convolution.
#[derive(Debug, Clone)]
pub enum KindFilter {
    /// Per-channel taps over the `2m` dihedral elements, row-major
    /// `(element, channel)`.
    Cycle(Vec<f64>),
    /// Symmetric per-channel taps over translation offsets.
    Path(SymmetricFilter),
    /// Stars convolve against the constant function on the trivial group:
    /// the identity on the aggregate.
    Star,
}

impl KindFilter {
    /// The delta-at-identity filter for a kind: convolution leaves the
    /// activation unchanged.
    pub fn delta_for(spec: &NeuronSpec, channels: usize) -> Self {
        match spec.instance.kind() {
            SubgraphKind::Cycle(m) => {
                let mut taps = vec![0.0; 2 * m * channels];
                taps[..channels].iter_mut().for_each(|t| *t = 1.0);
                KindFilter::Cycle(taps)
            }
            SubgraphKind::Path(_) => {
                KindFilter::Path(SymmetricFilter::new(vec![vec![1.0; channels]]).unwrap())
            }
            SubgraphKind::Star { .. } => KindFilter::Star,
        }
    }
}

/// Learnable weights for one neuron kind: the equivariant filter, an
/// optional channel-mixing matrix (`d × d`, row-major) and an optional
/// per-channel bias. Weights are shared across all instances of the same
/// kind and size within a layer.
#[derive(Debug, Clone)]
pub struct ConvBlockWeights {
    pub filter: KindFilter,
    pub mix: Option<Vec<f64>>,
    pub bias: Option<Vec<f64>>,
}

impl ConvBlockWeights {
    pub fn identity(spec: &NeuronSpec, channels: usize) -> Self {
        Self {
            filter: KindFilter::delta_for(spec, channels),
            mix: None,
            bias: None,
        }
    }
}

/// Depthwise convolution over a group given its `u·v⁻¹` index table:
/// `out(u)[c] = Σ_v f(u·v⁻¹)[c] · taps(v)[c]`.
pub fn group_conv_depthwise<A: Algebra>(
    alg: &mut A,
    conv_table: &[usize],
    order: usize,
    f: &[A::Value],
    taps: &[A::Value],
    channels: usize,
) -> Vec<A::Value> {
    debug_assert_eq!(conv_table.len(), order * order);
    debug_assert_eq!(f.len(), order * channels);
    debug_assert_eq!(taps.len(), order * channels);
    let mut out = Vec::with_capacity(order * channels);
    for u in 0..order {
        let row = &conv_table[u * order..(u + 1) * order];
        for c in 0..channels {
            let mut acc = alg.zero();
            for v in 0..order {
                acc = alg.mul_add(f[row[v] * channels + c], taps[v * channels + c], acc);
            }
            out.push(acc);
        }
    }
    out
}

/// The `u·v⁻¹` lookup table used by [`group_conv_depthwise`].
pub fn conv_index_table(group: &FiniteGroup) -> Vec<usize> {
    let n = group.order();
    let mut table = Vec::with_capacity(n * n);
    for u in 0..n {
        for v in 0..n {
            table.push(group.compose_with_inverse_index(u, v));
        }
    }
    table
}

/// Zero-padded chain convolution with an explicit full tap table indexed
/// `j = −h..h`. The symmetric entry point mirrors stored taps into this
/// kernel; only negative-control tests pass raw asymmetric taps.
#[doc(hidden)]
pub fn path_conv_raw<A: Algebra>(
    alg: &mut A,
    f: &[A::Value],
    len: usize,
    channels: usize,
    full_taps: &[A::Value],
) -> Vec<A::Value> {
    debug_assert_eq!(f.len(), len * channels);
    debug_assert_eq!(full_taps.len() % channels, 0);
    let width = full_taps.len() / channels;
    debug_assert_eq!(width % 2, 1);
    let h = (width / 2) as isize;
    let mut out = Vec::with_capacity(len * channels);
    for u in 1..=len as isize {
        for c in 0..channels {
            let mut acc = alg.zero();
            for j in -h..=h {
                let src = u - j;
                if src < 1 || src > len as isize {
                    continue;
                }
                let tap = full_taps[(j + h) as usize * channels + c];
                acc = alg.mul_add(f[(src as usize - 1) * channels + c], tap, acc);
            }
            out.push(acc);
        }
    }
    out
}

/// Symmetric chain convolution: half taps `j = 0..=h` are mirrored to the
/// negative side, sharing the same values (and, on a tape, the same nodes).
pub fn path_conv_symmetric<A: Algebra>(
    alg: &mut A,
    f: &[A::Value],
    len: usize,
    channels: usize,
    half_taps: &[A::Value],
) -> Vec<A::Value> {
    debug_assert_eq!(half_taps.len() % channels, 0);
    let h = half_taps.len() / channels - 1;
    let width = 2 * h + 1;
    let mut full = Vec::with_capacity(width * channels);
    for j in 0..width {
        let offset = (j as isize - h as isize).unsigned_abs();
        full.extend_from_slice(&half_taps[offset * channels..(offset + 1) * channels]);
    }
    path_conv_raw(alg, f, len, channels, &full)
}

/// The conjugated convolution `T_b ∘ B ∘ T_{b⁻¹}` where `B` convolves over
/// the automorphism group of the neuron's kind and `b` is the alignment.
/// Because `B` commutes with every translation by a group element, the
/// output is invariant to the choice of alignment within its automorphism
/// coset.
pub fn aligned_convolve(
    spec: &NeuronSpec,
    activation: &Activation,
    filter: &KindFilter,
) -> Result<Activation, LayerError> {
    let mut alg = RealAlgebra;
    match (activation, filter, &spec.symmetry) {
        (Activation::Cycle(f), KindFilter::Cycle(taps), DomainSymmetry::Dihedral(group)) => {
            if taps.len() != group.order() * f.channels() {
                return Err(LayerError::FilterMismatch {
                    kind: spec.instance.kind().to_string(),
                    reason: format!(
                        "expected {} taps, found {}",
                        group.order() * f.channels(),
                        taps.len()
                    ),
                });
            }
            let aligned = f.act(&spec.alignment.inverse())?;
            let table = conv_index_table(group);
            let convolved = group_conv_depthwise(
                &mut alg,
                &table,
                group.order(),
                aligned.values(),
                taps,
                f.channels(),
            );
            let convolved =
                GroupFunction::from_values(Arc::clone(f.group()), f.channels(), convolved)?;
            Ok(Activation::Cycle(convolved.act(&spec.alignment)?))
        }
        (Activation::Path(s), KindFilter::Path(filter), DomainSymmetry::PathTranslation) => {
            let reversed = !spec.alignment.is_identity();
            let input = if reversed { s.reverse() } else { s.clone() };
            let out = path_convolve(&input, filter)?;
            Ok(Activation::Path(if reversed { out.reverse() } else { out }))
        }
        (Activation::Invariant(v), KindFilter::Star, DomainSymmetry::Trivial) => {
            Ok(Activation::Invariant(v.clone()))
        }
        _ => Err(LayerError::ShapeMismatch(
            "filter kind does not match activation kind".into(),
        )),
    }
}

/// Promotes and aggregates the inputs into the target's reference domain:
/// every input is narrowed to each vertex of its intersection with the
/// target and lifted to that vertex's position (first-order aggregation).
pub fn promote_inputs(
    target: &NeuronSpec,
    inputs: &[(&NeuronSpec, &Activation)],
    channels: usize,
) -> Result<Activation, LayerError> {
    let mut ordered: Vec<&(&NeuronSpec, &Activation)> = inputs.iter().collect();
    ordered.sort_by_key(|(spec, _)| spec.sort_key());
    match target.instance.kind() {
        SubgraphKind::Cycle(m) => {
            let group = FiniteGroup::dihedral(m)?;
            let mut table = GroupFunction::zero(group, channels);
            for (spec, activation) in ordered {
                let shared = target.instance.intersect_domains(&spec.instance)?;
                for &vertex in shared.indices() {
                    let value = narrow_to_vertex(spec, activation, vertex)?;
                    check_channels(&value, channels)?;
                    let z = target.instance.position_of(vertex).expect("intersection") - 1;
                    for c in 0..channels {
                        table.row_mut(z)[c] += 0.5 * value[c];
                        table.row_mut(m + z)[c] += 0.5 * value[c];
                    }
                }
            }
            Ok(Activation::Cycle(table))
        }
        SubgraphKind::Path(k) => {
            let mut signal = PositionSignal::zero(k, channels);
            for (spec, activation) in ordered {
                let shared = target.instance.intersect_domains(&spec.instance)?;
                for &vertex in shared.indices() {
                    let value = narrow_to_vertex(spec, activation, vertex)?;
                    check_channels(&value, channels)?;
                    let u = target.instance.position_of(vertex).expect("intersection");
                    for c in 0..channels {
                        signal.row_mut(u)[c] += value[c];
                    }
                }
            }
            Ok(Activation::Path(signal))
        }
        SubgraphKind::Star { .. } => {
            let mut acc = vec![0.0; channels];
            for (spec, activation) in ordered {
                let shared = target.instance.intersect_domains(&spec.instance)?;
                let Some(&vertex) = shared.indices().first() else {
                    continue;
                };
                let value = narrow_to_vertex(spec, activation, vertex)?;
                check_channels(&value, channels)?;
                for c in 0..channels {
                    acc[c] += value[c];
                }
            }
            Ok(Activation::Invariant(acc))
        }
    }
}

fn check_channels(value: &[f64], channels: usize) -> Result<(), LayerError> {
    if value.len() != channels {
        return Err(LayerError::ChannelMismatch(value.len(), channels));
    }
    Ok(())
}

/// The full T1–T4 neuron step: promote-and-aggregate the inputs, apply the
/// aligned equivariant convolution, mix channels, add bias, and pass the
/// result through a pointwise ReLU.
pub fn neuron_forward(
    target: &NeuronSpec,
    inputs: &[(&NeuronSpec, &Activation)],
    weights: &ConvBlockWeights,
    channels: usize,
) -> Result<Activation, LayerError> {
    let promoted = promote_inputs(target, inputs, channels)?;
    let convolved = aligned_convolve(target, &promoted, &weights.filter)?;
    let mixed = apply_mix_bias(&convolved, weights, channels)?;
    map_values(&mixed, |v| v.max(0.0))
}

fn apply_mix_bias(
    activation: &Activation,
    weights: &ConvBlockWeights,
    channels: usize,
) -> Result<Activation, LayerError> {
    if weights.mix.is_none() && weights.bias.is_none() {
        return Ok(activation.clone());
    }
    if let Some(mix) = &weights.mix {
        if mix.len() != channels * channels {
            return Err(LayerError::ChannelMismatch(mix.len(), channels * channels));
        }
    }
    if let Some(bias) = &weights.bias {
        check_channels(bias, channels)?;
    }
    let transform = |row: &[f64]| -> Vec<f64> {
        let mut out = match &weights.mix {
            Some(mix) => (0..channels)
                .map(|o| {
                    (0..channels)
                        .map(|i| mix[o * channels + i] * row[i])
                        .sum::<f64>()
                })
                .collect(),
            None => row.to_vec(),
        };
        if let Some(bias) = &weights.bias {
            for (o, b) in out.iter_mut().zip(bias) {
                *o += b;
            }
        }
        out
    };
    map_rows(activation, channels, transform)
}

fn map_rows(
    activation: &Activation,
    channels: usize,
    f: impl Fn(&[f64]) -> Vec<f64>,
) -> Result<Activation, LayerError> {
    let apply_flat = |values: &[f64]| -> Vec<f64> {
        values.chunks(channels).flat_map(|row| f(row)).collect()
    };
    rebuild_like(
        activation,
        apply_flat(match activation {
            Activation::Cycle(t) => t.values(),
            Activation::Path(s) => s.values(),
            Activation::Invariant(v) => v,
        }),
    )
}

fn map_values(activation: &Activation, f: impl Fn(f64) -> f64) -> Result<Activation, LayerError> {
    let mapped: Vec<f64> = match activation {
        Activation::Cycle(t) => t.values().iter().map(|&v| f(v)).collect(),
        Activation::Path(s) => s.values().iter().map(|&v| f(v)).collect(),
        Activation::Invariant(v) => v.iter().map(|&x| f(x)).collect(),
    };
    rebuild_like(activation, mapped)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LabeledGraph;
    use crate::groupfn::dihedral_convolve;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cycle_graph(n: usize) -> LabeledGraph {
        let edges: Vec<_> = (1..=n).map(|v| (v, v % n + 1, 0)).collect();
        LabeledGraph::new(n, vec![0; n], edges).unwrap()
    }

    fn path_graph(n: usize) -> LabeledGraph {
        let edges: Vec<_> = (1..n).map(|v| (v, v + 1, 0)).collect();
        LabeledGraph::new(n, vec![0; n], edges).unwrap()
    }

    fn cycle_spec(g: &LabeledGraph, m: usize) -> NeuronSpec {
        let inst = g.enumerate_cycles(&[m]).unwrap().into_iter().next().unwrap();
        NeuronSpec::for_instance(inst).unwrap()
    }

    fn star_specs(g: &LabeledGraph) -> Vec<NeuronSpec> {
        g.enumerate_stars()
            .into_iter()
            .map(|i| NeuronSpec::for_instance(i).unwrap())
            .collect()
    }

    fn random_cycle_activation(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Activation {
        let group = FiniteGroup::dihedral(m).unwrap();
        let values: Vec<f64> = (0..2 * m * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Activation::Cycle(GroupFunction::from_values(group, d, values).unwrap())
    }

    #[test]
    fn lift_to_cycle_examples() {
        let zero = lift_to_cycle(&[0.0, 0.0], 2, 6).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let c = [3.0];
        let f = lift_to_cycle(&c, 0, 6).unwrap();
        for i in 0..12 {
            let expected = if i == 0 || i == 6 { 1.5 } else { 0.0 };
            assert_eq!(f.row(i)[0], expected);
        }
        assert!(lift_to_cycle(&c, 6, 6).is_err());
    }

    #[test]
    fn lift_to_path_examples() {
        let zero = lift_to_path(&[0.0], 1, 3).unwrap();
        assert!(zero.values().iter().all(|&v| v == 0.0));

        let s = lift_to_path(&[7.0], 2, 4).unwrap();
        assert_eq!(s.values(), &[0.0, 7.0, 0.0, 0.0]);
        assert!(lift_to_path(&[1.0], 5, 4).is_err());
        assert!(lift_to_path(&[1.0], 0, 4).is_err());

        let mut total = PositionSignal::zero(4, 1);
        for u in 1..=4 {
            let lifted = lift_to_path(&[1.0], u, 4).unwrap();
            for p in 1..=4 {
                total.row_mut(p)[0] += lifted.row(p)[0];
            }
        }
        assert_eq!(total.values(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn narrow_to_vertex_round_trips() {
        let g = cycle_graph(6);
        let spec = cycle_spec(&g, 6);
        let value = vec![2.0, -1.5];
        for (pos, &vertex) in spec.instance.traversal().iter().enumerate() {
            let lifted = Activation::Cycle(lift_to_cycle(&value, pos, 6).unwrap());
            let back = narrow_to_vertex(&spec, &lifted, vertex).unwrap();
            assert_eq!(back, value);
        }

        let p = path_graph(4);
        let pspec = NeuronSpec::for_instance(
            p.enumerate_paths(4, 4).unwrap().into_iter().next().unwrap(),
        )
        .unwrap();
        for (pos, &vertex) in pspec.instance.traversal().iter().enumerate() {
            let lifted = Activation::Path(lift_to_path(&value, pos + 1, 4).unwrap());
            let back = narrow_to_vertex(&pspec, &lifted, vertex).unwrap();
            assert_eq!(back, value);
        }
    }

    // Under the shipped convention the per-vertex narrowing sums the
    // stabilizer coset, so an all-constant dihedral table reads back as
    // twice the row value; lift-then-narrow stays the identity.
    #[test]
    fn cycle_narrowing_sums_the_stabilizer_coset() {
        let g = cycle_graph(5);
        let spec = cycle_spec(&g, 5);
        let group = FiniteGroup::dihedral(5).unwrap();
        let constant = Activation::Cycle(GroupFunction::constant(group, &[1.0]).unwrap());
        let vertex = spec.instance.traversal()[0];
        assert_eq!(narrow_to_vertex(&spec, &constant, vertex).unwrap(), vec![2.0]);
    }

    #[test]
    fn narrow_to_vertex_rejects_foreign_vertices() {
        let g = cycle_graph(6);
        let spec = cycle_spec(&g, 6);
        let act = Activation::Cycle(GroupFunction::zero(FiniteGroup::dihedral(6).unwrap(), 1));
        assert!(narrow_to_vertex(&spec, &act, 99).is_err());
    }

    #[test]
    fn symmetric_poly_first_order_is_a_sum() {
        let g = path_graph(3);
        let specs = star_specs(&g);
        let a = Activation::Invariant(vec![1.0, 2.0]);
        let b = Activation::Invariant(vec![0.5, -1.0]);
        let out = symmetric_poly(1, &[(&specs[0], &a), (&specs[1], &b)]).unwrap();
        assert_eq!(out, Activation::Invariant(vec![1.5, 1.0]));
    }

    #[test]
    fn symmetric_poly_second_order() {
        let g = path_graph(3);
        let specs = star_specs(&g);
        let a = Activation::Invariant(vec![2.0]);
        let b = Activation::Invariant(vec![3.0]);
        let out = symmetric_poly(2, &[(&specs[0], &a), (&specs[1], &b)]).unwrap();
        // a² + ab + b² = 4 + 6 + 9
        assert_eq!(out, Activation::Invariant(vec![19.0]));
    }

    #[test]
    fn symmetric_poly_is_input_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = path_graph(5);
        let specs = star_specs(&g);
        let acts: Vec<Activation> = (0..4)
            .map(|_| {
                Activation::Invariant((0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            })
            .collect();
        for q in 1..=3 {
            let mut pairs: Vec<(&NeuronSpec, &Activation)> =
                specs.iter().take(4).zip(acts.iter()).map(|(s, a)| (s, a)).collect();
            let base = symmetric_poly(q, &pairs).unwrap();
            for _ in 0..5 {
                pairs.shuffle(&mut rng);
                let shuffled = symmetric_poly(q, &pairs).unwrap();
                assert_eq!(base, shuffled);
            }
        }
    }

    #[test]
    fn aligned_convolve_identity_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = cycle_graph(6);
        let spec = cycle_spec(&g, 6);
        let a = random_cycle_activation(&mut rng, 6, 2);
        let delta = KindFilter::delta_for(&spec, 2);
        let out = aligned_convolve(&spec, &a, &delta).unwrap();
        assert!(out.max_abs_diff(&a) == 0.0);
    }

    #[test]
    fn alignment_choice_within_the_automorphism_coset_is_irrelevant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = cycle_graph(5);
        let base = cycle_spec(&g, 5);
        let a = random_cycle_activation(&mut rng, 5, 1);
        let group = FiniteGroup::dihedral(5).unwrap();
        let taps: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let filter = KindFilter::Cycle(taps);
        let b = group.element(3).clone();
        let reference = aligned_convolve(
            &base.clone().with_alignment(b.clone()),
            &a,
            &filter,
        )
        .unwrap();
        for gamma in group.elements() {
            let alignment = b.compose(gamma).unwrap();
            let out = aligned_convolve(
                &base.clone().with_alignment(alignment),
                &a,
                &filter,
            )
            .unwrap();
            assert!(out.max_abs_diff(&reference) <= 1e-12);
        }
    }

    // T_β B T_{β⁻¹} (T_s f) == T_s (T_b B T_{b⁻¹} f) with β = s·b·γ⁻¹ for
    // any automorphism γ: relabeling the input and re-aligning commute.
    #[test]
    fn relabeled_alignment_identity_on_c6() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = cycle_graph(6);
        let base = cycle_spec(&g, 6);
        let group = FiniteGroup::dihedral(6).unwrap();
        let taps: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let filter = KindFilter::Cycle(taps);
        for _ in 0..10 {
            let f = random_cycle_activation(&mut rng, 6, 1);
            let s = group.element(rng.gen_range(0..12)).clone();
            let b = group.element(rng.gen_range(0..12)).clone();
            let gamma = group.element(rng.gen_range(0..12)).clone();
            let beta = s.compose(&b).unwrap().compose(&gamma.inverse()).unwrap();

            let f_table = match &f {
                Activation::Cycle(t) => t.clone(),
                _ => unreachable!(),
            };
            let shifted = Activation::Cycle(f_table.act(&s).unwrap());
            let lhs = aligned_convolve(
                &base.clone().with_alignment(beta),
                &shifted,
                &filter,
            )
            .unwrap();
            let rhs_inner = aligned_convolve(
                &base.clone().with_alignment(b),
                &f,
                &filter,
            )
            .unwrap();
            let rhs = match rhs_inner {
                Activation::Cycle(t) => Activation::Cycle(t.act(&s).unwrap()),
                _ => unreachable!(),
            };
            assert!(lhs.max_abs_diff(&rhs) <= 1e-12);
        }
    }

    #[test]
    fn neuron_forward_zero_inputs_give_zero() {
        let g = cycle_graph(6);
        let spec = cycle_spec(&g, 6);
        let weights = ConvBlockWeights::identity(&spec, 2);
        let out = neuron_forward(&spec, &[], &weights, 2).unwrap();
        match out {
            Activation::Cycle(t) => assert!(t.values().iter().all(|&v| v == 0.0)),
            _ => panic!("cycle neuron must produce a cycle activation"),
        }
    }

    #[test]
    fn neuron_forward_delta_filter_is_relu_of_promotion() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = cycle_graph(6);
        let spec = cycle_spec(&g, 6);
        let stars = star_specs(&g);
        let acts: Vec<Activation> = (0..6)
            .map(|_| Activation::Invariant((0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()))
            .collect();
        let inputs: Vec<(&NeuronSpec, &Activation)> =
            stars.iter().zip(acts.iter()).map(|(s, a)| (s, a)).collect();
        let weights = ConvBlockWeights::identity(&spec, 2);
        let out = neuron_forward(&spec, &inputs, &weights, 2).unwrap();
        let promoted = promote_inputs(&spec, &inputs, 2).unwrap();
        let expected = map_values(&promoted, |v| v.max(0.0)).unwrap();
        assert!(out.max_abs_diff(&expected) == 0.0);
    }

    // The star configuration on P_3: the center neuron's output is the
    // plain message-passing value ReLU(W · (h₁ + h₃)).
    #[test]
    fn star_configuration_matches_hand_computed_message_passing() {
        let g = path_graph(3);
        let stars = star_specs(&g);
        let h1 = Activation::Invariant(vec![1.0, -2.0]);
        let h3 = Activation::Invariant(vec![0.25, 4.0]);
        let w = vec![0.5, 1.0, -1.0, 0.0]; // row-major 2×2
        let weights = ConvBlockWeights {
            filter: KindFilter::Star,
            mix: Some(w.clone()),
            bias: None,
        };
        let inputs = [(&stars[0], &h1), (&stars[2], &h3)];
        let out = neuron_forward(&stars[1], &inputs, &weights, 2).unwrap();
        let summed = [1.25, 2.0];
        let expected = vec![
            (w[0] * summed[0] + w[1] * summed[1]).max(0.0),
            (w[2] * summed[0] + w[3] * summed[1]).max(0.0),
        ];
        assert_eq!(out, Activation::Invariant(expected));
    }

    // Theorem-level equivariance at single-neuron granularity: permute the
    // graph, rebuild the corresponding neuron, and compare per-vertex
    // narrowings of the outputs.
    #[test]
    fn neuron_forward_is_equivariant_under_relabeling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let g = cycle_graph(6);
            let mut images: Vec<usize> = (1..=6).collect();
            images.shuffle(&mut rng);
            let sigma = Permutation::from_images(images).unwrap();
            let h = g.permute(&sigma).unwrap();

            let spec_g = cycle_spec(&g, 6);
            let spec_h = cycle_spec(&h, 6);
            let stars_g = star_specs(&g);
            let stars_h = star_specs(&h);

            let values: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let acts_g: Vec<Activation> = (1..=6)
                .map(|v| Activation::Invariant(values[v - 1].clone()))
                .collect();
            let acts_h: Vec<Activation> = (1..=6)
                .map(|v| {
                    let original = sigma.inverse().apply(v);
                    Activation::Invariant(values[original - 1].clone())
                })
                .collect();

            let group = FiniteGroup::dihedral(6).unwrap();
            let taps: Vec<f64> = (0..group.order() * 2)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let weights = ConvBlockWeights {
                filter: KindFilter::Cycle(taps),
                mix: None,
                bias: None,
            };

            let inputs_g: Vec<(&NeuronSpec, &Activation)> =
                stars_g.iter().zip(acts_g.iter()).map(|(s, a)| (s, a)).collect();
            let inputs_h: Vec<(&NeuronSpec, &Activation)> =
                stars_h.iter().zip(acts_h.iter()).map(|(s, a)| (s, a)).collect();

            let out_g = neuron_forward(&spec_g, &inputs_g, &weights, 2).unwrap();
            let out_h = neuron_forward(&spec_h, &inputs_h, &weights, 2).unwrap();

            for &v in spec_g.instance.traversal() {
                let a = narrow_to_vertex(&spec_g, &out_g, v).unwrap();
                let b = narrow_to_vertex(&spec_h, &out_h, sigma.apply(v)).unwrap();
                let diff = a
                    .iter()
                    .zip(&b)
                    .map(|(x, y)| (x - y).abs())
                    .fold(0.0, f64::max);
                assert!(diff <= 1e-9, "trial {trial}: vertex {v} differs by {diff}");
            }
        }
    }

    #[test]
    fn depthwise_cycle_kernel_matches_generic_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let group = FiniteGroup::dihedral(6).unwrap();
        let d = 3;
        let fvals: Vec<f64> = (0..group.order() * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let taps: Vec<f64> = (0..group.order() * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let table = conv_index_table(&group);
        let mut alg = RealAlgebra;
        let fast = group_conv_depthwise(&mut alg, &table, group.order(), &fvals, &taps, d);

        // Depthwise taps are a diagonal channel-mixing convolution.
        let f = GroupFunction::from_values(Arc::clone(&group), d, fvals).unwrap();
        let mut wvals = vec![0.0; group.order() * d * d];
        for v in 0..group.order() {
            for c in 0..d {
                wvals[v * d * d + c * d + c] = taps[v * d + c];
            }
        }
        let w = GroupFunction::from_values(Arc::clone(&group), d * d, wvals).unwrap();
        let generic = f.convolve(&w).unwrap();
        let fast_fn = GroupFunction::from_values(group, d, fast).unwrap();
        assert!(fast_fn.max_abs_diff(&generic) <= 1e-12);

        let dd = dihedral_convolve(&f, &w).unwrap();
        assert!(fast_fn.max_abs_diff(&dd) <= 1e-12);
    }

    #[test]
    fn path_kernel_matches_path_convolve() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let k = rng.gen_range(1..=7);
            let d = rng.gen_range(1..=3);
            let h = rng.gen_range(0..=2);
            let fvals: Vec<f64> = (0..k * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let taps: Vec<Vec<f64>> = (0..=h)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let filter = SymmetricFilter::new(taps.clone()).unwrap();
            let signal = PositionSignal::from_values(k, d, fvals.clone()).unwrap();
            let expected = path_convolve(&signal, &filter).unwrap();

            let flat_taps: Vec<f64> = taps.into_iter().flatten().collect();
            let mut alg = RealAlgebra;
            let got = path_conv_symmetric(&mut alg, &fvals, k, d, &flat_taps);
            let got = PositionSignal::from_values(k, d, got).unwrap();
            assert!(got.max_abs_diff(&expected) <= 1e-12);
        }
    }
}
