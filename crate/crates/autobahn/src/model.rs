//! The end-to-end network: featurization, residual path/cycle layers, an
//! invariant readout, reverse-mode differentiation and SGD training.
//!
//! Each layer promotes the per-vertex state into every extracted subgraph's
//! reference domain, runs a per-kind residual convolution block
//! (conv → ReLU → conv → skip-add → ReLU) bracketed by channel-mixing
//! linear maps, narrows back to vertices and sums across kinds. The
//! readout sums the per-vertex state and applies a two-layer head. The
//! forward pass is written once over [`Algebra`] and instantiated with
//! plain doubles for inference and with the tape for training, so the two
//! paths compute bit-identical values.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{GraphError, LabeledGraph, SubgraphInstance, SubgraphKind};
use crate::groupfn::{FiniteGroup, GroupFnError, GroupFunction, PositionSignal};
use crate::layers::{conv_index_table, group_conv_depthwise, path_conv_raw, path_conv_symmetric, Activation, LayerError};
use crate::scalar::{Algebra, RealAlgebra};
use crate::tape::{Tape, TapeError};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown atom label {label}: featurizer covers 0..{cap}")]
    UnknownAtomLabel { label: u32, cap: usize },
    #[error("unknown bond label {label}: featurizer covers 0..{cap}")]
    UnknownBondLabel { label: u32, cap: usize },
    #[error("loss became non-finite at epoch {epoch} (batch {batch}); aborting")]
    NanLoss { epoch: usize, batch: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("checkpoint rejected: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Group(#[from] GroupFnError),
    #[error(transparent)]
    Layer(#[from] LayerError),
    #[error(transparent)]
    Tape(#[from] TapeError),
}

fn default_channels() -> usize {
    32
}
fn default_layer_count() -> usize {
    2
}
fn default_path_lengths() -> Vec<usize> {
    vec![3, 4, 5, 6]
}
fn default_cycle_lengths() -> Vec<usize> {
    vec![5, 6]
}
fn default_path_half_width() -> usize {
    2
}
fn default_true() -> bool {
    true
}
fn default_label_count() -> usize {
    8
}
fn default_bond_count() -> usize {
    4
}
fn default_readout_hidden() -> usize {
    32
}

/// Desk-scale defaults; the paper-scale width stays expressible by raising
/// `channels` (128) and `layer_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_layer_count")]
    pub layer_count: usize,
    #[serde(default = "default_path_lengths")]
    pub path_lengths: Vec<usize>,
    #[serde(default = "default_cycle_lengths")]
    pub cycle_lengths: Vec<usize>,
    #[serde(default = "default_path_half_width")]
    pub path_half_width: usize,
    #[serde(default)]
    pub use_star_layer: bool,
    #[serde(default = "default_true")]
    pub use_bias: bool,
    #[serde(default = "default_label_count")]
    pub atom_label_count: usize,
    #[serde(default = "default_bond_count")]
    pub bond_label_count: usize,
    #[serde(default = "default_readout_hidden")]
    pub readout_hidden: usize,
    #[serde(default)]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: default_channels(),
            layer_count: default_layer_count(),
            path_lengths: default_path_lengths(),
            cycle_lengths: default_cycle_lengths(),
            path_half_width: default_path_half_width(),
            use_star_layer: false,
            use_bias: true,
            atom_label_count: default_label_count(),
            bond_label_count: default_bond_count(),
            readout_hidden: default_readout_hidden(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.channels < 1 {
            return Err(ModelError::InvalidConfig("channels must be >= 1".into()));
        }
        if self.layer_count < 1 {
            return Err(ModelError::InvalidConfig("layer_count must be >= 1".into()));
        }
        if self.path_lengths.iter().any(|&k| k < 2) {
            return Err(ModelError::InvalidConfig(
                "path lengths must be >= 2 vertices".into(),
            ));
        }
        if self.cycle_lengths.iter().any(|&m| m < 3) {
            return Err(ModelError::InvalidConfig(
                "cycle lengths must be >= 3 vertices".into(),
            ));
        }
        if self.readout_hidden < 1 {
            return Err(ModelError::InvalidConfig("readout_hidden must be >= 1".into()));
        }
        if self.atom_label_count < 1 || self.bond_label_count < 1 {
            return Err(ModelError::InvalidConfig("label counts must be >= 1".into()));
        }
        Ok(())
    }

    fn sorted_path_lengths(&self) -> Vec<usize> {
        let mut lengths = self.path_lengths.clone();
        lengths.sort_unstable();
        lengths.dedup();
        lengths
    }

    fn sorted_cycle_lengths(&self) -> Vec<usize> {
        let mut lengths = self.cycle_lengths.clone();
        lengths.sort_unstable();
        lengths.dedup();
        lengths
    }
}

fn default_base_lr() -> f64 {
    0.0003
}
fn default_warmup() -> usize {
    5
}
fn default_epochs() -> usize {
    200
}
fn default_batch_size() -> usize {
    8
}

/// Linear warmup from zero to the base rate, then piecewise-constant with a
/// tenfold decay after each milestone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSchedule {
    #[serde(default = "default_base_lr")]
    pub base_lr: f64,
    #[serde(default = "default_warmup")]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub decay_milestones: Vec<usize>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            base_lr: default_base_lr(),
            warmup_epochs: default_warmup(),
            decay_milestones: Vec::new(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.base_lr > 0.0) {
            return Err(ModelError::InvalidSchedule("base_lr must be > 0".into()));
        }
        if self.batch_size < 1 {
            return Err(ModelError::InvalidSchedule("batch_size must be >= 1".into()));
        }
        if self.decay_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ModelError::InvalidSchedule(
                "decay milestones must be strictly ascending".into(),
            ));
        }
        Ok(())
    }

    /// Learning rate for a 1-based epoch index.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let mut lr = if self.warmup_epochs > 0 && epoch <= self.warmup_epochs {
            self.base_lr * epoch as f64 / self.warmup_epochs as f64
        } else {
            self.base_lr
        };
        for &milestone in &self.decay_milestones {
            if epoch > milestone {
                lr *= 0.1;
            }
        }
        lr
    }
}

/// Embedding tables mapping categorical labels to channel vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Featurizer {
    pub channels: usize,
    pub atom: Vec<Vec<f64>>,
    pub bond: Vec<Vec<f64>>,
}

impl Featurizer {
    fn atom_vec(&self, label: u32) -> Result<&[f64], ModelError> {
        self.atom
            .get(label as usize)
            .map(|v| v.as_slice())
            .ok_or(ModelError::UnknownAtomLabel {
                label,
                cap: self.atom.len(),
            })
    }

    fn bond_vec(&self, label: u32) -> Result<&[f64], ModelError> {
        self.bond
            .get(label as usize)
            .map(|v| v.as_slice())
            .ok_or(ModelError::UnknownBondLabel {
                label,
                cap: self.bond.len(),
            })
    }
}

/// Initial activations for the given neurons: each traversal position gets
/// its atom embedding plus the embedding of the bond from the preceding
/// traversal node (first path position: atom only; cycle positions wrap).
/// Stars carry the center's atom embedding.
pub fn featurize(
    graph: &LabeledGraph,
    neurons: &[SubgraphInstance],
    featurizer: &Featurizer,
) -> Result<Vec<Activation>, ModelError> {
    let d = featurizer.channels;
    neurons
        .iter()
        .map(|inst| {
            let traversal = inst.traversal();
            match inst.kind() {
                SubgraphKind::Path(k) => {
                    let mut signal = PositionSignal::zero(k, d);
                    for (i, &v) in traversal.iter().enumerate() {
                        let row = signal.row_mut(i + 1);
                        row.copy_from_slice(featurizer.atom_vec(graph.vertex_label(v))?);
                        if i > 0 {
                            let label = graph
                                .edge_label(traversal[i - 1], v)
                                .expect("consecutive traversal vertices are adjacent");
                            for (r, b) in row.iter_mut().zip(featurizer.bond_vec(label)?) {
                                *r += b;
                            }
                        }
                    }
                    Ok(Activation::Path(signal))
                }
                SubgraphKind::Cycle(m) => {
                    let group = FiniteGroup::dihedral(m)?;
                    let mut table = GroupFunction::zero(group, d);
                    for (z, &v) in traversal.iter().enumerate() {
                        let prev = traversal[(z + m - 1) % m];
                        let label = graph
                            .edge_label(prev, v)
                            .expect("cycle traversal edges exist");
                        let atom = featurizer.atom_vec(graph.vertex_label(v))?;
                        let bond = featurizer.bond_vec(label)?;
                        for c in 0..d {
                            let half = 0.5 * (atom[c] + bond[c]);
                            table.row_mut(z)[c] = half;
                            table.row_mut(m + z)[c] = half;
                        }
                    }
                    Ok(Activation::Cycle(table))
                }
                SubgraphKind::Star { center } => Ok(Activation::Invariant(
                    featurizer.atom_vec(graph.vertex_label(center))?.to_vec(),
                )),
            }
        })
        .collect()
}

/// A per-layer processing block, keyed by subgraph kind and size. Ordering
/// is significant: it fixes every summation order in the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BlockKind {
    Path(usize),
    Cycle(usize),
    Star,
}

impl std::fmt::Display for BlockKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlockKind::Path(k) => write!(f, "path{k}"),
            BlockKind::Cycle(m) => write!(f, "cycle{m}"),
            BlockKind::Star => write!(f, "star"),
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct BlockOffsets {
    mix_in: usize,
    bias_in: usize,
    taps1: usize,
    taps2: usize,
    tap_len: usize,
    mix_out: usize,
    bias_out: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    atom_emb: usize,
    bond_emb: usize,
    layers: Vec<BTreeMap<BlockKind, BlockOffsets>>,
    fc1: usize,
    b1: usize,
    fc2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn build(config: &ModelConfig) -> Self {
        let d = config.channels;
        let mut cursor = 0usize;
        let mut take = |len: usize| {
            let at = cursor;
            cursor += len;
            at
        };
        let atom_emb = take(config.atom_label_count * d);
        let bond_emb = take(config.bond_label_count * d);
        let mut layers = Vec::with_capacity(config.layer_count);
        for _ in 0..config.layer_count {
            let mut blocks = BTreeMap::new();
            for kind in block_kinds(config) {
                let tap_len = match kind {
                    BlockKind::Path(_) => (config.path_half_width + 1) * d,
                    BlockKind::Cycle(m) => 2 * m * d,
                    BlockKind::Star => 0,
                };
                let offsets = BlockOffsets {
                    mix_in: take(d * d),
                    bias_in: take(d),
                    taps1: take(tap_len),
                    taps2: take(tap_len),
                    tap_len,
                    mix_out: take(d * d),
                    bias_out: take(d),
                };
                blocks.insert(kind, offsets);
            }
            layers.push(blocks);
        }
        let fc1 = take(config.readout_hidden * d);
        let b1 = take(config.readout_hidden);
        let fc2 = take(config.readout_hidden);
        let b2 = take(1);
        Self {
            atom_emb,
            bond_emb,
            layers,
            fc1,
            b1,
            fc2,
            b2,
            total: cursor,
        }
    }
}

/// Every block kind a config can activate, in deterministic order. Star
/// parameters are always allocated; the star block runs when configured in
/// or as the fallback for graphs with no extracted paths or cycles.
fn block_kinds(config: &ModelConfig) -> Vec<BlockKind> {
    let mut kinds: Vec<BlockKind> = config
        .sorted_path_lengths()
        .into_iter()
        .map(BlockKind::Path)
        .chain(config.sorted_cycle_lengths().into_iter().map(BlockKind::Cycle))
        .collect();
    kinds.push(BlockKind::Star);
    kinds.sort_unstable();
    kinds
}

#[derive(Debug, Clone)]
struct PlanInstance {
    traversal: Vec<usize>,
    /// Bond label feeding each traversal position at the featurization
    /// layer; `None` for the first position of a path.
    bonds: Vec<Option<u32>>,
}

/// Pre-extracted subgraph structure for one graph.
#[derive(Debug, Clone)]
pub struct GraphPlan {
    n: usize,
    vertex_labels: Vec<u32>,
    adjacency: Vec<Vec<usize>>,
    blocks: BTreeMap<BlockKind, Vec<PlanInstance>>,
    conv_tables: BTreeMap<usize, Vec<usize>>,
    star_active: bool,
    star_fallback: bool,
}

impl GraphPlan {
    pub fn star_fallback(&self) -> bool {
        self.star_fallback
    }

    pub fn instance_count(&self) -> usize {
        self.blocks.values().map(Vec::len).sum()
    }
}

fn build_plan(graph: &LabeledGraph, config: &ModelConfig) -> Result<GraphPlan, ModelError> {
    for v in 1..=graph.vertex_count() {
        let label = graph.vertex_label(v);
        if label as usize >= config.atom_label_count {
            return Err(ModelError::UnknownAtomLabel {
                label,
                cap: config.atom_label_count,
            });
        }
    }
    for (_, _, label) in graph.edges() {
        if label as usize >= config.bond_label_count {
            return Err(ModelError::UnknownBondLabel {
                label,
                cap: config.bond_label_count,
            });
        }
    }
    let mut blocks: BTreeMap<BlockKind, Vec<PlanInstance>> = BTreeMap::new();
    let path_lengths = config.sorted_path_lengths();
    if let (Some(&lo), Some(&hi)) = (path_lengths.first(), path_lengths.last()) {
        for inst in graph.enumerate_paths(lo, hi)? {
            let SubgraphKind::Path(k) = inst.kind() else {
                unreachable!()
            };
            if !path_lengths.contains(&k) {
                continue;
            }
            let traversal = inst.traversal().to_vec();
            let bonds = std::iter::once(None)
                .chain(traversal.windows(2).map(|w| graph.edge_label(w[0], w[1])))
                .collect();
            blocks
                .entry(BlockKind::Path(k))
                .or_default()
                .push(PlanInstance { traversal, bonds });
        }
    }
    let cycle_lengths = config.sorted_cycle_lengths();
    let mut conv_tables = BTreeMap::new();
    for inst in graph.enumerate_cycles(&cycle_lengths)? {
        let SubgraphKind::Cycle(m) = inst.kind() else {
            unreachable!()
        };
        let traversal = inst.traversal().to_vec();
        let bonds = (0..m)
            .map(|z| graph.edge_label(traversal[(z + m - 1) % m], traversal[z]))
            .collect();
        conv_tables
            .entry(m)
            .or_insert_with(|| conv_index_table(&FiniteGroup::dihedral(m).expect("m >= 3")));
        blocks
            .entry(BlockKind::Cycle(m))
            .or_default()
            .push(PlanInstance { traversal, bonds });
    }
    let star_fallback = blocks.values().all(Vec::is_empty) || blocks.is_empty();
    let star_active = config.use_star_layer || star_fallback;
    Ok(GraphPlan {
        n: graph.vertex_count(),
        vertex_labels: graph.vertex_labels().to_vec(),
        adjacency: (1..=graph.vertex_count())
            .map(|v| graph.neighbors(v).to_vec())
            .collect(),
        blocks,
        conv_tables,
        star_active,
        star_fallback,
    })
}

/// Intermediate values of one traced forward pass, used by the
/// verification harness to compare sublayer outputs between a graph and
/// its permuted copy.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub layers: Vec<LayerTrace>,
    pub graph_vector: Vec<f64>,
    pub output: f64,
    pub star_fallback: bool,
}

#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub h_in: Vec<Vec<f64>>,
    pub neurons: Vec<NeuronTrace>,
    pub h_out: Vec<Vec<f64>>,
}

/// Stage outputs for one neuron: `lifted` holds the per-position narrowed
/// input values (T1), `promoted` the assembled reference-domain table after
/// first-order aggregation (T2–T3), `convolved` the table after the
/// equivariant residual convolution block (T4).
#[derive(Debug, Clone)]
pub struct NeuronTrace {
    pub kind: BlockKind,
    pub traversal: Vec<usize>,
    pub lifted: Vec<Vec<f64>>,
    pub promoted: Vec<f64>,
    pub convolved: Vec<f64>,
}

/// Asymmetric-tap injection point for the harness's negative control; not
/// reachable through the public weight types.
#[doc(hidden)]
#[derive(Debug, Clone)]
pub struct TapOverride {
    pub path_length: usize,
    /// Full taps indexed `j = −h..h`, `(2h+1) × channels` row-major.
    pub full_taps: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "autobahn-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;
const SHUFFLE_SALT: u64 = 0x5851f42d4c957f2d;

/// Per-epoch training statistics; the loss trace of [`Model::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mse: f64,
    pub mae: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
}

#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl Model {
    /// A freshly initialized model: weights uniform in `(−a, a)` with
    /// `a = fan_in^{−1/2}`, biases zero, seeded by `config.seed`.
    pub fn new(config: ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = Layout::build(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.channels;
        let mut fill = |params: &mut [f64], at: usize, len: usize, bound: f64| {
            for slot in &mut params[at..at + len] {
                *slot = rng.gen_range(-bound..bound);
            }
        };
        let mix_bound = 1.0 / (d as f64).sqrt();
        fill(&mut params, layout.atom_emb, config.atom_label_count * d, mix_bound);
        fill(&mut params, layout.bond_emb, config.bond_label_count * d, mix_bound);
        let layer_blocks: Vec<(BlockKind, BlockOffsets)> = layout
            .layers
            .iter()
            .flat_map(|blocks| blocks.iter().map(|(k, o)| (*k, *o)))
            .collect();
        for (kind, offsets) in layer_blocks {
            fill(&mut params, offsets.mix_in, d * d, mix_bound);
            let fan = match kind {
                BlockKind::Path(_) => 2 * config.path_half_width + 1,
                BlockKind::Cycle(m) => 2 * m,
                BlockKind::Star => 1,
            };
            let tap_bound = 1.0 / (fan as f64).sqrt();
            fill(&mut params, offsets.taps1, offsets.tap_len, tap_bound);
            fill(&mut params, offsets.taps2, offsets.tap_len, tap_bound);
            fill(&mut params, offsets.mix_out, d * d, mix_bound);
        }
        fill(&mut params, layout.fc1, config.readout_hidden * d, mix_bound);
        let head_bound = 1.0 / (config.readout_hidden as f64).sqrt();
        fill(&mut params, layout.fc2, config.readout_hidden, head_bound);
        Ok(Self {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Raw parameter access for tests and negative controls.
    #[doc(hidden)]
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn featurizer(&self) -> Featurizer {
        let d = self.config.channels;
        let slice = |at: usize, count: usize| -> Vec<Vec<f64>> {
            (0..count)
                .map(|i| self.params[at + i * d..at + (i + 1) * d].to_vec())
                .collect()
        };
        Featurizer {
            channels: d,
            atom: slice(self.layout.atom_emb, self.config.atom_label_count),
            bond: slice(self.layout.bond_emb, self.config.bond_label_count),
        }
    }

    pub fn plan(&self, graph: &LabeledGraph) -> Result<GraphPlan, ModelError> {
        build_plan(graph, &self.config)
    }

    /// Deterministic scalar prediction.
    pub fn forward(&self, graph: &LabeledGraph) -> Result<f64, ModelError> {
        let plan = self.plan(graph)?;
        let mut alg = RealAlgebra;
        Ok(forward_generic(
            &mut alg,
            &self.params,
            &self.config,
            &self.layout,
            &plan,
            &mut None,
            None,
        ))
    }

    /// Forward pass recording per-sublayer intermediates.
    pub fn forward_traced(&self, graph: &LabeledGraph) -> Result<ForwardTrace, ModelError> {
        let plan = self.plan(graph)?;
        self.forward_traced_with_plan(&plan)
    }

    pub fn forward_traced_with_plan(&self, plan: &GraphPlan) -> Result<ForwardTrace, ModelError> {
        let mut trace = Some(ForwardTrace {
            layers: Vec::new(),
            graph_vector: Vec::new(),
            output: 0.0,
            star_fallback: plan.star_fallback,
        });
        let mut alg = RealAlgebra;
        let output = forward_generic(
            &mut alg,
            &self.params,
            &self.config,
            &self.layout,
            plan,
            &mut trace,
            None,
        );
        let mut trace = trace.expect("trace was provided");
        trace.output = output;
        Ok(trace)
    }

    #[doc(hidden)]
    pub fn forward_with_tap_override(
        &self,
        graph: &LabeledGraph,
        tap_override: &TapOverride,
    ) -> Result<ForwardTrace, ModelError> {
        let plan = self.plan(graph)?;
        let mut trace = Some(ForwardTrace {
            layers: Vec::new(),
            graph_vector: Vec::new(),
            output: 0.0,
            star_fallback: plan.star_fallback,
        });
        let mut alg = RealAlgebra;
        let output = forward_generic(
            &mut alg,
            &self.params,
            &self.config,
            &self.layout,
            &plan,
            &mut trace,
            Some(tap_override),
        );
        let mut trace = trace.expect("trace was provided");
        trace.output = output;
        Ok(trace)
    }

    /// Applies one block's convolution stack (conv → ReLU → conv →
    /// skip-add → ReLU) to a raw reference-domain table. The harness uses
    /// this to probe the stack's automorphism consistency directly.
    pub fn apply_block_stack(
        &self,
        layer: usize,
        kind: BlockKind,
        table: &[f64],
        tap_override: Option<&TapOverride>,
    ) -> Result<Vec<f64>, ModelError> {
        let d = self.config.channels;
        let offsets = self
            .layout
            .layers
            .get(layer)
            .and_then(|blocks| blocks.get(&kind))
            .copied()
            .ok_or_else(|| ModelError::InvalidConfig(format!("no {kind} block in layer {layer}")))?;
        let taps1 = &self.params[offsets.taps1..offsets.taps1 + offsets.tap_len];
        let taps2 = &self.params[offsets.taps2..offsets.taps2 + offsets.tap_len];
        let mut alg = RealAlgebra;
        let conv = |alg: &mut RealAlgebra, input: &[f64], taps: &[f64]| -> Vec<f64> {
            match kind {
                BlockKind::Path(k) => {
                    let full_override = tap_override.and_then(|o| {
                        (o.path_length == k).then_some(o.full_taps.as_slice())
                    });
                    match full_override {
                        Some(full) => path_conv_raw(alg, input, k, d, full),
                        None => path_conv_symmetric(alg, input, k, d, taps),
                    }
                }
                BlockKind::Cycle(m) => {
                    let group = FiniteGroup::dihedral(m).expect("cycle blocks have m >= 3");
                    let conv_table = conv_index_table(&group);
                    group_conv_depthwise(alg, &conv_table, 2 * m, input, taps, d)
                }
                BlockKind::Star => input.to_vec(),
            }
        };
        let mut y: Vec<f64> = conv(&mut alg, table, taps1);
        for v in y.iter_mut() {
            *v = v.max(0.0);
        }
        let mut y = conv(&mut alg, &y, taps2);
        for (yv, &xv) in y.iter_mut().zip(table) {
            *yv = (*yv + xv).max(0.0);
        }
        Ok(y)
    }

    /// Invariant readout over an explicit per-vertex state: channel sums
    /// over vertices, then the two-layer head.
    pub fn readout(&self, per_vertex: &[Vec<f64>]) -> f64 {
        let d = self.config.channels;
        let mut alg = RealAlgebra;
        let mut gsum = vec![0.0; d];
        for h in per_vertex {
            for c in 0..d {
                gsum[c] += h[c];
            }
        }
        readout_head(&mut alg, &self.params, &self.config, &self.layout, &gsum)
    }

    /// Squared-error loss and its gradient for one record, via the tape.
    pub fn loss_and_gradient(
        &self,
        graph: &LabeledGraph,
        target: f64,
    ) -> Result<(f64, Vec<f64>), ModelError> {
        let plan = self.plan(graph)?;
        let mut tape = Tape::new();
        let inputs: Vec<_> = self.params.iter().map(|&p| tape.input(p)).collect();
        let pred = forward_generic(
            &mut tape,
            &inputs,
            &self.config,
            &self.layout,
            &plan,
            &mut None,
            None,
        );
        let t = tape.constant(target);
        let diff = tape.sub(pred, t);
        let loss = tape.mul(diff, diff);
        let loss_value = tape.value(loss);
        let adjoints = tape.backward(loss)?;
        let grads = inputs.iter().map(|&v| adjoints[v.index()]).collect();
        Ok((loss_value, grads))
    }

    /// Loss of one record evaluated at an explicit parameter vector; the
    /// finite-difference side of the gradient check.
    pub fn loss_at_params(
        &self,
        params: &[f64],
        graph: &LabeledGraph,
        target: f64,
    ) -> Result<f64, ModelError> {
        let plan = self.plan(graph)?;
        let mut alg = RealAlgebra;
        let pred = forward_generic(
            &mut alg,
            params,
            &self.config,
            &self.layout,
            &plan,
            &mut None,
            None,
        );
        Ok((pred - target) * (pred - target))
    }

    /// Mini-batch SGD with the warmup and milestone schedule. Deterministic
    /// given the model seed, config and dataset; returns the per-epoch loss
    /// trace.
    pub fn train(
        &mut self,
        dataset: &[(LabeledGraph, f64)],
        schedule: &TrainSchedule,
    ) -> Result<TrainReport, ModelError> {
        schedule.validate()?;
        if dataset.is_empty() {
            return Err(ModelError::EmptyDataset);
        }
        let plans: Vec<GraphPlan> = dataset
            .iter()
            .map(|(g, _)| build_plan(g, &self.config))
            .collect::<Result<_, _>>()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ SHUFFLE_SALT);
        let mut tape = Tape::new();
        let mut report = TrainReport::default();
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        for epoch in 1..=schedule.epochs {
            let lr = schedule.lr_at(epoch);
            shuffle(&mut order, &mut rng);
            let mut sq_sum = 0.0;
            let mut abs_sum = 0.0;
            for (batch_index, batch) in order.chunks(schedule.batch_size).enumerate() {
                tape.reset();
                let inputs: Vec<_> = self.params.iter().map(|&p| tape.input(p)).collect();
                let mut total = tape.zero();
                for &record in batch {
                    let (_, target) = &dataset[record];
                    let pred = forward_generic(
                        &mut tape,
                        &inputs,
                        &self.config,
                        &self.layout,
                        &plans[record],
                        &mut None,
                        None,
                    );
                    let t = tape.constant(*target);
                    let diff = tape.sub(pred, t);
                    let err = tape.value(diff);
                    sq_sum += err * err;
                    abs_sum += err.abs();
                    total = tape.mul_add(diff, diff, total);
                }
                let loss = tape.scale(total, 1.0 / batch.len() as f64);
                if !tape.value(loss).is_finite() {
                    return Err(ModelError::NanLoss {
                        epoch,
                        batch: batch_index,
                    });
                }
                let adjoints = tape.backward(loss)?;
                for (param, &node) in self.params.iter_mut().zip(&inputs) {
                    *param -= lr * adjoints[node.index()];
                }
            }
            report.epochs.push(EpochStats {
                epoch,
                lr,
                mse: sq_sum / dataset.len() as f64,
                mae: abs_sum / dataset.len() as f64,
            });
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            params: self.params.clone(),
        };
        let text = serde_json::to_string_pretty(&file)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path)?;
        let file: CheckpointFile = serde_json::from_str(&text)
            .map_err(|e| ModelError::Checkpoint(format!("unparseable checkpoint: {e}")))?;
        if file.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!(
                "unknown format {:?}",
                file.format
            )));
        }
        if file.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!(
                "unsupported version {} (expected {CHECKPOINT_VERSION})",
                file.version
            )));
        }
        file.config.validate()?;
        let layout = Layout::build(&file.config);
        if file.params.len() != layout.total {
            return Err(ModelError::Checkpoint(format!(
                "parameter count {} does not match config shape {}",
                file.params.len(),
                layout.total
            )));
        }
        if file.params.iter().any(|p| !p.is_finite()) {
            return Err(ModelError::Checkpoint("non-finite parameter".into()));
        }
        Ok(Self {
            config: file.config,
            layout,
            params: file.params,
        })
    }
}

/// Fisher-Yates with the training stream.
fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

fn readout_head<A: Algebra>(
    alg: &mut A,
    params: &[A::Value],
    config: &ModelConfig,
    layout: &Layout,
    gsum: &[A::Value],
) -> A::Value {
    let d = config.channels;
    let hidden = config.readout_hidden;
    let fc1 = &params[layout.fc1..layout.fc1 + hidden * d];
    let mut z = alg.matvec(fc1, hidden, d, gsum);
    for (i, zi) in z.iter_mut().enumerate() {
        let with_bias = alg.add(*zi, params[layout.b1 + i]);
        *zi = alg.relu(with_bias);
    }
    let fc2 = &params[layout.fc2..layout.fc2 + hidden];
    let out = alg.dot(fc2, &z);
    alg.add(out, params[layout.b2])
}

/// The shared forward pass. `trace`, when provided, receives per-layer and
/// per-neuron intermediates (real algebra only is expected there, but any
/// algebra works). `tap_override` replaces one path block's symmetric taps
/// with raw full taps; it exists for the harness's negative control.
fn forward_generic<A: Algebra>(
    alg: &mut A,
    params: &[A::Value],
    config: &ModelConfig,
    layout: &Layout,
    plan: &GraphPlan,
    trace: &mut Option<ForwardTrace>,
    tap_override: Option<&TapOverride>,
) -> A::Value {
    let d = config.channels;
    let n = plan.n;
    // Initial per-vertex state: atom embeddings.
    let mut h: Vec<Vec<A::Value>> = (0..n)
        .map(|v| {
            let label = plan.vertex_labels[v] as usize;
            params[layout.atom_emb + label * d..layout.atom_emb + (label + 1) * d].to_vec()
        })
        .collect();

    for layer in 0..config.layer_count {
        let mut trace_layer = trace.as_ref().map(|_| LayerTrace {
            h_in: h.iter().map(|row| row.iter().map(|&v| alg.value(v)).collect()).collect(),
            neurons: Vec::new(),
            h_out: Vec::new(),
        });
        let blocks = &layout.layers[layer];
        let zero = alg.zero();
        let mut h_next: Vec<Vec<A::Value>> = vec![vec![zero; d]; n];

        for (&kind, offsets) in blocks {
            match kind {
                BlockKind::Star => {
                    if !plan.star_active {
                        continue;
                    }
                    run_star_block(
                        alg,
                        params,
                        config,
                        offsets,
                        plan,
                        &h,
                        &mut h_next,
                        &mut trace_layer,
                    );
                }
                BlockKind::Path(_) | BlockKind::Cycle(_) => {
                    let Some(instances) = plan.blocks.get(&kind) else {
                        continue;
                    };
                    if instances.is_empty() {
                        continue;
                    }
                    run_domain_block(
                        alg,
                        params,
                        config,
                        layout,
                        kind,
                        offsets,
                        plan,
                        instances,
                        layer == 0,
                        &h,
                        &mut h_next,
                        &mut trace_layer,
                        tap_override,
                    );
                }
            }
        }

        h = h_next;
        if let (Some(tl), Some(tr)) = (trace_layer.as_mut(), trace.as_mut()) {
            tl.h_out = h
                .iter()
                .map(|row| row.iter().map(|&v| alg.value(v)).collect())
                .collect();
            tr.layers.push(trace_layer.take().expect("trace layer present"));
        }
    }

    // Invariant readout: vertex sums, then the fully connected head.
    let mut gsum = vec![alg.zero(); d];
    for row in &h {
        for c in 0..d {
            gsum[c] = alg.add(gsum[c], row[c]);
        }
    }
    if let Some(tr) = trace.as_mut() {
        tr.graph_vector = gsum.iter().map(|&v| alg.value(v)).collect();
    }
    readout_head(alg, params, config, layout, &gsum)
}

#[allow(clippy::too_many_arguments)]
fn run_domain_block<A: Algebra>(
    alg: &mut A,
    params: &[A::Value],
    config: &ModelConfig,
    layout: &Layout,
    kind: BlockKind,
    offsets: &BlockOffsets,
    plan: &GraphPlan,
    instances: &[PlanInstance],
    featurizing: bool,
    h: &[Vec<A::Value>],
    h_next: &mut [Vec<A::Value>],
    trace_layer: &mut Option<LayerTrace>,
    tap_override: Option<&TapOverride>,
) {
    let d = config.channels;
    let mix_in = &params[offsets.mix_in..offsets.mix_in + d * d];
    let mix_out = &params[offsets.mix_out..offsets.mix_out + d * d];
    let bias_in = &params[offsets.bias_in..offsets.bias_in + d];
    let bias_out = &params[offsets.bias_out..offsets.bias_out + d];
    let taps1 = &params[offsets.taps1..offsets.taps1 + offsets.tap_len];
    let taps2 = &params[offsets.taps2..offsets.taps2 + offsets.tap_len];

    // Premixed per-vertex inputs, computed once per block: the channel mix
    // commutes with promotion, so applying it before lifting is the same
    // linear map at a fraction of the cost.
    let mut used: Vec<usize> = instances
        .iter()
        .flat_map(|i| i.traversal.iter().copied())
        .collect();
    used.sort_unstable();
    used.dedup();
    let mut pre: BTreeMap<usize, Vec<A::Value>> = BTreeMap::new();
    for &v in &used {
        let mut mixed = alg.matvec(mix_in, d, d, &h[v - 1]);
        if config.use_bias {
            for (m, &b) in mixed.iter_mut().zip(bias_in) {
                *m = alg.add(*m, b);
            }
        }
        pre.insert(v, mixed);
    }
    // Premixed bond embeddings, used only at the featurization layer.
    let mut bond_pre: BTreeMap<u32, Vec<A::Value>> = BTreeMap::new();
    if featurizing {
        let mut labels: Vec<u32> = instances
            .iter()
            .flat_map(|i| i.bonds.iter().flatten().copied())
            .collect();
        labels.sort_unstable();
        labels.dedup();
        for label in labels {
            let at = layout.bond_emb + label as usize * d;
            let mixed = alg.matvec(mix_in, d, d, &params[at..at + d]);
            bond_pre.insert(label, mixed);
        }
    }

    let override_taps: Option<Vec<A::Value>> = tap_override.and_then(|o| {
        if kind == BlockKind::Path(o.path_length) {
            Some(o.full_taps.iter().map(|&t| alg.constant(t)).collect())
        } else {
            None
        }
    });

    // Narrowed block outputs per vertex, plus trace bookkeeping.
    let mut acc: BTreeMap<usize, Vec<A::Value>> = BTreeMap::new();
    for inst in instances {
        let len = inst.traversal.len();
        // Per-position inputs: premixed vertex state plus (while
        // featurizing) the premixed embedding of the preceding bond.
        let mut positions: Vec<Vec<A::Value>> = Vec::with_capacity(len);
        for (i, &v) in inst.traversal.iter().enumerate() {
            let base = &pre[&v];
            let row = match (featurizing, inst.bonds[i]) {
                (true, Some(label)) => {
                    let bond = &bond_pre[&label];
                    (0..d).map(|c| alg.add(base[c], bond[c])).collect()
                }
                _ => base.clone(),
            };
            positions.push(row);
        }

        // Promote into the reference domain.
        let (rows, table): (usize, Vec<A::Value>) = match kind {
            BlockKind::Path(_) => (len, positions.iter().flatten().copied().collect()),
            BlockKind::Cycle(m) => {
                let mut halves: Vec<A::Value> = Vec::with_capacity(m * d);
                for row in &positions {
                    for &x in row {
                        halves.push(alg.scale(x, 0.5));
                    }
                }
                let mut table = Vec::with_capacity(2 * m * d);
                table.extend_from_slice(&halves);
                table.extend_from_slice(&halves);
                (2 * m, table)
            }
            BlockKind::Star => unreachable!("star handled separately"),
        };

        // conv -> ReLU -> conv -> skip-add -> ReLU.
        let conv = |alg: &mut A, input: &[A::Value], taps: &[A::Value]| -> Vec<A::Value> {
            match kind {
                BlockKind::Path(_) => match &override_taps {
                    Some(full) => path_conv_raw(alg, input, len, d, full),
                    None => path_conv_symmetric(alg, input, len, d, taps),
                },
                BlockKind::Cycle(m) => {
                    let conv_table = &plan.conv_tables[&m];
                    group_conv_depthwise(alg, conv_table, 2 * m, input, taps, d)
                }
                BlockKind::Star => unreachable!(),
            }
        };
        let mut y = conv(alg, &table, taps1);
        for v in y.iter_mut() {
            *v = alg.relu(*v);
        }
        let mut y = conv(alg, &y, taps2);
        for (yv, &xv) in y.iter_mut().zip(&table) {
            *yv = alg.add(*yv, xv);
        }
        for v in y.iter_mut() {
            *v = alg.relu(*v);
        }

        // Narrow back to vertices: paths read the position row, cycles sum
        // the stabilizer coset {r^z, r^z s}.
        for (i, &v) in inst.traversal.iter().enumerate() {
            let entry = acc
                .entry(v)
                .or_insert_with(|| vec![alg.zero(); d]);
            match kind {
                BlockKind::Path(_) => {
                    for c in 0..d {
                        entry[c] = alg.add(entry[c], y[i * d + c]);
                    }
                }
                BlockKind::Cycle(m) => {
                    for c in 0..d {
                        let coset = alg.add(y[i * d + c], y[(m + i) * d + c]);
                        entry[c] = alg.add(entry[c], coset);
                    }
                }
                BlockKind::Star => unreachable!(),
            }
        }

        if let Some(tl) = trace_layer.as_mut() {
            debug_assert_eq!(y.len(), rows * d);
            let lifted: Vec<Vec<f64>> = positions
                .iter()
                .map(|row| row.iter().map(|&v| alg.value(v)).collect())
                .collect();
            let promoted: Vec<f64> = table.iter().map(|&v| alg.value(v)).collect();
            let convolved: Vec<f64> = y.iter().map(|&v| alg.value(v)).collect();
            tl.neurons.push(NeuronTrace {
                kind,
                traversal: inst.traversal.clone(),
                lifted,
                promoted,
                convolved,
            });
        }
    }

    // Mix the narrowed sums out into the next layer's state.
    for (&v, narrow) in &acc {
        let mut mixed = alg.matvec(mix_out, d, d, narrow);
        if config.use_bias {
            for (m, &b) in mixed.iter_mut().zip(bias_out) {
                *m = alg.add(*m, b);
            }
        }
        for c in 0..d {
            h_next[v - 1][c] = alg.add(h_next[v - 1][c], mixed[c]);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run_star_block<A: Algebra>(
    alg: &mut A,
    params: &[A::Value],
    config: &ModelConfig,
    offsets: &BlockOffsets,
    plan: &GraphPlan,
    h: &[Vec<A::Value>],
    h_next: &mut [Vec<A::Value>],
    trace_layer: &mut Option<LayerTrace>,
) {
    let d = config.channels;
    let n = plan.n;
    let mix_in = &params[offsets.mix_in..offsets.mix_in + d * d];
    let mix_out = &params[offsets.mix_out..offsets.mix_out + d * d];
    let bias_in = &params[offsets.bias_in..offsets.bias_in + d];
    let bias_out = &params[offsets.bias_out..offsets.bias_out + d];

    let mut pre: Vec<Vec<A::Value>> = Vec::with_capacity(n);
    for v in 1..=n {
        let mut mixed = alg.matvec(mix_in, d, d, &h[v - 1]);
        if config.use_bias {
            for (m, &b) in mixed.iter_mut().zip(bias_in) {
                *m = alg.add(*m, b);
            }
        }
        pre.push(mixed);
    }
    for v in 1..=n {
        // Neighbor aggregation, then the residual block with the identity
        // convolution of the trivial group.
        let mut agg = vec![alg.zero(); d];
        for &u in &plan.adjacency[v - 1] {
            for c in 0..d {
                agg[c] = alg.add(agg[c], pre[u - 1][c]);
            }
        }
        let r1: Vec<A::Value> = agg.iter().map(|&x| alg.relu(x)).collect();
        let y: Vec<A::Value> = r1
            .iter()
            .zip(&agg)
            .map(|(&a, &b)| {
                let s = alg.add(a, b);
                alg.relu(s)
            })
            .collect();
        let mut mixed = alg.matvec(mix_out, d, d, &y);
        if config.use_bias {
            for (m, &b) in mixed.iter_mut().zip(bias_out) {
                *m = alg.add(*m, b);
            }
        }
        for c in 0..d {
            h_next[v - 1][c] = alg.add(h_next[v - 1][c], mixed[c]);
        }
        if let Some(tl) = trace_layer.as_mut() {
            tl.neurons.push(NeuronTrace {
                kind: BlockKind::Star,
                traversal: vec![v],
                lifted: vec![agg.iter().map(|&x| alg.value(x)).collect()],
                promoted: agg.iter().map(|&x| alg.value(x)).collect(),
                convolved: y.iter().map(|&x| alg.value(x)).collect(),
            });
        }
    }
}
