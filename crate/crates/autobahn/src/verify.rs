//! The verification harness: randomized equivariance trials with
//! per-sublayer residuals, the message-passing oracle equivalence run,
//! random graph generation and the synthetic cycle-counting dataset.
//!
//! A trial builds a model with random weights, permutes the input graph by
//! a random `σ`, runs traced forward passes on both copies, pairs each
//! neuron with its counterpart (paths by exact σ-image, cycles by rotation
//! match among the two direction instances) and measures the worst
//! absolute deviation after each pipeline stage. The T4 stage additionally
//! probes the convolution stack's automorphism consistency directly —
//! reflection for paths, a reflection coset for cycles — which is what a
//! deliberately asymmetric filter breaks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::gcn::{gcn_reference_forward, gcn_star_forward};
use crate::graph::LabeledGraph;
use crate::model::{BlockKind, ForwardTrace, Model, ModelConfig, ModelError, TapOverride};
use crate::perm::Permutation;

fn tol_equivariance() -> f64 {
    1e-9
}
fn tol_oracle() -> f64 {
    1e-10
}
fn tol_gradient() -> f64 {
    1e-4
}

/// The centralized tolerances echoed in every report header.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    #[serde(default = "tol_equivariance")]
    pub equivariance: f64,
    #[serde(default = "tol_oracle")]
    pub gcn_oracle: f64,
    #[serde(default = "tol_gradient")]
    pub gradient_rel: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            equivariance: tol_equivariance(),
            gcn_oracle: tol_oracle(),
            gradient_rel: tol_gradient(),
        }
    }
}

pub fn random_permutation(rng: &mut ChaCha8Rng, n: usize) -> Permutation {
    let mut images: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        images.swap(i, j);
    }
    Permutation::from_images(images).expect("shuffled identity is a bijection")
}

/// A connected random graph: a uniform random tree plus a few extra edges,
/// with categorical labels below the given caps.
pub fn random_labeled_graph(
    rng: &mut ChaCha8Rng,
    n: usize,
    atom_labels: u32,
    bond_labels: u32,
) -> LabeledGraph {
    let mut edges: Vec<(usize, usize, u32)> = Vec::new();
    for v in 2..=n {
        let parent = rng.gen_range(1..v);
        edges.push((parent, v, rng.gen_range(0..bond_labels)));
    }
    let extras = rng.gen_range(0..=2usize);
    for _ in 0..extras {
        if n < 2 {
            break;
        }
        let u = rng.gen_range(1..=n);
        let v = rng.gen_range(1..=n);
        let key = (u.min(v), u.max(v));
        if u != v && !edges.iter().any(|&(a, b, _)| (a.min(b), a.max(b)) == key) {
            edges.push((key.0, key.1, rng.gen_range(0..bond_labels)));
        }
    }
    let labels = (0..n).map(|_| rng.gen_range(0..atom_labels)).collect();
    LabeledGraph::new(n, labels, edges).expect("generated graph is well-formed")
}

/// Six vertices in a ring, uniform labels.
pub fn hexagon_graph() -> LabeledGraph {
    let edges: Vec<_> = (1..=6).map(|v| (v, v % 6 + 1, 0)).collect();
    LabeledGraph::new(6, vec![0; 6], edges).expect("hexagon is well-formed")
}

/// Two disjoint triangles: 1-WL-indistinguishable from the hexagon.
pub fn two_disjoint_triangles() -> LabeledGraph {
    LabeledGraph::new(
        6,
        vec![0; 6],
        [(1, 2, 0), (2, 3, 0), (1, 3, 0), (4, 5, 0), (5, 6, 0), (4, 6, 0)],
    )
    .expect("triangles are well-formed")
}

/// Worst-case absolute residuals of one equivariance trial.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrialResiduals {
    pub trial: usize,
    pub vertices: usize,
    pub global: f64,
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub t4: f64,
    /// Automorphism consistency of the T4 convolution stack itself:
    /// reflecting its input must reflect its output.
    pub t4_aut: f64,
}

impl TrialResiduals {
    pub fn worst(&self) -> f64 {
        self.global
            .max(self.t1)
            .max(self.t2)
            .max(self.t3)
            .max(self.t4)
            .max(self.t4_aut)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivarianceReport {
    pub tolerance: f64,
    pub trials: Vec<TrialResiduals>,
    pub max_global: f64,
    pub max_t1: f64,
    pub max_t2: f64,
    pub max_t3: f64,
    pub max_t4: f64,
    pub max_t4_aut: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct EquivarianceOptions {
    pub trials: usize,
    pub seed: u64,
    /// Check this graph instead of random ones.
    pub graph: Option<LabeledGraph>,
    pub max_vertices: usize,
    pub config: ModelConfig,
    pub tolerance: f64,
    /// Negative control: replace one path block's symmetric taps with
    /// deliberately asymmetric ones.
    pub sabotage: bool,
}

impl Default for EquivarianceOptions {
    fn default() -> Self {
        Self {
            trials: 100,
            seed: 0,
            graph: None,
            max_vertices: 12,
            config: ModelConfig::default(),
            tolerance: Tolerances::default().equivariance,
            sabotage: false,
        }
    }
}

pub fn run_equivariance_suite(opts: &EquivarianceOptions) -> Result<EquivarianceReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trials = Vec::with_capacity(opts.trials);
    for trial in 0..opts.trials {
        let graph = match &opts.graph {
            Some(g) => g.clone(),
            None => {
                let n = rng.gen_range(4..=opts.max_vertices.max(4));
                random_labeled_graph(
                    &mut rng,
                    n,
                    opts.config.atom_label_count as u32,
                    opts.config.bond_label_count as u32,
                )
            }
        };
        let sigma = random_permutation(&mut rng, graph.vertex_count());
        let mut config = opts.config.clone();
        config.seed = rng.gen();
        let model = Model::new(config)?;
        let tap_override = opts.sabotage.then(|| sabotage_override(&model));
        let residuals = equivariance_trial(&model, &graph, &sigma, tap_override.as_ref())?;
        trials.push(TrialResiduals { trial, ..residuals });
    }
    let fold = |f: fn(&TrialResiduals) -> f64| trials.iter().map(f).fold(0.0, f64::max);
    let max_global = fold(|t| t.global);
    let max_t1 = fold(|t| t.t1);
    let max_t2 = fold(|t| t.t2);
    let max_t3 = fold(|t| t.t3);
    let max_t4 = fold(|t| t.t4);
    let max_t4_aut = fold(|t| t.t4_aut);
    let pass = [max_global, max_t1, max_t2, max_t3, max_t4, max_t4_aut]
        .iter()
        .all(|&r| r < opts.tolerance);
    Ok(EquivarianceReport {
        tolerance: opts.tolerance,
        trials,
        max_global,
        max_t1,
        max_t2,
        max_t3,
        max_t4,
        max_t4_aut,
        pass,
    })
}

/// An asymmetric full tap table for the smallest configured path length.
fn sabotage_override(model: &Model) -> TapOverride {
    let d = model.config().channels;
    let k = model
        .config()
        .path_lengths
        .iter()
        .copied()
        .min()
        .unwrap_or(3);
    let h = model.config().path_half_width;
    let mut full = vec![0.0; (2 * h + 1) * d];
    for c in 0..d {
        full[h * d + c] = 1.0; // center tap
        full[(h + 1).min(2 * h) * d + c] = 0.8; // +1 tap only: breaks w(j) = w(−j)
    }
    TapOverride {
        path_length: k,
        full_taps: full,
    }
}

/// Runs the traced forward pass on the graph and its σ-permutation with
/// shared weights and measures per-sublayer residuals.
pub fn equivariance_trial(
    model: &Model,
    graph: &LabeledGraph,
    sigma: &Permutation,
    tap_override: Option<&TapOverride>,
) -> Result<TrialResiduals, ModelError> {
    let permuted = graph.permute(sigma)?;
    let trace_a = traced(model, graph, tap_override)?;
    let trace_b = traced(model, &permuted, tap_override)?;
    let mut residuals = TrialResiduals {
        trial: 0,
        vertices: graph.vertex_count(),
        global: (trace_a.output - trace_b.output).abs(),
        t1: 0.0,
        t2: 0.0,
        t3: 0.0,
        t4: 0.0,
        t4_aut: 0.0,
    };
    let d = model.config().channels;
    for (layer, (la, lb)) in trace_a.layers.iter().zip(&trace_b.layers).enumerate() {
        // T1: the narrowed per-vertex inputs correspond under σ.
        for v in 1..=graph.vertex_count() {
            let a = &la.h_in[v - 1];
            let b = &lb.h_in[sigma.apply(v) - 1];
            residuals.t1 = residuals.t1.max(max_abs_diff(a, b));
        }
        // Index the permuted trace's neurons by (kind, traversal).
        let mut index = std::collections::HashMap::new();
        for (i, neuron) in lb.neurons.iter().enumerate() {
            index.insert((neuron.kind, neuron.traversal.clone()), i);
        }
        for neuron in &la.neurons {
            match neuron.kind {
                BlockKind::Path(_) | BlockKind::Star => {
                    let image: Vec<usize> =
                        neuron.traversal.iter().map(|&v| sigma.apply(v)).collect();
                    let key = if neuron.kind == BlockKind::Star {
                        // Star traces are keyed by center only.
                        (neuron.kind, image.clone())
                    } else {
                        (neuron.kind, image)
                    };
                    let partner = &lb.neurons[*index
                        .get(&key)
                        .expect("enumeration is permutation-covariant")];
                    for (a, b) in neuron.lifted.iter().zip(&partner.lifted) {
                        residuals.t2 = residuals.t2.max(max_abs_diff(a, b));
                    }
                    residuals.t3 = residuals.t3.max(max_abs_diff(&neuron.promoted, &partner.promoted));
                    residuals.t4 =
                        residuals.t4.max(max_abs_diff(&neuron.convolved, &partner.convolved));
                }
                BlockKind::Cycle(m) => {
                    let image: Vec<usize> =
                        neuron.traversal.iter().map(|&v| sigma.apply(v)).collect();
                    let (partner, shift) = lb
                        .neurons
                        .iter()
                        .find_map(|candidate| {
                            if candidate.kind != neuron.kind {
                                return None;
                            }
                            rotation_shift(&image, &candidate.traversal).map(|s| (candidate, s))
                        })
                        .expect("one direction instance rotation-matches the image");
                    // Position z of the original maps to (z + shift) mod m.
                    for z in 0..m {
                        let zb = (z + shift) % m;
                        residuals.t2 = residuals
                            .t2
                            .max(max_abs_diff(&neuron.lifted[z], &partner.lifted[zb]));
                        let rows = |table: &[f64], row: usize| -> Vec<f64> {
                            table[row * d..(row + 1) * d].to_vec()
                        };
                        residuals.t3 = residuals.t3.max(
                            max_abs_diff(&rows(&neuron.promoted, z), &rows(&partner.promoted, zb)),
                        );
                        residuals.t3 = residuals.t3.max(max_abs_diff(
                            &rows(&neuron.promoted, m + z),
                            &rows(&partner.promoted, m + zb),
                        ));
                        residuals.t4 = residuals.t4.max(max_abs_diff(
                            &rows(&neuron.convolved, z),
                            &rows(&partner.convolved, zb),
                        ));
                        residuals.t4 = residuals.t4.max(max_abs_diff(
                            &rows(&neuron.convolved, m + z),
                            &rows(&partner.convolved, m + zb),
                        ));
                    }
                }
            }
            // T4 also asserts the conv stack's own automorphism
            // consistency: reflecting the input must reflect the output.
            residuals.t4_aut = residuals.t4_aut.max(reflection_residual(
                model,
                layer,
                neuron.kind,
                &neuron.promoted,
                tap_override,
            )?);
        }
        // The narrowed layer outputs feed the next T1.
        for v in 1..=graph.vertex_count() {
            let a = &la.h_out[v - 1];
            let b = &lb.h_out[sigma.apply(v) - 1];
            residuals.t4 = residuals.t4.max(max_abs_diff(a, b));
        }
    }
    Ok(residuals)
}

fn traced(
    model: &Model,
    graph: &LabeledGraph,
    tap_override: Option<&TapOverride>,
) -> Result<ForwardTrace, ModelError> {
    match tap_override {
        Some(over) => model.forward_with_tap_override(graph, over),
        None => model.forward_traced(graph),
    }
}

/// `shift` such that `candidate[(z + shift) % m] == image[z]` for all `z`.
fn rotation_shift(image: &[usize], candidate: &[usize]) -> Option<usize> {
    let m = image.len();
    if candidate.len() != m {
        return None;
    }
    let start = candidate.iter().position(|&v| v == image[0])?;
    for z in 0..m {
        if candidate[(start + z) % m] != image[z] {
            return None;
        }
    }
    Some(start)
}

/// Applies the block stack to the reflected table and compares with the
/// reflected stack output: zero for any dihedral taps and for symmetric
/// path filters, nonzero for asymmetric path taps.
fn reflection_residual(
    model: &Model,
    layer: usize,
    kind: BlockKind,
    promoted: &[f64],
    tap_override: Option<&TapOverride>,
) -> Result<f64, ModelError> {
    let d = model.config().channels;
    let reflect = |table: &[f64]| -> Vec<f64> {
        match kind {
            BlockKind::Path(k) => {
                let mut out = vec![0.0; table.len()];
                for u in 0..k {
                    out[(k - 1 - u) * d..(k - u) * d].copy_from_slice(&table[u * d..(u + 1) * d]);
                }
                out
            }
            BlockKind::Cycle(m) => {
                // The reflection fixing position 0: z ↦ (m − z) mod m,
                // swapping the rotation and reflection halves.
                let mut out = vec![0.0; table.len()];
                for z in 0..m {
                    let zr = (m - z) % m;
                    out[zr * d..(zr + 1) * d]
                        .copy_from_slice(&table[(m + z) * d..(m + z + 1) * d]);
                    out[(m + zr) * d..(m + zr + 1) * d]
                        .copy_from_slice(&table[z * d..(z + 1) * d]);
                }
                out
            }
            BlockKind::Star => table.to_vec(),
        }
    };
    let straight = model.apply_block_stack(layer, kind, promoted, tap_override)?;
    let reflected_in = model.apply_block_stack(layer, kind, &reflect(promoted), tap_override)?;
    Ok(max_abs_diff(&reflect(&straight), &reflected_in))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcnTrial {
    pub trial: usize,
    pub vertices: usize,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GcnOracleReport {
    pub tolerance: f64,
    pub trials: Vec<GcnTrial>,
    pub max_deviation: f64,
    pub pass: bool,
}

#[derive(Debug, Clone)]
pub struct GcnOracleOptions {
    pub trials: usize,
    pub seed: u64,
    pub max_vertices: usize,
    pub layer_count: usize,
    pub channels: usize,
    pub tolerance: f64,
    /// Negative control: perturb one reference weight.
    pub perturb: bool,
}

impl Default for GcnOracleOptions {
    fn default() -> Self {
        Self {
            trials: 30,
            seed: 0,
            max_vertices: 10,
            layer_count: 3,
            channels: 4,
            tolerance: Tolerances::default().gcn_oracle,
            perturb: false,
        }
    }
}

/// Star-configured network against the independent message-passing
/// implementation on random graphs.
pub fn run_gcn_oracle(opts: &GcnOracleOptions) -> Result<GcnOracleReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut trials = Vec::with_capacity(opts.trials);
    for trial in 0..opts.trials {
        let n = rng.gen_range(2..=opts.max_vertices.max(2));
        let graph = random_labeled_graph(&mut rng, n, 4, 2);
        let d = opts.channels;
        let initial: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut weights: Vec<Vec<f64>> = (0..opts.layer_count)
            .map(|_| (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let star = gcn_star_forward(&graph, &initial, &weights)?;
        if opts.perturb {
            weights[0][0] += 1e-3;
        }
        let reference = gcn_reference_forward(&graph, &initial, &weights);
        let max_deviation = star
            .iter()
            .zip(&reference)
            .map(|(a, b)| max_abs_diff(a, b))
            .fold(0.0, f64::max);
        trials.push(GcnTrial {
            trial,
            vertices: n,
            max_deviation,
        });
    }
    let max_deviation = trials.iter().map(|t| t.max_deviation).fold(0.0, f64::max);
    Ok(GcnOracleReport {
        tolerance: opts.tolerance,
        max_deviation,
        pass: max_deviation < opts.tolerance,
        trials,
    })
}

/// The synthetic regression task: count the undirected 6-cycles of sparse
/// random graphs with up to two planted hexagons, `n ≤ 14`.
pub fn count_cycles_dataset(count: usize, seed: u64) -> Vec<(LabeledGraph, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let planted = rng.gen_range(0..=2usize);
            let extra = match planted {
                0 => rng.gen_range(6..=12),
                1 => rng.gen_range(0..=6),
                _ => rng.gen_range(0..=2),
            };
            let n = 6 * planted + extra;
            let mut edges: Vec<(usize, usize, u32)> = Vec::new();
            for ring in 0..planted {
                let base = 6 * ring;
                for i in 1..=6 {
                    edges.push((base + i, base + (i % 6) + 1, rng.gen_range(0..3)));
                }
            }
            let first_free = 6 * planted + 1;
            for v in first_free..=n {
                if v == 1 {
                    continue;
                }
                let parent = rng.gen_range(1..v);
                edges.push((parent, v, rng.gen_range(0..3)));
            }
            if n >= 4 && rng.gen_bool(0.3) {
                let u = rng.gen_range(1..=n);
                let v = rng.gen_range(1..=n);
                let key = (u.min(v), u.max(v));
                if u != v && !edges.iter().any(|&(a, b, _)| (a.min(b), a.max(b)) == key) {
                    edges.push((key.0, key.1, rng.gen_range(0..3)));
                }
            }
            let labels = (0..n).map(|_| rng.gen_range(0..4u32)).collect();
            let graph = LabeledGraph::new(n, labels, edges).expect("generated graph");
            let target = graph
                .enumerate_cycles(&[6])
                .expect("length 6 is valid")
                .len() as f64
                / 2.0;
            (graph, target)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_permutation_gives_exactly_zero_residuals() {
        let model = Model::new(ModelConfig {
            channels: 4,
            readout_hidden: 4,
            seed: 3,
            ..ModelConfig::default()
        })
        .unwrap();
        let g = hexagon_graph();
        let id = Permutation::identity(6);
        let r = equivariance_trial(&model, &g, &id, None).unwrap();
        assert_eq!(r.global, 0.0);
        assert_eq!(r.t1, 0.0);
        assert_eq!(r.t2, 0.0);
        assert_eq!(r.t3, 0.0);
        assert_eq!(r.t4, 0.0);
        assert!(r.t4_aut <= 1e-12);
    }

    #[test]
    fn random_trials_pass_at_tolerance() {
        let opts = EquivarianceOptions {
            trials: 10,
            seed: 5,
            max_vertices: 9,
            config: ModelConfig {
                channels: 4,
                readout_hidden: 4,
                ..ModelConfig::default()
            },
            ..EquivarianceOptions::default()
        };
        let report = run_equivariance_suite(&opts).unwrap();
        assert!(report.pass, "max residuals: global {} t4 {}", report.max_global, report.max_t4);
    }

    #[test]
    fn sabotaged_filters_are_detected() {
        let opts = EquivarianceOptions {
            trials: 5,
            seed: 7,
            max_vertices: 9,
            sabotage: true,
            config: ModelConfig {
                channels: 4,
                readout_hidden: 4,
                ..ModelConfig::default()
            },
            ..EquivarianceOptions::default()
        };
        let report = run_equivariance_suite(&opts).unwrap();
        assert!(!report.pass);
        assert!(report.max_t4_aut > opts.tolerance);
    }

    #[test]
    fn gcn_oracle_passes_and_perturbation_fails() {
        let report = run_gcn_oracle(&GcnOracleOptions {
            trials: 10,
            seed: 11,
            ..GcnOracleOptions::default()
        })
        .unwrap();
        assert!(report.pass, "max deviation {}", report.max_deviation);

        let perturbed = run_gcn_oracle(&GcnOracleOptions {
            trials: 10,
            seed: 11,
            perturb: true,
            ..GcnOracleOptions::default()
        })
        .unwrap();
        assert!(!perturbed.pass);
    }

    #[test]
    fn cycle_dataset_targets_count_hexagons() {
        let dataset = count_cycles_dataset(40, 13);
        assert_eq!(dataset.len(), 40);
        let mut saw_positive = false;
        for (graph, target) in &dataset {
            assert!(graph.vertex_count() <= 14);
            assert!(graph.vertex_count() >= 6);
            let recount = graph.enumerate_cycles(&[6]).unwrap().len() as f64 / 2.0;
            assert_eq!(*target, recount);
            saw_positive |= *target > 0.0;
        }
        assert!(saw_positive);
    }

    #[test]
    fn wl_pair_differs_structurally() {
        let triangles = two_disjoint_triangles();
        let hexagon = hexagon_graph();
        assert_eq!(triangles.enumerate_cycles(&[6]).unwrap().len(), 0);
        assert_eq!(hexagon.enumerate_cycles(&[6]).unwrap().len(), 2);
        assert!(triangles.enumerate_paths(4, 4).unwrap().is_empty());
        assert!(!hexagon.enumerate_paths(4, 4).unwrap().is_empty());
    }
}
