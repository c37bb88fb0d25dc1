//! A plain message-passing reference and its star-configured counterpart.
//!
//! [`gcn_reference_forward`] is an independent oracle: direct adjacency
//! loops, no narrowing, no promotion, no group machinery. The
//! star-configured network built from the neuron pipeline must reproduce
//! it exactly; keeping the two code paths disjoint is the point.

use crate::graph::LabeledGraph;
use crate::layers::{neuron_forward, Activation, ConvBlockWeights, KindFilter, LayerError, NeuronSpec};

/// Per-layer update `h'_v = ReLU(W_ℓ · Σ_{u∼v} h_u)` — no degree
/// normalization, no self-loop, no bias. `weights[ℓ]` is a row-major
/// `d × d` matrix.
pub fn gcn_reference_forward(
    graph: &LabeledGraph,
    initial: &[Vec<f64>],
    weights: &[Vec<f64>],
) -> Vec<Vec<f64>> {
    let n = graph.vertex_count();
    let d = initial.first().map(Vec::len).unwrap_or(0);
    let mut h = initial.to_vec();
    for w in weights {
        let mut next = vec![vec![0.0; d]; n];
        for v in 1..=n {
            let mut agg = vec![0.0; d];
            for &u in graph.neighbors(v) {
                for c in 0..d {
                    agg[c] += h[u - 1][c];
                }
            }
            for o in 0..d {
                let mut acc = 0.0;
                for (i, &a) in agg.iter().enumerate() {
                    acc += w[o * d + i] * a;
                }
                next[v - 1][o] = acc.max(0.0);
            }
        }
        h = next;
    }
    h
}

/// The same network written as an Autobahn over star subgraphs: one neuron
/// per vertex whose reference domain is its neighborhood, constant initial
/// activations, message aggregation through narrowing and promotion, and a
/// convolution against the constant function on the trivial group.
pub fn gcn_star_forward(
    graph: &LabeledGraph,
    initial: &[Vec<f64>],
    weights: &[Vec<f64>],
) -> Result<Vec<Vec<f64>>, LayerError> {
    let n = graph.vertex_count();
    let specs: Vec<NeuronSpec> = graph
        .enumerate_stars()
        .into_iter()
        .map(NeuronSpec::for_instance)
        .collect::<Result<_, _>>()?;
    let d = initial.first().map(Vec::len).unwrap_or(0);
    let mut acts: Vec<Activation> = initial
        .iter()
        .map(|h| Activation::Invariant(h.clone()))
        .collect();
    for w in weights {
        let block = ConvBlockWeights {
            filter: KindFilter::Star,
            mix: Some(w.clone()),
            bias: None,
        };
        let mut next = Vec::with_capacity(n);
        for v in 1..=n {
            let inputs: Vec<(&NeuronSpec, &Activation)> = graph
                .neighbors(v)
                .iter()
                .map(|&u| (&specs[u - 1], &acts[u - 1]))
                .collect();
            next.push(neuron_forward(&specs[v - 1], &inputs, &block, d)?);
        }
        acts = next;
    }
    Ok(acts
        .into_iter()
        .map(|a| match a {
            Activation::Invariant(v) => v,
            _ => unreachable!("star neurons produce invariant activations"),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn path_graph(n: usize) -> LabeledGraph {
        let edges: Vec<_> = (1..n).map(|v| (v, v + 1, 0)).collect();
        LabeledGraph::new(n, vec![0; n], edges).unwrap()
    }

    #[test]
    fn isolated_vertex_stays_at_relu_zero() {
        let g = LabeledGraph::new(1, vec![0], []).unwrap();
        let h = gcn_reference_forward(&g, &[vec![3.0, -2.0]], &[vec![1.0, 0.0, 0.0, 1.0]]);
        assert_eq!(h, vec![vec![0.0, 0.0]]);
    }

    #[test]
    fn p3_center_with_identity_weights() {
        let g = path_graph(3);
        let initial = vec![vec![1.0, 2.0], vec![10.0, 20.0], vec![-4.0, 5.0]];
        let eye = vec![1.0, 0.0, 0.0, 1.0];
        let h = gcn_reference_forward(&g, &initial, &[eye]);
        // Center aggregates its two ends; the ReLU clips channel 1's -3.
        assert_eq!(h[1], vec![0.0, 7.0]);
        assert_eq!(h[0], vec![10.0, 20.0]);
    }

    #[test]
    fn star_configuration_matches_reference_on_p3() {
        let g = path_graph(3);
        let initial = vec![vec![1.0, -1.0], vec![0.5, 0.25], vec![2.0, 3.0]];
        let w = vec![0.3, -0.7, 1.1, 0.2];
        let reference = gcn_reference_forward(&g, &initial, &[w.clone()]);
        let star = gcn_star_forward(&g, &initial, &[w]).unwrap();
        assert_eq!(reference, star);
    }

    #[test]
    fn star_configuration_matches_reference_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let n = rng.gen_range(2..=8);
            let mut edges = Vec::new();
            for u in 1..=n {
                for v in u + 1..=n {
                    if rng.gen_bool(0.4) {
                        edges.push((u, v, 0));
                    }
                }
            }
            let g = LabeledGraph::new(n, vec![0; n], edges).unwrap();
            let d = 3;
            let initial: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let weights: Vec<Vec<f64>> = (0..3)
                .map(|_| (0..d * d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            let reference = gcn_reference_forward(&g, &initial, &weights);
            let star = gcn_star_forward(&g, &initial, &weights).unwrap();
            for (a, b) in reference.iter().zip(&star) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() <= 1e-10);
                }
            }
        }
    }
}
