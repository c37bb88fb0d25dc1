//! Automorphism-based graph neural networks.
//!
//! The library decomposes a labeled graph into path, cycle and star
//! subgraphs, attaches activations to each subgraph's reference domain, and
//! applies convolutions that are equivariant to the subgraph's automorphism
//! group (dihedral for cycles, translation windows with symmetric filters
//! for paths). Narrowing and promotion move signals between reference
//! domains while preserving global permutation equivariance, which the
//! [`verify`] harness checks end to end.

pub mod gcn;
pub mod graph;
pub mod groupfn;
pub mod layers;
pub mod model;
pub mod perm;
pub mod scalar;
pub mod verify;
pub mod tape;

pub use gcn::{gcn_reference_forward, gcn_star_forward};
pub use graph::{GraphError, LabeledGraph, SubgraphInstance, SubgraphKind};
pub use layers::{
    aligned_convolve, lift_to_cycle, lift_to_path, narrow_to_vertex, neuron_forward,
    symmetric_poly, Activation, ConvBlockWeights, DomainSymmetry, KindFilter, LayerError,
    NeuronSpec,
};
pub use model::{
    featurize, BlockKind, EpochStats, Featurizer, ForwardTrace, Model, ModelConfig, ModelError,
    TrainReport, TrainSchedule,
};
pub use tape::{Tape, TapeError, TapeValue};
pub use verify::{
    count_cycles_dataset, run_equivariance_suite, run_gcn_oracle, EquivarianceOptions,
    EquivarianceReport, GcnOracleOptions, GcnOracleReport, Tolerances,
};

pub use groupfn::{
    dihedral_convolve, lift_from_base_space, path_convolve, FiniteGroup, GroupFnError,
    GroupFunction, GroupKind, PositionSignal, SymmetricFilter,
};
pub use perm::{coset_decompose, CosetDecomposition, OrderedSubset, PermError, Permutation};
