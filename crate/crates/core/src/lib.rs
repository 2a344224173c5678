//! Random d-regular digraphs, a structural taxonomy of complex vectors,
//! l-decompositions of lattice vectors and the small-ball estimators built
//! on them.

pub mod ball;
pub mod decomposition;
pub mod ell;
pub mod estimators;
pub mod graph;
pub mod graph_stats;
pub mod harness;
pub mod io;
pub mod rng;
pub mod sampler;
pub mod spectral;
pub mod taxonomy;

pub use ell::{decompose, EllDecomposition, KVector, PartKind};
pub use graph::{ComplexShift, GraphError, RegularMatrix, RowMask};
