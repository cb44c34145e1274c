//! Interpretable treatment-assignment policies and explanation trees
//! distilled from heterogeneous treatment effect models.

pub mod cli;
pub mod data;
pub mod datagen;
pub mod distill_hte;
pub mod ensemble;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod policy;
pub mod policy_greedy;
pub mod policy_no_hte;
pub mod split;
pub mod teacher;
pub mod tree;

pub use data::{
    scalarize, split_three_way, ExperimentTable, OracleOutcomes, PotentialPredictionMatrix,
    ScalarizationWeights, SplitBundle, SplitIndices,
};
pub use error::{Error, Result};
pub use policy::{Policy, PolicyModel};
pub use tree::{apply_policy, unroll_tree, ArmLeaf, Node, PolicyTree, Segment, Tree};
