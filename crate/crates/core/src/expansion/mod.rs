//! L-block cluster expansion at desk scale.

pub mod kp;
pub mod polymers;
pub mod stages;

pub use kp::{avoidance_oracle, hard_core_sum, kp_condition_check, random_polymer_system, ursell, AvoidanceResult, KpReport, KpSite};
pub use polymers::{
    all_activities, cluster_sum, epsilon_l, numerator_decomposition, polymer_activity, polymer_weights,
    NumeratorDecomposition, NumeratorTerm, Polymer, PolymerActivity, PolymerWeights,
};
pub use stages::{iterated_block_sum, IteratedSumResult, ModifiedExpectation, StageTerms};
