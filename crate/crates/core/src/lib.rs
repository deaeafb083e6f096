//! Dimension-reduced stochastic second-order policy optimization on small
//! tabular MDPs, with exact enumeration oracles for every estimator.

// Negated comparisons reject NaN on purpose; index loops walk parallel arrays.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod estimators;
pub mod harness;
pub mod mdp;
pub mod numerics;
pub mod optimizers;
pub mod policy;
pub mod trust_region;
