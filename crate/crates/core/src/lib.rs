//! Adaptive offering policies for the sequential hiring problem.
//!
//! A pool of applicants, each with a value and an acceptance probability,
//! competes for `k` positions over `T` stages; one offer is made per stage.
//! The crate provides exact and greedy solvers, the rounding pipeline,
//! canonical tree transformations, the class-vector dynamic program, block
//! policies, the guessing-based approximation scheme, and a Monte Carlo
//! evaluator.
//!
//! Every algorithm is generic over [`Scalar`]; the aliases below fix the
//! common choices.

pub mod block;
pub mod canonical;
pub mod error;
pub mod eval;
pub mod exact;
pub mod instance;
pub mod ptas;
pub mod qptas;
pub mod rounding;
pub mod scalar;
pub mod set;
pub mod tree;

pub use error::{Error, Result};
pub use instance::{validate_instance, Flavor, Instance};
pub use scalar::Scalar;
pub use set::AppSet;
pub use tree::{DecisionTree, NodeId, State, TreeNode, VIRTUAL};

pub use num_rational::BigRational;

pub type Instance64 = Instance<f64>;
pub type Instance32 = Instance<f32>;
pub type InstanceQ = Instance<BigRational>;
