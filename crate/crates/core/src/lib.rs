//! Offline learning of a risk-sensitive POMDP from human-automation mission
//! logs, policy selection by value-at-risk, and a belief-tracking controller.

pub mod classifier;
pub mod error;
pub mod evaluation;
pub mod extra_trees;
pub mod fixture;
pub mod frg;
pub mod hmm;
pub mod io;
pub mod model;
pub mod observation;
pub mod par;
pub mod pipeline;
pub mod rng;
pub mod runtime;
pub mod solver;

pub use error::{Error, Result};
pub use model::{Belief, DiscreteMdp, DiscretePomdp};
