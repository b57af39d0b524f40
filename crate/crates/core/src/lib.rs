//! Sequential model cascades with a learned halting selector.
//!
//! A cascade runs base classifiers one after another and asks a small
//! recurrent selector after each step whether the running average is good
//! enough to stop. Base models and selector are trained stage by stage with a
//! joint objective that trades ensemble accuracy against the expected number
//! of models executed.

pub mod baselines;
pub mod datahub;
pub mod error;
pub mod evalkit;
pub mod halting;
pub mod losses;
pub mod nets;
pub mod numgraph;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
