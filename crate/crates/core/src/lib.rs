//! Neural speaker and listener agents that learn miniature artificial
//! languages, then adapt them while communicating.

pub mod agents;
pub mod error;
pub mod grammar;
pub mod metrics;
pub mod nn;
pub mod training;

pub use error::{Error, Result};
pub use grammar::{GrammarSpec, Meaning, Token, Utterance, UtteranceClass, Vocabulary};
pub use training::{run_experiment, RunOutcome, RunTrajectory, TrainConfig};
