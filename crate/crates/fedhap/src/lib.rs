//! Federated supervised hashing with adversarially sharpened prototype
//! codes.
//!
//! Clients train a hash head that maps feature vectors to relaxed codes in
//! (-1, 1)^K using triplet losses against in-batch samples and against
//! globally aggregated class prototype codes, a quantization penalty, and an
//! adversarial critic that pushes local codes toward the prototypes. A
//! server averages model parameters and re-aggregates prototypes each
//! round. Retrieval quality is measured by Hamming ranking over binarized
//! codes.
//!
//! Entry points: [`runner::execute_run`] drives a full experiment from a
//! [`runner::RunConfig`]; the `fedhap` binary wraps it in a CLI.

pub mod data;
pub mod error;
pub mod eval;
pub mod federation;
pub mod loss;
pub mod model;
pub mod nn;
pub mod prototypes;
pub mod runner;
pub mod seeding;

pub use error::{Error, Result};
