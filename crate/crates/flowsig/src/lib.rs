//! Design and certification of self-fulfilling Gaussian traffic signals for
//! network congestion games under incomplete information.
//!
//! A coordinator ("sender") commits to a Gaussian signal about edge flows;
//! agents with heterogeneous Gaussian priors update their beliefs and pick
//! cheapest-expected-cost routes. The library predicts the induced outcome
//! flow, solves for signal means that reproduce themselves (so the
//! commitment stays truthful), certifies whether repeated play converges to
//! them via the spectral radius of the prediction Jacobian, and validates
//! everything against an agent-level simulator.

pub mod error;
pub mod designer;
pub mod files;
pub mod game;
pub mod gaussian;
pub mod minority;
pub mod mvncdf;
pub mod netgen;
pub mod prediction;
pub mod simulator;

pub use error::{Error, Result};
