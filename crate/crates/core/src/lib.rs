//! Label-free test-time reinforcement learning on a synthetic multiple-choice
//! environment.
//!
//! The pipeline: vote a pseudo-label per question by majority over sampled
//! answers ([`labeling`]), then adapt the policy with clipped group-relative
//! policy gradients ([`grpo`]) whose advantages are scaled by the pseudo-label
//! confidence ([`advantage`]) and drawn with multiple-attempt sampling
//! ([`sampling`]). [`trainer`] ties the stages together without ever seeing
//! the hidden answers; [`evaluation`] and [`analysis`] are the oracle side.

pub mod advantage;
pub mod analysis;
pub mod env;
pub mod error;
pub mod evaluation;
pub mod grpo;
pub mod labeling;
pub mod policy;
pub mod reward;
pub mod rng;
pub mod sampling;
pub mod trainer;

pub use error::{Result, TtrlError};
