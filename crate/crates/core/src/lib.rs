//! Entropy-modulated policy gradients (EMPG) on desk-scale environments.
//!
//! The crate trains tabular softmax policies on small, seeded, sparse-reward
//! environments using group-relative outcome advantages (GRPO), then reshapes
//! the per-step learning signal with two entropy-driven terms:
//!
//! * **self-calibrating gradient scaling** `g(H)` — a batch-mean-normalized
//!   exponential of the step's normalized entropy that amplifies confident
//!   steps and attenuates uncertain ones while keeping the batch mean of `g`
//!   pinned to one;
//! * **future clarity bonus** `ζ·f(H_next)` — an additive bonus for actions
//!   that lead into low-entropy next steps, skipped at terminal steps.
//!
//! The pipeline per batch is: trajectory returns → zero-variance group
//! filtering → GRPO z-scores → step entropies → batch min-max normalization →
//! scaling factors → clarity bonuses → modulated advantage → final zero-mean
//! normalization. [`theory`] numerically verifies the gradient-norm/entropy
//! coupling that motivates the scaling term, and [`analysis`] provides the
//! offline diagnostics (entropy-percentile shifts, learning-curve tables).

pub mod advantage;
pub mod analysis;
pub mod config;
pub mod entropy;
pub mod envs;
pub mod model;
pub mod modulation;
pub mod policy;
pub mod seeding;
pub mod theory;
pub mod trainer;
