//! Numeric verification of the gradient-norm/entropy coupling.
//!
//! For a softmax policy the score function with respect to the logits has
//! squared norm 1 - 2 pi_k + sum_j pi_j^2 for a chosen action k, and its
//! expectation under the policy collapses to 1 - sum_j pi_j^2, i.e.
//! 1 - exp(-H2) where H2 is the Renyi-2 entropy. This module computes each
//! side independently so tests and the `verify` command can compare them,
//! and provides the two-route assembly check for the full modulated
//! gradient.

use std::collections::BTreeMap;

use rand::Rng;
use thiserror::Error;

use crate::model::{AdvantageRecord, Batch, StateId};
use crate::policy::{FactoredStepPolicy, PolicyError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoryError {
    #[error("probe must be a strictly positive distribution summing to 1 (got sum {0})")]
    NotADistribution(f64),
    #[error("action index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },
    #[error("advantage pipeline has not run: {0}")]
    PipelineNotRun(String),
    #[error(transparent)]
    Policy(#[from] PolicyError),
}

/// A strictly positive probability vector of dimension >= 2.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyProbe {
    pi: Vec<f64>,
}

impl PolicyProbe {
    pub fn new(pi: Vec<f64>) -> Result<Self, TheoryError> {
        let sum: f64 = pi.iter().sum();
        if pi.len() < 2 || (sum - 1.0).abs() > 1e-12 || pi.iter().any(|&p| p.is_nan() || p <= 0.0) {
            return Err(TheoryError::NotADistribution(sum));
        }
        Ok(PolicyProbe { pi })
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn dim(&self) -> usize {
        self.pi.len()
    }

    /// Collision probability sum_j pi_j^2.
    fn collision(&self) -> f64 {
        self.pi.iter().map(|p| p * p).sum()
    }
}

/// Squared score norm for a chosen action k: 1 - 2 pi_k + sum_j pi_j^2.
pub fn per_action_norm_sq(probe: &PolicyProbe, k: usize) -> Result<f64, TheoryError> {
    if k >= probe.dim() {
        return Err(TheoryError::IndexOutOfRange {
            index: k,
            dim: probe.dim(),
        });
    }
    Ok(1.0 - 2.0 * probe.pi[k] + probe.collision())
}

/// Expected squared score norm under the policy: 1 - sum_j pi_j^2.
pub fn expected_norm_sq(probe: &PolicyProbe) -> f64 {
    1.0 - probe.collision()
}

/// Renyi-2 entropy -ln(sum_j pi_j^2), in nats.
pub fn renyi2(probe: &PolicyProbe) -> f64 {
    -probe.collision().ln()
}

/// Monte Carlo estimate of the expected squared score norm: samples actions
/// from the probe, averages the per-action norms, and returns
/// (mean, standard error). `n_samples` must be >= 1.
pub fn monte_carlo_norm_sq<R: Rng>(
    probe: &PolicyProbe,
    n_samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    assert!(n_samples >= 1, "n_samples must be >= 1");
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..n_samples {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = probe.dim() - 1;
        for (i, &p) in probe.pi.iter().enumerate() {
            acc += p;
            if u < acc {
                k = i;
                break;
            }
        }
        let v = per_action_norm_sq(probe, k).expect("k in range");
        sum += v;
        sum_sq += v * v;
    }
    let n = n_samples as f64;
    let mean = sum / n;
    let std_err = if n_samples > 1 {
        let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    (mean, std_err)
}

/// Random point on the simplex: normalized exponentials of standard normals
/// (Box-Muller draws), i.e. a softmax of i.i.d. N(0,1) logits.
pub fn random_simplex<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    assert!(dim >= 2);
    let normals: Vec<f64> = (0..dim)
        .map(|_| {
            let u1: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
            let u2: f64 = rng.random();
            (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
        })
        .collect();
    crate::policy::softmax(&normals)
}

type LogitGrad = BTreeMap<(StateId, usize), Vec<f64>>;

fn accumulate(grad: &mut LogitGrad, state: StateId, scores: &[Vec<f64>], weight: f64) {
    for (position, score) in scores.iter().enumerate() {
        let slot = grad
            .entry((state, position))
            .or_insert_with(|| vec![0.0; score.len()]);
        for (g, s) in slot.iter_mut().zip(score) {
            *g += weight * s;
        }
    }
}

fn max_abs_diff(a: &LogitGrad, b: &LogitGrad) -> f64 {
    let mut worst: f64 = 0.0;
    for (key, va) in a {
        let vb = &b[key];
        for (x, y) in va.iter().zip(vb) {
            worst = worst.max((x - y).abs());
        }
    }
    worst
}

/// Assembles the total logit-space gradient two independent ways and returns
/// the maximum elementwise absolute discrepancy:
///
/// * route A: sum_t a_final(t) * score(t);
/// * route B: sum_t [a_outcome * g](t) * score(t)
///   + sum_t [zeta * f_next](t) * score(t)
///   - mean_batch(a_outcome * g + zeta * f_next) * sum_t score(t).
///
/// Both should agree to rounding; the contract is < 1e-10.
pub fn gradient_assembly_identity(
    batch: &Batch,
    records: &[AdvantageRecord],
    policy: &FactoredStepPolicy,
    zeta: f64,
) -> Result<f64, TheoryError> {
    if records.is_empty() {
        return Err(TheoryError::PipelineNotRun("no records".into()));
    }
    if records.iter().any(|r| !r.a_final.is_finite()) {
        return Err(TheoryError::PipelineNotRun("a_final not finalized".into()));
    }

    let mut route_a: LogitGrad = BTreeMap::new();
    let mut route_b: LogitGrad = BTreeMap::new();

    // Recompute the mean shift from components, independent of a_mod/a_final.
    let mean_shift = records
        .iter()
        .map(|r| r.a_outcome * r.g + zeta * r.f_next.unwrap_or(0.0))
        .sum::<f64>()
        / records.len() as f64;

    for r in records {
        let traj = batch
            .trajectories
            .get(r.traj_index)
            .ok_or_else(|| TheoryError::PipelineNotRun("record/batch mismatch".into()))?;
        let step = traj
            .steps
            .get(r.step_index)
            .ok_or_else(|| TheoryError::PipelineNotRun("record/batch mismatch".into()))?;
        let scores = policy.score_logits(step.state, &step.action)?;

        accumulate(&mut route_a, step.state, &scores, r.a_final);

        accumulate(&mut route_b, step.state, &scores, r.a_outcome * r.g);
        if let Some(f) = r.f_next {
            accumulate(&mut route_b, step.state, &scores, zeta * f);
        }
        accumulate(&mut route_b, step.state, &scores, -mean_shift);
    }

    Ok(max_abs_diff(&route_a, &route_b))
}
