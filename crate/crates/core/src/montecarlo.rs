//! Seeded Monte Carlo estimates of discounted payoff expectations.
//!
//! Paths are split into a fixed number of batches, each drawing from its own
//! stream of the seed. Batch statistics are merged in batch order, so the
//! estimate does not depend on how many threads ran the batches.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, ReplError, Result};
use crate::models::{stream_rng, AssetModel};
use crate::payoffs::Payoff;

pub const BATCHES: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McSpec {
    pub paths: u64,
    pub seed: u64,
    pub antithetic: bool,
}

impl Default for McSpec {
    fn default() -> Self {
        Self {
            paths: 1_000_000,
            seed: 20_240_601,
            antithetic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    /// Terminal prices drawn (antithetic partners included).
    pub paths: u64,
}

#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    count: u64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    fn merge(self, other: Moments) -> Moments {
        if self.count == 0 {
            return other;
        }
        if other.count == 0 {
            return self;
        }
        let count = self.count + other.count;
        let delta = other.mean - self.mean;
        let weight = other.count as f64 / count as f64;
        Moments {
            count,
            mean: self.mean + delta * weight,
            m2: self.m2 + other.m2 + delta * delta * self.count as f64 * weight,
        }
    }
}

/// `e^{-rT} E[f(S_T)] · notional` with its standard error. With antithetic
/// sampling each observation is the average over a pair, and
/// `ceil(paths / 2)` pairs are drawn.
pub fn estimate(payoff: &dyn Payoff, model: &dyn AssetModel, spec: &McSpec, notional: f64) -> Result<McEstimate> {
    if spec.paths == 0 {
        return Err(ReplError::Domain("paths must be >= 1".into()));
    }
    ensure_positive("notional", notional)?;
    let observations = if spec.antithetic {
        spec.paths.div_ceil(2)
    } else {
        spec.paths
    };
    let per_batch = observations / BATCHES;
    let extra = observations % BATCHES;
    let batches: Vec<Moments> = (0..BATCHES)
        .into_par_iter()
        .map(|b| {
            let count = per_batch + u64::from(b < extra);
            let mut rng = stream_rng(spec.seed, b);
            let mut m = Moments::default();
            for _ in 0..count {
                let x = if spec.antithetic {
                    let (s1, s2) = model.draw_antithetic(&mut rng);
                    0.5 * (payoff.value(s1) + payoff.value(s2))
                } else {
                    payoff.value(model.draw(&mut rng))
                };
                m.push(x);
            }
            m
        })
        .collect();
    let total = batches.into_iter().fold(Moments::default(), Moments::merge);
    let scale = model.discount() * notional;
    let variance = if total.count > 1 {
        total.m2 / (total.count - 1) as f64
    } else {
        0.0
    };
    let mean = scale * total.mean;
    let std_error = scale * (variance / total.count as f64).sqrt();
    if !(mean.is_finite() && std_error.is_finite()) {
        return Err(ReplError::Numeric("Monte Carlo estimate not finite".into()));
    }
    Ok(McEstimate {
        mean,
        std_error,
        paths: if spec.antithetic { 2 * total.count } else { total.count },
    })
}
