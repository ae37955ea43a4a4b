//! Risk-neutral terminal-price distributions.
//!
//! Two models are provided: the lognormal (Black–Scholes) model and a
//! jump-at-default model in which the asset diffuses with volatility
//! `sigma1` until an exponential default time, jumps by the factor
//! `1 - gamma` and then diffuses with volatility `sigma2`.

use std::f64::consts::{PI, SQRT_2};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{ensure_finite, ensure_positive, ReplError, Result};
use crate::quadrature::{self, QuadratureSpec, TAIL_EPS};

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// A risk-neutral distribution of the terminal price `S_T`.
pub trait AssetModel: Send + Sync {
    fn spot(&self) -> f64;
    fn rate(&self) -> f64;
    fn maturity(&self) -> f64;

    fn discount(&self) -> f64 {
        (-self.rate() * self.maturity()).exp()
    }

    /// `E[S_T]`. Both models are martingales after discounting.
    fn forward(&self) -> f64 {
        self.spot() * (self.rate() * self.maturity()).exp()
    }

    fn density(&self, s: f64) -> f64;
    fn cdf(&self, s: f64) -> f64;

    /// `P(S_T > s)`, computed without cancellation where possible.
    fn survival(&self, s: f64) -> f64 {
        1.0 - self.cdf(s)
    }

    fn call_price(&self, strike: f64) -> Result<f64>;
    fn put_price(&self, strike: f64) -> Result<f64>;

    /// Cash-or-nothing call paying 1 on `{S_T > K}`.
    fn digital_call(&self, strike: f64) -> Result<f64> {
        ensure_positive("strike", strike)?;
        Ok(self.discount() * self.survival(strike))
    }

    /// Cash-or-nothing put paying 1 on `{S_T < K}`.
    fn digital_put(&self, strike: f64) -> Result<f64> {
        ensure_positive("strike", strike)?;
        Ok(self.discount() * self.cdf(strike))
    }

    /// One exact draw of `S_T`.
    fn draw(&self, rng: &mut dyn RngCore) -> f64;

    /// An antithetic pair sharing every source of randomness except the sign
    /// of the Gaussian shock.
    fn draw_antithetic(&self, rng: &mut dyn RngCore) -> (f64, f64);

    fn as_lognormal(&self) -> Option<&LognormalModel> {
        None
    }
}

/// Lower and upper truncation points carrying less than [`TAIL_EPS`] mass each.
pub fn truncation(model: &dyn AssetModel) -> (f64, f64) {
    let start = model.spot();
    let lo = quadrature::lower_cutoff(|s| model.cdf(s), start, TAIL_EPS);
    let hi = quadrature::upper_cutoff(|s| model.survival(s), start, TAIL_EPS);
    (lo, hi)
}

/// `∫_{lower}^{∞} f(S) g(S) dS`, truncated at the model's tail cutoffs.
pub fn expectation<F>(model: &dyn AssetModel, f: F, lower: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    let (lo, hi) = truncation(model);
    expectation_between(model, f, lower.max(lo), hi, spec)
}

/// `∫_a^b f(S) g(S) dS` with break points spaced evenly in `ln S`.
pub fn expectation_between<F>(
    model: &dyn AssetModel,
    f: F,
    a: f64,
    b: f64,
    spec: &QuadratureSpec,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if b <= a {
        return Ok(0.0);
    }
    let breaks = if a > 0.0 {
        quadrature::geometric_breaks(a, b, 64)
    } else {
        quadrature::uniform_breaks(a, b, 64)
    };
    quadrature::integrate_partitioned(
        |s| {
            let g = model.density(s);
            if g == 0.0 {
                0.0
            } else {
                f(s) * g
            }
        },
        &breaks,
        spec,
    )
}

/// Deterministic generator for stream `stream` of seed `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// `count` i.i.d. draws of `S_T`, reproducible from `seed`.
pub fn sample(model: &dyn AssetModel, seed: u64, count: usize) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    (0..count).map(|_| model.draw(&mut rng)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LognormalModel {
    pub s0: f64,
    pub r: f64,
    pub sigma: f64,
    pub t: f64,
}

impl LognormalModel {
    pub fn new(s0: f64, r: f64, sigma: f64, t: f64) -> Result<Self> {
        ensure_positive("S0", s0)?;
        ensure_finite("r", r)?;
        ensure_positive("sigma", sigma)?;
        ensure_positive("T", t)?;
        Ok(Self { s0, r, sigma, t })
    }

    fn log_mean(&self) -> f64 {
        self.s0.ln() + (self.r - 0.5 * self.sigma * self.sigma) * self.t
    }

    fn log_sd(&self) -> f64 {
        self.sigma * self.t.sqrt()
    }

    fn d1_d2(&self, strike: f64) -> (f64, f64) {
        let sd = self.log_sd();
        let d1 = ((self.s0 / strike).ln() + (self.r + 0.5 * self.sigma * self.sigma) * self.t) / sd;
        (d1, d1 - sd)
    }
}

/// Black–Scholes call value at time zero.
pub fn bs_call(model: &LognormalModel, strike: f64) -> Result<f64> {
    ensure_positive("strike", strike)?;
    let (d1, d2) = model.d1_d2(strike);
    Ok(model.s0 * norm_cdf(d1) - strike * (-model.r * model.t).exp() * norm_cdf(d2))
}

pub fn bs_put(model: &LognormalModel, strike: f64) -> Result<f64> {
    ensure_positive("strike", strike)?;
    let (d1, d2) = model.d1_d2(strike);
    Ok(strike * (-model.r * model.t).exp() * norm_cdf(-d2) - model.s0 * norm_cdf(-d1))
}

pub fn bs_digital_call(model: &LognormalModel, strike: f64) -> Result<f64> {
    ensure_positive("strike", strike)?;
    let (_, d2) = model.d1_d2(strike);
    Ok((-model.r * model.t).exp() * norm_cdf(d2))
}

pub fn bs_digital_put(model: &LognormalModel, strike: f64) -> Result<f64> {
    ensure_positive("strike", strike)?;
    let (_, d2) = model.d1_d2(strike);
    Ok((-model.r * model.t).exp() * norm_cdf(-d2))
}

impl AssetModel for LognormalModel {
    fn spot(&self) -> f64 {
        self.s0
    }
    fn rate(&self) -> f64 {
        self.r
    }
    fn maturity(&self) -> f64 {
        self.t
    }

    fn density(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let sd = self.log_sd();
        norm_pdf((s.ln() - self.log_mean()) / sd) / (s * sd)
    }

    fn cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        norm_cdf((s.ln() - self.log_mean()) / self.log_sd())
    }

    fn survival(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 1.0;
        }
        norm_cdf(-(s.ln() - self.log_mean()) / self.log_sd())
    }

    fn call_price(&self, strike: f64) -> Result<f64> {
        bs_call(self, strike)
    }
    fn put_price(&self, strike: f64) -> Result<f64> {
        bs_put(self, strike)
    }
    fn digital_call(&self, strike: f64) -> Result<f64> {
        bs_digital_call(self, strike)
    }
    fn digital_put(&self, strike: f64) -> Result<f64> {
        bs_digital_put(self, strike)
    }

    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (self.log_mean() + self.log_sd() * z).exp()
    }

    fn draw_antithetic(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let z: f64 = StandardNormal.sample(rng);
        let (m, sd) = (self.log_mean(), self.log_sd());
        ((m + sd * z).exp(), (m - sd * z).exp())
    }

    fn as_lognormal(&self) -> Option<&LognormalModel> {
        Some(self)
    }
}

/// Jump-at-default model under the risk-neutral measure.
///
/// Before default the drift `r + lambda m` compensates the expected loss
/// `m = Σ p_i gamma_i`; at default the price is multiplied by `1 - gamma`
/// with `gamma = gamma_i` with probability `p_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterpartyModel {
    pub s0: f64,
    pub r: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub lambda: f64,
    pub jump_fractions: Vec<f64>,
    pub jump_probs: Vec<f64>,
    pub t: f64,
    mean_loss: f64,
    #[serde(skip, default)]
    time_spec: QuadratureSpec,
}

impl CounterpartyModel {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        s0: f64,
        r: f64,
        sigma1: f64,
        sigma2: f64,
        lambda: f64,
        jump_fractions: Vec<f64>,
        jump_probs: Vec<f64>,
        t: f64,
    ) -> Result<Self> {
        ensure_positive("S0", s0)?;
        ensure_finite("r", r)?;
        ensure_positive("sigma1", sigma1)?;
        ensure_positive("sigma2", sigma2)?;
        ensure_positive("T", t)?;
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(ReplError::Domain(format!("lambda must be >= 0, got {lambda}")));
        }
        if jump_fractions.is_empty() || jump_fractions.len() != jump_probs.len() {
            return Err(ReplError::Domain(
                "gammas and probs must be nonempty lists of equal length".into(),
            ));
        }
        for &g in &jump_fractions {
            if !g.is_finite() || g > 1.0 {
                return Err(ReplError::Domain(format!(
                    "jump fraction must be finite and <= 1, got {g}"
                )));
            }
            if g == 1.0 {
                return Err(ReplError::Unsupported(
                    "jump fraction 1 puts an atom at S = 0, which has no density".into(),
                ));
            }
        }
        if jump_probs.iter().any(|&p| !(p.is_finite() && p >= 0.0)) {
            return Err(ReplError::Domain("jump probabilities must be >= 0".into()));
        }
        let total: f64 = jump_probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ReplError::Domain(format!(
                "jump probabilities must sum to 1, got {total}"
            )));
        }
        let mean_loss = jump_fractions
            .iter()
            .zip(&jump_probs)
            .map(|(g, p)| g * p)
            .sum();
        Ok(Self {
            s0,
            r,
            sigma1,
            sigma2,
            lambda,
            jump_fractions,
            jump_probs,
            t,
            mean_loss,
            time_spec: QuadratureSpec::default(),
        })
    }

    /// Overrides the rule used for the integrals over the default time.
    pub fn with_time_quadrature(mut self, spec: QuadratureSpec) -> Self {
        self.time_spec = spec;
        self
    }

    /// Mean jump fraction `m = E[gamma]`.
    pub fn mean_loss(&self) -> f64 {
        self.mean_loss
    }

    /// Mean of `ln(S_T / (S0 (1 - gamma)))` given default at `t`.
    pub fn a(&self, t: f64) -> f64 {
        (self.r + self.lambda * self.mean_loss - 0.5 * self.sigma1 * self.sigma1) * t
            + (self.r - 0.5 * self.sigma2 * self.sigma2) * (self.t - t)
    }

    /// Standard deviation of `ln S_T` given default at `t`.
    pub fn b(&self, t: f64) -> f64 {
        (self.sigma1 * self.sigma1 * t + self.sigma2 * self.sigma2 * (self.t - t)).sqrt()
    }

    fn atoms(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.jump_fractions
            .iter()
            .zip(&self.jump_probs)
            .filter(|(_, p)| **p > 0.0)
            .map(|(g, p)| (*g, *p))
    }

    /// `∫_0^T λ e^{-λt} k(t) dt`; zero when there is no default risk.
    fn default_time_integral<K: Fn(f64) -> f64>(&self, k: K) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let lambda = self.lambda;
        let integrand = |t: f64| lambda * (-lambda * t).exp() * k(t);
        match quadrature::integrate(integrand, 0.0, self.t, &self.time_spec) {
            Ok(v) => v,
            // smooth integrands on a finite interval; keep the best estimate
            Err(ReplError::Accuracy { estimate, .. }) => estimate,
            Err(_) => f64::NAN,
        }
    }

    fn survival_weight(&self) -> f64 {
        (-self.lambda * self.t).exp()
    }

    fn check_strike(strike: f64) -> Result<()> {
        ensure_positive("strike", strike)
    }
}

/// Distribution function of `S_T` (survival term plus default-time integral).
pub fn cp_cdf(model: &CounterpartyModel, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let ln_s = (s / model.s0).ln();
    let bt = model.b(model.t);
    let alive = model.survival_weight() * norm_cdf((ln_s - model.a(model.t)) / bt);
    let defaulted = model.default_time_integral(|t| {
        let (a, b) = (model.a(t), model.b(t));
        model
            .atoms()
            .map(|(g, p)| p * norm_cdf((ln_s - (1.0 - g).ln() - a) / b))
            .sum()
    });
    alive + defaulted
}

fn cp_survival(model: &CounterpartyModel, s: f64) -> f64 {
    if s <= 0.0 {
        return 1.0;
    }
    let ln_s = (s / model.s0).ln();
    let bt = model.b(model.t);
    let alive = model.survival_weight() * norm_cdf(-(ln_s - model.a(model.t)) / bt);
    let defaulted = model.default_time_integral(|t| {
        let (a, b) = (model.a(t), model.b(t));
        model
            .atoms()
            .map(|(g, p)| p * norm_cdf(-(ln_s - (1.0 - g).ln() - a) / b))
            .sum()
    });
    alive + defaulted
}

/// Density of `S_T`: a continuous mixture of lognormal densities.
pub fn cp_density(model: &CounterpartyModel, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    let ln_s = (s / model.s0).ln();
    let bt = model.b(model.t);
    let alive = model.survival_weight() * norm_pdf((ln_s - model.a(model.t)) / bt) / (s * bt);
    let defaulted = model.default_time_integral(|t| {
        let (a, b) = (model.a(t), model.b(t));
        model
            .atoms()
            .map(|(g, p)| p * norm_pdf((ln_s - (1.0 - g).ln() - a) / b) / (s * b))
            .sum()
    });
    alive + defaulted
}

/// Call value at time zero under counterparty risk.
pub fn cp_call(model: &CounterpartyModel, strike: f64) -> Result<f64> {
    CounterpartyModel::check_strike(strike)?;
    let (r, t, lambda, m, s0) = (model.r, model.t, model.lambda, model.mean_loss, model.s0);
    let bt = model.b(t);
    let d0 = (model.a(t) - (strike / s0).ln()) / bt;
    let alive = s0 * (-(1.0 - m) * lambda * t).exp() * norm_cdf(d0 + bt)
        - strike * (-(r + lambda) * t).exp() * norm_cdf(d0);
    let defaulted = model.default_time_integral(|tau| {
        let (a, b) = (model.a(tau), model.b(tau));
        let growth = (a + 0.5 * b * b).exp();
        model
            .atoms()
            .map(|(g, p)| {
                let base = s0 * (1.0 - g);
                let d = (a - (strike / base).ln()) / b;
                p * (base * growth * norm_cdf(d + b) - strike * norm_cdf(d))
            })
            .sum()
    });
    let value = alive + (-r * t).exp() * defaulted;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ReplError::Numeric(format!("call price not finite at K = {strike}")))
    }
}

/// Put value from the counterparty put–call parity relation.
pub fn cp_put(model: &CounterpartyModel, strike: f64) -> Result<f64> {
    let call = cp_call(model, strike)?;
    let (r, t, lambda, m, s0) = (model.r, model.t, model.lambda, model.mean_loss, model.s0);
    let growth_integral = if lambda == 0.0 {
        0.0
    } else {
        let integrand = |tau: f64| {
            let (a, b) = (model.a(tau), model.b(tau));
            (a + 0.5 * b * b - lambda * tau).exp()
        };
        match quadrature::integrate(integrand, 0.0, t, &model.time_spec) {
            Ok(v) => v,
            Err(ReplError::Accuracy { estimate, .. }) => estimate,
            Err(e) => return Err(e),
        }
    };
    let carry: f64 = model.atoms().map(|(g, p)| p * (1.0 - g)).sum();
    let parity = strike * (-r * t).exp()
        - s0 * (-(1.0 - m) * lambda * t).exp()
        - lambda * s0 * (-r * t).exp() * growth_integral * carry;
    Ok(call + parity)
}

impl AssetModel for CounterpartyModel {
    fn spot(&self) -> f64 {
        self.s0
    }
    fn rate(&self) -> f64 {
        self.r
    }
    fn maturity(&self) -> f64 {
        self.t
    }
    fn density(&self, s: f64) -> f64 {
        cp_density(self, s)
    }
    fn cdf(&self, s: f64) -> f64 {
        cp_cdf(self, s)
    }
    fn survival(&self, s: f64) -> f64 {
        cp_survival(self, s)
    }
    fn call_price(&self, strike: f64) -> Result<f64> {
        cp_call(self, strike)
    }
    fn put_price(&self, strike: f64) -> Result<f64> {
        cp_put(self, strike)
    }

    fn draw(&self, rng: &mut dyn RngCore) -> f64 {
        let (log_mean, base, sd) = self.draw_regime(rng);
        let z: f64 = StandardNormal.sample(rng);
        base * (log_mean + sd * z).exp()
    }

    fn draw_antithetic(&self, rng: &mut dyn RngCore) -> (f64, f64) {
        let (log_mean, base, sd) = self.draw_regime(rng);
        let z: f64 = StandardNormal.sample(rng);
        (
            base * (log_mean + sd * z).exp(),
            base * (log_mean - sd * z).exp(),
        )
    }
}

impl CounterpartyModel {
    /// Draws the default time and jump, returning the conditional log-mean,
    /// the post-jump base price and the conditional log-volatility.
    fn draw_regime(&self, rng: &mut dyn RngCore) -> (f64, f64, f64) {
        let tau = if self.lambda > 0.0 {
            Exp::new(self.lambda)
                .expect("lambda validated positive")
                .sample(rng)
        } else {
            f64::INFINITY
        };
        if tau >= self.t {
            return (self.a(self.t), self.s0, self.b(self.t));
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut gamma = *self.jump_fractions.last().expect("nonempty");
        for (g, p) in self.jump_fractions.iter().zip(&self.jump_probs) {
            acc += p;
            if u < acc {
                gamma = *g;
                break;
            }
        }
        (self.a(tau), self.s0 * (1.0 - gamma), self.b(tau))
    }
}
