//! Least-squares weights for calls at fixed, market-given strikes.
//!
//! Minimizing `E[(f(S) - Σ w_j (S - X̄_j)^+)^2]` over `w` gives `Q w = u`
//! with `q_ij = E[(S - X̄_i)^+ (S - X̄_j)^+]` and `u_i = E[(S - X̄_i)^+ f(S)]`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equidistribution::EquidistConfig;
use crate::error::{ensure_positive, ReplError, Result};
use crate::models::{self, norm_cdf, AssetModel, LognormalModel};
use crate::payoffs::{ModifiedPayoff, Payoff, ScaledPayoff};
use crate::quadrature::QuadratureSpec;
use crate::spline::{decompose, Form};
use crate::valuation::{self, DEFAULT_NOTIONAL};

/// Condition numbers above this are reported as warnings.
pub const COND_WARN: f64 = 1e12;
/// Condition numbers above this make the solve fail.
pub const COND_LIMIT: f64 = 1e14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UMethod {
    /// Direct quadrature of `(S - X̄_i) f(S) g(S)`.
    #[default]
    Quadrature,
    /// Replicate `(S - X̄_i)^+ f(S)` on `[X̄_i, upper]` and undiscount its price.
    Replication,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadHedgeConfig {
    pub u_method: UMethod,
    pub notional: f64,
    /// Interval count for the replication method.
    pub replication_intervals: usize,
    /// Upper strike for the replication method; the model's tail cutoff when absent.
    pub replication_upper: Option<f64>,
}

impl Default for QuadHedgeConfig {
    fn default() -> Self {
        Self {
            u_method: UMethod::Quadrature,
            notional: DEFAULT_NOTIONAL,
            replication_intervals: 320,
            replication_upper: None,
        }
    }
}

fn check_strikes(strikes: &[f64]) -> Result<()> {
    if strikes.is_empty() {
        return Err(ReplError::Domain("need at least one strike".into()));
    }
    for &x in strikes {
        ensure_positive("strike", x)?;
    }
    Ok(())
}

/// Closed-form `q_ij` under the lognormal model.
pub fn q_entry(model: &LognormalModel, xi: f64, xj: f64) -> Result<f64> {
    ensure_positive("strike", xi)?;
    ensure_positive("strike", xj)?;
    let (s0, r, sigma, t) = (model.s0, model.r, model.sigma, model.t);
    let m = xi.max(xj);
    let vol = sigma * t.sqrt();
    let d1 = ((s0 / m).ln() + (r + 0.5 * sigma * sigma) * t) / vol;
    let d2 = d1 - vol;
    let d0 = d1 + vol;
    Ok(s0 * s0 * norm_cdf(d0) * ((2.0 * r + sigma * sigma) * t).exp()
        - (xi + xj) * s0 * norm_cdf(d1) * (r * t).exp()
        + xi * xj * norm_cdf(d2))
}

/// `q_ij` by quadrature against the model density.
pub fn q_entry_quadrature(model: &dyn AssetModel, xi: f64, xj: f64, spec: &QuadratureSpec) -> Result<f64> {
    ensure_positive("strike", xi)?;
    ensure_positive("strike", xj)?;
    models::expectation(model, |s| (s - xi) * (s - xj), xi.max(xj), spec)
}

/// The full `Q`; closed form for lognormal models, quadrature otherwise.
pub fn q_matrix(model: &dyn AssetModel, strikes: &[f64], spec: &QuadratureSpec) -> Result<DMatrix<f64>> {
    check_strikes(strikes)?;
    let n = strikes.len();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let entries = pairs
        .par_iter()
        .map(|&(i, j)| match model.as_lognormal() {
            Some(lognormal) => q_entry(lognormal, strikes[i], strikes[j]),
            None => q_entry_quadrature(model, strikes[i], strikes[j], spec),
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut q = DMatrix::zeros(n, n);
    for (&(i, j), v) in pairs.iter().zip(entries) {
        q[(i, j)] = v;
        q[(j, i)] = v;
    }
    Ok(q)
}

/// `u_i = E[(S - X̄_i)^+ f(S)]` for a payoff already carrying its notional.
pub fn u_entry(
    payoff: &dyn Payoff,
    model: &dyn AssetModel,
    strike: f64,
    config: &QuadHedgeConfig,
    spec: &QuadratureSpec,
) -> Result<f64> {
    ensure_positive("strike", strike)?;
    match config.u_method {
        UMethod::Quadrature => models::expectation(model, |s| (s - strike) * payoff.value(s), strike, spec),
        UMethod::Replication => {
            let modified = ModifiedPayoff::new(payoff, strike);
            let upper = config
                .replication_upper
                .unwrap_or_else(|| models::truncation(model).1);
            if upper <= strike {
                return Ok(0.0);
            }
            let grid_config = EquidistConfig::new(config.replication_intervals, strike, upper);
            let strikes = crate::equidistribution::solve(&modified, model, &grid_config)?;
            let portfolio = decompose(&modified, &strikes.grid, Form::Full)?;
            Ok(valuation::price_portfolio(&portfolio, model)? / model.discount())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadHedgeSolution {
    pub strikes: Vec<f64>,
    pub weights: Vec<f64>,
    pub per_option_price: Vec<f64>,
    pub per_option_cost: Vec<f64>,
    pub total_cost: f64,
    /// `sqrt(V(w))`, the root-mean-square replication error at maturity.
    pub residual_error: f64,
    pub condition_number: f64,
    pub warning: Option<String>,
}

/// `V(w) = E[f²] - 2 w·u + wᵀ Q w`, undiscounted.
pub fn objective(second_moment: f64, q: &DMatrix<f64>, u: &DVector<f64>, w: &DVector<f64>) -> f64 {
    second_moment - 2.0 * w.dot(u) + w.dot(&(q * w))
}

/// Solves `Q w = u` by Cholesky factorization and prices the calls.
pub fn solve(
    payoff: &dyn Payoff,
    model: &dyn AssetModel,
    strikes: &[f64],
    config: &QuadHedgeConfig,
    spec: &QuadratureSpec,
) -> Result<QuadHedgeSolution> {
    check_strikes(strikes)?;
    ensure_positive("notional", config.notional)?;
    if strikes.windows(2).any(|w| w[1] < w[0]) {
        return Err(ReplError::Domain("strikes must be in increasing order".into()));
    }
    let scaled = ScaledPayoff::new(payoff, config.notional);
    let q = q_matrix(model, strikes, spec)?;
    let u = strikes
        .par_iter()
        .map(|&x| u_entry(&scaled, model, x, config, spec))
        .collect::<Result<Vec<f64>>>()?;
    let u = DVector::from_vec(u);

    let eigen = q.clone().symmetric_eigenvalues();
    let (lo, hi) = eigen
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e.abs())));
    let condition_number = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition_number <= COND_LIMIT) {
        return Err(ReplError::Conditioning { condition_number });
    }
    let w = q
        .clone()
        .cholesky()
        .ok_or(ReplError::Conditioning { condition_number })?
        .solve(&u);

    let per_option_price = strikes
        .iter()
        .map(|&x| model.call_price(x))
        .collect::<Result<Vec<f64>>>()?;
    let per_option_cost: Vec<f64> = w.iter().zip(&per_option_price).map(|(w, p)| w * p).collect();
    let total_cost = per_option_cost.iter().sum();
    let second_moment = models::expectation(model, |s| scaled.value(s).powi(2), 0.0, spec)?;
    let residual_error = objective(second_moment, &q, &u, &w).max(0.0).sqrt();
    let warning = (condition_number > COND_WARN)
        .then(|| format!("ill-conditioned system (condition number {condition_number:.3e})"));
    Ok(QuadHedgeSolution {
        strikes: strikes.to_vec(),
        weights: w.iter().copied().collect(),
        per_option_price,
        per_option_cost,
        total_cost,
        residual_error,
        condition_number,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::bs_call;
    use crate::payoffs::{variance_swap, FnPayoff};

    fn base() -> LognormalModel {
        LognormalModel::new(100.0, 0.05, 0.2, 0.25).unwrap()
    }

    #[test]
    fn q_is_symmetric() {
        let m = base();
        for (a, b) in [(50.0, 130.0), (90.0, 100.0), (101.5, 77.0)] {
            assert_eq!(q_entry(&m, a, b).unwrap(), q_entry(&m, b, a).unwrap());
        }
        assert!(q_entry(&m, 0.0, 100.0).is_err());
    }

    #[test]
    fn q_matches_quadrature() {
        let m = base();
        let spec = QuadratureSpec::adaptive(1e-12);
        for (a, b) in [(100.0, 100.0), (50.0, 130.0), (70.0, 90.0), (110.0, 110.0)] {
            let closed = q_entry(&m, a, b).unwrap();
            let quad = q_entry_quadrature(&m, a, b, &spec).unwrap();
            assert!(((closed - quad) / quad).abs() < 1e-6, "{a} {b}: {closed} {quad}");
        }
    }

    #[test]
    fn q_vanishes_for_far_strikes() {
        assert!(q_entry(&base(), 100.0, 1e4).unwrap().abs() < 1e-12);
    }

    #[test]
    fn u_for_unit_payoff_is_undiscounted_call() {
        let m = base();
        let spec = QuadratureSpec::default();
        let one = FnPayoff::new(|_| 1.0);
        let config = QuadHedgeConfig::default();
        for x in [80.0, 100.0, 120.0] {
            let u = u_entry(&one, &m, x, &config, &spec).unwrap();
            let call = bs_call(&m, x).unwrap() / m.discount();
            assert!((u - call).abs() < 1e-8);
        }
        let zero = FnPayoff::new(|_| 0.0);
        assert_eq!(u_entry(&zero, &m, 100.0, &config, &spec).unwrap(), 0.0);
    }

    #[test]
    fn u_methods_agree() {
        let m = base();
        let spec = QuadratureSpec::default();
        let vs = ScaledPayoff::new(variance_swap(100.0, 0.25).unwrap(), 100.0);
        let quad = u_entry(&vs, &m, 90.0, &QuadHedgeConfig::default(), &spec).unwrap();
        let config = QuadHedgeConfig {
            u_method: UMethod::Replication,
            ..Default::default()
        };
        let repl = u_entry(&vs, &m, 90.0, &config, &spec).unwrap();
        assert!(((repl - quad) / quad).abs() < 1e-4, "{repl} {quad}");
    }

    #[test]
    fn call_payoff_is_represented_exactly() {
        let m = base();
        let strikes = [80.0, 95.0, 100.0, 120.0];
        let config = QuadHedgeConfig {
            notional: 1.0,
            ..Default::default()
        };
        let sol = solve(&FnPayoff::call(100.0), &m, &strikes, &config, &QuadratureSpec::adaptive(1e-12)).unwrap();
        for (j, w) in sol.weights.iter().enumerate() {
            let expected = if j == 2 { 1.0 } else { 0.0 };
            assert!((w - expected).abs() < 1e-6, "{:?}", sol.weights);
        }
        assert!(sol.residual_error < 1e-3);
        assert!((sol.total_cost - bs_call(&m, 100.0).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn duplicate_strikes_are_singular() {
        let vs = variance_swap(100.0, 0.25).unwrap();
        let err = solve(
            &vs,
            &base(),
            &[90.0, 100.0, 100.0],
            &QuadHedgeConfig::default(),
            &QuadratureSpec::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ReplError::Conditioning { .. }), "{err:?}");
    }

    #[test]
    fn solution_is_optimal_and_costs_add_up() {
        let m = base();
        let spec = QuadratureSpec::default();
        let vs = variance_swap(100.0, 0.25).unwrap();
        let strikes = [50.0, 70.0, 90.0, 100.0, 110.0, 130.0];
        let config = QuadHedgeConfig::default();
        let sol = solve(&vs, &m, &strikes, &config, &spec).unwrap();
        assert!((sol.total_cost - sol.per_option_cost.iter().sum::<f64>()).abs() < 1e-12);

        let scaled = ScaledPayoff::new(&vs, 100.0);
        let q = q_matrix(&m, &strikes, &spec).unwrap();
        let u = DVector::from_iterator(
            strikes.len(),
            strikes.iter().map(|&x| u_entry(&scaled, &m, x, &config, &spec).unwrap()),
        );
        let second = models::expectation(&m, |s| scaled.value(s).powi(2), 0.0, &spec).unwrap();
        let w = DVector::from_vec(sol.weights.clone());
        let best = objective(second, &q, &u, &w);
        for j in 0..strikes.len() {
            for d in [1e-4, -1e-4] {
                let mut p = w.clone();
                p[j] += d;
                assert!(objective(second, &q, &u, &p) >= best);
            }
        }
    }

    #[test]
    fn more_strikes_never_hurt() {
        let m = base();
        let spec = QuadratureSpec::default();
        let vs = variance_swap(100.0, 0.25).unwrap();
        let config = QuadHedgeConfig::default();
        let few = solve(&vs, &m, &[70.0, 100.0, 130.0], &config, &spec).unwrap();
        let more = solve(&vs, &m, &[50.0, 70.0, 90.0, 100.0, 110.0, 130.0], &config, &spec).unwrap();
        assert!(more.residual_error <= few.residual_error + 1e-9);
    }
}
