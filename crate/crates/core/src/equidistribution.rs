//! Strike selection by equidistributing the curvature monitor `h_i ρ_i`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ReplError, Result};
use crate::models::AssetModel;
use crate::payoffs::Payoff;
use crate::quadrature::QuadratureSpec;
use crate::spline::{self, StrikeGrid};

/// How the per-interval integral `(1/h_i) ∫ G (f'')² dS` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RhoRule {
    /// `Ĝ_i(1) · f''(X_{i+1})²`, a one-point rule at the right node.
    #[default]
    Rectangle,
    /// Full kernel-weighted quadrature over the interval.
    Quadrature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EquidistConfig {
    pub gamma_exponent: f64,
    pub n: usize,
    pub x0: f64,
    pub xn: f64,
    pub max_iterations: usize,
    /// Stop once no strike moves by more than this fraction of `xn - x0`.
    pub move_tol: f64,
    pub rho_rule: RhoRule,
    /// Rule for the kernel integrals inside ρ.
    pub kernel_spec: QuadratureSpec,
    pub keep_history: bool,
}

impl Default for EquidistConfig {
    fn default() -> Self {
        Self {
            gamma_exponent: 0.4,
            n: 20,
            x0: 45.0,
            xn: 200.0,
            max_iterations: 100,
            move_tol: 1e-8,
            rho_rule: RhoRule::Rectangle,
            kernel_spec: spline::interval_spec(),
            keep_history: false,
        }
    }
}

impl EquidistConfig {
    pub fn new(n: usize, x0: f64, xn: f64) -> Self {
        Self {
            n,
            x0,
            xn,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_exponent > 0.0 && self.gamma_exponent <= 2.0) {
            return Err(ReplError::Domain(format!(
                "gamma_exponent must lie in (0, 2], got {}",
                self.gamma_exponent
            )));
        }
        if self.n < 2 {
            return Err(ReplError::DegenerateGrid(format!(
                "interval count must be >= 2, got {}",
                self.n
            )));
        }
        if !(self.x0.is_finite() && self.xn.is_finite() && self.x0 > 0.0 && self.x0 < self.xn) {
            return Err(ReplError::Domain(format!(
                "need 0 < x0 < xn, got [{}, {}]",
                self.x0, self.xn
            )));
        }
        if !(self.move_tol > 0.0) || self.max_iterations == 0 {
            return Err(ReplError::Domain(
                "move_tol must be > 0 and max_iterations >= 1".into(),
            ));
        }
        self.kernel_spec.validate()
    }
}

/// ρ_i on a grid together with the intensity α_h.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    pub rho: Vec<f64>,
    pub alpha: f64,
    /// True when f'' vanishes on every interval and ρ ≡ 1.
    pub degenerate: bool,
}

impl Adaptation {
    /// `Σ h_i ρ_i`.
    pub fn weighted_length(&self, grid: &StrikeGrid) -> f64 {
        grid.widths().iter().zip(&self.rho).map(|(h, r)| h * r).sum()
    }
}

/// `(1/h_i) ∫ G (f'')² dS` on each interval, per the configured rule.
pub fn interval_intensities(
    grid: &StrikeGrid,
    payoff: &dyn Payoff,
    model: &dyn AssetModel,
    config: &EquidistConfig,
) -> Result<Vec<f64>> {
    let values: Vec<Result<f64>> = (0..grid.n())
        .into_par_iter()
        .map(|i| match config.rho_rule {
            RhoRule::Rectangle => {
                let h = grid.width(i);
                let right = grid.strikes()[i + 1];
                // one-sided value so kinks at the node belong to the interval
                let f2 = payoff.second_derivative(right - 1e-12 * h);
                let g1 = spline::g_kernel_at_one(i, grid, model, &config.kernel_spec)?;
                Ok(g1 * f2 * f2)
            }
            RhoRule::Quadrature => Ok(spline::curvature_integral(
                payoff,
                grid,
                model,
                i,
                &config.kernel_spec,
            ) / grid.width(i)),
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<f64>>>()?;
    if let Some(i) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(ReplError::Numeric(format!(
            "curvature monitor invalid on interval {i}: {}",
            values[i]
        )));
    }
    Ok(values)
}

/// ρ_i = (1 + I_i/α_h)^{γ/2} with α_h = [(1/(X_n−X_0)) Σ h_i I_i^{γ/2}]^{2/γ}.
pub fn adaptation_from_intensities(grid: &StrikeGrid, intensities: &[f64], gamma: f64) -> Adaptation {
    let half = gamma / 2.0;
    let span = grid.last() - grid.first();
    let mean: f64 = grid
        .widths()
        .iter()
        .zip(intensities)
        .map(|(h, i)| h * i.powf(half))
        .sum::<f64>()
        / span;
    let alpha = mean.powf(1.0 / half);
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Adaptation {
            rho: vec![1.0; intensities.len()],
            alpha: 0.0,
            degenerate: true,
        };
    }
    Adaptation {
        rho: intensities.iter().map(|i| (1.0 + i / alpha).powf(half)).collect(),
        alpha,
        degenerate: false,
    }
}

pub fn adaptation(
    grid: &StrikeGrid,
    payoff: &dyn Payoff,
    model: &dyn AssetModel,
    config: &EquidistConfig,
) -> Result<Adaptation> {
    let intensities = interval_intensities(grid, payoff, model, config)?;
    Ok(adaptation_from_intensities(grid, &intensities, config.gamma_exponent))
}

/// New interior strikes from piecewise-constant ρ: X_i is placed where the
/// cumulative `∫ ρ̄` reaches `(i/n) Σ h_j ρ_j`. Endpoints stay fixed.
pub fn redistribute(grid: &StrikeGrid, rho: &[f64]) -> Result<StrikeGrid> {
    let n = grid.n();
    if rho.len() != n {
        return Err(ReplError::Domain(format!(
            "need {n} adaptation values, got {}",
            rho.len()
        )));
    }
    if rho.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
        return Err(ReplError::Numeric("adaptation values must be finite and > 0".into()));
    }
    let x = grid.strikes();
    let mut cumulative = Vec::with_capacity(n + 1);
    cumulative.push(0.0);
    for j in 0..n {
        cumulative.push(cumulative[j] + grid.width(j) * rho[j]);
    }
    let total = cumulative[n];
    let mut out = Vec::with_capacity(n + 1);
    out.push(x[0]);
    let mut j = 0;
    for i in 1..n {
        let target = total * i as f64 / n as f64;
        while j < n - 1 && cumulative[j + 1] < target {
            j += 1;
        }
        let xi = x[j] + (target - cumulative[j]) / rho[j];
        out.push(xi.clamp(x[j], x[j + 1]));
    }
    out.push(x[n]);
    StrikeGrid::new(out).map_err(|e| ReplError::Numeric(format!("redistribution failed: {e}")))
}

pub fn iterate_once(
    grid: &StrikeGrid,
    payoff: &dyn Payoff,
    model: &dyn AssetModel,
    config: &EquidistConfig,
) -> Result<StrikeGrid> {
    let a = adaptation(grid, payoff, model, config)?;
    redistribute(grid, &a.rho)
}

/// `max_i |h_i ρ_i · n / Σ h_j ρ_j − 1|`.
pub fn residual(grid: &StrikeGrid, rho: &[f64]) -> f64 {
    let weights: Vec<f64> = grid.widths().iter().zip(rho).map(|(h, r)| h * r).collect();
    let mean = weights.iter().sum::<f64>() / weights.len() as f64;
    weights
        .iter()
        .map(|w| (w / mean - 1.0).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquidistResult {
    pub grid: StrikeGrid,
    pub iterations_used: usize,
    pub residual: f64,
    pub converged: bool,
    pub degenerate: bool,
    /// Largest `Σ h_j ρ_j / (X_n − X_0)` seen over the iterations; at most 2.
    pub max_length_ratio: f64,
    /// Strikes of every iterate, starting with the uniform grid.
    pub history: Option<Vec<Vec<f64>>>,
    pub warning: Option<String>,
}

/// Iterates from the uniform grid until strikes stop moving. The returned
/// grid's put/call split sits at the strike nearest the forward.
pub fn solve(payoff: &dyn Payoff, model: &dyn AssetModel, config: &EquidistConfig) -> Result<EquidistResult> {
    config.validate()?;
    let span = config.xn - config.x0;
    let mut grid = StrikeGrid::uniform(config.x0, config.xn, config.n)?;
    let mut history = config.keep_history.then(|| vec![grid.strikes().to_vec()]);
    let mut max_length_ratio: f64 = 0.0;
    let mut converged = false;
    let mut iterations_used = 0;
    let mut degenerate = false;

    for _ in 0..config.max_iterations {
        let a = adaptation(&grid, payoff, model, config)?;
        degenerate = a.degenerate;
        max_length_ratio = max_length_ratio.max(a.weighted_length(&grid) / span);
        let next = redistribute(&grid, &a.rho)?;
        iterations_used += 1;
        let movement = grid
            .strikes()
            .iter()
            .zip(next.strikes())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / span;
        grid = next;
        if let Some(h) = history.as_mut() {
            h.push(grid.strikes().to_vec());
        }
        if movement < config.move_tol {
            converged = true;
            break;
        }
    }

    let a = adaptation(&grid, payoff, model, config)?;
    max_length_ratio = max_length_ratio.max(a.weighted_length(&grid) / span);
    let residual = residual(&grid, &a.rho);
    let warning = (!converged && residual > 10.0 * config.move_tol).then(|| {
        format!(
            "strike iteration stopped after {iterations_used} steps with residual {residual:.3e}"
        )
    });
    Ok(EquidistResult {
        grid: grid.split_near(model.forward()),
        iterations_used,
        residual,
        converged,
        degenerate: degenerate || a.degenerate,
        max_length_ratio,
        history,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::LognormalModel;
    use crate::payoffs::{variance_swap, FnPayoff};

    fn base() -> LognormalModel {
        LognormalModel::new(100.0, 0.05, 0.2, 0.25).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(EquidistConfig::default().validate().is_ok());
        let bad = [
            EquidistConfig {
                gamma_exponent: 0.0,
                ..Default::default()
            },
            EquidistConfig {
                gamma_exponent: 2.5,
                ..Default::default()
            },
            EquidistConfig::new(1, 45.0, 200.0),
            EquidistConfig::new(10, 200.0, 45.0),
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn linear_payoff_gives_unit_rho() {
        let linear = FnPayoff::new(|s| s).with_second_derivative(|_| 0.0);
        let grid = StrikeGrid::uniform(45.0, 140.0, 18).unwrap();
        let a = adaptation(&grid, &linear, &base(), &EquidistConfig::new(18, 45.0, 140.0)).unwrap();
        assert!(a.degenerate);
        assert!(a.rho.iter().all(|r| *r == 1.0));
    }

    #[test]
    fn equal_intensities_give_equal_rho() {
        let grid = StrikeGrid::new(vec![1.0, 2.0, 4.0, 5.0]).unwrap();
        let a = adaptation_from_intensities(&grid, &[0.3, 0.3, 0.3], 0.4);
        assert!(a.rho.iter().all(|r| (r - a.rho[0]).abs() < 1e-15));
        // α equals the common intensity, so ρ = 2^{γ/2}
        assert!((a.alpha - 0.3).abs() < 1e-14);
        assert!((a.rho[0] - 2f64.powf(0.2)).abs() < 1e-14);
    }

    #[test]
    fn rectangle_rule_tracks_quadrature_rule() {
        let vs = variance_swap(100.0, 0.25).unwrap();
        let grid = StrikeGrid::uniform(45.0, 140.0, 18).unwrap();
        let mut config = EquidistConfig::new(18, 45.0, 140.0);
        let rect = adaptation(&grid, &vs, &base(), &config).unwrap();
        config.rho_rule = RhoRule::Quadrature;
        let quad = adaptation(&grid, &vs, &base(), &config).unwrap();
        for (r, q) in rect.rho.iter().zip(&quad.rho) {
            assert!(((r - q) / q).abs() < 0.05, "{r} {q}");
        }
    }

    #[test]
    fn constant_rho_gives_uniform_grid() {
        let grid = StrikeGrid::new(vec![10.0, 11.0, 15.0, 16.0, 30.0]).unwrap();
        let out = redistribute(&grid, &[2.0; 4]).unwrap();
        for (i, x) in out.strikes().iter().enumerate() {
            assert!((x - (10.0 + 5.0 * i as f64)).abs() < 1e-12);
        }
    }

    #[test]
    fn redistribution_is_monotone_and_keeps_endpoints() {
        let grid = StrikeGrid::uniform(1.0, 9.0, 8).unwrap();
        let rho = [1.0, 50.0, 1e-3, 7.0, 1.0, 1.0, 1e4, 2.0];
        let out = redistribute(&grid, &rho).unwrap();
        assert_eq!(out.first(), 1.0);
        assert_eq!(out.last(), 9.0);
        assert!(redistribute(&grid, &[1.0; 3]).is_err());
        assert!(redistribute(&grid, &[f64::NAN; 8]).is_err());
    }

    #[test]
    fn equidistributed_grid_is_a_fixed_point() {
        let grid = StrikeGrid::new(vec![0.0 + 1.0, 2.0, 2.5, 4.5]).unwrap();
        // h·ρ equal on every interval
        let rho = [1.0, 2.0, 0.5];
        assert!(residual(&grid, &rho) < 1e-15);
        let out = redistribute(&grid, &rho).unwrap();
        for (a, b) in out.strikes().iter().zip(grid.strikes()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn variance_swap_converges_and_clusters_low() {
        let vs = variance_swap(100.0, 0.25).unwrap();
        let config = EquidistConfig {
            keep_history: true,
            ..EquidistConfig::new(40, 45.0, 200.0)
        };
        let result = solve(&vs, &base(), &config).unwrap();
        assert!(result.converged, "{result:?}");
        assert!(result.residual < 1e-2);
        assert!(result.max_length_ratio <= 2.0);
        assert!(result.warning.is_none());
        let history = result.history.as_ref().unwrap();
        assert_eq!(history.len(), result.iterations_used + 1);
        let grid = &result.grid;
        assert_eq!(grid.first(), 45.0);
        assert_eq!(grid.last(), 200.0);
        // intervals are narrow where density and curvature overlap, wide in the far tail
        let widths = grid.widths();
        let max_w = widths.iter().cloned().fold(0.0, f64::max);
        let near_spot = widths[grid.locate(95.0).unwrap()];
        assert!(near_spot < 0.5 * max_w);
        assert_eq!(widths.iter().cloned().fold(0.0, f64::max), *widths.last().unwrap());
    }

    #[test]
    fn iteration_cap_attaches_warning() {
        let vs = variance_swap(100.0, 0.25).unwrap();
        let config = EquidistConfig {
            max_iterations: 1,
            ..EquidistConfig::new(20, 45.0, 200.0)
        };
        let result = solve(&vs, &base(), &config).unwrap();
        assert!(!result.converged);
        assert_eq!(result.iterations_used, 1);
        assert!(result.warning.is_some());
    }

    #[test]
    fn constant_curvature_uniform_density_stays_uniform() {
        struct Flat;
        impl AssetModel for Flat {
            fn spot(&self) -> f64 {
                5.0
            }
            fn rate(&self) -> f64 {
                0.0
            }
            fn maturity(&self) -> f64 {
                1.0
            }
            fn density(&self, _: f64) -> f64 {
                0.1
            }
            fn cdf(&self, s: f64) -> f64 {
                0.1 * s
            }
            fn call_price(&self, _: f64) -> Result<f64> {
                unimplemented!()
            }
            fn put_price(&self, _: f64) -> Result<f64> {
                unimplemented!()
            }
            fn draw(&self, _: &mut dyn rand::RngCore) -> f64 {
                unimplemented!()
            }
            fn draw_antithetic(&self, _: &mut dyn rand::RngCore) -> (f64, f64) {
                unimplemented!()
            }
        }
        let quad = FnPayoff::new(|s| s * s).with_second_derivative(|_| 2.0);
        for rule in [RhoRule::Rectangle, RhoRule::Quadrature] {
            let config = EquidistConfig {
                rho_rule: rule,
                ..EquidistConfig::new(10, 1.0, 9.0)
            };
            let result = solve(&quad, &Flat, &config).unwrap();
            assert!(result.converged);
            for (i, x) in result.grid.strikes().iter().enumerate() {
                assert!((x - (1.0 + 0.8 * i as f64)).abs() < 1e-9);
            }
        }
    }
}
