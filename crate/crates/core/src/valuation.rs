//! Pricing of replicating portfolios, true payoff values and convergence
//! studies.

use serde::{Deserialize, Serialize};

use crate::equidistribution::{self, EquidistConfig, EquidistResult};
use crate::error::{ensure_positive, ReplError, Result};
use crate::models::{self, AssetModel};
use crate::payoffs::{Payoff, ScaledPayoff, SwaptionPayoff, SwaptionSide};
use crate::quadrature::QuadratureSpec;
use crate::spline::{decompose, Form, ReplicatingPortfolio};

/// Tail mass beyond the grid above which the reduced form is flagged.
pub const TAIL_WARN: f64 = 1e-4;

pub const DEFAULT_NOTIONAL: f64 = 100.0;

/// Cost today: discounted cash plus every option at the model's price.
pub fn price_portfolio(portfolio: &ReplicatingPortfolio, model: &dyn AssetModel) -> Result<f64> {
    let mut total = model.discount() * portfolio.cash;
    for p in portfolio.puts.iter().filter(|p| p.weight != 0.0) {
        total += p.weight * model.put_price(p.strike)?;
    }
    for c in portfolio.calls.iter().filter(|c| c.weight != 0.0) {
        total += c.weight * model.call_price(c.strike)?;
    }
    if let Some(d) = portfolio.digital_put.filter(|d| d.weight != 0.0) {
        total += d.weight * model.digital_put(d.strike)?;
    }
    if let Some(d) = portfolio.digital_call.filter(|d| d.weight != 0.0) {
        total += d.weight * model.digital_call(d.strike)?;
    }
    if !total.is_finite() {
        return Err(ReplError::Numeric("portfolio price not finite".into()));
    }
    Ok(total)
}

/// `e^{-rT} E[f(S_T)] · notional` by quadrature over the model density.
pub fn true_value(
    payoff: &dyn Payoff,
    model: &dyn AssetModel,
    notional: f64,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let f = |s: f64| payoff.value(s);
    let expectation = match payoff.support() {
        Some((a, b)) => models::expectation_between(model, f, a, b, spec)?,
        None => models::expectation(model, f, 0.0, spec)?,
    };
    Ok(model.discount() * expectation * notional)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValuationReport {
    pub replication_value: f64,
    pub true_value: f64,
    pub abs_error: f64,
    pub notional: f64,
}

impl ValuationReport {
    pub fn new(replication_value: f64, true_value: f64, notional: f64) -> Self {
        Self {
            replication_value,
            true_value,
            abs_error: (replication_value - true_value).abs(),
            notional,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FormChoice {
    /// Full form for compactly supported payoffs, reduced otherwise.
    #[default]
    Auto,
    Full,
    Reduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationSetup {
    #[serde(flatten)]
    pub grid: EquidistConfig,
    pub form: FormChoice,
    pub notional: f64,
    /// Put/call boundary index; defaults to the strike nearest the forward.
    pub split_index: Option<usize>,
}

impl Default for ReplicationSetup {
    fn default() -> Self {
        Self {
            grid: EquidistConfig::default(),
            form: FormChoice::Auto,
            notional: DEFAULT_NOTIONAL,
            split_index: None,
        }
    }
}

impl ReplicationSetup {
    pub fn new(n: usize, x0: f64, xn: f64) -> Self {
        Self {
            grid: EquidistConfig::new(n, x0, xn),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        ensure_positive("notional", self.notional)
    }
}

/// Resolves [`FormChoice::Auto`] and reports tail mass the reduced form
/// would price through its linear extrapolation.
pub fn resolve_form(
    choice: FormChoice,
    payoff: &dyn Payoff,
    model: &dyn AssetModel,
    x0: f64,
    xn: f64,
) -> (Form, Option<String>) {
    let form = match choice {
        FormChoice::Full => Form::Full,
        FormChoice::Reduced => Form::Reduced,
        FormChoice::Auto if payoff.support().is_some() => Form::Full,
        FormChoice::Auto => Form::Reduced,
    };
    let tails = (model.cdf(x0), model.survival(xn));
    let warning = (form == Form::Reduced && (tails.0 > TAIL_WARN || tails.1 > TAIL_WARN)).then(|| {
        format!(
            "grid [{x0}, {xn}] leaves tail mass {:.2e} below and {:.2e} above; \
             the reduced form prices it by linear extrapolation",
            tails.0, tails.1
        )
    });
    (form, warning)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Replication {
    pub strikes: EquidistResult,
    /// Holdings per unit of notional already applied.
    pub portfolio: ReplicatingPortfolio,
    pub report: ValuationReport,
    pub warnings: Vec<String>,
}

/// Selects strikes, decomposes `notional · f` and prices both the
/// portfolio and the payoff.
pub fn replicate(
    payoff: &dyn Payoff,
    model: &dyn AssetModel,
    setup: &ReplicationSetup,
    spec: &QuadratureSpec,
) -> Result<Replication> {
    setup.validate()?;
    let strikes = equidistribution::solve(payoff, model, &setup.grid)?;
    let grid = match setup.split_index {
        Some(k) => strikes.grid.clone().with_split_index(k)?,
        None => strikes.grid.clone(),
    };
    let (form, tail_warning) = resolve_form(setup.form, payoff, model, setup.grid.x0, setup.grid.xn);
    let scaled = ScaledPayoff::new(payoff, setup.notional);
    let portfolio = decompose(&scaled, &grid, form)?;
    let replication_value = price_portfolio(&portfolio, model)?;
    let truth = true_value(payoff, model, setup.notional, spec)?;
    let warnings = strikes.warning.iter().cloned().chain(tail_warning).collect();
    Ok(Replication {
        strikes: EquidistResult { grid, ..strikes },
        portfolio,
        report: ValuationReport::new(replication_value, truth, setup.notional),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwaptionReport {
    pub side: SwaptionSide,
    /// Replicated value of the requested side.
    pub valuation: ValuationReport,
    pub put_replication_value: f64,
    pub variance_swap_value: f64,
    /// The put-side replication; empty when the support is degenerate.
    pub put: Option<Replication>,
}

/// Replicates the put side on its support `[S_L, S_R]` with the full form
/// and gets the call from parity: `C = P + VS - K e^{-rT}` (all notional-scaled).
/// `setup.grid.x0`/`xn` are replaced by the support bounds.
pub fn swaption_value(
    payoff: &SwaptionPayoff,
    model: &dyn AssetModel,
    setup: &ReplicationSetup,
    spec: &QuadratureSpec,
) -> Result<SwaptionReport> {
    let notional = setup.notional;
    let put_payoff = payoff.with_side(SwaptionSide::Put);
    let (lo, hi) = put_payoff.bounds;
    let put = if hi > lo {
        let mut put_setup = setup.clone();
        put_setup.grid.x0 = lo;
        put_setup.grid.xn = hi;
        put_setup.form = FormChoice::Full;
        Some(replicate(&put_payoff, model, &put_setup, spec)?)
    } else {
        None
    };
    let put_value = put.as_ref().map_or(0.0, |p| p.report.replication_value);
    let variance_swap_value = true_value(&payoff.underlying(), model, notional, spec)?;
    let strike_leg = payoff.k * model.discount() * notional;
    let replication_value = match payoff.side {
        SwaptionSide::Put => put_value,
        SwaptionSide::Call => put_value + variance_swap_value - strike_leg,
    };
    let truth = match payoff.side {
        SwaptionSide::Put => true_value(&put_payoff, model, notional, spec)?,
        SwaptionSide::Call => true_value(payoff, model, notional, spec)?,
    };
    Ok(SwaptionReport {
        side: payoff.side,
        valuation: ValuationReport::new(replication_value, truth, notional),
        put_replication_value: put_value,
        variance_swap_value,
        put,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub total_replication_value: f64,
    /// Replication value minus true value.
    pub error: f64,
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub true_value: f64,
    pub rows: Vec<ConvergenceRow>,
}

/// Empirical order between two runs: `log(|e1|/|e2|) / log(n2/n1)`.
pub fn convergence_rate(n1: usize, e1: f64, n2: usize, e2: f64) -> Option<f64> {
    let p = (e1.abs() / e2.abs()).ln() / (n2 as f64 / n1 as f64).ln();
    p.is_finite().then_some(p)
}

/// Replicates `f` for each interval count in `n_values` (the rest of the
/// setup fixed) and reports errors against the true value.
pub fn convergence_study(
    payoff: &dyn Payoff,
    model: &dyn AssetModel,
    n_values: &[usize],
    setup: &ReplicationSetup,
    spec: &QuadratureSpec,
) -> Result<ConvergenceReport> {
    if n_values.is_empty() {
        return Err(ReplError::Domain("need at least one interval count".into()));
    }
    if n_values.windows(2).any(|w| w[1] <= w[0]) {
        return Err(ReplError::Domain("interval counts must increase".into()));
    }
    let truth = true_value(payoff, model, setup.notional, spec)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(n_values.len());
    for &n in n_values {
        let mut run = setup.clone();
        run.grid.n = n;
        run.grid.keep_history = false;
        run.validate()?;
        let strikes = equidistribution::solve(payoff, model, &run.grid)?;
        let (form, _) = resolve_form(run.form, payoff, model, run.grid.x0, run.grid.xn);
        let portfolio = decompose(&ScaledPayoff::new(payoff, run.notional), &strikes.grid, form)?;
        let value = price_portfolio(&portfolio, model)?;
        let error = value - truth;
        let rate = rows
            .last()
            .and_then(|prev| convergence_rate(prev.n, prev.error, n, error));
        rows.push(ConvergenceRow {
            n,
            total_replication_value: value,
            error,
            rate,
        });
    }
    Ok(ConvergenceReport {
        true_value: truth,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{bs_call, LognormalModel};
    use crate::payoffs::{swaption, variance_swap, FnPayoff};
    use crate::spline::{Position, StrikeGrid};

    fn base() -> LognormalModel {
        LognormalModel::new(100.0, 0.05, 0.2, 0.25).unwrap()
    }

    fn empty(cash: f64) -> ReplicatingPortfolio {
        ReplicatingPortfolio {
            cash,
            digital_put: None,
            digital_call: None,
            puts: vec![],
            calls: vec![],
            form: Form::Reduced,
        }
    }

    #[test]
    fn cash_is_discounted() {
        let m = base();
        let v = price_portfolio(&empty(3.0), &m).unwrap();
        assert!((v - 3.0 * (-0.05f64 * 0.25).exp()).abs() < 1e-15);
    }

    #[test]
    fn single_call_prices_at_black_scholes() {
        let mut p = empty(0.0);
        p.calls.push(Position {
            strike: 100.0,
            weight: 1.0,
        });
        let v = price_portfolio(&p, &base()).unwrap();
        assert!((v - 4.6150).abs() < 5e-5);
    }

    #[test]
    fn pricing_is_linear_in_weights() {
        let vs = variance_swap(100.0, 0.25).unwrap();
        let grid = StrikeGrid::uniform(45.0, 140.0, 18).unwrap().split_near(101.0);
        let m = base();
        let p = decompose(&vs, &grid, Form::Full).unwrap();
        let mut a = p.clone();
        let mut b = p.clone();
        for (i, (x, y)) in a.puts.iter_mut().zip(b.puts.iter_mut()).enumerate() {
            let share = (i as f64 * 0.37).fract();
            x.weight *= share;
            y.weight *= 1.0 - share;
        }
        a.cash *= 0.25;
        b.cash *= 0.75;
        for (x, y) in a.calls.iter_mut().zip(b.calls.iter_mut()) {
            x.weight *= 0.6;
            y.weight *= 0.4;
        }
        a.digital_put = None;
        a.digital_call = None;
        b.digital_put = p.digital_put;
        b.digital_call = p.digital_call;
        let whole = price_portfolio(&p, &m).unwrap();
        let parts = price_portfolio(&a, &m).unwrap() + price_portfolio(&b, &m).unwrap();
        assert!((whole - parts).abs() < 1e-12);
    }

    #[test]
    fn true_value_of_constant_and_call() {
        let m = base();
        let spec = QuadratureSpec::default();
        let one = FnPayoff::new(|_| 1.0);
        assert!((true_value(&one, &m, 1.0, &spec).unwrap() - m.discount()).abs() < 1e-10);
        let call = FnPayoff::call(100.0);
        let v = true_value(&call, &m, 1.0, &spec).unwrap();
        assert!((v - bs_call(&m, 100.0).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn rate_formula() {
        assert_eq!(convergence_rate(20, 0.4, 40, 0.1), Some(2.0));
        let p = convergence_rate(20, 0.9, 60, 0.1).unwrap();
        assert!((p - 2.0).abs() < 1e-12);
        assert_eq!(convergence_rate(20, 0.0, 40, 0.0), None);
    }

    #[test]
    fn auto_form() {
        let m = base();
        let vs = variance_swap(100.0, 0.25).unwrap();
        let put = swaption(100.0, 0.25, 0.01, SwaptionSide::Put).unwrap();
        assert_eq!(resolve_form(FormChoice::Auto, &vs, &m, 45.0, 200.0), (Form::Reduced, None));
        assert_eq!(resolve_form(FormChoice::Auto, &put, &m, 95.0, 105.0).0, Form::Full);
        let (form, warning) = resolve_form(FormChoice::Auto, &vs, &m, 90.0, 110.0);
        assert_eq!(form, Form::Reduced);
        assert!(warning.is_some());
    }

    #[test]
    fn zero_strike_call_swaption_is_the_variance_swap() {
        let m = base();
        let spec = QuadratureSpec::default();
        let call = swaption(100.0, 0.25, 0.0, SwaptionSide::Call).unwrap();
        let r = swaption_value(&call, &m, &ReplicationSetup::new(18, 1.0, 2.0), &spec).unwrap();
        assert_eq!(r.put_replication_value, 0.0);
        assert!((r.valuation.replication_value - r.variance_swap_value).abs() < 1e-12);
        assert!((r.valuation.true_value - r.variance_swap_value).abs() < 1e-7);
    }

    #[test]
    fn replication_report_is_consistent() {
        let vs = variance_swap(100.0, 0.25).unwrap();
        let r = replicate(&vs, &base(), &ReplicationSetup::new(18, 45.0, 140.0), &QuadratureSpec::default())
            .unwrap();
        eprintln!("{:?}", r.report);
        // about 5e-4 of the mass lies above 140
        assert_eq!(r.warnings.len(), 1, "{:?}", r.warnings);
        assert_eq!(r.report.notional, 100.0);
        assert!((r.report.abs_error - (r.report.replication_value - r.report.true_value).abs()).abs() < 1e-15);
        assert!((r.report.true_value - 4.0123).abs() < 5e-5);
    }

    #[test]
    fn convergence_study_validates_input() {
        let vs = variance_swap(100.0, 0.25).unwrap();
        let m = base();
        let setup = ReplicationSetup::new(20, 45.0, 200.0);
        let spec = QuadratureSpec::default();
        assert!(convergence_study(&vs, &m, &[], &setup, &spec).is_err());
        assert!(convergence_study(&vs, &m, &[40, 20], &setup, &spec).is_err());
        let single = convergence_study(&vs, &m, &[20], &setup, &spec).unwrap();
        assert_eq!(single.rows.len(), 1);
        assert!(single.rows[0].rate.is_none());
    }
}
