//! Linear-spline approximation of a payoff, its decomposition into cash,
//! digitals, puts and calls, and the density-weighted approximation error
//! together with its a-priori bound.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{ReplError, Result};
use crate::models::AssetModel;
use crate::payoffs::Payoff;
use crate::quadrature::{self, QuadratureSpec, Rule};

/// Panel count used for per-interval integrals when the caller's rule is
/// adaptive but a fixed tensor rule is needed (kernel-weighted moments).
pub const KERNEL_PANELS: usize = 256;

/// Rule for integrals over single grid intervals. Per-interval errors are
/// tiny in absolute terms, so a fixed rule (relative accuracy) is used rather
/// than an absolute tolerance.
pub fn interval_spec() -> QuadratureSpec {
    QuadratureSpec::composite_simpson(KERNEL_PANELS)
}

/// Ordered strikes `X_0 < … < X_n` and the put/call boundary index `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrikeGrid {
    strikes: Vec<f64>,
    split_index: usize,
}

impl StrikeGrid {
    /// Validates strict monotonicity and positivity. The split index starts
    /// at the middle node; see [`StrikeGrid::split_near`].
    pub fn new(strikes: Vec<f64>) -> Result<Self> {
        if strikes.len() < 2 {
            return Err(ReplError::DegenerateGrid(format!(
                "need at least two strikes, got {}",
                strikes.len()
            )));
        }
        if strikes.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(ReplError::Domain("strikes must be finite and > 0".into()));
        }
        if strikes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(ReplError::DegenerateGrid(
                "strikes must be strictly increasing".into(),
            ));
        }
        let split_index = (strikes.len() - 1) / 2;
        Ok(Self {
            strikes,
            split_index,
        })
    }

    /// `n` equal intervals on `[x0, xn]`.
    pub fn uniform(x0: f64, xn: f64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(ReplError::DegenerateGrid("interval count must be >= 1".into()));
        }
        let mut strikes: Vec<f64> = (0..=n)
            .map(|i| x0 + (xn - x0) * i as f64 / n as f64)
            .collect();
        strikes[n] = xn;
        Self::new(strikes)
    }

    pub fn with_split_index(mut self, k: usize) -> Result<Self> {
        if k > self.n() {
            return Err(ReplError::Domain(format!(
                "split index {k} exceeds interval count {}",
                self.n()
            )));
        }
        self.split_index = k;
        Ok(self)
    }

    /// Puts the put/call boundary at the strike nearest `level` (typically
    /// the forward), so both legs hold out-of-the-money options.
    pub fn split_near(mut self, level: f64) -> Self {
        self.split_index = self
            .strikes
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - level).abs().total_cmp(&(b.1 - level).abs()))
            .map(|(i, _)| i)
            .unwrap_or(0);
        self
    }

    pub fn strikes(&self) -> &[f64] {
        &self.strikes
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    /// Number of intervals.
    pub fn n(&self) -> usize {
        self.strikes.len() - 1
    }

    pub fn first(&self) -> f64 {
        self.strikes[0]
    }

    pub fn last(&self) -> f64 {
        self.strikes[self.n()]
    }

    pub fn width(&self, i: usize) -> f64 {
        self.strikes[i + 1] - self.strikes[i]
    }

    pub fn widths(&self) -> Vec<f64> {
        self.strikes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Index of the interval containing `s`, if `s ∈ [X_0, X_n]`.
    pub fn locate(&self, s: f64) -> Option<usize> {
        if !(s >= self.first() && s <= self.last()) {
            return None;
        }
        let idx = self.strikes.partition_point(|x| *x <= s);
        Some(idx.saturating_sub(1).min(self.n() - 1))
    }
}

fn chord(payoff: &dyn Payoff, grid: &StrikeGrid, i: usize, s: f64) -> f64 {
    let (xl, xr) = (grid.strikes[i], grid.strikes[i + 1]);
    let h = xr - xl;
    (xr - s) / h * payoff.value(xl) + (s - xl) / h * payoff.value(xr)
}

/// Value of the linear spline through `(X_i, f(X_i))` at `s`.
pub fn interpolate(payoff: &dyn Payoff, grid: &StrikeGrid, s: f64) -> Result<f64> {
    let i = grid.locate(s).ok_or(ReplError::Range {
        x: s,
        lo: grid.first(),
        hi: grid.last(),
    })?;
    Ok(chord(payoff, grid, i, s))
}

/// Which replication identity to use.
///
/// `Full` reproduces the spline on `[X_0, X_n]` and pays nothing outside it
/// (boundary digitals and the extreme put/call cancel the tails). `Reduced`
/// drops those boundary instruments, so outside the grid it pays the linear
/// extrapolation of the end chords.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Full,
    Reduced,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub strike: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentType {
    Cash,
    DigitalPut,
    DigitalCall,
    Put,
    Call,
}

impl InstrumentType {
    pub fn label(self) -> &'static str {
        match self {
            Self::Cash => "cash",
            Self::DigitalPut => "digital_put",
            Self::DigitalCall => "digital_call",
            Self::Put => "put",
            Self::Call => "call",
        }
    }

    pub fn from_label(label: &str) -> Result<Self> {
        [Self::Cash, Self::DigitalPut, Self::DigitalCall, Self::Put, Self::Call]
            .into_iter()
            .find(|t| t.label() == label.trim())
            .ok_or_else(|| ReplError::Domain(format!("unknown instrument type {label:?}")))
    }
}

/// One serialized holding; cash has no strike.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Instrument {
    pub instrument_type: InstrumentType,
    pub strike: Option<f64>,
    pub weight: f64,
}

/// Static portfolio paying `cash` plus option payoffs at maturity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicatingPortfolio {
    pub cash: f64,
    pub digital_put: Option<Position>,
    pub digital_call: Option<Position>,
    pub puts: Vec<Position>,
    pub calls: Vec<Position>,
    pub form: Form,
}

impl ReplicatingPortfolio {
    /// Payoff of the portfolio at terminal price `s`.
    pub fn payoff(&self, s: f64) -> f64 {
        let mut total = self.cash;
        for p in &self.puts {
            total += p.weight * (p.strike - s).max(0.0);
        }
        for c in &self.calls {
            total += c.weight * (s - c.strike).max(0.0);
        }
        if let Some(d) = self.digital_put {
            if s < d.strike {
                total += d.weight;
            }
        }
        if let Some(d) = self.digital_call {
            if s > d.strike {
                total += d.weight;
            }
        }
        total
    }

    /// Flat list of holdings in the order cash, digitals, puts, calls.
    pub fn instruments(&self) -> Vec<Instrument> {
        let mut out = vec![Instrument {
            instrument_type: InstrumentType::Cash,
            strike: None,
            weight: self.cash,
        }];
        let mut push = |kind, p: &Position| {
            out.push(Instrument {
                instrument_type: kind,
                strike: Some(p.strike),
                weight: p.weight,
            })
        };
        if let Some(d) = &self.digital_put {
            push(InstrumentType::DigitalPut, d);
        }
        if let Some(d) = &self.digital_call {
            push(InstrumentType::DigitalCall, d);
        }
        for p in &self.puts {
            push(InstrumentType::Put, p);
        }
        for c in &self.calls {
            push(InstrumentType::Call, c);
        }
        out
    }

    /// Rebuilds a portfolio from holdings; the form is `Full` exactly when
    /// digitals are present.
    pub fn from_instruments(items: &[Instrument]) -> Result<Self> {
        let mut portfolio = Self {
            cash: 0.0,
            digital_put: None,
            digital_call: None,
            puts: Vec::new(),
            calls: Vec::new(),
            form: Form::Reduced,
        };
        for item in items {
            let position = || -> Result<Position> {
                let strike = item.strike.ok_or_else(|| {
                    ReplError::Domain(format!("{:?} holding needs a strike", item.instrument_type))
                })?;
                Ok(Position {
                    strike,
                    weight: item.weight,
                })
            };
            match item.instrument_type {
                InstrumentType::Cash => portfolio.cash += item.weight,
                InstrumentType::DigitalPut => {
                    portfolio.digital_put = Some(position()?);
                    portfolio.form = Form::Full;
                }
                InstrumentType::DigitalCall => {
                    portfolio.digital_call = Some(position()?);
                    portfolio.form = Form::Full;
                }
                InstrumentType::Put => portfolio.puts.push(position()?),
                InstrumentType::Call => portfolio.calls.push(position()?),
            }
        }
        Ok(portfolio)
    }

    /// CSV with header `instrument_type,strike,weight`. Numbers are written
    /// in shortest round-trip form so reading back is exact.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["instrument_type", "strike", "weight"])
            .map_err(io_err)?;
        for item in self.instruments() {
            let strike = item.strike.map(|k| k.to_string()).unwrap_or_default();
            w.write_record([item.instrument_type.label(), &strike, &item.weight.to_string()])
                .map_err(io_err)?;
        }
        w.flush().map_err(|e| ReplError::Numeric(e.to_string()))
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let mut items = Vec::new();
        for record in r.records() {
            let record = record.map_err(io_err)?;
            if record.len() != 3 {
                return Err(ReplError::Domain(format!(
                    "portfolio CSV: expected 3 fields, got {}",
                    record.len()
                )));
            }
            let instrument_type = InstrumentType::from_label(&record[0])?;
            let number = |field: &str| -> Result<f64> {
                field
                    .trim()
                    .parse()
                    .map_err(|_| ReplError::Domain(format!("portfolio CSV: bad number {field:?}")))
            };
            let strike = if record[1].trim().is_empty() {
                None
            } else {
                Some(number(&record[1])?)
            };
            items.push(Instrument {
                instrument_type,
                strike,
                weight: number(&record[2])?,
            });
        }
        Self::from_instruments(&items)
    }

    /// JSON array of holdings, the twin of the CSV layout.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(&self.instruments())
            .map_err(|e| ReplError::Numeric(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let items: Vec<Instrument> =
            serde_json::from_str(text).map_err(|e| ReplError::Domain(e.to_string()))?;
        Self::from_instruments(&items)
    }
}

fn io_err(e: csv::Error) -> ReplError {
    ReplError::Domain(format!("portfolio CSV: {e}"))
}

/// Decomposes the spline of `payoff` on `grid` into cash, puts at strikes
/// up to `X_k`, calls from `X_k` upward and, in the full form, the boundary
/// digitals.
///
/// With chord slopes `b_i`, the weight at an interior strike is the slope
/// change `b_i - b_{i-1}`; beyond the grid the slope is taken as 0 (full) or
/// as the end chord's slope (reduced).
pub fn decompose(payoff: &dyn Payoff, grid: &StrikeGrid, form: Form) -> Result<ReplicatingPortfolio> {
    let n = grid.n();
    if n < 2 {
        return Err(ReplError::DegenerateGrid(format!(
            "decomposition needs at least two intervals, got {n}"
        )));
    }
    let x = grid.strikes();
    let f: Vec<f64> = x.iter().map(|&s| payoff.value(s)).collect();
    if let Some(bad) = f.iter().position(|v| !v.is_finite()) {
        return Err(ReplError::Numeric(format!(
            "payoff not finite at strike {}",
            x[bad]
        )));
    }
    let b: Vec<f64> = (0..n).map(|i| (f[i + 1] - f[i]) / (x[i + 1] - x[i])).collect();
    let slope = |i: isize| -> f64 {
        if i < 0 {
            match form {
                Form::Full => 0.0,
                Form::Reduced => b[0],
            }
        } else if i as usize >= n {
            match form {
                Form::Full => 0.0,
                Form::Reduced => b[n - 1],
            }
        } else {
            b[i as usize]
        }
    };
    let k = grid.split_index();

    let mut puts = Vec::with_capacity(k + 1);
    for i in 0..k {
        if form == Form::Reduced && i == 0 {
            continue;
        }
        puts.push(Position {
            strike: x[i],
            weight: b[i] - slope(i as isize - 1),
        });
    }
    if !(form == Form::Full && k == 0) {
        puts.push(Position {
            strike: x[k],
            weight: -slope(k as isize - 1),
        });
    }

    let mut calls = Vec::with_capacity(n - k + 1);
    if !(form == Form::Full && k == n) {
        calls.push(Position {
            strike: x[k],
            weight: slope(k as isize),
        });
    }
    for i in (k + 1)..=n {
        if form == Form::Reduced && i == n {
            continue;
        }
        calls.push(Position {
            strike: x[i],
            weight: slope(i as isize) - b[i - 1],
        });
    }

    let (digital_put, digital_call) = match form {
        Form::Full => (
            Some(Position {
                strike: x[0],
                weight: -f[0],
            }),
            Some(Position {
                strike: x[n],
                weight: -f[n],
            }),
        ),
        Form::Reduced => (None, None),
    };

    Ok(ReplicatingPortfolio {
        cash: f[k],
        digital_put,
        digital_call,
        puts,
        calls,
        form,
    })
}

/// Squared density-weighted errors `∫_{X_i}^{X_{i+1}} (L_i - f)^2 g dS`.
pub fn interval_errors(
    payoff: &dyn Payoff,
    grid: &StrikeGrid,
    model: &dyn AssetModel,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>> {
    (0..grid.n())
        .map(|i| {
            let (xl, xr) = (grid.strikes[i], grid.strikes[i + 1]);
            quadrature::integrate(
                |s| {
                    let d = chord(payoff, grid, i, s) - payoff.value(s);
                    d * d * model.density(s)
                },
                xl,
                xr,
                spec,
            )
        })
        .collect()
}

/// `sqrt(Σ_i ∫ (L_i - f)^2 g dS)` over the grid.
pub fn exact_error(
    payoff: &dyn Payoff,
    grid: &StrikeGrid,
    model: &dyn AssetModel,
    spec: &QuadratureSpec,
) -> Result<f64> {
    Ok(interval_errors(payoff, grid, model, spec)?.iter().sum::<f64>().sqrt())
}

fn kernel_left(xi: f64) -> f64 {
    xi * xi * (1.0 - xi).powi(3) / 3.0
}

fn kernel_right(xi: f64) -> f64 {
    (1.0 - xi).powi(2) * xi.powi(3) / 3.0
}

/// `Ĝ(t)` on interval `i`: the density pulled back to `[0, 1]` and weighted
/// by `ξ²(1-ξ)³/3` below `t` and `(1-ξ)²ξ³/3` above it.
pub fn g_kernel(
    interval: usize,
    t: f64,
    grid: &StrikeGrid,
    model: &dyn AssetModel,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if interval >= grid.n() {
        return Err(ReplError::Domain(format!(
            "interval {interval} out of range for {} intervals",
            grid.n()
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(ReplError::Domain(format!("kernel argument {t} not in [0, 1]")));
    }
    let (xl, h) = (grid.strikes[interval], grid.width(interval));
    let ghat = |xi: f64| model.density(xl + h * xi);
    let left = quadrature::integrate(|xi| ghat(xi) * kernel_left(xi), 0.0, t, spec)?;
    let right = quadrature::integrate(|xi| ghat(xi) * kernel_right(xi), t, 1.0, spec)?;
    Ok(left + right)
}

/// `Ĝ(1) = ∫_0^1 ĝ(ξ) ξ²(1-ξ)³/3 dξ` on interval `i`.
pub fn g_kernel_at_one(
    interval: usize,
    grid: &StrikeGrid,
    model: &dyn AssetModel,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let (xl, h) = (grid.strikes[interval], grid.width(interval));
    quadrature::integrate(|xi| model.density(xl + h * xi) * kernel_left(xi), 0.0, 1.0, spec)
}

fn tensor_panels(spec: &QuadratureSpec) -> usize {
    match spec.rule {
        Rule::CompositeSimpson | Rule::Rectangle => spec.max_subdivisions.max(4).div_ceil(4) * 4,
        Rule::Adaptive => KERNEL_PANELS,
    }
}

/// `∫_{X_i}^{X_{i+1}} G(S) (f''(S))² dS` for interval `i`.
///
/// Evaluated on a uniform grid of `ξ`: `Ĝ` at even nodes comes from running
/// Simpson sums of the two kernel integrands, and the outer integral is a
/// Simpson sum over those even nodes. The panel count is taken from a fixed
/// rule's `max_subdivisions` (adaptive specs use [`KERNEL_PANELS`]).
pub fn curvature_integral(
    payoff: &dyn Payoff,
    grid: &StrikeGrid,
    model: &dyn AssetModel,
    interval: usize,
    spec: &QuadratureSpec,
) -> f64 {
    let panels = tensor_panels(spec);
    let (xl, h) = (grid.strikes[interval], grid.width(interval));
    let step = 1.0 / panels as f64;
    let nodes: Vec<f64> = (0..=panels).map(|j| j as f64 * step).collect();
    let mut ghat = Vec::with_capacity(panels + 1);
    let mut phi = Vec::with_capacity(panels + 1);
    for (j, &xi) in nodes.iter().enumerate() {
        // exact endpoints keep kinks at the nodes out of the interior
        let s = if j == 0 {
            xl
        } else if j == panels {
            grid.strikes[interval + 1]
        } else {
            xl + h * xi
        };
        let inner = if j == 0 {
            s + 1e-12 * h
        } else if j == panels {
            s - 1e-12 * h
        } else {
            s
        };
        ghat.push(model.density(s));
        let f2 = payoff.second_derivative(inner);
        phi.push(f2 * f2);
    }
    let a: Vec<f64> = nodes.iter().zip(&ghat).map(|(x, g)| g * kernel_left(*x)).collect();
    let b: Vec<f64> = nodes.iter().zip(&ghat).map(|(x, g)| g * kernel_right(*x)).collect();

    let half = panels / 2;
    let mut cum_a = vec![0.0; half + 1];
    let mut cum_b = vec![0.0; half + 1];
    for m in 1..=half {
        let j = 2 * m;
        cum_a[m] = cum_a[m - 1] + step / 3.0 * (a[j - 2] + 4.0 * a[j - 1] + a[j]);
        cum_b[m] = cum_b[m - 1] + step / 3.0 * (b[j - 2] + 4.0 * b[j - 1] + b[j]);
    }
    let total_b = cum_b[half];
    let g_even: Vec<f64> = (0..=half).map(|m| cum_a[m] + total_b - cum_b[m]).collect();

    let coarse = 2.0 * step;
    let mut sum = 0.0;
    for m in 0..=half {
        let w = if m == 0 || m == half {
            1.0
        } else if m % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * g_even[m] * phi[2 * m];
    }
    h * coarse / 3.0 * sum
}

/// Exact error, a-priori bound and their per-interval squared parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub exact_error: f64,
    pub bound: f64,
    pub per_interval: Vec<IntervalError>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalError {
    pub exact_sq: f64,
    pub bound_sq: f64,
}

/// Evaluates `sqrt(2 Σ h_i⁴ ∫ G (f'')² dS)` alongside the exact error and
/// fails if the exact error exceeds it.
pub fn error_bound(
    payoff: &dyn Payoff,
    grid: &StrikeGrid,
    model: &dyn AssetModel,
    spec: &QuadratureSpec,
) -> Result<ErrorReport> {
    let exact = interval_errors(payoff, grid, model, spec)?;
    let per_interval: Vec<IntervalError> = exact
        .iter()
        .enumerate()
        .map(|(i, &exact_sq)| {
            let h = grid.width(i);
            let moment = curvature_integral(payoff, grid, model, i, spec);
            IntervalError {
                exact_sq,
                bound_sq: 2.0 * h.powi(4) * moment,
            }
        })
        .collect();
    let exact_error = exact.iter().sum::<f64>().sqrt();
    let bound = per_interval.iter().map(|e| e.bound_sq).sum::<f64>().sqrt();
    if !(exact_error.is_finite() && bound.is_finite()) {
        return Err(ReplError::Numeric("error bound not finite".into()));
    }
    if exact_error > bound * (1.0 + 1e-9) + f64::MIN_POSITIVE {
        return Err(ReplError::BoundViolation {
            exact: exact_error,
            bound,
        });
    }
    Ok(ErrorReport {
        exact_error,
        bound,
        per_interval,
    })
}
