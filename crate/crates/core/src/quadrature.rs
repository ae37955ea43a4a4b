//! One-dimensional quadrature: adaptive Simpson, fixed composite rules and a
//! tail-truncated semi-infinite integral.

use serde::{Deserialize, Serialize};

use crate::error::{ReplError, Result};

/// Probability mass left outside a truncated semi-infinite integral.
pub const TAIL_EPS: f64 = 1e-16;

const MAX_DEPTH: u32 = 60;
const INITIAL_PANELS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    CompositeSimpson,
    Adaptive,
    Rectangle,
}

/// Integration rule and its accuracy controls.
///
/// For the fixed rules (`CompositeSimpson`, `Rectangle`) `max_subdivisions`
/// is the panel count; `abs_tol` only steers the adaptive rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadratureSpec {
    pub rule: Rule,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            rule: Rule::Adaptive,
            abs_tol: 1e-10,
            max_subdivisions: 1 << 20,
        }
    }
}

impl QuadratureSpec {
    pub fn adaptive(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }

    pub fn composite_simpson(panels: usize) -> Self {
        Self {
            rule: Rule::CompositeSimpson,
            abs_tol: 1e-10,
            max_subdivisions: panels,
        }
    }

    pub fn rectangle(panels: usize) -> Self {
        Self {
            rule: Rule::Rectangle,
            abs_tol: 1e-10,
            max_subdivisions: panels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol.is_finite() && self.abs_tol > 0.0) {
            return Err(ReplError::Domain(format!(
                "quadrature abs_tol must be > 0, got {}",
                self.abs_tol
            )));
        }
        if self.max_subdivisions == 0 {
            return Err(ReplError::Domain(
                "quadrature max_subdivisions must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Integrates `f` over `[a, b]` with the rule selected by `spec`.
pub fn integrate<F>(f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    spec.validate()?;
    if !(a.is_finite() && b.is_finite()) || a > b {
        return Err(ReplError::Domain(format!(
            "integration limits must satisfy a <= b, got [{a}, {b}]"
        )));
    }
    if a == b {
        return Ok(0.0);
    }
    let value = match spec.rule {
        Rule::CompositeSimpson => composite_simpson(&f, a, b, spec.max_subdivisions),
        Rule::Rectangle => midpoint(&f, a, b, spec.max_subdivisions),
        Rule::Adaptive => {
            let breaks = uniform_breaks(a, b, INITIAL_PANELS);
            adaptive_simpson(&f, &breaks, spec.abs_tol, spec.max_subdivisions)?
        }
    };
    finite_or_err(value)
}

/// Integrates over consecutive pieces `[breaks[i], breaks[i+1]]`, sharing the
/// absolute tolerance across them.
pub fn integrate_partitioned<F>(f: F, breaks: &[f64], spec: &QuadratureSpec) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    spec.validate()?;
    if breaks.len() < 2 {
        return Ok(0.0);
    }
    if breaks.windows(2).any(|w| !(w[0] <= w[1])) || breaks.iter().any(|x| !x.is_finite()) {
        return Err(ReplError::Domain(
            "partition break points must be finite and nondecreasing".into(),
        ));
    }
    let value = match spec.rule {
        Rule::Adaptive => adaptive_simpson(&f, breaks, spec.abs_tol, spec.max_subdivisions)?,
        _ => {
            let mut total = 0.0;
            for w in breaks.windows(2) {
                total += integrate(&f, w[0], w[1], spec)?;
            }
            total
        }
    };
    finite_or_err(value)
}

/// Integrates `f` over `[a, ∞)`, truncating where `survival(x) = P(S > x)`
/// drops below [`TAIL_EPS`]. `scale` seeds the cutoff search and should be a
/// typical magnitude of the variable (e.g. the spot price).
pub fn integrate_semi_infinite<F, C>(
    f: F,
    a: f64,
    spec: &QuadratureSpec,
    survival: C,
    scale: f64,
) -> Result<f64>
where
    F: Fn(f64) -> f64,
    C: Fn(f64) -> f64,
{
    if !(scale.is_finite() && scale > 0.0) {
        return Err(ReplError::Domain(format!("scale must be > 0, got {scale}")));
    }
    let upper = upper_cutoff(&survival, a.max(scale), TAIL_EPS);
    if upper <= a {
        return Ok(0.0);
    }
    let breaks = if a > 0.0 {
        geometric_breaks(a, upper, 32)
    } else {
        uniform_breaks(a, upper, 32)
    };
    integrate_partitioned(f, &breaks, spec)
}

/// Smallest point (to bisection accuracy) beyond which `survival < eps`.
pub fn upper_cutoff<C: Fn(f64) -> f64>(survival: C, start: f64, eps: f64) -> f64 {
    let mut hi = start.max(f64::MIN_POSITIVE);
    if survival(hi) < eps {
        return hi;
    }
    while survival(hi) >= eps {
        hi *= 2.0;
        if hi > 1e300 {
            return hi;
        }
    }
    let mut lo = hi / 2.0;
    for _ in 0..200 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if survival(mid) < eps {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Largest point (to bisection accuracy) below which `cdf < eps`.
pub fn lower_cutoff<C: Fn(f64) -> f64>(cdf: C, start: f64, eps: f64) -> f64 {
    let mut lo = start;
    if cdf(lo) < eps {
        return lo;
    }
    while cdf(lo) >= eps {
        lo /= 2.0;
        if lo < 1e-300 {
            return 0.0;
        }
    }
    let mut hi = lo * 2.0;
    for _ in 0..200 {
        if hi - lo <= 1e-10 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if cdf(mid) < eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

pub fn uniform_breaks(a: f64, b: f64, pieces: usize) -> Vec<f64> {
    let pieces = pieces.max(1);
    let mut out: Vec<f64> = (0..=pieces)
        .map(|i| a + (b - a) * i as f64 / pieces as f64)
        .collect();
    out[pieces] = b;
    out
}

/// Break points equally spaced in `ln x`; requires `0 < a < b`.
pub fn geometric_breaks(a: f64, b: f64, pieces: usize) -> Vec<f64> {
    let pieces = pieces.max(1);
    let ratio = (b / a).ln();
    let mut out: Vec<f64> = (0..=pieces)
        .map(|i| a * (ratio * i as f64 / pieces as f64).exp())
        .collect();
    out[0] = a;
    out[pieces] = b;
    out
}

/// Composite Simpson with `panels` (rounded up to even) subintervals.
pub fn composite_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let panels = (panels.max(2) + 1) & !1;
    let h = (b - a) / panels as f64;
    let mut odd = 0.0;
    let mut even = 0.0;
    for i in 1..panels {
        let x = a + h * i as f64;
        if i % 2 == 1 {
            odd += f(x);
        } else {
            even += f(x);
        }
    }
    h / 3.0 * (f(a) + 4.0 * odd + 2.0 * even + f(b))
}

fn midpoint<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    (0..panels).map(|i| f(a + h * (i as f64 + 0.5))).sum::<f64>() * h
}

struct Segment {
    a: f64,
    m: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

fn adaptive_simpson<F: Fn(f64) -> f64>(
    f: &F,
    breaks: &[f64],
    abs_tol: f64,
    max_subdivisions: usize,
) -> Result<f64> {
    let pieces = breaks.len() - 1;
    let mut stack = Vec::with_capacity(64);
    for w in breaks.windows(2).rev() {
        let (a, b) = (w[0], w[1]);
        if a == b {
            continue;
        }
        let m = 0.5 * (a + b);
        let (fa, fm, fb) = (f(a), f(m), f(b));
        stack.push(Segment {
            a,
            m,
            b,
            fa,
            fm,
            fb,
            whole: simpson(a, b, fa, fm, fb),
            tol: abs_tol / pieces as f64,
            depth: 0,
        });
    }

    let mut total = 0.0;
    let mut error_estimate = 0.0;
    let mut subdivisions = 0usize;
    let mut unmet = false;
    while let Some(seg) = stack.pop() {
        let lm = 0.5 * (seg.a + seg.m);
        let rm = 0.5 * (seg.m + seg.b);
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(seg.a, seg.m, seg.fa, flm, seg.fm);
        let right = simpson(seg.m, seg.b, seg.fm, frm, seg.fb);
        let delta = left + right - seg.whole;
        let noise_floor = 64.0 * f64::EPSILON * (left.abs() + right.abs());
        let converged = delta.abs() <= 15.0 * seg.tol || delta.abs() <= noise_floor;
        let too_narrow = seg.m <= seg.a || seg.b <= seg.m || lm <= seg.a || rm >= seg.b;
        if converged || too_narrow || seg.depth >= MAX_DEPTH {
            if !converged {
                unmet = true;
            }
            total += left + right + delta / 15.0;
            error_estimate += delta.abs() / 15.0;
            continue;
        }
        subdivisions += 1;
        if subdivisions > max_subdivisions {
            let remaining: f64 = stack.iter().map(|s| s.whole).sum::<f64>() + left + right;
            return Err(ReplError::Accuracy {
                estimate: total + remaining,
                error_estimate: error_estimate + delta.abs(),
                tolerance: abs_tol,
            });
        }
        let depth = seg.depth + 1;
        let tol = 0.5 * seg.tol;
        stack.push(Segment {
            a: seg.m,
            m: rm,
            b: seg.b,
            fa: seg.fm,
            fm: frm,
            fb: seg.fb,
            whole: right,
            tol,
            depth,
        });
        stack.push(Segment {
            a: seg.a,
            m: lm,
            b: seg.m,
            fa: seg.fa,
            fm: flm,
            fb: seg.fm,
            whole: left,
            tol,
            depth,
        });
    }
    if unmet && error_estimate > abs_tol {
        return Err(ReplError::Accuracy {
            estimate: total,
            error_estimate,
            tolerance: abs_tol,
        });
    }
    Ok(total)
}

fn finite_or_err(value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(ReplError::Numeric(format!(
            "integral evaluated to non-finite value {value}"
        )))
    }
}
