//! Payoff functions of the terminal asset price.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, ReplError, Result};

/// Default absolute tolerance on `h(S)` for the swaption support roots.
pub const ROOT_TOL: f64 = 1e-10;
/// Default Newton iteration cap for the swaption support roots.
pub const ROOT_MAX_ITER: usize = 100;

fn fd_step(s: f64) -> f64 {
    let h = 1e-4 * s.abs().max(1.0);
    if s > 0.0 {
        h.min(0.5 * s)
    } else {
        h
    }
}

/// A European payoff `f(S)` together with the derivatives the error bound
/// and the strike-selection monitor need.
///
/// Implementors without analytic derivatives inherit central finite
/// differences with step `1e-4 * max(S, 1)`.
pub trait Payoff: Send + Sync {
    fn value(&self, s: f64) -> f64;

    fn first_derivative(&self, s: f64) -> f64 {
        let h = fd_step(s);
        (self.value(s + h) - self.value(s - h)) / (2.0 * h)
    }

    fn second_derivative(&self, s: f64) -> f64 {
        let h = fd_step(s);
        (self.value(s + h) - 2.0 * self.value(s) + self.value(s - h)) / (h * h)
    }

    /// Interval outside of which the payoff is identically zero, if any.
    fn support(&self) -> Option<(f64, f64)> {
        None
    }
}

impl<P: Payoff + ?Sized> Payoff for &P {
    fn value(&self, s: f64) -> f64 {
        (**self).value(s)
    }
    fn first_derivative(&self, s: f64) -> f64 {
        (**self).first_derivative(s)
    }
    fn second_derivative(&self, s: f64) -> f64 {
        (**self).second_derivative(s)
    }
    fn support(&self) -> Option<(f64, f64)> {
        (**self).support()
    }
}

impl<P: Payoff + ?Sized> Payoff for Box<P> {
    fn value(&self, s: f64) -> f64 {
        (**self).value(s)
    }
    fn first_derivative(&self, s: f64) -> f64 {
        (**self).first_derivative(s)
    }
    fn second_derivative(&self, s: f64) -> f64 {
        (**self).second_derivative(s)
    }
    fn support(&self) -> Option<(f64, f64)> {
        (**self).support()
    }
}

impl<P: Payoff + ?Sized> Payoff for Arc<P> {
    fn value(&self, s: f64) -> f64 {
        (**self).value(s)
    }
    fn first_derivative(&self, s: f64) -> f64 {
        (**self).first_derivative(s)
    }
    fn second_derivative(&self, s: f64) -> f64 {
        (**self).second_derivative(s)
    }
    fn support(&self) -> Option<(f64, f64)> {
        (**self).support()
    }
}

/// Log-contract payoff of a variance swap, `(2/T)((S - S0)/S0 - ln(S/S0))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceSwapPayoff {
    pub s0: f64,
    pub t: f64,
}

impl VarianceSwapPayoff {
    pub fn new(s0: f64, t: f64) -> Result<Self> {
        ensure_positive("S0", s0)?;
        ensure_positive("T", t)?;
        Ok(Self { s0, t })
    }
}

/// Variance-swap payoff for spot `s0` and maturity `t` (years).
pub fn variance_swap(s0: f64, t: f64) -> Result<VarianceSwapPayoff> {
    VarianceSwapPayoff::new(s0, t)
}

impl Payoff for VarianceSwapPayoff {
    fn value(&self, s: f64) -> f64 {
        2.0 / self.t * ((s - self.s0) / self.s0 - (s / self.s0).ln())
    }

    fn first_derivative(&self, s: f64) -> f64 {
        2.0 / self.t * (1.0 / self.s0 - 1.0 / s)
    }

    fn second_derivative(&self, s: f64) -> f64 {
        2.0 / (self.t * s * s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SwaptionSide {
    Call,
    Put,
}

/// Option on the variance-swap payoff with variance strike `k`.
///
/// The put side `(K - VS(S))^+` equals the concave function
/// `h(S) = K - VS(S)` on `[S_L, S_R]` and vanishes elsewhere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwaptionPayoff {
    pub s0: f64,
    pub t: f64,
    pub k: f64,
    pub side: SwaptionSide,
    pub bounds: (f64, f64),
}

impl SwaptionPayoff {
    /// `k = 0` is allowed: the put side is then identically zero and the
    /// support collapses to `{S0}`.
    pub fn new(s0: f64, t: f64, k: f64, side: SwaptionSide) -> Result<Self> {
        let bounds = if k == 0.0 {
            ensure_positive("S0", s0)?;
            ensure_positive("T", t)?;
            (s0, s0)
        } else {
            swaption_bounds(s0, t, k, ROOT_TOL, ROOT_MAX_ITER)?
        };
        Ok(Self {
            s0,
            t,
            k,
            side,
            bounds,
        })
    }

    pub fn h(&self, s: f64) -> f64 {
        swaption_h(self.s0, self.t, self.k, s)
    }

    pub fn underlying(&self) -> VarianceSwapPayoff {
        VarianceSwapPayoff {
            s0: self.s0,
            t: self.t,
        }
    }

    pub fn with_side(&self, side: SwaptionSide) -> Self {
        Self { side, ..*self }
    }

    fn inside(&self, s: f64) -> bool {
        s >= self.bounds.0 && s <= self.bounds.1
    }
}

/// Swaption payoff; the put side carries the compact support `[S_L, S_R]`.
pub fn swaption(s0: f64, t: f64, k: f64, side: SwaptionSide) -> Result<SwaptionPayoff> {
    SwaptionPayoff::new(s0, t, k, side)
}

impl Payoff for SwaptionPayoff {
    fn value(&self, s: f64) -> f64 {
        match self.side {
            SwaptionSide::Put if self.inside(s) => self.h(s).max(0.0),
            SwaptionSide::Put => 0.0,
            SwaptionSide::Call => (-self.h(s)).max(0.0),
        }
    }

    fn first_derivative(&self, s: f64) -> f64 {
        let vs = self.underlying().first_derivative(s);
        match (self.side, self.inside(s)) {
            (SwaptionSide::Put, true) => -vs,
            (SwaptionSide::Call, false) => vs,
            _ => 0.0,
        }
    }

    fn second_derivative(&self, s: f64) -> f64 {
        let vs = self.underlying().second_derivative(s);
        match (self.side, self.inside(s)) {
            (SwaptionSide::Put, true) => -vs,
            (SwaptionSide::Call, false) => vs,
            _ => 0.0,
        }
    }

    fn support(&self) -> Option<(f64, f64)> {
        match self.side {
            SwaptionSide::Put => Some(self.bounds),
            SwaptionSide::Call => None,
        }
    }
}

fn swaption_h(s0: f64, t: f64, k: f64, s: f64) -> f64 {
    k - 2.0 / t * ((s - s0) / s0 - (s / s0).ln())
}

fn swaption_h_prime(s0: f64, t: f64, s: f64) -> f64 {
    -2.0 / t * (1.0 / s0 - 1.0 / s)
}

/// Roots `S_L < S0 < S_R` of `h(S) = K - VS(S)` by Newton's method.
///
/// The left iteration starts at `max(1e-6, 0.1 S0)` and the right one at
/// `10 S0`; a start with `h >= 0` (large `K`) is pushed outward by factors of
/// ten until `h < 0`, after which concavity makes both iterations monotone.
pub fn swaption_bounds(s0: f64, t: f64, k: f64, tol: f64, max_iter: usize) -> Result<(f64, f64)> {
    ensure_positive("S0", s0)?;
    ensure_positive("T", t)?;
    ensure_positive("K", k)?;
    ensure_positive("tol", tol)?;
    let h = |s: f64| swaption_h(s0, t, k, s);

    let mut left = (0.1 * s0).max(1e-6).min(0.5 * s0);
    while h(left) >= 0.0 {
        left /= 10.0;
        if left < 1e-300 {
            return Err(ReplError::Domain(format!(
                "no left root of h for K = {k}: h stays nonnegative near zero"
            )));
        }
    }
    let mut right = 10.0 * s0;
    while h(right) >= 0.0 {
        right *= 10.0;
        if !right.is_finite() || right > 1e300 {
            return Err(ReplError::Domain(format!(
                "no right root of h for K = {k}"
            )));
        }
    }
    let newton = |mut s: f64| -> Result<f64> {
        for _ in 0..max_iter {
            let value = h(s);
            if value.abs() < tol {
                return Ok(s);
            }
            let slope = swaption_h_prime(s0, t, s);
            if slope == 0.0 || !slope.is_finite() {
                break;
            }
            s -= value / slope;
            if !(s.is_finite() && s > 0.0) {
                break;
            }
        }
        Err(ReplError::Iteration {
            what: "Newton iteration for the swaption support",
            iterations: max_iter,
        })
    };
    Ok((newton(left)?, newton(right)?))
}

/// `(S - X̄)^+ f(S)`: the integrand of a quadratic-hedge right-hand side
/// written as a payoff.
#[derive(Debug, Clone)]
pub struct ModifiedPayoff<P> {
    pub base: P,
    pub strike_floor: f64,
}

impl<P: Payoff> ModifiedPayoff<P> {
    pub fn new(base: P, strike_floor: f64) -> Self {
        Self { base, strike_floor }
    }
}

impl<P: Payoff> Payoff for ModifiedPayoff<P> {
    fn value(&self, s: f64) -> f64 {
        if s <= self.strike_floor {
            0.0
        } else {
            (s - self.strike_floor) * self.base.value(s)
        }
    }

    fn first_derivative(&self, s: f64) -> f64 {
        if s <= self.strike_floor {
            0.0
        } else {
            self.base.value(s) + (s - self.strike_floor) * self.base.first_derivative(s)
        }
    }

    fn second_derivative(&self, s: f64) -> f64 {
        if s <= self.strike_floor {
            0.0
        } else {
            2.0 * self.base.first_derivative(s)
                + (s - self.strike_floor) * self.base.second_derivative(s)
        }
    }

    fn support(&self) -> Option<(f64, f64)> {
        self.base
            .support()
            .map(|(lo, hi)| (lo.max(self.strike_floor), hi))
    }
}

/// A payoff multiplied by a constant (e.g. the notional).
#[derive(Debug, Clone)]
pub struct ScaledPayoff<P> {
    pub base: P,
    pub factor: f64,
}

impl<P: Payoff> ScaledPayoff<P> {
    pub fn new(base: P, factor: f64) -> Self {
        Self { base, factor }
    }
}

impl<P: Payoff> Payoff for ScaledPayoff<P> {
    fn value(&self, s: f64) -> f64 {
        self.factor * self.base.value(s)
    }
    fn first_derivative(&self, s: f64) -> f64 {
        self.factor * self.base.first_derivative(s)
    }
    fn second_derivative(&self, s: f64) -> f64 {
        self.factor * self.base.second_derivative(s)
    }
    fn support(&self) -> Option<(f64, f64)> {
        self.base.support()
    }
}

type ScalarFn = Box<dyn Fn(f64) -> f64 + Send + Sync>;

/// Payoff built from closures. Without an explicit second derivative the
/// finite-difference fallback is used.
pub struct FnPayoff {
    value: ScalarFn,
    second: Option<ScalarFn>,
    support: Option<(f64, f64)>,
}

impl FnPayoff {
    pub fn new(value: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            value: Box::new(value),
            second: None,
            support: None,
        }
    }

    pub fn with_second_derivative(mut self, f2: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        self.second = Some(Box::new(f2));
        self
    }

    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        self.support = Some((lo, hi));
        self
    }

    /// Vanilla call `(S - K)^+`.
    pub fn call(strike: f64) -> Self {
        Self::new(move |s| (s - strike).max(0.0)).with_second_derivative(|_| 0.0)
    }
}

impl Payoff for FnPayoff {
    fn value(&self, s: f64) -> f64 {
        (self.value)(s)
    }

    fn second_derivative(&self, s: f64) -> f64 {
        match &self.second {
            Some(f2) => f2(s),
            None => {
                let h = fd_step(s);
                (self.value(s + h) - 2.0 * self.value(s) + self.value(s - h)) / (h * h)
            }
        }
    }

    fn support(&self) -> Option<(f64, f64)> {
        self.support
    }
}

impl std::fmt::Debug for FnPayoff {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnPayoff")
            .field("analytic_second", &self.second.is_some())
            .field("support", &self.support)
            .finish()
    }
}
