//! Static replication of nonlinear European payoffs with portfolios of
//! vanilla and digital options.
//!
//! The payoff is approximated by a linear spline on a strike grid; the
//! strikes are chosen by equidistributing a density-weighted monitor of the
//! payoff's curvature, so the replication error decays like `n^-2` in the
//! number of strikes. When only fixed strikes trade, weights come from a
//! least-squares (quadratic hedging) projection instead.

// negated comparisons deliberately treat NaN as invalid
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equidistribution;
pub mod error;
pub mod models;
pub mod montecarlo;
pub mod payoffs;
pub mod quadratic_hedge;
pub mod quadrature;
pub mod spline;
pub mod valuation;

pub use error::{ReplError, Result};
