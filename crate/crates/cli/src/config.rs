//! Run configuration: a JSON document plus `--set key=value` overrides.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use static_repl::equidistribution::{EquidistConfig, RhoRule};
use static_repl::models::{AssetModel, CounterpartyModel, LognormalModel};
use static_repl::montecarlo::McSpec;
use static_repl::payoffs::{swaption, variance_swap, FnPayoff, Payoff, SwaptionPayoff, SwaptionSide, VarianceSwapPayoff};
use static_repl::quadratic_hedge::{QuadHedgeConfig, UMethod};
use static_repl::quadrature::{QuadratureSpec, Rule};
use static_repl::valuation::{FormChoice, ReplicationSetup, DEFAULT_NOTIONAL};
use static_repl::ReplError;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    #[serde(default)]
    pub payoff: PayoffConfig,
    #[serde(default)]
    pub replication: ReplicationBlock,
    #[serde(default)]
    pub quadrature: QuadratureBlock,
    #[serde(default)]
    pub converge: ConvergeBlock,
    #[serde(default)]
    pub quad_hedge: QuadHedgeBlock,
    #[serde(default)]
    pub mc: McSpec,
    #[serde(default)]
    pub outputs: Outputs,
}

fn default_s0() -> f64 {
    100.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Lognormal {
        #[serde(default = "default_s0")]
        s0: f64,
        r: f64,
        sigma: f64,
        t: f64,
    },
    Counterparty {
        #[serde(default = "default_s0")]
        s0: f64,
        r: f64,
        sigma1: f64,
        sigma2: f64,
        lambda: f64,
        jump_fractions: Vec<f64>,
        jump_probs: Vec<f64>,
        t: f64,
    },
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PayoffConfig {
    #[default]
    VarianceSwap,
    Swaption {
        k: f64,
        side: SwaptionSide,
    },
    Call {
        strike: f64,
    },
    Put {
        strike: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplicationBlock {
    pub n: usize,
    pub x0: f64,
    pub xn: f64,
    pub gamma_exponent: f64,
    pub form: FormChoice,
    pub notional: f64,
    pub max_iterations: usize,
    pub move_tol: f64,
    pub rho_rule: RhoRule,
    pub split_index: Option<usize>,
}

impl Default for ReplicationBlock {
    fn default() -> Self {
        let grid = EquidistConfig::default();
        Self {
            n: grid.n,
            x0: grid.x0,
            xn: grid.xn,
            gamma_exponent: grid.gamma_exponent,
            form: FormChoice::Auto,
            notional: DEFAULT_NOTIONAL,
            max_iterations: grid.max_iterations,
            move_tol: grid.move_tol,
            rho_rule: grid.rho_rule,
            split_index: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadratureBlock {
    pub rule: Rule,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadratureBlock {
    fn default() -> Self {
        let spec = QuadratureSpec::default();
        Self {
            rule: spec.rule,
            abs_tol: spec.abs_tol,
            max_subdivisions: spec.max_subdivisions,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeBlock {
    pub n_list: Vec<usize>,
}

impl Default for ConvergeBlock {
    fn default() -> Self {
        Self {
            n_list: vec![20, 40, 80, 160, 320, 640],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QuadHedgeBlock {
    pub strikes: Vec<f64>,
    pub u_method: UMethod,
    pub replication_intervals: usize,
    pub replication_upper: Option<f64>,
}

impl Default for QuadHedgeBlock {
    fn default() -> Self {
        let c = QuadHedgeConfig::default();
        Self {
            strikes: vec![50.0, 70.0, 90.0, 100.0, 110.0, 130.0],
            u_method: c.u_method,
            replication_intervals: c.replication_intervals,
            replication_upper: c.replication_upper,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    /// Main CSV output (portfolio, convergence table or hedge table).
    pub csv: Option<PathBuf>,
    pub json: Option<PathBuf>,
    /// Strike grid CSV written by `replicate`.
    pub grid: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum Model {
    Lognormal(LognormalModel),
    Counterparty(CounterpartyModel),
}

impl Model {
    pub fn as_dyn(&self) -> &dyn AssetModel {
        match self {
            Model::Lognormal(m) => m,
            Model::Counterparty(m) => m,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Model::Lognormal(_) => "lognormal",
            Model::Counterparty(_) => "counterparty",
        }
    }
}

pub enum Contract {
    VarianceSwap(VarianceSwapPayoff),
    Swaption(SwaptionPayoff),
    Vanilla(FnPayoff),
}

impl Contract {
    pub fn as_dyn(&self) -> &dyn Payoff {
        match self {
            Contract::VarianceSwap(p) => p,
            Contract::Swaption(p) => p,
            Contract::Vanilla(p) => p,
        }
    }
}

/// Everything a subcommand needs, validated.
pub struct Resolved {
    pub model: Model,
    pub contract: Contract,
    pub setup: ReplicationSetup,
    pub spec: QuadratureSpec,
    pub hedge: QuadHedgeConfig,
}

impl RunConfig {
    pub fn resolve(&self) -> Result<Resolved, ReplError> {
        let model = match self.model.clone() {
            ModelConfig::Lognormal { s0, r, sigma, t } => Model::Lognormal(LognormalModel::new(s0, r, sigma, t)?),
            ModelConfig::Counterparty {
                s0,
                r,
                sigma1,
                sigma2,
                lambda,
                jump_fractions,
                jump_probs,
                t,
            } => Model::Counterparty(CounterpartyModel::new(
                s0,
                r,
                sigma1,
                sigma2,
                lambda,
                jump_fractions,
                jump_probs,
                t,
            )?),
        };
        let (s0, t) = (model.as_dyn().spot(), model.as_dyn().maturity());
        let contract = match self.payoff {
            PayoffConfig::VarianceSwap => Contract::VarianceSwap(variance_swap(s0, t)?),
            PayoffConfig::Swaption { k, side } => Contract::Swaption(swaption(s0, t, k, side)?),
            PayoffConfig::Call { strike } => Contract::Vanilla(vanilla(strike, true)?),
            PayoffConfig::Put { strike } => Contract::Vanilla(vanilla(strike, false)?),
        };

        let r = &self.replication;
        let setup = ReplicationSetup {
            grid: EquidistConfig {
                gamma_exponent: r.gamma_exponent,
                max_iterations: r.max_iterations,
                move_tol: r.move_tol,
                rho_rule: r.rho_rule,
                ..EquidistConfig::new(r.n, r.x0, r.xn)
            },
            form: r.form,
            notional: r.notional,
            split_index: r.split_index,
        };
        setup.validate()?;
        if let Some(k) = r.split_index {
            if k > r.n {
                return Err(ReplError::Domain(format!("split_index {k} exceeds n = {}", r.n)));
            }
        }

        let q = &self.quadrature;
        if !(q.abs_tol.is_finite() && q.abs_tol > 0.0) || q.max_subdivisions == 0 {
            return Err(ReplError::Domain(
                "quadrature needs abs_tol > 0 and max_subdivisions >= 1".into(),
            ));
        }
        let spec = QuadratureSpec {
            rule: q.rule,
            abs_tol: q.abs_tol,
            max_subdivisions: q.max_subdivisions,
        };

        let h = &self.quad_hedge;
        if h.replication_intervals < 2 {
            return Err(ReplError::Domain("quad_hedge.replication_intervals must be >= 2".into()));
        }
        let hedge = QuadHedgeConfig {
            u_method: h.u_method,
            notional: r.notional,
            replication_intervals: h.replication_intervals,
            replication_upper: h.replication_upper,
        };
        Ok(Resolved {
            model,
            contract,
            setup,
            spec,
            hedge,
        })
    }
}

fn vanilla(strike: f64, call: bool) -> Result<FnPayoff, ReplError> {
    if !(strike.is_finite() && strike > 0.0) {
        return Err(ReplError::Domain(format!("strike must be finite and > 0, got {strike}")));
    }
    Ok(if call {
        FnPayoff::call(strike)
    } else {
        FnPayoff::new(move |s| (strike - s).max(0.0))
    })
}

/// Reads the base document (an empty object without `--config`), applies
/// the overrides in order and deserializes.
pub fn load(text: Option<&str>, overrides: &[String]) -> Result<RunConfig, String> {
    let mut doc = match text {
        Some(t) => serde_json::from_str::<Value>(t).map_err(|e| format!("invalid JSON: {e}"))?,
        None => Value::Object(Map::new()),
    };
    if !doc.is_object() {
        return Err("config must be a JSON object".into());
    }
    for item in overrides {
        apply_override(&mut doc, item)?;
    }
    serde_json::from_value(doc).map_err(|e| e.to_string())
}

/// `a.b.c=value`; the value is parsed as JSON and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, item: &str) -> Result<(), String> {
    let (path, raw) = item
        .split_once('=')
        .ok_or_else(|| format!("override `{item}` is not of the form key=value"))?;
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(format!("override `{item}` has an empty key"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    for key in &keys[..keys.len() - 1] {
        let map = node
            .as_object_mut()
            .ok_or_else(|| format!("override `{item}`: `{key}` is not inside an object"))?;
        node = map.entry(key.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    node.as_object_mut()
        .ok_or_else(|| format!("override `{item}`: parent of `{}` is not an object", keys[keys.len() - 1]))?
        .insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{"model": {"type": "lognormal", "r": 0.05, "sigma": 0.2, "t": 0.25}}"#;

    #[test]
    fn defaults_fill_missing_blocks() {
        let c = load(Some(BASE), &[]).unwrap();
        assert!(matches!(c.payoff, PayoffConfig::VarianceSwap));
        assert_eq!(c.replication.n, 20);
        assert_eq!(c.converge.n_list.len(), 6);
        let r = c.resolve().unwrap();
        assert_eq!(r.model.as_dyn().spot(), 100.0);
    }

    #[test]
    fn overrides_create_and_replace() {
        let sets = [
            "replication.n=40".to_string(),
            "model.sigma=0.3".to_string(),
            "payoff.type=swaption".to_string(),
            "payoff.k=0.01".to_string(),
            "payoff.side=put".to_string(),
        ];
        let c = load(Some(BASE), &sets).unwrap();
        assert_eq!(c.replication.n, 40);
        assert!(matches!(c.model, ModelConfig::Lognormal { sigma, .. } if sigma == 0.3));
        assert!(matches!(c.payoff, PayoffConfig::Swaption { side: SwaptionSide::Put, .. }));
    }

    #[test]
    fn unknown_and_missing_keys_are_named() {
        let e = load(Some(r#"{"payoff": {"type": "variance_swap"}}"#), &[]).unwrap_err();
        assert!(e.contains("`model`"), "{e}");
        let e = load(Some(BASE), &["replication.bogus=1".into()]).unwrap_err();
        assert!(e.contains("bogus"), "{e}");
        assert!(load(Some(BASE), &["replication".into()]).is_err());
        assert!(load(Some(BASE), &["model.sigma.x=1".into()]).is_err());
    }

    #[test]
    fn invalid_values_fail_resolution() {
        let c = load(Some(BASE), &["replication.x0=300".into()]).unwrap();
        assert!(c.resolve().is_err());
        let c = load(Some(BASE), &["model.sigma=-1".into()]).unwrap();
        assert!(c.resolve().is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let c = load(Some(BASE), &[]).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        let again = load(Some(&text), &[]).unwrap();
        assert_eq!(serde_json::to_string(&again).unwrap(), text);
    }
}
