mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use static_repl::equidistribution::EquidistResult;
use static_repl::montecarlo::{self, McSpec};
use static_repl::quadratic_hedge::{self, QuadHedgeSolution};
use static_repl::spline::ReplicatingPortfolio;
use static_repl::valuation::{self, price_portfolio, true_value};
use static_repl::ReplError;

use config::{Contract, Resolved, RunConfig};

const THREADS_VAR: &str = "STATIC_REPL_THREADS";

#[derive(Parser)]
#[command(name = "static-repl", version, about = "Static replication of option payoffs with vanilla strikes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Select strikes, build the replicating portfolio and value it
    Replicate {
        #[command(flatten)]
        common: Common,
        /// Write the strike grid as CSV
        #[arg(long, value_name = "PATH")]
        emit_grid: Option<PathBuf>,
    },
    /// Replication error and observed order over a list of interval counts
    Converge {
        #[command(flatten)]
        common: Common,
        /// Comma-separated increasing interval counts
        #[arg(long, value_delimiter = ',')]
        n_list: Option<Vec<usize>>,
    },
    /// Least-squares weights for a fixed set of call strikes
    QuadHedge {
        #[command(flatten)]
        common: Common,
        /// Comma-separated call strikes
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        strikes: Option<Vec<f64>>,
    },
    /// Value the payoff by quadrature, and optionally a saved portfolio
    Price {
        #[command(flatten)]
        common: Common,
        /// Portfolio CSV or JSON written by `replicate`
        #[arg(long, value_name = "PATH")]
        portfolio: Option<PathBuf>,
    },
    /// Monte Carlo estimate of the payoff value
    Mc {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        paths: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        antithetic: bool,
    },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `--set replication.n=40`
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// CSV output path
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// JSON output path
    #[arg(long, value_name = "PATH")]
    json: Option<PathBuf>,
    /// Validate and print the resolved config without computing
    #[arg(long)]
    dry_run: bool,
    /// Treat convergence warnings as failures (exit 4)
    #[arg(long)]
    strict: bool,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Numeric(String),
    Warning(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Numeric(_) => 3,
            Failure::Warning(_) => 4,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Numeric(m) => write!(f, "numeric error: {m}"),
            Failure::Warning(m) => write!(f, "strict mode: {m}"),
        }
    }
}

/// Input problems are config errors; everything the numerics raise is not.
fn numeric(e: ReplError) -> Failure {
    match e {
        ReplError::Domain(_) | ReplError::Unsupported(_) => Failure::Config(e.to_string()),
        other => Failure::Numeric(other.to_string()),
    }
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("{}: {e}", path.display()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{f}");
            ExitCode::from(f.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    init_threads()?;
    match cli.command {
        Command::Replicate { common, emit_grid } => replicate(&common, emit_grid),
        Command::Converge { common, n_list } => converge(&common, n_list),
        Command::QuadHedge { common, strikes } => quad_hedge(&common, strikes),
        Command::Price { common, portfolio } => price(&common, portfolio),
        Command::Mc {
            common,
            paths,
            seed,
            antithetic,
        } => mc(&common, paths, seed, antithetic),
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("{THREADS_VAR} must be a positive integer, got `{raw}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| Failure::Config(e.to_string()))
}

/// Loads and validates; `None` means `--dry-run` already printed the config.
fn prepare(common: &Common, adjust: impl FnOnce(&mut RunConfig)) -> Result<Option<(RunConfig, Resolved)>, Failure> {
    let text = match &common.config {
        Some(p) => Some(fs::read_to_string(p).map_err(|e| io_error(p, e))?),
        None => None,
    };
    let mut cfg = config::load(text.as_deref(), &common.sets).map_err(Failure::Config)?;
    if let Some(p) = &common.out {
        cfg.outputs.csv = Some(p.clone());
    }
    if let Some(p) = &common.json {
        cfg.outputs.json = Some(p.clone());
    }
    adjust(&mut cfg);
    let resolved = cfg.resolve().map_err(|e| Failure::Config(e.to_string()))?;
    if common.dry_run {
        println!("{}", to_json(&cfg)?);
        return Ok(None);
    }
    Ok(Some((cfg, resolved)))
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value).map_err(|e| Failure::Numeric(e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize>(path: &Option<PathBuf>, value: &T) -> Result<(), Failure> {
    match path {
        Some(p) => write_text(p, &(to_json(value)? + "\n")),
        None => Ok(()),
    }
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_error(path, e))?;
    w.write_record(header).map_err(|e| io_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_error(path, e))?;
    }
    w.flush().map_err(|e| io_error(path, e))
}

fn write_portfolio(path: &Path, portfolio: &ReplicatingPortfolio) -> Result<(), Failure> {
    let file = fs::File::create(path).map_err(|e| io_error(path, e))?;
    portfolio.write_csv(file).map_err(numeric)
}

fn payoff_label(contract: &Contract) -> String {
    match contract {
        Contract::VarianceSwap(_) => "variance_swap".into(),
        Contract::Swaption(p) => format!("swaption {:?} K={}", p.side, p.k).to_lowercase(),
        Contract::Vanilla(_) => "vanilla".into(),
    }
}

fn grid_summary(out: &mut String, strikes: &EquidistResult) {
    let status = if strikes.converged { "converged" } else { "not converged" };
    let _ = writeln!(out, "{:<18}{}", "intervals", strikes.grid.n());
    let _ = writeln!(out, "{:<18}{} ({status})", "iterations", strikes.iterations_used);
    let _ = writeln!(out, "{:<18}[{:.4}, {:.4}]", "strike range", strikes.grid.first(), strikes.grid.last());
}

fn replicate(common: &Common, emit_grid: Option<PathBuf>) -> Result<(), Failure> {
    let Some((cfg, r)) = prepare(common, |c| {
        if emit_grid.is_some() {
            c.outputs.grid = emit_grid.clone();
        }
    })?
    else {
        return Ok(());
    };
    let model = r.model.as_dyn();
    let mut out = String::new();
    let _ = writeln!(out, "{:<18}{}", "payoff", payoff_label(&r.contract));
    let _ = writeln!(out, "{:<18}{}", "model", r.model.label());

    let (replication, report) = match &r.contract {
        Contract::Swaption(p) => {
            let s = valuation::swaption_value(p, model, &r.setup, &r.spec).map_err(numeric)?;
            let _ = writeln!(out, "{:<18}{:.4}", "put replication", s.put_replication_value);
            let _ = writeln!(out, "{:<18}{:.4}", "variance swap", s.variance_swap_value);
            let extra = json!({
                "put_replication_value": s.put_replication_value,
                "variance_swap_value": s.variance_swap_value,
            });
            (s.put, (s.valuation, extra))
        }
        other => {
            let rep = valuation::replicate(other.as_dyn(), model, &r.setup, &r.spec).map_err(numeric)?;
            let v = rep.report;
            (Some(rep), (v, json!({})))
        }
    };
    let (valuation, extra) = report;
    if let Some(rep) = &replication {
        grid_summary(&mut out, &rep.strikes);
        let _ = writeln!(out, "{:<18}{:?}", "form", rep.portfolio.form);
    }
    let _ = writeln!(out, "{:<18}{:.4}", "replication", valuation.replication_value);
    let _ = writeln!(out, "{:<18}{:.4}", "true value", valuation.true_value);
    let _ = writeln!(out, "{:<18}{:.4}", "abs error", valuation.abs_error);
    print!("{out}");

    let warnings: Vec<String> = replication.iter().flat_map(|rep| rep.warnings.clone()).collect();
    for w in &warnings {
        eprintln!("warning: {w}");
    }

    if let Some(rep) = &replication {
        if let Some(p) = &cfg.outputs.csv {
            write_portfolio(p, &rep.portfolio)?;
        }
        if let Some(p) = &cfg.outputs.grid {
            let rows: Vec<Vec<String>> = rep
                .strikes
                .grid
                .strikes()
                .iter()
                .enumerate()
                .map(|(i, x)| vec![i.to_string(), x.to_string()])
                .collect();
            write_rows(p, &["index", "strike"], &rows)?;
        }
    } else if cfg.outputs.csv.is_some() || cfg.outputs.grid.is_some() {
        eprintln!("warning: degenerate support, no portfolio or grid written");
    }
    let instruments = match &replication {
        Some(rep) => {
            let text = rep.portfolio.to_json().map_err(numeric)?;
            Some(serde_json::from_str::<serde_json::Value>(&text).map_err(|e| Failure::Numeric(e.to_string()))?)
        }
        None => None,
    };
    write_json(
        &cfg.outputs.json,
        &json!({
            "config": cfg,
            "report": valuation,
            "details": extra,
            "strikes": replication.as_ref().map(|rep| rep.strikes.grid.strikes().to_vec()),
            "iterations_used": replication.as_ref().map(|rep| rep.strikes.iterations_used),
            "converged": replication.as_ref().map(|rep| rep.strikes.converged),
            "portfolio": instruments,
            "warnings": warnings,
        }),
    )?;

    if common.strict {
        if let Some(rep) = replication.as_ref().filter(|rep| !rep.strikes.converged) {
            return Err(Failure::Warning(format!(
                "strike selection did not converge in {} iterations",
                rep.strikes.iterations_used
            )));
        }
    }
    Ok(())
}

fn converge(common: &Common, n_list: Option<Vec<usize>>) -> Result<(), Failure> {
    let Some((cfg, r)) = prepare(common, |c| {
        if let Some(list) = n_list {
            c.converge.n_list = list;
        }
    })?
    else {
        return Ok(());
    };
    let report = valuation::convergence_study(r.contract.as_dyn(), r.model.as_dyn(), &cfg.converge.n_list, &r.setup, &r.spec)
        .map_err(numeric)?;

    let mut out = format!("true value {:.4}\n", report.true_value);
    let _ = writeln!(out, "{:>6}  {:>12}  {:>12}  {:>6}", "n", "replication", "error", "rate");
    for row in &report.rows {
        let rate = row.rate.map(|p| format!("{p:.4}")).unwrap_or_default();
        let _ = writeln!(
            out,
            "{:>6}  {:>12.4}  {:>12.4e}  {:>6}",
            row.n, row.total_replication_value, row.error, rate
        );
    }
    print!("{out}");

    if let Some(p) = &cfg.outputs.csv {
        let rows: Vec<Vec<String>> = report
            .rows
            .iter()
            .map(|row| {
                vec![
                    row.n.to_string(),
                    row.total_replication_value.to_string(),
                    row.error.to_string(),
                    row.rate.map(|x| x.to_string()).unwrap_or_default(),
                ]
            })
            .collect();
        write_rows(p, &["n", "total_replication_value", "error", "rate"], &rows)?;
    }
    write_json(&cfg.outputs.json, &report)
}

fn quad_hedge(common: &Common, strikes: Option<Vec<f64>>) -> Result<(), Failure> {
    let Some((cfg, r)) = prepare(common, |c| {
        if let Some(list) = strikes {
            c.quad_hedge.strikes = list;
        }
    })?
    else {
        return Ok(());
    };
    let strikes = &cfg.quad_hedge.strikes;
    if strikes.is_empty() {
        return Err(Failure::Config("quad_hedge.strikes is empty".into()));
    }
    if strikes.windows(2).any(|w| w[1] < w[0]) {
        return Err(Failure::Config("quad_hedge.strikes must be in increasing order".into()));
    }
    let sol = quadratic_hedge::solve(r.contract.as_dyn(), r.model.as_dyn(), strikes, &r.hedge, &r.spec).map_err(numeric)?;
    if let Some(w) = &sol.warning {
        eprintln!("warning: {w}");
    }
    print!("{}", hedge_table(&sol));

    if let Some(p) = &cfg.outputs.csv {
        let mut rows: Vec<Vec<String>> = (0..sol.strikes.len())
            .map(|i| {
                vec![
                    sol.strikes[i].to_string(),
                    sol.weights[i].to_string(),
                    sol.per_option_price[i].to_string(),
                    sol.per_option_cost[i].to_string(),
                ]
            })
            .collect();
        rows.push(vec!["total".into(), String::new(), String::new(), sol.total_cost.to_string()]);
        write_rows(p, &["strike", "weight", "value_per_option", "cost_today"], &rows)?;
    }
    write_json(&cfg.outputs.json, &sol)
}

fn hedge_table(sol: &QuadHedgeSolution) -> String {
    let mut out = format!("{:>10}  {:>10}  {:>16}  {:>10}\n", "strike", "weight", "value_per_option", "cost_today");
    for i in 0..sol.strikes.len() {
        let _ = writeln!(
            out,
            "{:>10.4}  {:>10.4}  {:>16.4}  {:>10.4}",
            sol.strikes[i], sol.weights[i], sol.per_option_price[i], sol.per_option_cost[i]
        );
    }
    let _ = writeln!(out, "{:>10}  {:>10}  {:>16}  {:>10.4}", "total", "", "", sol.total_cost);
    let _ = writeln!(out, "condition number {:.4e}", sol.condition_number);
    out
}

fn read_portfolio(path: &Path) -> Result<ReplicatingPortfolio, Failure> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        ReplicatingPortfolio::from_json(&text).map_err(|e| io_error(path, e))
    } else {
        let file = fs::File::open(path).map_err(|e| io_error(path, e))?;
        ReplicatingPortfolio::read_csv(file).map_err(|e| io_error(path, e))
    }
}

fn price(common: &Common, portfolio: Option<PathBuf>) -> Result<(), Failure> {
    let Some((cfg, r)) = prepare(common, |_| {})? else {
        return Ok(());
    };
    let portfolio = portfolio.as_deref().map(read_portfolio).transpose()?;
    let model = r.model.as_dyn();
    let truth = true_value(r.contract.as_dyn(), model, r.setup.notional, &r.spec).map_err(numeric)?;
    let portfolio_value = portfolio
        .as_ref()
        .map(|p| price_portfolio(p, model))
        .transpose()
        .map_err(numeric)?;

    println!("{:<18}{:.4}", "true value", truth);
    if let Some(v) = portfolio_value {
        println!("{:<18}{:.4}", "portfolio value", v);
        println!("{:<18}{:.4}", "difference", v - truth);
    }
    if let Some(p) = &cfg.outputs.csv {
        let mut rows = vec![vec!["true_value".to_string(), truth.to_string()]];
        if let Some(v) = portfolio_value {
            rows.push(vec!["portfolio_value".into(), v.to_string()]);
        }
        write_rows(p, &["quantity", "value"], &rows)?;
    }
    write_json(
        &cfg.outputs.json,
        &json!({ "true_value": truth, "portfolio_value": portfolio_value }),
    )
}

fn mc(common: &Common, paths: Option<u64>, seed: Option<u64>, antithetic: bool) -> Result<(), Failure> {
    let Some((cfg, r)) = prepare(common, |c| {
        c.mc = McSpec {
            paths: paths.unwrap_or(c.mc.paths),
            seed: seed.unwrap_or(c.mc.seed),
            antithetic: antithetic || c.mc.antithetic,
        };
    })?
    else {
        return Ok(());
    };
    let model = r.model.as_dyn();
    let payoff = r.contract.as_dyn();
    let est = montecarlo::estimate(payoff, model, &cfg.mc, r.setup.notional).map_err(numeric)?;
    let reference = true_value(payoff, model, r.setup.notional, &r.spec).map_err(numeric)?;
    let z = if est.std_error > 0.0 {
        (est.mean - reference) / est.std_error
    } else {
        0.0
    };

    println!("{:<18}{:.4}", "mean", est.mean);
    println!("{:<18}{:.4}", "std error", est.std_error);
    println!("{:<18}{}", "paths", est.paths);
    println!("{:<18}{}", "seed", cfg.mc.seed);
    println!("{:<18}{:.4}", "quadrature value", reference);
    println!("{:<18}{:.4}", "z score", z);

    if let Some(p) = &cfg.outputs.csv {
        let row = vec![
            est.mean.to_string(),
            est.std_error.to_string(),
            est.paths.to_string(),
            cfg.mc.seed.to_string(),
            reference.to_string(),
        ];
        write_rows(p, &["mean", "std_error", "paths", "seed", "quadrature_value"], &[row])?;
    }
    write_json(
        &cfg.outputs.json,
        &json!({ "estimate": est, "seed": cfg.mc.seed, "quadrature_value": reference }),
    )
}
