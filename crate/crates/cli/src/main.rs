//! `gfbp`: command-line front end for the gfbp library.
//!
//! Exit codes: 0 success, 1 I/O failure while writing output, 2 input
//! error, 3 tolerance or accuracy failure, 4 budget exceeded.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use gfbp::oracle::{self, DerivativeRule, Scheme, SolverConfig};
use gfbp::pmf::{self, Engine, PmfConfig, TableConfig};
use gfbp::rates::{self, ExplosionConfig, ModelDocument, Preset, RateSource, Sequence};
use gfbp::simulate;
use gfbp::table::TableFlag;
use gfbp::{combinat, special, Error, JumpBound, OrderSpec, PerStateOrders, PmfTable, RateModel};

const EXIT_IO: u8 = 1;
const EXIT_INPUT: u8 = 2;
const EXIT_TOLERANCE: u8 = 3;
const EXIT_BUDGET: u8 = 4;

#[derive(Debug)]
struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::PatternBudget { .. } => EXIT_BUDGET,
            Error::TailNotCertified { .. }
            | Error::Quadrature { .. }
            | Error::Unstable { .. }
            | Error::NearDegenerate { .. }
            | Error::DivergentRates { .. } => EXIT_TOLERANCE,
            _ => EXIT_INPUT,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(
    name = "gfbp",
    version,
    about = "State probabilities of generalized fractional birth processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate p(n, t) over a time grid until the missing mass is small.
    Pmf(PmfArgs),
    /// Cross-check the analytic engine against an independent method.
    Validate(ValidateArgs),
    /// Simulate sample paths.
    Simulate(SimulateArgs),
    /// Print the jump patterns summing to N with sizes at most K.
    Theta { n: usize, k: usize },
    /// Partial sums of the non-explosion series and their classification.
    Explosion(ExplosionArgs),
    /// Evaluate the Mittag-Leffler function E_α(z).
    MlEval {
        #[arg(long)]
        alpha: f64,
        #[arg(long, allow_hyphen_values = true)]
        z: f64,
    },
    /// Solve the forward equations numerically.
    Oracle(OracleArgs),
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum PresetName {
    Tfpp,
    Fpbp,
    Gfcp,
    Cfpp,
    Stfpp,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    /// Model document (JSON).
    #[arg(long, conflicts_with_all = ["preset", "rate"])]
    model: Option<PathBuf>,
    #[arg(long, value_enum)]
    preset: Option<PresetName>,
    /// Rate formula in `n` and `i`, e.g. `n + 1/i`.
    #[arg(long)]
    rate: Option<String>,
    /// Largest jump size for `--rate` (integer or `unbounded`).
    #[arg(long, default_value = "1")]
    k: String,
    /// Initial state for `--rate`.
    #[arg(long, default_value_t = 0)]
    n0: u64,
    #[arg(long)]
    lambda: Option<f64>,
    /// Comma-separated jump rates for gfcp.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// Birth rates for fpbp: a comma list or a formula in `n`.
    #[arg(long)]
    rates: Option<String>,
    /// Sequence β_i for cfpp: a comma list or a formula in `i`.
    #[arg(long)]
    betas: Option<String>,
    #[arg(long)]
    beta: Option<f64>,
}

#[derive(Args, Debug, Clone)]
struct OrderArgs {
    /// Constant fractional order in (0, 1].
    #[arg(long, conflicts_with = "alpha_per_state")]
    alpha: Option<f64>,
    /// JSON file `{"orders": {"<state>": α, …}, "default": α}`.
    #[arg(long)]
    alpha_per_state: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum EngineArg {
    Auto,
    Series,
    Contour,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Csv,
    Json,
    Both,
}

#[derive(Args, Debug)]
struct PmfArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    order: OrderArgs,
    /// `start:stop:step` or a comma list of times.
    #[arg(long)]
    t_grid: String,
    #[arg(long, default_value_t = 1e-8)]
    mass_tol: f64,
    #[arg(long, value_enum, default_value = "auto")]
    engine: EngineArg,
    #[arg(long, default_value_t = 250_000)]
    max_states: usize,
    /// Tabulate even when the explosion check fails.
    #[arg(long)]
    force: bool,
    /// Output prefix; without it the CSV goes to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Oracle,
    Mc,
    Laplace,
    Residual,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum RuleArg {
    L1,
    CorrectedL1,
    CorrectedL12,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    order: OrderArgs,
    #[arg(long, value_enum)]
    mode: Mode,
    #[arg(long, default_value = "0:2:0.1")]
    t_grid: String,
    /// Number of states compared, starting at n0.
    #[arg(long, default_value_t = 7)]
    states: usize,
    /// Solver step (oracle) or grid step (residual).
    #[arg(long)]
    step: Option<f64>,
    #[arg(long, default_value_t = 100_000)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Laplace variables.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
    s: Vec<f64>,
    /// Residuals are taken for t at or above this.
    #[arg(long, default_value_t = 0.1)]
    t_min: f64,
    #[arg(long, value_enum, default_value = "l1")]
    rule: RuleArg,
    /// Pass threshold; defaults depend on the mode.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    horizon: f64,
    #[arg(long, default_value_t = 1000)]
    paths: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// 1 simulates paths; 0.5 samples the time-changed process at the horizon.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Output prefix; without it the JSON lines go to standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplosionArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 10_000)]
    terms: usize,
    /// Also write the partial-sum trace as CSV.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum SchemeArg {
    Abm,
    Rk4,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    order: OrderArgs,
    #[arg(long)]
    t_end: f64,
    #[arg(long, default_value_t = 1e-3)]
    step: f64,
    #[arg(long, default_value_t = 10)]
    n_max: usize,
    #[arg(long, value_enum, default_value = "abm")]
    scheme: SchemeArg,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "both")]
    format: Format,
}

fn parse_sequence(text: &str) -> Sequence {
    let parsed: Option<Vec<f64>> = text.split(',').map(|p| p.trim().parse().ok()).collect();
    match parsed {
        Some(list) => Sequence::List(list),
        None => Sequence::Formula(text.to_string()),
    }
}

fn need<T: Clone>(v: &Option<T>, flag: &str, preset: &str) -> CliResult<T> {
    v.clone()
        .ok_or_else(|| CliError::input(format!("preset {preset} needs --{flag}")))
}

impl ModelArgs {
    fn document(&self) -> CliResult<ModelDocument> {
        if let Some(path) = &self.model {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
            return serde_json::from_str(&text)
                .map_err(|e| CliError::input(format!("malformed model {}: {e}", path.display())));
        }
        if let Some(rate) = &self.rate {
            let k: JumpBound = serde_json::from_value(
                self.k
                    .parse::<u64>()
                    .map(Value::from)
                    .unwrap_or_else(|_| Value::from(self.k.clone())),
            )
            .map_err(|e| CliError::input(format!("--k: {e}")))?;
            return Ok(ModelDocument {
                n0: Some(self.n0),
                k: Some(k),
                tail_tolerance: None,
                source: RateSource::Formula {
                    rate: Some(rate.clone()),
                    rates: None,
                },
            });
        }
        let preset = match self.preset {
            Some(PresetName::Tfpp) => Preset::Tfpp {
                lambda: need(&self.lambda, "lambda", "tfpp")?,
            },
            Some(PresetName::Fpbp) => Preset::Fpbp {
                rates: parse_sequence(&need(&self.rates, "rates", "fpbp")?),
            },
            Some(PresetName::Gfcp) => Preset::Gfcp {
                lambdas: need(&self.lambdas, "lambdas", "gfcp")?,
            },
            Some(PresetName::Cfpp) => Preset::Cfpp {
                betas: parse_sequence(&need(&self.betas, "betas", "cfpp")?),
            },
            Some(PresetName::Stfpp) => Preset::Stfpp {
                lambda: need(&self.lambda, "lambda", "stfpp")?,
                beta: need(&self.beta, "beta", "stfpp")?,
            },
            None => {
                return Err(CliError::input(
                    "specify a model with --model, --preset or --rate",
                ))
            }
        };
        Ok(ModelDocument {
            n0: None,
            k: None,
            tail_tolerance: None,
            source: RateSource::Preset(preset),
        })
    }

    fn build(&self) -> CliResult<(RateModel, ModelDocument)> {
        let doc = self.document()?;
        let model = RateModel::from_document(&doc)?;
        Ok((model, doc))
    }
}

impl OrderArgs {
    fn build(&self) -> CliResult<OrderSpec> {
        let order = match (&self.alpha, &self.alpha_per_state) {
            (Some(a), None) => OrderSpec::Constant(*a),
            (None, Some(path)) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
                let p: PerStateOrders = serde_json::from_str(&text).map_err(|e| {
                    CliError::input(format!("malformed orders {}: {e}", path.display()))
                })?;
                OrderSpec::PerState(p)
            }
            _ => return Err(CliError::input("specify --alpha or --alpha-per-state")),
        };
        order.validate()?;
        Ok(order)
    }
}

/// `start:stop:step` (inclusive of `stop`) or a comma list.
fn parse_grid(text: &str) -> CliResult<Vec<f64>> {
    let bad = || CliError::input(format!("bad time grid {text:?}"));
    let parts: Vec<&str> = text.split(':').collect();
    let times = match parts.as_slice() {
        [start, stop, step] => {
            let (a, b, h): (f64, f64, f64) = (
                start.trim().parse().map_err(|_| bad())?,
                stop.trim().parse().map_err(|_| bad())?,
                step.trim().parse().map_err(|_| bad())?,
            );
            if !(h > 0.0 && b >= a) {
                return Err(bad());
            }
            let count = ((b - a) / h + 1e-9).floor() as usize;
            (0..=count).map(|i| a + i as f64 * h).collect()
        }
        [_] => text
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<CliResult<Vec<_>>>()?,
        _ => return Err(bad()),
    };
    if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
        return Err(bad());
    }
    Ok(times)
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    argv: Vec<String>,
    model: Option<ModelDocument>,
    order: Option<OrderSpec>,
    grid: Option<Vec<f64>>,
    tolerances: BTreeMap<String, f64>,
    seed: Option<u64>,
    outputs: Vec<String>,
    tool_version: String,
    started_unix_seconds: u64,
    wall_clock_seconds: f64,
}

struct Run {
    start: Instant,
    started: u64,
    manifest: RunManifest,
}

impl Run {
    fn new(command: &str) -> Self {
        Run {
            start: Instant::now(),
            started: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().skip(1).collect(),
                model: None,
                order: None,
                grid: None,
                tolerances: BTreeMap::new(),
                seed: None,
                outputs: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                started_unix_seconds: 0,
                wall_clock_seconds: 0.0,
            },
        }
    }

    fn write(&mut self, path: PathBuf, contents: &str) -> CliResult<()> {
        fs::write(&path, contents).map_err(|e| CliError {
            code: EXIT_IO,
            message: format!("cannot write {}: {e}", path.display()),
        })?;
        self.manifest.outputs.push(path.display().to_string());
        Ok(())
    }

    fn finish(mut self, prefix: &Path) -> CliResult<()> {
        self.manifest.started_unix_seconds = self.started;
        self.manifest.wall_clock_seconds = self.start.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let path = with_suffix(prefix, "manifest.json");
        fs::write(&path, text + "\n").map_err(|e| CliError {
            code: EXIT_IO,
            message: format!("cannot write {}: {e}", path.display()),
        })
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn emit_table(
    run: &mut Run,
    table: &PmfTable,
    out: &Option<PathBuf>,
    format: Format,
) -> CliResult<()> {
    match out {
        None => {
            if format == Format::Json {
                println!("{}", table.to_json()?);
            } else {
                print!("{}", table.to_csv());
            }
            Ok(())
        }
        Some(prefix) => {
            if format != Format::Json {
                run.write(with_suffix(prefix, "csv"), &table.to_csv())?;
            }
            if format != Format::Csv {
                run.write(with_suffix(prefix, "json"), &(table.to_json()? + "\n"))?;
            }
            Ok(())
        }
    }
}

fn cmd_pmf(args: PmfArgs) -> CliResult<()> {
    let mut run = Run::new("pmf");
    let (model, doc) = args.model.build()?;
    let order = args.order.build()?;
    let times = parse_grid(&args.t_grid)?;
    if !args.force {
        let report = rates::explosion_check(&model, 1000, &ExplosionConfig::default())?;
        if report.verdict == rates::Explosion::PossiblyExploding {
            return Err(CliError::input(
                "the model may explode; probabilities need not sum to one (use --force)",
            ));
        }
    }
    let cfg = TableConfig {
        engine: match args.engine {
            EngineArg::Auto => Engine::Auto,
            EngineArg::Series => Engine::Series,
            EngineArg::Contour => Engine::Contour,
        },
        max_states: args.max_states,
        ..TableConfig::default()
    };
    let table = pmf::pmf_table(&model, &order, &times, args.mass_tol, &cfg)?;
    run.manifest.model = Some(doc);
    run.manifest.order = Some(order);
    run.manifest.grid = Some(times);
    run.manifest
        .tolerances
        .insert("mass_tol".into(), args.mass_tol);
    emit_table(&mut run, &table, &args.out, args.format)?;
    if let Some(prefix) = &args.out {
        run.finish(prefix)?;
    }
    for flag in &table.flags {
        match flag {
            TableFlag::StateBudget { states, deficit } => {
                return Err(CliError {
                    code: EXIT_BUDGET,
                    message: format!(
                        "state budget hit at {states} states with missing mass {deficit:e}"
                    ),
                })
            }
            TableFlag::PatternBudget { state, patterns } => {
                eprintln!("note: pattern budget reached at state {state} ({patterns} patterns)")
            }
        }
    }
    Ok(())
}

fn max_f(xs: impl IntoIterator<Item = f64>) -> f64 {
    xs.into_iter().fold(0.0, f64::max)
}

fn validate_oracle(
    model: &RateModel,
    order: &OrderSpec,
    times: &[f64],
    args: &ValidateArgs,
) -> CliResult<(f64, Value)> {
    let step = args.step.unwrap_or(5e-4);
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let cfg = SolverConfig {
        step,
        n_max: args.states.saturating_sub(1).max(1),
        ..SolverConfig::default()
    };
    let sol = oracle::solve_fractional_system(model, order, t_end, &cfg)?;
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for &t in times {
        let idx = (t / step).round() as usize;
        if (idx as f64 * step - t).abs() > 1e-9 {
            return Err(CliError::input(format!(
                "time {t} is not on the solver grid of step {step}"
            )));
        }
        for j in 0..args.states {
            let n = model.n0() + j as u64;
            let analytic = pmf::pmf_with(model, order, n, t, &PmfConfig::default())?
                .estimate
                .value;
            let dev = (analytic - sol.get(n, idx)).abs();
            worst = worst.max(dev);
            rows.push(json!({"t": t, "n": n, "analytic": analytic, "oracle": sol.get(n, idx), "deviation": dev}));
        }
    }
    Ok((worst, json!({"step": step, "comparisons": rows})))
}

fn validate_mc(
    model: &RateModel,
    order: &OrderSpec,
    times: &[f64],
    args: &ValidateArgs,
) -> CliResult<(f64, Value)> {
    let alpha = match order {
        OrderSpec::Constant(a) if *a == 1.0 || *a == 0.5 => *a,
        _ => {
            return Err(CliError::input(
                "Monte Carlo validation needs --alpha 1 or --alpha 0.5",
            ))
        }
    };
    let times: Vec<f64> = times.iter().copied().filter(|&t| t > 0.0).collect();
    if times.is_empty() {
        return Err(CliError::input(
            "Monte Carlo validation needs positive times",
        ));
    }
    let samples: Vec<Vec<u64>> = if alpha == 1.0 {
        simulate::ensemble_states(model, &times, args.samples, args.seed)?.states
    } else {
        times
            .iter()
            .map(|&t| {
                simulate::sample_gfbp_half_ensemble(model, t, args.samples, args.seed)
                    .map(|v| v.into_iter().map(|s| s.state).collect())
            })
            .collect::<gfbp::Result<_>>()?
    };
    let mut worst = 0.0f64;
    let mut all_in_band = true;
    let mut rows = Vec::new();
    for (t, states) in times.iter().zip(&samples) {
        let emp = simulate::empirical_pmf(states)?;
        let table = pmf::pmf_table(model, order, &[*t], 1e-9, &TableConfig::default())?;
        let reference = |n: u64| table.get(n, 0);
        let hi = table.n0 + table.n_states() as u64 - 1;
        let tv = simulate::tv_distance(&emp, reference, table.n0, hi);
        let outside: Vec<u64> = (table.n0..=hi)
            .filter(|&n| reference(n) > 0.005)
            .filter(|&n| {
                let (lo, up) = emp.interval(n);
                !(lo <= reference(n) && reference(n) <= up)
            })
            .collect();
        all_in_band &= outside.is_empty();
        worst = worst.max(tv);
        rows.push(json!({"t": t, "tv_distance": tv, "outside_wilson_band": outside}));
    }
    // A band violation fails the run regardless of the distance.
    let score = if all_in_band { worst } else { f64::INFINITY };
    Ok((
        score,
        json!({"samples": args.samples, "seed": args.seed, "times": rows, "max_tv": worst}),
    ))
}

fn validate_laplace(
    model: &RateModel,
    order: &OrderSpec,
    args: &ValidateArgs,
) -> CliResult<(f64, Value)> {
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for &s in &args.s {
        for j in 0..args.states {
            let n = model.n0() + j as u64;
            let exact = pmf::pmf_laplace(model, order, n, s)?;
            let t_cut = (1e-12f64 * s).ln() / -s;
            let failure = std::cell::RefCell::new(None);
            let numeric = oracle::numeric_laplace(
                |t| match pmf::pmf_with(model, order, n, t, &PmfConfig::default()) {
                    Ok(e) => e.estimate.value,
                    Err(e) => {
                        failure.borrow_mut().get_or_insert(e);
                        f64::NAN
                    }
                },
                s,
                t_cut,
            );
            if let Some(e) = failure.into_inner() {
                return Err(e.into());
            }
            let numeric = numeric?;
            let dev = (exact - numeric.value).abs();
            worst = worst.max(dev);
            rows.push(json!({"s": s, "n": n, "transform": exact, "quadrature": numeric.value, "deviation": dev}));
        }
    }
    Ok((worst, json!({"comparisons": rows})))
}

fn validate_residual(
    model: &RateModel,
    order: &OrderSpec,
    times: &[f64],
    args: &ValidateArgs,
) -> CliResult<(f64, Value)> {
    let t_end = times.iter().copied().fold(0.0, f64::max);
    let step = args.step.unwrap_or(1e-3);
    let count = (t_end / step).round() as usize;
    let grid: Vec<f64> = (0..=count).map(|i| i as f64 * step).collect();
    let table = pmf::pmf_states(model, order, args.states, &grid, &PmfConfig::default())?;
    let rule = match args.rule {
        RuleArg::L1 => DerivativeRule::L1,
        RuleArg::CorrectedL1 => DerivativeRule::CorrectedL1,
        RuleArg::CorrectedL12 => DerivativeRule::CorrectedL12,
    };
    let res = oracle::caputo_residual(model, order, &table, args.t_min, rule)?;
    let worst = max_f(res.iter().map(|r| r.sup_norm));
    Ok((
        worst,
        json!({"step": step, "t_min": args.t_min, "states": res}),
    ))
}

fn cmd_validate(args: ValidateArgs) -> CliResult<()> {
    let mut run = Run::new("validate");
    let (model, doc) = args.model.build()?;
    let order = args.order.build()?;
    let times = parse_grid(&args.t_grid)?;
    let (default_tol, result) = match args.mode {
        Mode::Oracle => (1e-5, validate_oracle(&model, &order, &times, &args)),
        Mode::Mc => (0.01, validate_mc(&model, &order, &times, &args)),
        Mode::Laplace => (1e-6, validate_laplace(&model, &order, &args)),
        Mode::Residual => (1e-4, validate_residual(&model, &order, &times, &args)),
    };
    let (score, details) = result?;
    let tol = args.tol.unwrap_or(default_tol);
    let pass = score < tol;
    let report = json!({
        "mode": args.mode,
        "pass": pass,
        "tolerance": tol,
        "max_deviation": if score.is_finite() { json!(score) } else { json!(null) },
        "details": details,
    });
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");
    if let Some(prefix) = &args.out {
        run.manifest.model = Some(doc);
        run.manifest.order = Some(order);
        run.manifest.grid = Some(times);
        run.manifest.tolerances.insert("tolerance".into(), tol);
        if args.mode == Mode::Mc {
            run.manifest.seed = Some(args.seed);
        }
        run.write(with_suffix(prefix, "json"), &(text + "\n"))?;
        run.finish(prefix)?;
    }
    if pass {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_TOLERANCE,
            message: format!(
                "{:?} validation failed: {score:e} against tolerance {tol:e}",
                args.mode
            ),
        })
    }
}

#[derive(Serialize)]
struct PathEvent {
    path: usize,
    t: f64,
    n: u64,
}

#[derive(Serialize)]
struct ClockDraw {
    sample: usize,
    tau: f64,
    n: u64,
}

fn json_line<T: Serialize>(out: &mut String, value: &T) {
    out.push_str(&serde_json::to_string(value).expect("record serializes"));
    out.push('\n');
}

fn cmd_simulate(args: SimulateArgs) -> CliResult<()> {
    let mut run = Run::new("simulate");
    let (model, doc) = args.model.build()?;
    let mut lines = String::new();
    let finals: Vec<u64>;
    let mut guard_hits = 0usize;
    if args.alpha == 1.0 {
        let paths = simulate::simulate_ensemble(&model, args.horizon, args.paths, args.seed)?;
        for (p, path) in paths.iter().enumerate() {
            guard_hits += path.guard_hit as usize;
            for e in &path.events {
                json_line(
                    &mut lines,
                    &PathEvent {
                        path: p,
                        t: e.t,
                        n: e.n,
                    },
                );
            }
        }
        finals = paths.iter().map(|p| p.final_state()).collect();
    } else if args.alpha == 0.5 {
        let draws =
            simulate::sample_gfbp_half_ensemble(&model, args.horizon, args.paths, args.seed)?;
        for (p, d) in draws.iter().enumerate() {
            guard_hits += d.guard_hit as usize;
            json_line(
                &mut lines,
                &ClockDraw {
                    sample: p,
                    tau: d.tau,
                    n: d.state,
                },
            );
        }
        finals = draws.iter().map(|d| d.state).collect();
    } else {
        return Err(CliError::input(
            "simulation supports --alpha 1 or --alpha 0.5",
        ));
    }
    if guard_hits > 0 {
        eprintln!("warning: {guard_hits} paths hit the event guard");
    }
    match &args.out {
        None => print!("{lines}"),
        Some(prefix) => {
            run.manifest.model = Some(doc);
            run.manifest.order = Some(OrderSpec::Constant(args.alpha));
            run.manifest.grid = Some(vec![args.horizon]);
            run.manifest.seed = Some(args.seed);
            run.write(with_suffix(prefix, "jsonl"), &lines)?;
            let summary = simulate::empirical_pmf(&finals)?;
            run.write(with_suffix(prefix, "summary.csv"), &summary.to_csv())?;
            run.finish(prefix)?;
        }
    }
    Ok(())
}

fn cmd_theta(n: usize, k: usize) -> CliResult<()> {
    let patterns = combinat::enumerate_theta(n, k)?;
    let rows: Vec<&[u32]> = patterns.iter().map(|p| p.as_slice()).collect();
    println!(
        "{}",
        serde_json::to_string(&rows).expect("patterns serialize")
    );
    Ok(())
}

fn cmd_explosion(args: ExplosionArgs) -> CliResult<()> {
    let (model, _) = args.model.build()?;
    let report = rates::explosion_check(&model, args.terms, &ExplosionConfig::default())?;
    let out = json!({
        "verdict": report.verdict,
        "terms": args.terms,
        "final_partial_sum": report.partial_sums.last(),
        "growth_exponent": report.growth_exponent,
        "decay_exponent": report.decay_exponent,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("report serializes")
    );
    if let Some(path) = &args.trace {
        let mut csv = String::from("m,partial_sum\n");
        for (i, s) in report.partial_sums.iter().enumerate() {
            csv.push_str(&format!(
                "{},{}\n",
                model.n0() + i as u64,
                gfbp::table::fmt_f64(*s)
            ));
        }
        fs::write(path, csv).map_err(|e| CliError {
            code: EXIT_IO,
            message: format!("cannot write {}: {e}", path.display()),
        })?;
    }
    Ok(())
}

fn cmd_ml_eval(alpha: f64, z: f64) -> CliResult<()> {
    let v = special::mittag_leffler(alpha, z)?;
    let out = json!({"alpha": alpha, "z": z, "value": v.value, "error_bound": v.error_bound, "certified": v.certified});
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("value serializes")
    );
    Ok(())
}

fn cmd_oracle(args: OracleArgs) -> CliResult<()> {
    let mut run = Run::new("oracle");
    let (model, doc) = args.model.build()?;
    let order = args.order.build()?;
    let cfg = SolverConfig {
        step: args.step,
        n_max: args.n_max,
        scheme: match args.scheme {
            SchemeArg::Abm => Scheme::FractionalAbm,
            SchemeArg::Rk4 => Scheme::Rk4,
        },
        ..SolverConfig::default()
    };
    let table = oracle::solve_fractional_system(&model, &order, args.t_end, &cfg)?;
    run.manifest.model = Some(doc);
    run.manifest.order = Some(order);
    run.manifest.tolerances.insert("step".into(), args.step);
    emit_table(&mut run, &table, &args.out, args.format)?;
    if let Some(prefix) = &args.out {
        run.finish(prefix)?;
    }
    Ok(())
}

fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("GFBP_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::input(format!(
                "GFBP_THREADS must be a positive integer, got {v:?}"
            ))
        })?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::input(e.to_string()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match cli.command {
        Command::Pmf(a) => cmd_pmf(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Theta { n, k } => cmd_theta(n, k),
        Command::Explosion(a) => cmd_explosion(a),
        Command::MlEval { alpha, z } => cmd_ml_eval(alpha, z),
        Command::Oracle(a) => cmd_oracle(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
