//! Command-line front end.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::closed_form::{self, StickyBMParams};
use crate::engine::{local_time_band, simulate_undelayed, NoiseStream, SimGrid};
use crate::error::{Error, Result};
use crate::lattice::{oracle_distribution, oracle_sample, oracle_simulate, LatticeParams, OracleQuantity};
use crate::model::{
    feller_compile, probe_grid, tube_compile, validate_process_spec, ProcessSpec, ScaleSpeedSpec, StickyPoint,
    TubeSpec, ValidatedSpec, DEFAULT_PROBE_POINTS,
};
use crate::piecewise::PiecewiseFn;
use crate::special::normal_cdf;
use crate::stats::{
    empirical_char_fn, ks_distance, ks_two_sample, mc_ensemble, run_paths, DistanceReport, Ecdf, EnsembleConfig,
    Quantity,
};
use crate::transform::{
    alphas, build_time_change, delayed_state, dynkin_residual, girsanov_weight, mean_ci95, occupation_identity_report,
    points, sde_residual_check, simulate_delayed, DynkinReport, TestFunction,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

const QUANTILE_POINTS: usize = 101;

#[derive(Parser, Debug)]
#[command(name = "sticky-sim", version, about = "Simulate and verify diffusions with sticky and skew points")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate the delayed process and emit a path (CSV) or ensemble summary (JSON).
    Simulate(SimulateArgs),
    /// Run the lattice random walk.
    Oracle(OracleArgs),
    /// Evaluate exact laws of symmetric sticky Brownian motion.
    ClosedForm(ClosedFormArgs),
    /// Compile a scale/speed pair into a process specification.
    Feller(FellerArgs),
    /// Compile narrow-tube data into its limiting process.
    Tube(TubeArgs),
    /// Run a statistical verification; exit 1 if a tolerance is breached.
    Verify(VerifyArgs),
    /// Kolmogorov–Smirnov reports for stored samples.
    Analyze(AnalyzeArgs),
}

/// Keys shared by every command.
#[derive(Args, Debug, Clone, Serialize)]
pub struct Common {
    /// Time horizon.
    #[arg(long = "T", default_value_t = 1.0)]
    #[serde(rename = "T")]
    pub horizon: f64,
    /// Time step.
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
    /// Number of Monte Carlo paths.
    #[arg(long, default_value_t = 10_000)]
    pub paths: u64,
    /// Master seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Delay coefficient of the sticky point at the origin.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Probability of leaving the sticky point to the right.
    #[arg(long = "p-plus", default_value_t = 0.5)]
    pub p_plus: f64,
    /// Output file; standard output when absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Configuration file of `key = value` lines; command-line flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Start point.
    #[arg(long, default_value_t = 0.0)]
    pub x0: f64,
    /// Bandwidth of the occupation-density local-time estimator.
    #[arg(long)]
    pub band: Option<f64>,
    /// Exit radius or lattice spacing.
    #[arg(long, default_value_t = 0.01)]
    pub delta: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SpecArgs {
    /// Process specification file as written by `feller` or `tube`.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Drift expression, used when no spec file is given.
    #[arg(long, default_value = "0")]
    pub drift: String,
    /// Volatility expression, used when no spec file is given.
    #[arg(long, default_value = "1")]
    pub vol: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Path,
    Ensemble,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_enum, default_value_t = Mode::Path)]
    pub mode: Mode,
    /// Path index within the master seed's family (path mode).
    #[arg(long = "path-index", default_value_t = 0)]
    pub path_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleKind {
    Position,
    Occupation,
    LocalTime,
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum, default_value_t = Mode::Ensemble)]
    pub mode: Mode,
    #[arg(long, value_enum, default_value_t = OracleKind::Position)]
    pub quantity: OracleKind,
    #[arg(long = "path-index", default_value_t = 0)]
    pub path_index: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ClosedFormQuantity {
    PointMass,
    ExpectedOccupation,
    LocalTimeTail,
    CharFn,
    NormalCdf,
}

#[derive(Args, Debug)]
pub struct ClosedFormArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long, value_enum)]
    pub quantity: ClosedFormQuantity,
    /// Evaluation time; defaults to `--T`.
    #[arg(long = "t")]
    pub t: Option<f64>,
    /// Level for the local-time tail.
    #[arg(long, default_value_t = 0.0)]
    pub y: f64,
    /// Frequency for the characteristic function.
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    pub lambda: f64,
    /// Argument of the normal CDF.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub x: f64,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ProbeArgs {
    #[arg(long = "probe-lo", default_value_t = -10.0, allow_negative_numbers = true)]
    pub probe_lo: f64,
    #[arg(long = "probe-hi", default_value_t = 10.0, allow_negative_numbers = true)]
    pub probe_hi: f64,
    #[arg(long = "probe-points", default_value_t = DEFAULT_PROBE_POINTS)]
    pub probe_points: usize,
}

impl ProbeArgs {
    fn grid(&self) -> Vec<f64> {
        probe_grid(self.probe_lo, self.probe_hi, self.probe_points)
    }
}

#[derive(Args, Debug)]
pub struct FellerArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub probe: ProbeArgs,
    /// Scale function `u`.
    #[arg(long)]
    pub u: String,
    /// Speed function `v`.
    #[arg(long)]
    pub v: String,
    /// Comma-separated jump set; defaults to the breakpoints of `u` and `v`.
    #[arg(long)]
    pub jumps: Option<String>,
}

#[derive(Args, Debug)]
pub struct TubeArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub probe: ProbeArgs,
    /// Cross-section function `V1`.
    #[arg(long)]
    pub v1: String,
    #[arg(long)]
    pub beta: f64,
    #[arg(long)]
    pub mu: f64,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(subcommand)]
    pub check: Check,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckKind {
    Occupation,
    SdePair,
    Dynkin,
    Girsanov,
    Pointmass,
    LocaltimeLaw,
    Charfn,
    OracleMatch,
}

#[derive(Subcommand, Debug)]
pub enum Check {
    /// Occupation time against delay times local time.
    Occupation(CheckArgs),
    /// Stored noise rebuilds the path; quadratic variation matches `T - αL`.
    SdePair(CheckArgs),
    /// Dynkin formula with the boundary term at the sticky point.
    Dynkin(CheckArgs),
    /// Reweighted mean against a simulation with tilted drift.
    Girsanov(CheckArgs),
    /// Fraction of paths at the sticky point against the exact point mass.
    Pointmass(CheckArgs),
    /// Law of `αL` against its exact CDF.
    LocaltimeLaw(CheckArgs),
    /// Empirical characteristic function against the exact one.
    Charfn(CheckArgs),
    /// Lattice walk against the time-change simulator.
    OracleMatch(CheckArgs),
}

impl Check {
    fn parts(&self) -> (CheckKind, &CheckArgs) {
        match self {
            Check::Occupation(a) => (CheckKind::Occupation, a),
            Check::SdePair(a) => (CheckKind::SdePair, a),
            Check::Dynkin(a) => (CheckKind::Dynkin, a),
            Check::Girsanov(a) => (CheckKind::Girsanov, a),
            Check::Pointmass(a) => (CheckKind::Pointmass, a),
            Check::LocaltimeLaw(a) => (CheckKind::LocaltimeLaw, a),
            Check::Charfn(a) => (CheckKind::Charfn, a),
            Check::OracleMatch(a) => (CheckKind::OracleMatch, a),
        }
    }
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Override the check's tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Constant tilt for the Girsanov check.
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    pub phi: f64,
    /// Test function for the Dynkin check; defaults to a piecewise quadratic in the generator domain.
    #[arg(long)]
    pub f: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Reference {
    /// Brownian motion at `--T` started at `--x0`.
    Normal,
    Uniform,
    /// Occupation time at the origin of symmetric sticky Brownian motion.
    Occupation,
    /// Brownian local time at the origin.
    BmLocalTime,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Sample file: one value per line, or CSV with a header.
    #[arg(long)]
    pub input: PathBuf,
    /// Second sample for a two-sample report.
    #[arg(long)]
    pub input2: Option<PathBuf>,
    /// CSV column; defaults to the first column.
    #[arg(long)]
    pub column: Option<String>,
    #[arg(long, value_enum)]
    pub reference: Option<Reference>,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<String>,
{
    let args: Vec<String> = args.into_iter().map(Into::into).collect();
    let args = match expand_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let cmd = override_self(Cli::command());
    let matches = match cmd.try_get_matches_from(&args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return EXIT_CONFIG;
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_numerical() {
                EXIT_NUMERICAL
            } else {
                EXIT_CONFIG
            }
        }
    }
}

/// Later occurrences of a flag replace earlier ones, so flags typed after
/// the inserted configuration entries win.
fn override_self(cmd: clap::Command) -> clap::Command {
    let names: Vec<String> = cmd.get_subcommands().map(|s| s.get_name().to_string()).collect();
    let mut cmd = cmd.args_override_self(true);
    for n in names {
        cmd = cmd.mut_subcommand(n, override_self);
    }
    cmd
}

/// Reads `key = value` lines, skipping blanks and `#` comments.
pub fn parse_config(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Input(format!("config line {}: expected `key = value`", n + 1)))?;
        let (k, v) = (k.trim(), v.trim().trim_matches('"'));
        if k.is_empty() || k.starts_with('-') {
            return Err(Error::Input(format!("config line {}: invalid key `{k}`", n + 1)));
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

/// Splices the entries of `--config <file>` in as flags right after the
/// subcommand, ahead of everything the user typed.
fn expand_config(args: Vec<String>) -> Result<Vec<String>> {
    let mut path = None;
    for (i, a) in args.iter().enumerate() {
        if a == "--config" {
            path = args.get(i + 1).cloned();
        } else if let Some(p) = a.strip_prefix("--config=") {
            path = Some(p.to_string());
        }
    }
    let Some(path) = path else { return Ok(args) };
    let text = std::fs::read_to_string(&path).map_err(|e| Error::Input(format!("config file {path}: {e}")))?;
    let entries = parse_config(&text)?;
    let mut at = 1;
    while at < args.len() && at < 3 && !args[at].starts_with('-') {
        let verify = args[at] == "verify";
        at += 1;
        if !verify {
            break;
        }
    }
    let mut out = args[..at].to_vec();
    out.extend(entries.into_iter().map(|(k, v)| format!("--{k}={v}")));
    out.extend_from_slice(&args[at..]);
    Ok(out)
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Simulate(a) => simulate(&a),
        Command::Oracle(a) => oracle(&a),
        Command::ClosedForm(a) => closed_form_cmd(&a),
        Command::Feller(a) => feller(&a),
        Command::Tube(a) => tube(&a),
        Command::Verify(a) => verify(&a.check),
        Command::Analyze(a) => analyze(&a),
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn emit_json(out: Option<&Path>, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::Input(e.to_string()))?;
    s.push('\n');
    emit(out, &s)
}

/// Five significant digits, e.g. `0.33620`.
pub fn format_sig5(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.4}");
    }
    let mag = v.abs().log10().floor() as i32;
    let decimals = (4 - mag).max(0) as usize;
    let s = format!("{v:.decimals$}");
    // Rounding may carry into a new digit, e.g. 9.99996 -> 10.0000.
    let rounded: f64 = s.parse().unwrap_or(v);
    let mag2 = rounded.abs().log10().floor() as i32;
    if mag2 > mag && decimals > 0 {
        let decimals = decimals - 1;
        return format!("{v:.decimals$}");
    }
    s
}

fn probe_for(x0: f64) -> Vec<f64> {
    let mut g = probe_grid(-10.0, 10.0, DEFAULT_PROBE_POINTS);
    g.push(x0);
    g
}

/// The process described by a spec file, or else by the coefficient and sticky-point flags.
pub fn build_spec(common: &Common, spec: &SpecArgs) -> Result<ValidatedSpec> {
    let raw = match &spec.spec {
        Some(path) => spec_from_text(&std::fs::read_to_string(path)?)?,
        None => {
            let drift = PiecewiseFn::parse(&spec.drift)?;
            let vol = PiecewiseFn::parse(&spec.vol)?;
            let sticky = vec![StickyPoint::new(0.0, common.p_plus, common.alpha)];
            ProcessSpec::with_probed_ellipticity(drift, vol, sticky, &probe_for(common.x0))
        }
    };
    validate_process_spec(raw, &probe_for(common.x0))
}

pub fn spec_to_text(spec: &ProcessSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "drift = {}", spec.drift);
    let _ = writeln!(s, "vol = {}", spec.vol);
    let _ = writeln!(s, "ellipticity = {}", spec.ellipticity);
    for p in &spec.sticky {
        let _ = writeln!(s, "sticky = {}, {}, {}, {}", p.x, p.p_plus, p.p_minus, p.alpha);
    }
    s
}

pub fn spec_from_text(text: &str) -> Result<ProcessSpec> {
    let (mut drift, mut vol, mut ellipticity) = (None, None, None);
    let mut sticky = Vec::new();
    for (k, v) in parse_config(text)? {
        match k.as_str() {
            "drift" => drift = Some(PiecewiseFn::parse(&v)?),
            "vol" => vol = Some(PiecewiseFn::parse(&v)?),
            "ellipticity" => ellipticity = Some(parse_f64(&k, &v)?),
            "sticky" => {
                let parts: Vec<f64> = v.split(',').map(|p| parse_f64(&k, p.trim())).collect::<Result<_>>()?;
                let [x, p_plus, p_minus, alpha] = parts[..] else {
                    return Err(Error::Input(format!("sticky expects `x, p_plus, p_minus, alpha`, got `{v}`")));
                };
                sticky.push(StickyPoint { x, p_plus, p_minus, alpha });
            }
            _ => return Err(Error::Input(format!("unknown spec key `{k}`"))),
        }
    }
    let missing = |name: &str| Error::Input(format!("spec file lacks `{name}`"));
    Ok(ProcessSpec::new(
        drift.ok_or_else(|| missing("drift"))?,
        vol.ok_or_else(|| missing("vol"))?,
        sticky,
        ellipticity.ok_or_else(|| missing("ellipticity"))?,
    ))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse().map_err(|_| Error::Input(format!("`{key}`: `{v}` is not a number")))
}

fn grid(common: &Common) -> Result<SimGrid> {
    SimGrid::new(common.horizon, common.dt)
}

fn simulate(a: &SimulateArgs) -> Result<i32> {
    let c = &a.common;
    let spec = build_spec(c, &a.spec)?;
    let grid = grid(c)?;
    match a.mode {
        Mode::Path => {
            let (up, dp) = simulate_delayed(&spec, grid, NoiseStream::new(c.seed, a.path_index), c.x0)?;
            let m = dp.points.len();
            let band: Option<Vec<Vec<f64>>> = match c.band {
                Some(bw) => {
                    let series = (0..m)
                        .map(|i| {
                            let b = local_time_band(&up.values, |y| spec.vol.eval(y).unwrap_or(f64::NAN), up.dt, dp.points[i], bw, spec.sigma_max());
                            if b.undersmoothed {
                                eprintln!("warning: bandwidth {bw} is below σ_max·√dt");
                            }
                            b.series
                        })
                        .collect();
                    Some(series)
                }
                None => None,
            };
            let mut s = String::from("t,x");
            for i in 0..m {
                let flag = if m == 1 { "at_point".to_string() } else { format!("at_point{i}") };
                let _ = write!(s, ",L{i},occ{i},{flag}");
                if band.is_some() {
                    let _ = write!(s, ",band{i}");
                }
            }
            s.push('\n');
            for j in 0..dp.len() {
                let _ = write!(s, "{:.16e},{:.16e}", dp.times[j], dp.values[j]);
                for i in 0..m {
                    let _ = write!(s, ",{:.16e},{:.16e},{}", dp.local_time[i][j], dp.occupation[i][j], dp.at_point[i][j] as u8);
                    if let Some(b) = &band {
                        let _ = write!(s, ",{:.16e}", b[i][dp.step_index[j]]);
                    }
                }
                s.push('\n');
            }
            emit(c.out.as_deref(), &s)?;
        }
        Mode::Ensemble => {
            let m = spec.sticky.len();
            let cfg = EnsembleConfig { grid, x0: c.x0 };
            let summary = mc_ensemble(&spec, cfg, c.paths, c.seed, &Quantity::all(m))?;
            let mut quantiles = BTreeMap::new();
            let mut mean = BTreeMap::new();
            let mut ci95 = BTreeMap::new();
            for (q, s) in &summary.quantities {
                quantiles.insert(q.name(), s.ecdf.quantiles(QUANTILE_POINTS));
                mean.insert(q.name(), s.mean);
                ci95.insert(q.name(), s.ci95);
            }
            let ks = ensemble_ks(&spec, c, &summary.quantities);
            let v = json!({
                "config": config_echo(c, Some(&a.spec), json!({"mode": a.mode})),
                "seed": c.seed,
                "n_paths": c.paths,
                "quantiles": quantiles,
                "mean": mean,
                "ci95": ci95,
                "ks_reports": ks,
            });
            emit_json(c.out.as_deref(), &v)?;
        }
    }
    Ok(EXIT_OK)
}

fn config_echo(c: &Common, spec: Option<&SpecArgs>, extra: Value) -> Value {
    let mut v = serde_json::to_value(c).unwrap_or(Value::Null);
    if let (Value::Object(map), Some(s)) = (&mut v, spec) {
        if let Ok(Value::Object(sm)) = serde_json::to_value(s) {
            map.extend(sm);
        }
    }
    if let (Value::Object(map), Value::Object(e)) = (&mut v, extra) {
        map.extend(e);
    }
    v
}

fn is_plain_coefficients(spec: &ProcessSpec) -> bool {
    probe_grid(-10.0, 10.0, 201)
        .iter()
        .all(|&x| spec.drift.eval(x).ok() == Some(0.0) && spec.vol.eval(x).ok() == Some(1.0))
}

/// Distance reports for every quantity with a known law.
fn ensemble_ks(spec: &ProcessSpec, c: &Common, q: &BTreeMap<Quantity, crate::stats::QuantitySummary>) -> Vec<DistanceReport> {
    let mut out = Vec::new();
    if !is_plain_coefficients(spec) {
        return out;
    }
    let neutral = spec.sticky.iter().all(|p| p.alpha == 0.0 && p.p_plus == p.p_minus);
    if neutral {
        if let Some(s) = q.get(&Quantity::Position) {
            let sd = c.horizon.sqrt();
            out.push(ks_distance(&s.ecdf, |x| normal_cdf((x - c.x0) / sd), "normal"));
        }
    }
    if let [p] = spec.sticky[..] {
        if p.x == 0.0 && c.x0 == 0.0 && p.p_plus == p.p_minus && p.alpha > 0.0 {
            if let (Ok(params), Some(s)) = (StickyBMParams::new(p.alpha, c.horizon), q.get(&Quantity::Occupation(0))) {
                out.push(ks_distance(&s.ecdf, |y| params.occupation_cdf(y), "sticky_occupation_law"));
            }
        }
    }
    out
}

fn lattice_params(c: &Common) -> Result<LatticeParams> {
    LatticeParams::new(c.delta, c.p_plus, c.alpha, c.horizon)
}

fn oracle(a: &OracleArgs) -> Result<i32> {
    let c = &a.common;
    let params = lattice_params(c)?;
    match a.mode {
        Mode::Path => {
            let path = oracle_simulate(&params, NoiseStream::new(c.seed, a.path_index))?;
            let mut s = String::from("t,x\n");
            let _ = writeln!(s, "{:.16e},{:.16e}", 0.0, 0.0);
            for e in &path.events {
                let _ = writeln!(s, "{:.16e},{:.16e}", e.time, e.position);
            }
            emit(c.out.as_deref(), &s)?;
        }
        Mode::Ensemble => {
            let quantity = match a.quantity {
                OracleKind::Position => OracleQuantity::Position,
                OracleKind::Occupation => OracleQuantity::OccupationAtZero,
                OracleKind::LocalTime => OracleQuantity::LocalTimeAtZero,
            };
            let ecdf = oracle_distribution(&params, c.paths, c.seed, quantity, c.horizon)?;
            let (mean, ci95) = ecdf.mean_ci95();
            let name = serde_json::to_value(a.quantity).unwrap_or(Value::Null);
            let name = name.as_str().unwrap_or("quantity").to_string();
            let v = json!({
                "config": config_echo(c, None, json!({"quantity": a.quantity})),
                "seed": c.seed,
                "n_paths": c.paths,
                "quantiles": { name.clone(): ecdf.quantiles(QUANTILE_POINTS) },
                "mean": { name.clone(): mean },
                "ci95": { name: ci95 },
                "ks_reports": [],
            });
            emit_json(c.out.as_deref(), &v)?;
        }
    }
    Ok(EXIT_OK)
}

fn closed_form_cmd(a: &ClosedFormArgs) -> Result<i32> {
    let t = a.t.unwrap_or(a.common.horizon);
    let alpha = a.common.alpha;
    let v = match a.quantity {
        ClosedFormQuantity::PointMass => StickyBMParams::new(alpha, t)?.point_mass(),
        ClosedFormQuantity::ExpectedOccupation => StickyBMParams::new(alpha, t)?.expected_occupation()?,
        ClosedFormQuantity::LocalTimeTail => closed_form::sticky_local_time_tail(t, a.y, alpha)?,
        ClosedFormQuantity::CharFn => StickyBMParams::new(alpha, t)?.char_fn(a.lambda)?,
        ClosedFormQuantity::NormalCdf => normal_cdf(a.x),
    };
    emit(a.common.out.as_deref(), &format!("{}\n", format_sig5(v)))?;
    Ok(EXIT_OK)
}

fn feller(a: &FellerArgs) -> Result<i32> {
    let u = PiecewiseFn::parse(&a.u)?;
    let v = PiecewiseFn::parse(&a.v)?;
    let ss = match &a.jumps {
        Some(j) => {
            let jumps = j
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| parse_f64("jumps", s))
                .collect::<Result<Vec<_>>>()?;
            ScaleSpeedSpec { u, v, jumps }
        }
        None => ScaleSpeedSpec::with_breakpoints_as_jumps(u, v),
    };
    let spec = feller_compile(&ss, &a.probe.grid())?;
    emit(a.common.out.as_deref(), &spec_to_text(&spec))?;
    Ok(EXIT_OK)
}

fn tube(a: &TubeArgs) -> Result<i32> {
    let ts = TubeSpec { v1: PiecewiseFn::parse(&a.v1)?, beta: a.beta, mu: a.mu };
    let spec = tube_compile(&ts, &a.probe.grid())?;
    emit(a.common.out.as_deref(), &spec_to_text(&spec))?;
    Ok(EXIT_OK)
}

/// Outcome of one verification.
#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub pass: bool,
    pub tol: f64,
    pub metrics: BTreeMap<String, f64>,
}

impl CheckReport {
    fn new(check: &str, tol: f64, pass: bool, metrics: &[(&str, f64)]) -> Self {
        CheckReport {
            check: check.to_string(),
            pass,
            tol,
            metrics: metrics.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
        }
    }
}

fn symmetric_params(spec: &ProcessSpec, c: &Common) -> Result<StickyBMParams> {
    let [p] = spec.sticky[..] else {
        return Err(Error::Domain("closed forms need exactly one sticky point".into()));
    };
    if p.x != 0.0 || c.x0 != 0.0 || !is_plain_coefficients(spec) {
        return Err(Error::Domain("closed forms need sticky Brownian motion started at its sticky point 0".into()));
    }
    StickyBMParams::from_point(&p, c.horizon)
}

fn paths_at_horizon(spec: &ValidatedSpec, c: &Common, seed: u64) -> Result<Vec<crate::transform::DelayedState>> {
    let grid = grid(c)?;
    let (pts, als) = (points(spec), alphas(spec));
    run_paths(c.paths, |i| {
        let up = simulate_undelayed(spec, grid, NoiseStream::new(seed, i), c.x0)?;
        let table = build_time_change(&up, &als)?;
        delayed_state(&up, &table, &pts, c.horizon)
    })
}

/// Runs one verification and returns its report.
pub fn run_check(kind: CheckKind, a: &CheckArgs) -> Result<CheckReport> {
    let c = &a.common;
    match kind {
        CheckKind::Occupation => {
            let spec = build_spec(c, &a.spec)?;
            let grid = grid(c)?;
            let res = run_paths(c.paths, |i| {
                let (_, dp) = simulate_delayed(&spec, grid, NoiseStream::new(c.seed, i), c.x0)?;
                Ok(occupation_identity_report(&dp).iter().copied().fold(0.0, f64::max))
            })?;
            let tol = a.tol.unwrap_or(0.02);
            let (mean, _) = mean_ci95(&res);
            Ok(CheckReport::new("occupation", tol, mean <= tol, &[("mean_residual", mean)]))
        }
        CheckKind::SdePair => {
            let spec = build_spec(c, &a.spec)?;
            let grid = grid(c)?;
            let res = run_paths(c.paths, |i| {
                let (up, dp) = simulate_delayed(&spec, grid, NoiseStream::new(c.seed, i), c.x0)?;
                sde_residual_check(&dp, &up, &spec)
            })?;
            let tol = a.tol.unwrap_or(0.02);
            let lasts: Vec<f64> = res.iter().map(|r| r.last).collect();
            let (mean_last, ci_last) = mean_ci95(&lasts);
            let qv: Vec<f64> = res.iter().map(|r| r.quadratic_variation).collect();
            let target: Vec<f64> = res.iter().map(|r| r.qv_target).collect();
            let (qv_mean, _) = mean_ci95(&qv);
            let (target_mean, _) = mean_ci95(&target);
            let qv_gap = (qv_mean - target_mean).abs();
            let residual_ok = mean_last.abs() <= (1.5 * ci_last).max(1e-9);
            Ok(CheckReport::new(
                "sde-pair",
                tol,
                qv_gap <= tol && residual_ok,
                &[
                    ("mean_final_residual", mean_last),
                    ("final_residual_ci95", ci_last),
                    ("mean_quadratic_variation", qv_mean),
                    ("mean_qv_target", target_mean),
                    ("qv_gap", qv_gap),
                ],
            ))
        }
        CheckKind::Dynkin => {
            let spec = build_spec(c, &a.spec)?;
            let f = match &a.f {
                Some(text) => PiecewiseFn::parse(text)?,
                None => default_test_function(&spec)?,
            };
            let tf = TestFunction::new(f, &spec)?;
            let boundary = tf.boundary_terms(&spec)?;
            let grid = grid(c)?;
            let res = run_paths(c.paths, |i| {
                let (_, dp) = simulate_delayed(&spec, grid, NoiseStream::new(c.seed, i), c.x0)?;
                dynkin_residual(&dp, &tf, &spec, &boundary)
            })?;
            let report = DynkinReport::from_residuals(&res, tf.generator_discontinuities(&spec)?);
            for x in &report.generator_discontinuities {
                eprintln!("warning: generator of the test function is discontinuous at {x}");
            }
            let scale = a.tol.unwrap_or(1.0);
            Ok(CheckReport::new(
                "dynkin",
                scale,
                report.mean.abs() <= scale * report.ci95,
                &[("mean_residual", report.mean), ("ci95", report.ci95)],
            ))
        }
        CheckKind::Girsanov => {
            let spec = build_spec(c, &a.spec)?;
            let grid = grid(c)?;
            let phi = a.phi;
            let phi_fn = PiecewiseFn::constant(phi);
            let (pts, als) = (points(&spec), alphas(&spec));
            let weighted = run_paths(c.paths, |i| {
                let up = simulate_undelayed(&spec, grid, NoiseStream::new(c.seed, i), c.x0)?;
                let table = build_time_change(&up, &als)?;
                let w = girsanov_weight(&up, &table, &phi_fn, c.horizon)?;
                Ok(w * delayed_state(&up, &table, &pts, c.horizon)?.x)
            })?;
            let base = spec.spec().clone();
            let (d, v) = (base.drift.clone(), base.vol.clone());
            let tilted_drift = PiecewiseFn::from_fn(move |x| d.eval(x).unwrap_or(f64::NAN) + phi * v.eval(x).unwrap_or(f64::NAN));
            let tilted = validate_process_spec(base.with_drift(tilted_drift), &probe_for(c.x0))?;
            let direct: Vec<f64> = paths_at_horizon(&tilted, c, c.seed.wrapping_add(1))?.iter().map(|s| s.x).collect();
            let (mw, cw) = mean_ci95(&weighted);
            let (md, cd) = mean_ci95(&direct);
            let combined = ((cw / 1.96).powi(2) + (cd / 1.96).powi(2)).sqrt();
            let k = a.tol.unwrap_or(2.0);
            Ok(CheckReport::new(
                "girsanov",
                k,
                (mw - md).abs() <= k * combined,
                &[("reweighted_mean", mw), ("direct_mean", md), ("combined_std_error", combined)],
            ))
        }
        CheckKind::Pointmass => {
            let spec = build_spec(c, &a.spec)?;
            let params = symmetric_params(&spec, c)?;
            let states = paths_at_horizon(&spec, c, c.seed)?;
            let frac = states.iter().filter(|s| s.at_point.is_some()).count() as f64 / states.len() as f64;
            let exact = params.point_mass();
            let tol = a.tol.unwrap_or(0.02);
            Ok(CheckReport::new("pointmass", tol, (frac - exact).abs() <= tol, &[("empirical", frac), ("exact", exact)]))
        }
        CheckKind::LocaltimeLaw => {
            let spec = build_spec(c, &a.spec)?;
            let params = symmetric_params(&spec, c)?;
            let states = paths_at_horizon(&spec, c, c.seed)?;
            let occ = Ecdf::new(states.iter().map(|s| params.alpha * s.local_time[0]).collect())?;
            let r = ks_distance(&occ, |y| params.occupation_cdf(y), "sticky_occupation_law");
            let tol = a.tol.unwrap_or(0.02);
            Ok(CheckReport::new("localtime-law", tol, r.ks <= tol, &[("ks", r.ks)]))
        }
        CheckKind::Charfn => {
            let spec = build_spec(c, &a.spec)?;
            let params = symmetric_params(&spec, c)?;
            let states = paths_at_horizon(&spec, c, c.seed)?;
            let xs: Vec<f64> = states.iter().map(|s| s.x).collect();
            let lambdas: Vec<f64> = (-5..=5).map(f64::from).collect();
            let emp = empirical_char_fn(&xs, &lambdas)?;
            let mut sup = 0.0f64;
            for p in &emp {
                sup = sup.max((p.value() - params.char_fn(p.lambda)?).norm());
            }
            let tol = a.tol.unwrap_or(0.03);
            Ok(CheckReport::new("charfn", tol, sup <= tol, &[("sup_distance", sup)]))
        }
        CheckKind::OracleMatch => {
            let spec = build_spec(c, &a.spec)?;
            if spec.sticky.len() != 1 || spec.sticky[0].x != 0.0 || !is_plain_coefficients(&spec) {
                return Err(Error::Domain("the lattice walk covers zero drift, unit volatility and one point at 0".into()));
            }
            let params = LatticeParams::new(c.delta, spec.sticky[0].p_plus, spec.sticky[0].alpha, c.horizon)?;
            let lattice = run_paths(c.paths, |i| oracle_sample(&params, NoiseStream::new(c.seed.wrapping_add(1), i), c.horizon))?;
            let states = paths_at_horizon(&spec, c, c.seed)?;
            let alpha = spec.sticky[0].alpha;
            let lp = Ecdf::new(lattice.iter().map(|s| s.position + c.x0).collect())?;
            let lo = Ecdf::new(lattice.iter().map(|s| s.occupation).collect())?;
            let sp = Ecdf::new(states.iter().map(|s| s.x).collect())?;
            let so = Ecdf::new(states.iter().map(|s| alpha * s.local_time[0]).collect())?;
            let (kp, ko) = (ks_two_sample(&lp, &sp), ks_two_sample(&lo, &so));
            let tol = a.tol.unwrap_or(0.02);
            let tol_occ = a.tol.map_or(0.03, |t| 1.5 * t);
            Ok(CheckReport::new(
                "oracle-match",
                tol,
                kp <= tol && ko <= tol_occ,
                &[("ks_position", kp), ("ks_occupation", ko), ("tol_occupation", tol_occ)],
            ))
        }
    }
}

/// Piecewise quadratic `x² + a_± x` with `p_+ a_+ - p_- a_- = α 𝓛f(0)`.
fn default_test_function(spec: &ProcessSpec) -> Result<PiecewiseFn> {
    let [p] = spec.sticky[..] else {
        return Err(Error::Input("default test function needs exactly one sticky point; pass --f".into()));
    };
    if !is_plain_coefficients(spec) {
        return Err(Error::Input("default test function assumes zero drift and unit volatility; pass --f".into()));
    }
    // 𝓛f = 1 on both sides.
    let (a_plus, a_minus) = if p.p_minus == 0.0 {
        (p.alpha / p.p_plus, 0.0)
    } else if p.p_plus == 0.0 {
        (0.0, -p.alpha / p.p_minus)
    } else {
        (p.alpha / (2.0 * p.p_plus), -p.alpha / (2.0 * p.p_minus))
    };
    let x = p.x;
    PiecewiseFn::parse(&format!(
        "[(x - {x})^2 + {a_minus}*(x - {x}), {x}: (x - {x})^2 + {a_plus}*(x - {x})]"
    ))
}

fn verify(check: &Check) -> Result<i32> {
    let (kind, a) = check.parts();
    let report = run_check(kind, a)?;
    let v = json!({ "config": config_echo(&a.common, Some(&a.spec), json!({})), "report": report });
    emit_json(a.common.out.as_deref(), &v)?;
    Ok(if report.pass { EXIT_OK } else { EXIT_VERIFY_FAILED })
}

/// Reads one numeric column from a plain list or a CSV with a header.
pub fn read_samples(text: &str, column: Option<&str>) -> Result<Vec<f64>> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#')).peekable();
    let first = lines.peek().copied().ok_or_else(|| Error::Input("no samples".into()))?;
    let cells: Vec<&str> = first.split(',').map(str::trim).collect();
    let has_header = cells.iter().any(|c| c.parse::<f64>().is_err());
    let idx = if has_header {
        lines.next();
        match column {
            Some(name) => cells
                .iter()
                .position(|c| *c == name)
                .ok_or_else(|| Error::Input(format!("no column `{name}`")))?,
            None => 0,
        }
    } else {
        match column {
            Some(c) => c.parse().map_err(|_| Error::Input(format!("headerless input needs a numeric column, got `{c}`")))?,
            None => 0,
        }
    };
    lines
        .enumerate()
        .map(|(n, l)| {
            let cell = l.split(',').nth(idx).map(str::trim).ok_or_else(|| Error::Input(format!("row {} lacks column {idx}", n + 1)))?;
            cell.parse::<f64>().map_err(|_| Error::Input(format!("row {}: `{cell}` is not a number", n + 1)))
        })
        .collect()
}

fn analyze(a: &AnalyzeArgs) -> Result<i32> {
    let c = &a.common;
    let sample = Ecdf::new(read_samples(&std::fs::read_to_string(&a.input)?, a.column.as_deref())?)?;
    let mut reports = Vec::new();
    if let Some(r) = a.reference {
        reports.push(match r {
            Reference::Normal => {
                let sd = c.horizon.sqrt();
                ks_distance(&sample, |x| normal_cdf((x - c.x0) / sd), "normal")
            }
            Reference::Uniform => ks_distance(&sample, |x| x.clamp(0.0, 1.0), "uniform"),
            Reference::Occupation => {
                let params = StickyBMParams::new(c.alpha, c.horizon)?;
                ks_distance(&sample, |y| params.occupation_cdf(y), "sticky_occupation_law")
            }
            Reference::BmLocalTime => {
                ks_distance(&sample, |y| 1.0 - closed_form::bm_local_time_tail(c.horizon, y), "bm_local_time_law")
            }
        });
    }
    if let Some(p) = &a.input2 {
        let other = Ecdf::new(read_samples(&std::fs::read_to_string(p)?, a.column.as_deref())?)?;
        reports.push(DistanceReport { reference: p.display().to_string(), ks: ks_two_sample(&sample, &other), n: sample.len() });
    }
    let (mean, ci95) = sample.mean_ci95();
    let v = json!({ "n": sample.len(), "mean": mean, "ci95": ci95, "ks_reports": reports });
    emit_json(c.out.as_deref(), &v)?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig5_formatting() {
        assert_eq!(format_sig5(0.336_204_002_446_341_2), "0.33620");
        assert_eq!(format_sig5(0.465_986_562), "0.46599");
        assert_eq!(format_sig5(1.0), "1.0000");
        assert_eq!(format_sig5(12.345_67), "12.346");
        assert_eq!(format_sig5(9.999_996), "10.000");
        assert_eq!(format_sig5(0.0), "0.0000");
    }

    #[test]
    fn config_lines() {
        let c = parse_config("# comment\nalpha = 2\n\ndt=1e-3  # trailing\nspec = \"a.txt\"\n").unwrap();
        assert_eq!(c, vec![("alpha".into(), "2".into()), ("dt".into(), "1e-3".into()), ("spec".into(), "a.txt".into())]);
        assert!(parse_config("alpha 2").is_err());
    }

    #[test]
    fn config_entries_precede_user_flags() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.cfg");
        std::fs::write(&p, "alpha = 2\n").unwrap();
        let args: Vec<String> = ["sticky-sim", "verify", "occupation", "--config", p.to_str().unwrap(), "--alpha", "3"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let out = expand_config(args).unwrap();
        assert_eq!(out[3], "--alpha=2");
        assert_eq!(out.last().unwrap(), "3");
    }

    #[test]
    fn spec_text_round_trip() {
        let spec = ProcessSpec::new(
            PiecewiseFn::parse("[0.5, 0: -x]").unwrap(),
            PiecewiseFn::parse("1 + 0.1*sin(x)").unwrap(),
            vec![StickyPoint::new(0.0, 0.75, 0.5)],
            0.8,
        );
        let text = spec_to_text(&spec);
        let back = spec_from_text(&text).unwrap();
        assert_eq!(spec_to_text(&back), text);
        assert_eq!(back.sticky, spec.sticky);
        assert!(spec_from_text("drift = 0\nvol = 1\n").is_err());
        assert!(spec_from_text("drift = 0\nvol = 1\nellipticity = 1\ncolour = 2\n").is_err());
    }

    #[test]
    fn default_test_function_satisfies_boundary_condition() {
        for (pp, alpha) in [(0.5, 1.0), (0.75, 0.3), (1.0, 2.0), (0.0, 1.0)] {
            let spec = ProcessSpec::constant(0.0, 1.0, vec![StickyPoint::new(0.0, pp, alpha)]);
            let f = TestFunction::new(default_test_function(&spec).unwrap(), &spec).unwrap();
            assert!(f.boundary_terms(&spec).unwrap()[0].abs() < 1e-12, "p={pp} α={alpha}");
        }
    }

    #[test]
    fn samples_from_csv_and_lists() {
        assert_eq!(read_samples("1\n2.5\n\n-3\n", None).unwrap(), vec![1.0, 2.5, -3.0]);
        assert_eq!(read_samples("t,x\n0,1\n1,2\n", Some("x")).unwrap(), vec![1.0, 2.0]);
        assert!(read_samples("t,x\n0,1\n", Some("y")).is_err());
        assert!(read_samples("", None).is_err());
    }
}
