//! Monte Carlo harness plus exit-based estimators and distribution distances.

use std::collections::BTreeMap;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::{simulate_exit, simulate_undelayed, ExitSide, NoiseStream, SimGrid};
use crate::error::{Error, Result};
use crate::model::ValidatedSpec;
use crate::transform::{alphas, build_time_change, delayed_state, mean_ci95, points};

/// Environment variable capping the worker count; `0` or unset means automatic.
pub const THREADS_ENV: &str = "STICKY_SIM_THREADS";

pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).unwrap_or(0)
}

/// Runs `f` for every path index in `0..n` and returns the results in index order.
///
/// Failures are collected across all paths and reported together.
pub fn run_paths<T, F>(n: u64, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..n).into_par_iter().map(&f).collect());
    let mut out = Vec::with_capacity(results.len());
    let mut failed = Vec::new();
    let mut first_message = None;
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(v) => out.push(v),
            Err(e) => {
                failed.push(i as u64);
                first_message.get_or_insert_with(|| e.to_string());
            }
        }
    }
    match first_message {
        None => Ok(out),
        Some(first_message) => Err(Error::Ensemble { first_index: failed[0], indices: failed, first_message }),
    }
}

/// Empirical CDF, stored as the sorted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Input("empty sample".into()));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::Input("sample contains NaN".into()));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Ecdf { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }

    /// `F_n(x) = #{x_k <= x} / n`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v <= x) as f64 / self.len() as f64
    }

    /// `F_n(x-) = #{x_k < x} / n`.
    pub fn eval_left(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&v| v < x) as f64 / self.len() as f64
    }

    /// Lower empirical quantile `inf{x : F_n(x) >= p}`.
    pub fn quantile(&self, p: f64) -> f64 {
        let n = self.len();
        let k = ((p.clamp(0.0, 1.0) * n as f64).ceil() as usize).clamp(1, n);
        self.sorted[k - 1]
    }

    /// Quantiles on the grid `0, 1/(m-1), …, 1`.
    pub fn quantiles(&self, m: usize) -> Vec<f64> {
        (0..m).map(|i| self.quantile(i as f64 / (m - 1).max(1) as f64)).collect()
    }

    pub fn mean_ci95(&self) -> (f64, f64) {
        mean_ci95(&self.sorted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub reference: String,
    pub ks: f64,
    pub n: usize,
}

/// Exact `sup |F_n - F|` against a continuous reference CDF.
pub fn ks_distance(sample: &Ecdf, reference: impl Fn(f64) -> f64, name: &str) -> DistanceReport {
    ks_distance_with_left(sample, &reference, &reference, name)
}

/// As [`ks_distance`] for a reference with atoms, given its left limits `F(x-)`.
pub fn ks_distance_with_left(
    sample: &Ecdf,
    reference: impl Fn(f64) -> f64,
    left: impl Fn(f64) -> f64,
    name: &str,
) -> DistanceReport {
    let xs = sample.samples();
    let n = xs.len() as f64;
    let mut ks = 0.0f64;
    let mut i = 0;
    while i < xs.len() {
        let v = xs[i];
        let mut j = i;
        while j < xs.len() && xs[j] == v {
            j += 1;
        }
        ks = ks.max((i as f64 / n - left(v)).abs()).max((j as f64 / n - reference(v)).abs());
        i = j;
    }
    DistanceReport { reference: name.to_string(), ks: ks.min(1.0), n: xs.len() }
}

/// Two-sample statistic `sup |F_n - G_m|`.
pub fn ks_two_sample(a: &Ecdf, b: &Ecdf) -> f64 {
    let (xa, xb) = (a.samples(), b.samples());
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0f64;
    while i < xa.len() && j < xb.len() {
        let v = xa[i].min(xb[j]);
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharFnPoint {
    pub lambda: f64,
    pub re: f64,
    pub im: f64,
    pub std_error: f64,
}

impl CharFnPoint {
    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }
}

/// `(1/n) Σ exp(iλx_k)` with standard error `√((1 - |φ̂|²)/n)`.
pub fn empirical_char_fn(samples: &[f64], lambdas: &[f64]) -> Result<Vec<CharFnPoint>> {
    if samples.is_empty() {
        return Err(Error::Input("empty sample".into()));
    }
    let n = samples.len() as f64;
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let sum: Complex64 = samples.iter().map(|&x| Complex64::new(0.0, lambda * x).exp()).sum();
            let phi = sum / n;
            let phi = if lambda == 0.0 { Complex64::new(1.0, 0.0) } else { phi };
            let std_error = ((1.0 - phi.norm_sqr()).max(0.0) / n).sqrt();
            CharFnPoint { lambda, re: phi.re, im: phi.im, std_error }
        })
        .collect())
}

/// Per-path quantities of the delayed process at the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Quantity {
    Position,
    LocalTime(usize),
    /// `∫ 1{X = x_i} ds`, which equals `α_i L_i`.
    Occupation(usize),
    /// Indicator of dwelling at sticky point `i`.
    AtPoint(usize),
}

impl Quantity {
    pub fn name(&self) -> String {
        match self {
            Quantity::Position => "position".into(),
            Quantity::LocalTime(i) => format!("local_time{i}"),
            Quantity::Occupation(i) => format!("occupation{i}"),
            Quantity::AtPoint(i) => format!("at_point{i}"),
        }
    }

    /// Every quantity for a spec with `m` sticky points.
    pub fn all(m: usize) -> Vec<Quantity> {
        let mut q = vec![Quantity::Position];
        for i in 0..m {
            q.extend([Quantity::LocalTime(i), Quantity::Occupation(i), Quantity::AtPoint(i)]);
        }
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantitySummary {
    pub ecdf: Ecdf,
    pub mean: f64,
    pub ci95: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSummary {
    pub n_paths: u64,
    pub master_seed: u64,
    pub horizon: f64,
    pub quantities: BTreeMap<Quantity, QuantitySummary>,
}

impl EnsembleSummary {
    pub fn get(&self, q: Quantity) -> Option<&QuantitySummary> {
        self.quantities.get(&q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub grid: SimGrid,
    pub x0: f64,
}

/// Simulates `n_paths` delayed paths and summarises `quantities` at the horizon.
pub fn mc_ensemble(
    spec: &ValidatedSpec,
    config: EnsembleConfig,
    n_paths: u64,
    master_seed: u64,
    quantities: &[Quantity],
) -> Result<EnsembleSummary> {
    if n_paths == 0 {
        return Err(Error::Input("need at least one path".into()));
    }
    let m = spec.sticky.len();
    if let Some(q) = quantities.iter().find(|q| match q {
        Quantity::Position => false,
        Quantity::LocalTime(i) | Quantity::Occupation(i) | Quantity::AtPoint(i) => *i >= m,
    }) {
        return Err(Error::Input(format!("{} refers to a missing sticky point", q.name())));
    }
    let (pts, als) = (points(spec), alphas(spec));
    let horizon = config.grid.horizon;
    let rows = run_paths(n_paths, |idx| {
        let up = simulate_undelayed(spec, config.grid, NoiseStream::new(master_seed, idx), config.x0)?;
        let table = build_time_change(&up, &als)?;
        let st = delayed_state(&up, &table, &pts, horizon)?;
        Ok(quantities
            .iter()
            .map(|q| match *q {
                Quantity::Position => st.x,
                Quantity::LocalTime(i) => st.local_time[i],
                Quantity::Occupation(i) => als[i] * st.local_time[i],
                Quantity::AtPoint(i) => (st.at_point == Some(i)) as u8 as f64,
            })
            .collect::<Vec<_>>())
    })?;
    let mut map = BTreeMap::new();
    for (c, q) in quantities.iter().enumerate() {
        let column: Vec<f64> = rows.iter().map(|r| r[c]).collect();
        let (mean, ci95) = mean_ci95(&column);
        map.insert(*q, QuantitySummary { ecdf: Ecdf::new(column)?, mean, ci95 });
    }
    Ok(EnsembleSummary { n_paths, master_seed, horizon, quantities: map })
}

/// Censoring above this fraction invalidates exit-based estimates.
pub const MAX_CENSORED_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitEstimate {
    pub estimate: f64,
    pub ci95: f64,
    /// Paths that exited.
    pub n: usize,
    pub censored: usize,
    pub dt: f64,
    pub valid: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitConfig {
    pub delta: f64,
    pub n_paths: u64,
    pub master_seed: u64,
    /// Step size; `None` picks `(δ / 10σ_max)²`.
    pub dt: Option<f64>,
    pub max_steps: usize,
}

impl ExitConfig {
    pub fn new(delta: f64, n_paths: u64, master_seed: u64) -> Self {
        ExitConfig { delta, n_paths, master_seed, dt: None, max_steps: 10_000_000 }
    }
}

struct ExitRun {
    up: Vec<bool>,
    delays: Vec<f64>,
    censored: usize,
    dt: f64,
}

fn run_exits(spec: &ValidatedSpec, point: usize, cfg: &ExitConfig) -> Result<ExitRun> {
    let p = spec
        .sticky
        .get(point)
        .ok_or_else(|| Error::Input(format!("no sticky point with index {point}")))?;
    if !(cfg.delta > 0.0) || cfg.n_paths == 0 {
        return Err(Error::Input("exit radius and path count must be positive".into()));
    }
    let sigma_max = spec.sigma_max();
    let dt = cfg.dt.unwrap_or((cfg.delta / (10.0 * sigma_max)).powi(2));
    if cfg.delta < 10.0 * sigma_max * dt.sqrt() * (1.0 - 1e-12) {
        return Err(Error::Input(format!("δ = {} is not resolvable at dt = {dt}", cfg.delta)));
    }
    let als = alphas(spec);
    let outcomes = run_paths(cfg.n_paths, |idx| {
        let out = simulate_exit(spec, dt, NoiseStream::new(cfg.master_seed, idx), p.x, cfg.delta, cfg.max_steps)?;
        // Exit time of X is r evaluated at the exit time of Y.
        let delay = out.steps as f64 * dt + out.local_time.iter().zip(&als).map(|(l, a)| l * a).sum::<f64>();
        Ok((out.side, delay))
    })?;
    let mut run = ExitRun { up: Vec::new(), delays: Vec::new(), censored: 0, dt };
    for (side, delay) in outcomes {
        match side {
            Some(s) => {
                run.up.push(s == ExitSide::Up);
                run.delays.push(delay);
            }
            None => run.censored += 1,
        }
    }
    Ok(run)
}

fn finish(values: &[f64], run: &ExitRun, total: u64) -> ExitEstimate {
    let (estimate, ci95) = mean_ci95(values);
    let valid = !values.is_empty() && (run.censored as f64) <= MAX_CENSORED_FRACTION * total as f64;
    ExitEstimate { estimate, ci95, n: values.len(), censored: run.censored, dt: run.dt, valid }
}

/// Fraction of paths started at sticky point `point` that leave
/// `(x - δ, x + δ)` through the right end.
pub fn exit_probability_estimate(spec: &ValidatedSpec, point: usize, cfg: &ExitConfig) -> Result<ExitEstimate> {
    let run = run_exits(spec, point, cfg)?;
    let ups: Vec<f64> = run.up.iter().map(|&u| u as u8 as f64).collect();
    Ok(finish(&ups, &run, cfg.n_paths))
}

/// `mean(τ_δ) / δ` for the delayed process; biased upward by `O(δ)`.
pub fn delay_coefficient_estimate(spec: &ValidatedSpec, point: usize, cfg: &ExitConfig) -> Result<ExitEstimate> {
    let run = run_exits(spec, point, cfg)?;
    let scaled: Vec<f64> = run.delays.iter().map(|t| t / cfg.delta).collect();
    Ok(finish(&scaled, &run, cfg.n_paths))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{probe_grid, validate_process_spec, ProcessSpec, StickyPoint};
    use crate::special::normal_cdf;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn validated(spec: ProcessSpec) -> ValidatedSpec {
        validate_process_spec(spec, &probe_grid(-5.0, 5.0, 101)).unwrap()
    }

    #[test]
    fn ecdf_is_right_continuous() {
        let e = Ecdf::new(vec![2.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(e.eval(0.5), 0.0);
        assert_eq!(e.eval(2.0), 0.75);
        assert_eq!(e.eval_left(2.0), 0.25);
        assert_eq!(e.quantile(0.0), 1.0);
        assert_eq!(e.quantile(0.5), 2.0);
        assert_eq!(e.quantile(1.0), 3.0);
        assert_eq!(e.quantiles(101).len(), 101);
        assert!(Ecdf::new(vec![]).is_err());
    }

    #[test]
    fn ks_examples() {
        let e = Ecdf::new(vec![0.0; 10]).unwrap();
        assert_eq!(ks_distance(&e, normal_cdf, "normal").ks, 0.5);
        let s = Ecdf::new(vec![0.1, 0.5, 0.9, 0.5]).unwrap();
        assert_eq!(ks_distance_with_left(&s, |x| s.eval(x), |x| s.eval_left(x), "self").ks, 0.0);
        assert_eq!(ks_two_sample(&s, &s), 0.0);
    }

    #[test]
    fn ks_uniform_within_dkw_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let u: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let r = ks_distance(&Ecdf::new(u).unwrap(), |x| x.clamp(0.0, 1.0), "uniform");
        // DKW: P(D > ε) <= 2 exp(-2nε²) = 0.0007 at ε = 0.02.
        assert!(r.ks <= 0.02, "{}", r.ks);
    }

    #[test]
    fn two_sample_against_brute_force() {
        let a = Ecdf::new(vec![0.3, 0.1, 0.7, 0.7]).unwrap();
        let b = Ecdf::new(vec![0.2, 0.7, 0.9]).unwrap();
        let brute = [0.1, 0.2, 0.3, 0.7, 0.9].iter().map(|&x| (a.eval(x) - b.eval(x)).abs()).fold(0.0, f64::max);
        assert!((ks_two_sample(&a, &b) - brute).abs() < 1e-15);
    }

    #[test]
    fn char_fn_examples() {
        let c = empirical_char_fn(&[0.3, -1.2, 2.0], &[0.0]).unwrap();
        assert_eq!((c[0].re, c[0].im), (1.0, 0.0));
        let c = empirical_char_fn(&[0.0; 5], &[-2.0, 1.0, 3.5]).unwrap();
        assert!(c.iter().all(|p| p.re == 1.0 && p.im == 0.0 && p.std_error == 0.0));
        assert!(empirical_char_fn(&[], &[1.0]).is_err());
    }

    #[test]
    fn ensemble_is_deterministic() {
        let spec = validated(ProcessSpec::sticky_brownian(1.0));
        let cfg = EnsembleConfig { grid: SimGrid::new(1.0, 1e-2).unwrap(), x0: 0.0 };
        let q = Quantity::all(1);
        let a = mc_ensemble(&spec, cfg, 200, 5, &q).unwrap();
        let b = mc_ensemble(&spec, cfg, 200, 5, &q).unwrap();
        assert_eq!(a, b);
        let one = mc_ensemble(&spec, cfg, 1, 5, &q).unwrap();
        let pos = one.get(Quantity::Position).unwrap();
        assert_eq!(pos.ci95, 0.0);
        assert_eq!(pos.mean, pos.ecdf.samples()[0]);
        assert!(mc_ensemble(&spec, cfg, 0, 5, &q).is_err());
        assert!(mc_ensemble(&spec, cfg, 1, 5, &[Quantity::LocalTime(3)]).is_err());
    }

    #[test]
    fn symmetric_mean_position_within_ci() {
        let spec = validated(ProcessSpec::sticky_brownian(1.0));
        let cfg = EnsembleConfig { grid: SimGrid::new(1.0, 1e-2).unwrap(), x0: 0.0 };
        for seed in [11, 12] {
            let s = mc_ensemble(&spec, cfg, 4000, seed, &[Quantity::Position]).unwrap();
            let p = s.get(Quantity::Position).unwrap();
            assert!(p.mean.abs() <= p.ci95 * 1.5, "seed {seed}: {} ± {}", p.mean, p.ci95);
        }
    }

    #[test]
    fn failures_list_path_indices() {
        let err = run_paths(10, |i| if i % 4 == 1 { Err(Error::Input(format!("bad {i}"))) } else { Ok(i) }).unwrap_err();
        match err {
            Error::Ensemble { indices, first_index, first_message } => {
                assert_eq!(indices, vec![1, 5, 9]);
                assert_eq!(first_index, 1);
                assert_eq!(first_message, "invalid input: bad 1");
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn exit_probabilities() {
        let cfg = ExitConfig::new(0.05, 4000, 3);
        let sym = validated(ProcessSpec::sticky_brownian(1.0));
        let e = exit_probability_estimate(&sym, 0, &cfg).unwrap();
        assert!((e.estimate - 0.5).abs() <= 1.5 * e.ci95 && e.valid);
        let refl = validated(ProcessSpec::constant(0.0, 1.0, vec![StickyPoint::new(0.0, 1.0, 0.5)]));
        assert_eq!(exit_probability_estimate(&refl, 0, &cfg).unwrap().estimate, 1.0);
        assert!(exit_probability_estimate(&sym, 1, &cfg).is_err());
        let coarse = ExitConfig { dt: Some(1e-3), ..cfg };
        assert!(exit_probability_estimate(&sym, 0, &coarse).is_err());
    }

    #[test]
    fn delay_of_plain_point_is_order_delta() {
        let spec = validated(ProcessSpec::sticky_brownian(0.0));
        let e = delay_coefficient_estimate(&spec, 0, &ExitConfig::new(0.01, 2000, 4)).unwrap();
        assert!(e.estimate <= 10.0 * 0.01, "{}", e.estimate);
    }

    #[test]
    fn censoring_invalidates() {
        let spec = validated(ProcessSpec::sticky_brownian(1.0));
        let cfg = ExitConfig { max_steps: 3, ..ExitConfig::new(0.05, 100, 1) };
        let e = exit_probability_estimate(&spec, 0, &cfg).unwrap();
        assert!(e.censored > 0 && !e.valid);
    }

    proptest! {
        #[test]
        fn ks_in_unit_interval(xs in proptest::collection::vec(-10.0f64..10.0, 1..50)) {
            let e = Ecdf::new(xs).unwrap();
            let r = ks_distance(&e, normal_cdf, "normal");
            prop_assert!((0.0..=1.0).contains(&r.ks));
            prop_assert!(r.ks >= (e.eval(0.0) - 0.5).abs() - 1e-15);
        }

        #[test]
        fn quantile_inverts_ecdf(xs in proptest::collection::vec(-10.0f64..10.0, 1..50), p in 0.0f64..=1.0) {
            let e = Ecdf::new(xs).unwrap();
            let q = e.quantile(p);
            prop_assert!(e.eval(q) >= p - 1e-12);
            prop_assert!(e.eval_left(q) <= p + 1e-12);
        }
    }
}
