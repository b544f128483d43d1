//! The delayed process `X = Y∘r⁻¹` and the identities it satisfies.
//!
//! Step `k` of the undelayed path occupies the clock interval `[r_k, r_{k+1})`.
//! It starts with a move of length `dt`, during which `X = y_k`. After the
//! move comes one dwell per sticky point whose local time grew during the
//! step. The dwell at point `i` lasts `α_i Δℓ_i`. While it lasts, `X` sits
//! at `x_i` and its local time there grows at rate `1/α_i`.

use crate::engine::{simulate_undelayed, NoiseStream, SimGrid, UndelayedPath};
use crate::error::{Error, Result};
use crate::model::{ProcessSpec, ValidatedSpec};
use crate::piecewise::PiecewiseFn;

/// Clock nodes `r_k = s_k + Σ_i α_i ℓ_{i,k}`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeChangeTable {
    pub dt: f64,
    pub alphas: Vec<f64>,
    pub r: Vec<f64>,
}

impl TimeChangeTable {
    /// Table for a synthetic local-time series on the grid `s_k = k dt`.
    pub fn from_local_time(dt: f64, n_nodes: usize, local_time: &[Vec<f64>], alphas: &[f64]) -> Result<Self> {
        if local_time.len() != alphas.len() {
            return Err(Error::Input(format!(
                "{} delay coefficients for {} local-time series",
                alphas.len(),
                local_time.len()
            )));
        }
        if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0 && a.is_finite())) {
            return Err(Error::Input(format!("delay coefficient must be nonnegative, got {a}")));
        }
        let n = n_nodes;
        if local_time.iter().any(|l| l.len() != n) {
            return Err(Error::Input("local-time series have different lengths".into()));
        }
        let r = (0..n)
            .map(|k| {
                let delay: f64 = local_time.iter().zip(alphas).map(|(l, a)| a * l[k]).sum();
                k as f64 * dt + delay
            })
            .collect();
        Ok(TimeChangeTable { dt, alphas: alphas.to_vec(), r })
    }

    pub fn s(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn last(&self) -> f64 {
        self.r.last().copied().unwrap_or(0.0)
    }

    /// `max{k : r_k <= t}`, treating nodes within rounding of `t` as reached.
    pub fn node_at(&self, t: f64) -> usize {
        let t = t + self.snap();
        self.r.partition_point(|&r| r <= t).saturating_sub(1)
    }

    fn snap(&self) -> f64 {
        SNAP * self.dt
    }
}

/// Relative tolerance, in steps, for placing a time on the clock.
const SNAP: f64 = 1e-9;

pub fn build_time_change(up: &UndelayedPath, alphas: &[f64]) -> Result<TimeChangeTable> {
    TimeChangeTable::from_local_time(up.dt, up.values.len(), &up.local_time, alphas)
}

/// `r⁻¹(t)` under linear interpolation between clock nodes.
pub fn invert_time_change(table: &TimeChangeTable, t: f64) -> Result<f64> {
    if table.r.is_empty() || !(0.0..=table.last()).contains(&t) {
        return Err(Error::Range(format!("time {t} outside [0, {}]", table.last())));
    }
    let k = table.node_at(t);
    if k + 1 >= table.r.len() || table.r[k] == t {
        return Ok(table.s(k));
    }
    let frac = (t - table.r[k]) / (table.r[k + 1] - table.r[k]);
    Ok(table.s(k) + frac * table.dt)
}

/// State of the delayed process at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayedState {
    pub x: f64,
    pub local_time: Vec<f64>,
    /// Sticky point the process is dwelling at, if any.
    pub at_point: Option<usize>,
    /// Undelayed step covering this time.
    pub step: usize,
}

/// Evaluates `X(t)` and `L^X(t)` without materialising the whole path.
pub fn delayed_state(up: &UndelayedPath, table: &TimeChangeTable, points: &[f64], t: f64) -> Result<DelayedState> {
    if !(0.0..=table.last()).contains(&t) {
        return Err(Error::Range(format!("time {t} outside [0, {}]", table.last())));
    }
    let k = table.node_at(t);
    let mut local_time: Vec<f64> = up.local_time.iter().map(|l| l[k]).collect();
    let base = DelayedState { x: up.values[k], local_time: Vec::new(), at_point: None, step: k };
    let mut offset = t - table.r[k] - up.dt;
    if k + 1 >= up.values.len() || offset < -table.snap() {
        return Ok(DelayedState { local_time, ..base });
    }
    for (i, l) in up.local_time.iter().enumerate() {
        let inc = l[k + 1] - l[k];
        let alpha = table.alphas[i];
        if inc <= 0.0 || alpha == 0.0 {
            continue;
        }
        let dwell = alpha * inc;
        if offset < dwell - table.snap() {
            // Bounded local time holds exactly: α L ≤ t.
            local_time[i] = (l[k] + offset.max(0.0) / alpha).min(l[k + 1]).min(t / alpha);
            return Ok(DelayedState { x: points[i], local_time, at_point: Some(i), ..base });
        }
        offset -= dwell;
    }
    // Rounding left a sliver past the last dwell; the step is complete.
    for (i, l) in up.local_time.iter().enumerate() {
        local_time[i] = l[k + 1];
    }
    Ok(DelayedState { x: up.values[k + 1], local_time, at_point: None, step: k + 1 })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DelayedPath {
    pub dt: f64,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub points: Vec<f64>,
    pub alphas: Vec<f64>,
    /// `local_time[i][j]` at sticky point `i` and sample `j`.
    pub local_time: Vec<Vec<f64>>,
    /// Left Riemann sum of the at-point flags, in time units.
    pub occupation: Vec<Vec<f64>>,
    pub at_point: Vec<Vec<bool>>,
    /// Undelayed step index `k(j)` behind each sample.
    pub step_index: Vec<usize>,
}

impl DelayedPath {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.times.last().copied().unwrap_or(0.0)
    }
}

pub fn delayed_path(
    up: &UndelayedPath,
    table: &TimeChangeTable,
    points: &[f64],
    out_grid: SimGrid,
) -> Result<DelayedPath> {
    let n = out_grid.n_steps();
    let last = out_grid.time(n);
    if last > table.last() {
        return Err(Error::Range(format!("output horizon {last} exceeds time-change range {}", table.last())));
    }
    if points.len() != up.local_time.len() {
        return Err(Error::Input(format!("{} points for {} local-time series", points.len(), up.local_time.len())));
    }
    let m = points.len();
    let mut dp = DelayedPath {
        dt: out_grid.dt,
        times: Vec::with_capacity(n + 1),
        values: Vec::with_capacity(n + 1),
        points: points.to_vec(),
        alphas: table.alphas.clone(),
        local_time: vec![Vec::with_capacity(n + 1); m],
        occupation: vec![Vec::with_capacity(n + 1); m],
        at_point: vec![Vec::with_capacity(n + 1); m],
        step_index: Vec::with_capacity(n + 1),
    };
    let mut occ = vec![0.0; m];
    for j in 0..=n {
        let t = out_grid.time(j);
        let state = delayed_state(up, table, points, t)?;
        dp.times.push(t);
        dp.values.push(state.x);
        dp.step_index.push(state.step);
        for i in 0..m {
            dp.local_time[i].push(state.local_time[i]);
            dp.occupation[i].push(occ[i]);
            let flag = state.at_point == Some(i);
            dp.at_point[i].push(flag);
            if flag {
                occ[i] += out_grid.dt;
            }
        }
    }
    Ok(dp)
}

/// Simulates `Y` over `grid` and samples the delayed process on the same grid.
pub fn simulate_delayed(spec: &ValidatedSpec, grid: SimGrid, noise: NoiseStream, x0: f64) -> Result<(UndelayedPath, DelayedPath)> {
    let up = simulate_undelayed(spec, grid, noise, x0)?;
    let table = build_time_change(&up, &alphas(spec))?;
    let dp = delayed_path(&up, &table, &points(spec), grid)?;
    Ok((up, dp))
}

pub fn alphas(spec: &ProcessSpec) -> Vec<f64> {
    spec.sticky.iter().map(|p| p.alpha).collect()
}

pub fn points(spec: &ProcessSpec) -> Vec<f64> {
    spec.sticky.iter().map(|p| p.x).collect()
}

/// `|O_i(T) - α_i L_i(T)| / T` for each sticky point.
pub fn occupation_identity_report(dp: &DelayedPath) -> Vec<f64> {
    let horizon = dp.horizon();
    (0..dp.points.len())
        .map(|i| {
            let o = dp.occupation[i].last().copied().unwrap_or(0.0);
            let l = dp.local_time[i].last().copied().unwrap_or(0.0);
            if horizon > 0.0 {
                (o - dp.alphas[i] * l).abs() / horizon
            } else {
                0.0
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdeResidual {
    /// `sup_j |x_j - x_0 - RHS_j|` over the delayed samples.
    pub sup: f64,
    /// Signed residual at the final sample.
    pub last: f64,
    /// Largest single-step residual of the undelayed scheme.
    pub max_step: f64,
    /// `Σ σ(y_k)² ξ_k² dt` over the moves completed by the horizon.
    pub quadratic_variation: f64,
    /// `T - Σ α_i L_i(T)`.
    pub qv_target: f64,
}

/// Rebuilds `x_0 + ∫b dt + ∫σ dW + Σ(p_+ - p_-)L` along the path from the
/// stored noise and compares it with the simulated values.
pub fn sde_residual_check(dp: &DelayedPath, up: &UndelayedPath, spec: &ProcessSpec) -> Result<SdeResidual> {
    if up.noise.len() + 1 != up.values.len() {
        return Err(Error::Input(format!("{} noise draws for {} path values", up.noise.len(), up.values.len())));
    }
    if up.local_time.len() != spec.sticky.len() {
        return Err(Error::Input("path and spec disagree on the sticky set".into()));
    }
    let sqrt_dt = up.dt.sqrt();
    let n = up.noise.len();
    let mut rhs = Vec::with_capacity(n + 1);
    let mut qv = Vec::with_capacity(n + 1);
    rhs.push(0.0);
    qv.push(0.0);
    let (mut acc, mut acc_qv, mut max_step) = (0.0, 0.0, 0.0f64);
    for k in 0..n {
        let y = up.values[k];
        let b = spec.drift.eval(y)?;
        let s = spec.vol.eval(y)?;
        let mut inc = b * up.dt + s * sqrt_dt * up.noise[k];
        acc_qv += (s * sqrt_dt * up.noise[k]).powi(2);
        for (i, p) in spec.sticky.iter().enumerate() {
            inc += (p.p_plus - p.p_minus) * (up.local_time[i][k + 1] - up.local_time[i][k]);
        }
        max_step = max_step.max((up.values[k + 1] - y - inc).abs());
        acc += inc;
        rhs.push(acc);
        qv.push(acc_qv);
    }
    let x0 = up.values[0];
    let mut sup = 0.0f64;
    let mut last = 0.0;
    // Samples dwelling at a point sit between steps; compare at the node.
    for &k in &dp.step_index {
        last = up.values[k] - x0 - rhs[k];
        sup = sup.max(last.abs());
    }
    let k_last = dp.step_index.last().copied().unwrap_or(0);
    let delay: f64 = (0..dp.points.len()).map(|i| dp.alphas[i] * dp.local_time[i].last().copied().unwrap_or(0.0)).sum();
    Ok(SdeResidual { sup, last, max_step, quadratic_variation: qv[k_last], qv_target: dp.horizon() - delay })
}

/// Test function `f` for the Dynkin identity, with derivatives on each
/// side of the sticky points.
#[derive(Debug, Clone)]
pub struct TestFunction {
    pub f: PiecewiseFn,
    pub df: PiecewiseFn,
    pub d2f: PiecewiseFn,
}

/// Continuity tolerance for `f` at sticky points.
const CONTINUITY_TOL: f64 = 1e-12;
/// Tolerance for the generator's one-sided limits at sticky points.
const GENERATOR_CONTINUITY_TOL: f64 = 1e-6;

impl TestFunction {
    /// Differentiates `f` symbolically after splitting it at every sticky point.
    pub fn new(f: PiecewiseFn, spec: &ProcessSpec) -> Result<Self> {
        let f = spec.sticky.iter().fold(f, |f, p| f.with_breakpoint(p.x));
        let df = f.derivative().ok_or_else(|| Error::Input("test function must be symbolic".into()))?;
        let d2f = df.derivative().ok_or_else(|| Error::Input("test function must be symbolic".into()))?;
        let tf = TestFunction { f, df, d2f };
        tf.check_continuity(spec)?;
        Ok(tf)
    }

    pub fn with_derivatives(f: PiecewiseFn, df: PiecewiseFn, d2f: PiecewiseFn, spec: &ProcessSpec) -> Result<Self> {
        let split = |g: PiecewiseFn| spec.sticky.iter().fold(g, |g, p| g.with_breakpoint(p.x));
        let tf = TestFunction { f: split(f), df: split(df), d2f: split(d2f) };
        tf.check_continuity(spec)?;
        Ok(tf)
    }

    fn check_continuity(&self, spec: &ProcessSpec) -> Result<()> {
        for p in &spec.sticky {
            let (l, r) = self.f.one_sided(p.x)?;
            if (l - r).abs() > CONTINUITY_TOL {
                return Err(Error::Input(format!("invalid test function: jump of {} at {}", r - l, p.x)));
            }
        }
        Ok(())
    }

    /// `½σ²f'' + b f'` away from the sticky points.
    pub fn generator(&self, spec: &ProcessSpec, x: f64) -> Result<f64> {
        let s = spec.vol.eval(x)?;
        Ok(0.5 * s * s * self.d2f.eval(x)? + spec.drift.eval(x)? * self.df.eval(x)?)
    }

    /// Left and right limits of the generator at `x`.
    pub fn generator_one_sided(&self, spec: &ProcessSpec, x: f64) -> Result<(f64, f64)> {
        let (bl, br) = spec.drift.one_sided(x)?;
        let (sl, sr) = spec.vol.one_sided(x)?;
        let (d1l, d1r) = self.df.one_sided(x)?;
        let (d2l, d2r) = self.d2f.one_sided(x)?;
        Ok((0.5 * sl * sl * d2l + bl * d1l, 0.5 * sr * sr * d2r + br * d1r))
    }

    /// `p_+ f'(x+) - p_- f'(x-) - α 𝓛f(x)` at each sticky point, with the
    /// generator taken as the mean of its one-sided limits.
    pub fn boundary_terms(&self, spec: &ProcessSpec) -> Result<Vec<f64>> {
        spec.sticky
            .iter()
            .map(|p| {
                let (dl, dr) = self.df.one_sided(p.x)?;
                let (gl, gr) = self.generator_one_sided(spec, p.x)?;
                Ok(p.p_plus * dr - p.p_minus * dl - p.alpha * 0.5 * (gl + gr))
            })
            .collect()
    }

    /// Sticky points where the generator's one-sided limits disagree.
    pub fn generator_discontinuities(&self, spec: &ProcessSpec) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for p in &spec.sticky {
            let (l, r) = self.generator_one_sided(spec, p.x)?;
            if (l - r).abs() > GENERATOR_CONTINUITY_TOL {
                out.push(p.x);
            }
        }
        Ok(out)
    }
}

/// `f(X_T) - f(X_0) - ∫𝓛f(X)ds - Σ_i B_i L_i(T)` for one delayed path.
pub fn dynkin_residual(dp: &DelayedPath, f: &TestFunction, spec: &ProcessSpec, boundary: &[f64]) -> Result<f64> {
    let n = dp.len();
    if n == 0 {
        return Ok(0.0);
    }
    let at_point_gen: Vec<f64> = spec
        .sticky
        .iter()
        .map(|p| f.generator_one_sided(spec, p.x).map(|(l, r)| 0.5 * (l + r)))
        .collect::<Result<_>>()?;
    let mut integral = 0.0;
    for j in 0..n - 1 {
        let dwelling = (0..dp.points.len()).find(|&i| dp.at_point[i][j]);
        let g = match dwelling {
            Some(i) => at_point_gen[i],
            None => match spec.point_index(dp.values[j]) {
                Some(i) => at_point_gen[i],
                None => f.generator(spec, dp.values[j])?,
            },
        };
        integral += g * dp.dt;
    }
    let boundary_part: f64 = boundary.iter().zip(&dp.local_time).map(|(b, l)| b * l[n - 1]).sum();
    Ok(f.f.eval(dp.values[n - 1])? - f.f.eval(dp.values[0])? - integral - boundary_part)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynkinReport {
    pub mean: f64,
    pub ci95: f64,
    pub n: usize,
    /// Sticky points where `𝓛f` fails to be continuous.
    pub generator_discontinuities: Vec<f64>,
}

impl DynkinReport {
    pub fn from_residuals(residuals: &[f64], generator_discontinuities: Vec<f64>) -> Self {
        let (mean, ci95) = mean_ci95(residuals);
        DynkinReport { mean, ci95, n: residuals.len(), generator_discontinuities }
    }

    pub fn contains_zero(&self) -> bool {
        self.mean.abs() <= self.ci95
    }
}

pub fn dynkin_check(paths: &[DelayedPath], f: &TestFunction, spec: &ProcessSpec) -> Result<DynkinReport> {
    let boundary = f.boundary_terms(spec)?;
    let residuals = paths.iter().map(|dp| dynkin_residual(dp, f, spec, &boundary)).collect::<Result<Vec<_>>>()?;
    Ok(DynkinReport::from_residuals(&residuals, f.generator_discontinuities(spec)?))
}

pub(crate) fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, 1.96 * (var / n as f64).sqrt())
}

/// `exp(Σ φ(y_k)√dt ξ_k - ½Σ φ(y_k)² dt)` over the steps up to the one covering `t`.
///
/// Noise during dwells never enters `X`, so its factor is replaced by its
/// conditional mean of one.
pub fn girsanov_weight(up: &UndelayedPath, table: &TimeChangeTable, phi: &PiecewiseFn, t: f64) -> Result<f64> {
    if !(0.0..=table.last()).contains(&t) {
        return Err(Error::Range(format!("time {t} outside [0, {}]", table.last())));
    }
    let k_end = (table.node_at(t) + 1).min(up.noise.len());
    let sqrt_dt = up.dt.sqrt();
    let mut log_w = 0.0;
    for k in 0..k_end {
        let p = phi.eval(up.values[k])?;
        log_w += p * sqrt_dt * up.noise[k] - 0.5 * p * p * up.dt;
    }
    let w = log_w.exp();
    if !w.is_finite() {
        return Err(Error::Numerical { step: k_end, message: format!("weight overflow, log weight {log_w}") });
    }
    Ok(w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GirsanovEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub effective_sample_size: f64,
    pub n: usize,
    /// Effective sample size fell below 1% of `n`.
    pub diverged: bool,
}

impl GirsanovEstimate {
    /// Estimate from `(weight, g(X_t))` pairs.
    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        let products: Vec<f64> = pairs.iter().map(|(w, g)| w * g).collect();
        let (mean, ci) = mean_ci95(&products);
        let sw: f64 = pairs.iter().map(|p| p.0).sum();
        let sw2: f64 = pairs.iter().map(|p| p.0 * p.0).sum();
        let ess = if sw2 > 0.0 { sw * sw / sw2 } else { 0.0 };
        let n = pairs.len();
        GirsanovEstimate { mean, std_error: ci / 1.96, effective_sample_size: ess, n, diverged: ess < 0.01 * n as f64 }
    }
}

pub fn girsanov_reweight(
    paths: &[(UndelayedPath, TimeChangeTable)],
    spec: &ProcessSpec,
    phi: &PiecewiseFn,
    g: impl Fn(f64) -> f64,
    t: f64,
) -> Result<GirsanovEstimate> {
    let pts = points(spec);
    let pairs = paths
        .iter()
        .map(|(up, table)| {
            let w = girsanov_weight(up, table, phi, t)?;
            Ok((w, g(delayed_state(up, table, &pts, t)?.x)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GirsanovEstimate::from_pairs(&pairs))
}
