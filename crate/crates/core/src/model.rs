//! Process specifications and the compilers that produce them from
//! scale/speed pairs and from narrow-tube cross sections.

use std::ops::Deref;
use std::sync::Arc;

use crate::error::{Error, Result, Violation, ViolationKind};
use crate::expr::{build, Expr};
use crate::piecewise::{PiecewiseFn, Segment};

/// Tolerance on `p_plus + p_minus = 1`.
pub const PROBABILITY_TOLERANCE: f64 = 1e-12;

/// One-sided scale derivatives below this are rejected by [`feller_compile`].
pub const MIN_SCALE_DERIVATIVE: f64 = 1e-12;

/// Default number of probe points for ellipticity checks.
pub const DEFAULT_PROBE_POINTS: usize = 10_000;

const MAX_REPORTED_PER_KIND: usize = 32;

/// Partial reflection and delay at a single point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StickyPoint {
    pub x: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    /// Delay: time spent at `x` per unit of local time.
    pub alpha: f64,
}

impl StickyPoint {
    pub fn new(x: f64, p_plus: f64, alpha: f64) -> Self {
        StickyPoint { x, p_plus, p_minus: 1.0 - p_plus, alpha }
    }

    pub fn symmetric(x: f64, alpha: f64) -> Self {
        StickyPoint { x, p_plus: 0.5, p_minus: 0.5, alpha }
    }

    /// Mean signed displacement factor `p_+ - p_-` of the reflection term.
    pub fn skewness(&self) -> f64 {
        self.p_plus - self.p_minus
    }

    fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let loc = Some(self.x);
        if !(self.x.is_finite() && self.p_plus.is_finite() && self.p_minus.is_finite() && self.alpha.is_finite()) {
            out.push(Violation::new(ViolationKind::NonFinite, loc, "non-finite sticky point parameter"));
            return out;
        }
        if (self.p_plus + self.p_minus - 1.0).abs() > PROBABILITY_TOLERANCE {
            out.push(Violation::new(
                ViolationKind::ProbabilitySum,
                loc,
                format!("p_+ + p_- != 1 ({} + {})", self.p_plus, self.p_minus),
            ));
        }
        if !(0.0..=1.0).contains(&self.p_plus) || !(0.0..=1.0).contains(&self.p_minus) {
            out.push(Violation::new(ViolationKind::ProbabilityRange, loc, "p_+ and p_- must lie in [0, 1]"));
        }
        if self.alpha < 0.0 {
            out.push(Violation::new(ViolationKind::NegativeDelay, loc, format!("alpha = {} < 0", self.alpha)));
        }
        out
    }
}

/// Drift and volatility plus a finite set of sticky/skew points.
#[derive(Debug, Clone)]
pub struct ProcessSpec {
    pub drift: PiecewiseFn,
    pub vol: PiecewiseFn,
    pub sticky: Vec<StickyPoint>,
    /// Lower bound `c` on `vol(x)^2`.
    pub ellipticity: f64,
}

impl ProcessSpec {
    /// Sticky locations are inserted as breakpoints of both coefficients.
    pub fn new(drift: PiecewiseFn, vol: PiecewiseFn, sticky: Vec<StickyPoint>, ellipticity: f64) -> Self {
        let (drift, vol) = sticky
            .iter()
            .fold((drift, vol), |(d, v), p| (d.with_breakpoint(p.x), v.with_breakpoint(p.x)));
        ProcessSpec { drift, vol, sticky, ellipticity }
    }

    /// Constant coefficients with the given sticky points.
    pub fn constant(drift: f64, vol: f64, sticky: Vec<StickyPoint>) -> Self {
        let c = if vol == 0.0 { 1.0 } else { vol * vol };
        Self::new(PiecewiseFn::constant(drift), PiecewiseFn::constant(vol), sticky, c)
    }

    /// Ellipticity taken just below the smallest `vol^2` seen on `probe`,
    /// so validation on the same grid only rejects degenerate volatility.
    pub fn with_probed_ellipticity(drift: PiecewiseFn, vol: PiecewiseFn, sticky: Vec<StickyPoint>, probe: &[f64]) -> Self {
        let min_sq = probe
            .iter()
            .filter_map(|&x| vol.eval(x).ok())
            .map(|s| s * s)
            .fold(f64::INFINITY, f64::min);
        let c = if min_sq.is_finite() && min_sq > 0.0 { min_sq * (1.0 - 1e-9) } else { 1.0 };
        Self::new(drift, vol, sticky, c)
    }

    /// Symmetric sticky Brownian motion at the origin.
    pub fn sticky_brownian(alpha: f64) -> Self {
        Self::constant(0.0, 1.0, vec![StickyPoint::symmetric(0.0, alpha)])
    }

    pub fn point_index(&self, x: f64) -> Option<usize> {
        self.sticky.iter().position(|p| p.x == x)
    }

    /// Same coefficients and sticky points with drift replaced.
    pub fn with_drift(&self, drift: PiecewiseFn) -> Self {
        Self::new(drift, self.vol.clone(), self.sticky.clone(), self.ellipticity)
    }
}

/// A [`ProcessSpec`] that passed [`validate_process_spec`].
#[derive(Debug, Clone)]
pub struct ValidatedSpec {
    spec: ProcessSpec,
    sigma_max: f64,
}

impl ValidatedSpec {
    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn into_inner(self) -> ProcessSpec {
        self.spec
    }

    /// Largest `|vol|` seen on the probe grid and at breakpoint limits.
    pub fn sigma_max(&self) -> f64 {
        self.sigma_max
    }
}

impl Deref for ValidatedSpec {
    type Target = ProcessSpec;
    fn deref(&self) -> &ProcessSpec {
        &self.spec
    }
}

/// Uniform grid of `n` points on `[lo, hi]`.
pub fn probe_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (lo + hi)],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

struct Collector {
    out: Vec<Violation>,
    counts: Vec<(ViolationKind, usize)>,
}

impl Collector {
    fn new() -> Self {
        Collector { out: Vec::new(), counts: Vec::new() }
    }

    fn push(&mut self, v: Violation) {
        let n = match self.counts.iter_mut().find(|(k, _)| *k == v.kind) {
            Some((_, n)) => {
                *n += 1;
                *n
            }
            None => {
                self.counts.push((v.kind, 1));
                1
            }
        };
        if n <= MAX_REPORTED_PER_KIND {
            self.out.push(v);
        }
    }

    fn extend(&mut self, vs: Vec<Violation>) {
        vs.into_iter().for_each(|v| self.push(v));
    }

    fn finish(mut self) -> Vec<Violation> {
        for (kind, n) in &self.counts {
            if *n > MAX_REPORTED_PER_KIND {
                self.out.push(Violation::new(
                    *kind,
                    None,
                    format!("{} further violations of this kind not listed", n - MAX_REPORTED_PER_KIND),
                ));
            }
        }
        self.out
    }
}

/// Checks every invariant of `spec` on `probe_grid` and at the one-sided
/// limits of the volatility at its breakpoints.
pub fn validate_process_spec(spec: ProcessSpec, probe_grid: &[f64]) -> Result<ValidatedSpec> {
    let mut c = Collector::new();
    if probe_grid.is_empty() {
        c.push(Violation::new(ViolationKind::EmptyProbeGrid, None, "probe grid is empty"));
    }
    if !(spec.ellipticity > 0.0 && spec.ellipticity.is_finite()) {
        c.push(Violation::new(ViolationKind::Ellipticity, None, "ellipticity constant must be positive"));
    }
    c.extend(spec.drift.violations());
    c.extend(spec.vol.violations());
    for (i, p) in spec.sticky.iter().enumerate() {
        c.extend(p.violations());
        if i > 0 && !(spec.sticky[i - 1].x < p.x) {
            c.push(Violation::new(
                ViolationKind::StickyOrder,
                Some(p.x),
                "sticky locations must be strictly increasing",
            ));
        }
        for (name, f) in [("drift", &spec.drift), ("vol", &spec.vol)] {
            if f.breakpoint_index(p.x).is_none() {
                c.push(Violation::new(
                    ViolationKind::IllOrderedBreakpoints,
                    Some(p.x),
                    format!("sticky point is not a breakpoint of {name}"),
                ));
            }
        }
    }

    let mut sigma_max: f64 = 0.0;
    let mut check_sigma = |c: &mut Collector, x: f64, s: Result<f64>, what: &str| match s {
        Ok(s) => {
            sigma_max = sigma_max.max(s.abs());
            if s * s < spec.ellipticity {
                c.push(Violation::new(
                    ViolationKind::Ellipticity,
                    Some(x),
                    format!("{what}: vol^2 = {} < c = {}", s * s, spec.ellipticity),
                ));
            }
        }
        Err(e) => c.push(Violation::new(ViolationKind::NonFinite, Some(x), format!("{what}: {e}"))),
    };
    for &x in probe_grid {
        check_sigma(&mut c, x, spec.vol.eval(x), "vol");
        if let Err(e) = spec.drift.eval(x) {
            c.push(Violation::new(ViolationKind::NonFinite, Some(x), format!("drift: {e}")));
        }
    }
    for (i, &b) in spec.vol.breakpoints().iter().enumerate() {
        check_sigma(&mut c, b, spec.vol.left_limit(i), "vol(x-)");
        check_sigma(&mut c, b, spec.vol.right_limit(i), "vol(x+)");
    }
    for (i, &b) in spec.drift.breakpoints().iter().enumerate() {
        for lim in [spec.drift.left_limit(i), spec.drift.right_limit(i)] {
            if let Err(e) = lim {
                c.push(Violation::new(ViolationKind::NonFinite, Some(b), format!("drift limit: {e}")));
            }
        }
    }

    let violations = c.finish();
    if violations.is_empty() {
        Ok(ValidatedSpec { spec, sigma_max })
    } else {
        Err(Error::Spec(violations))
    }
}

/// Feller's characterization: scale `u` (continuous, strictly increasing)
/// and speed `v` (right-continuous, strictly increasing).
#[derive(Debug, Clone)]
pub struct ScaleSpeedSpec {
    pub u: PiecewiseFn,
    pub v: PiecewiseFn,
    /// Points where `u` has a kink or `v` a jump.
    pub jumps: Vec<f64>,
}

impl ScaleSpeedSpec {
    /// Jump set defaulting to every breakpoint of `u` and `v`.
    pub fn with_breakpoints_as_jumps(u: PiecewiseFn, v: PiecewiseFn) -> Self {
        let mut jumps: Vec<f64> = u.breakpoints().iter().chain(v.breakpoints()).copied().collect();
        jumps.sort_by(f64::total_cmp);
        jumps.dedup();
        ScaleSpeedSpec { u, v, jumps }
    }
}

fn diff_step(x: f64) -> f64 {
    1e-6f64.max(1e-6 * x.abs())
}

fn second_diff_step(x: f64) -> f64 {
    1e-4f64.max(1e-4 * x.abs())
}

fn central_first(seg: &Segment, x: f64) -> Result<f64> {
    let h = diff_step(x);
    Ok((seg.eval(x + h)? - seg.eval(x - h)?) / (2.0 * h))
}

fn central_second(seg: &Segment, x: f64) -> Result<f64> {
    let h = second_diff_step(x);
    Ok((seg.eval(x + h)? - 2.0 * seg.eval(x)? + seg.eval(x - h)?) / (h * h))
}

/// Second-order one-sided difference; `dir` is +1 (right) or -1 (left).
fn one_sided_first(seg: &Segment, x: f64, fx: f64, dir: f64) -> Result<f64> {
    let h = diff_step(x) * dir;
    Ok((-3.0 * fx + 4.0 * seg.eval(x + h)? - seg.eval(x + 2.0 * h)?) / (2.0 * h))
}

/// One-sided first derivatives of `f` at breakpoint `i`.
fn one_sided_derivatives(f: &PiecewiseFn, i: usize) -> Result<(f64, f64)> {
    let b = f.breakpoints()[i];
    match f.derivative() {
        Some(d) => Ok((d.segments()[i].eval(b)?, d.segments()[i + 1].eval(b)?)),
        None => {
            let left = one_sided_first(&f.segments()[i], b, f.left_limit(i)?, -1.0)?;
            let right = one_sided_first(&f.segments()[i + 1], b, f.right_limit(i)?, 1.0)?;
            Ok((left, right))
        }
    }
}

/// Derivatives of `f` at a point that may or may not be a breakpoint.
fn derivatives_at(f: &PiecewiseFn, x: f64) -> Result<(f64, f64)> {
    match f.breakpoint_index(x) {
        Some(i) => one_sided_derivatives(f, i),
        None => {
            let seg = &f.segments()[f.segment_index(x)];
            let d = match seg.derivative() {
                Some(d) => d.eval(x)?,
                None => central_first(seg, x)?,
            };
            Ok((d, d))
        }
    }
}

fn merged_breakpoints(a: &PiecewiseFn, b: &PiecewiseFn) -> Vec<f64> {
    let mut all: Vec<f64> = a.breakpoints().iter().chain(b.breakpoints()).copied().collect();
    all.sort_by(f64::total_cmp);
    all.dedup();
    all
}

/// A point strictly inside merged segment `k`.
fn interior_point(breaks: &[f64], k: usize) -> f64 {
    match (k.checked_sub(1).map(|j| breaks[j]), breaks.get(k)) {
        (None, None) => 0.0,
        (None, Some(&hi)) => hi - 1.0,
        (Some(lo), None) => lo + 1.0,
        (Some(lo), Some(&hi)) => 0.5 * (lo + hi),
    }
}

/// Maps a scale/speed pair to drift `-u''/((u')^2 v')`, volatility
/// `sqrt(2/(u' v'))`, and one sticky point per element of the jump set.
///
/// Symbolic segments are differentiated exactly; evaluator segments fall
/// back to finite differences.
pub fn feller_compile(ss: &ScaleSpeedSpec, probe: &[f64]) -> Result<ProcessSpec> {
    let (u, v) = (&ss.u, &ss.v);
    let mut c = Collector::new();
    c.extend(u.violations());
    c.extend(v.violations());
    if !c.out.is_empty() {
        return Err(Error::Spec(c.finish()));
    }

    // u continuous everywhere.
    for (i, &b) in u.breakpoints().iter().enumerate() {
        let (l, r) = (u.left_limit(i)?, u.right_limit(i)?);
        if (l - r).abs() > 1e-9 * (1.0 + l.abs().max(r.abs())) {
            c.push(Violation::new(ViolationKind::Continuity, Some(b), format!("u jumps from {l} to {r}")));
        }
    }

    let mut jumps = ss.jumps.clone();
    jumps.sort_by(f64::total_cmp);
    jumps.dedup();
    for &x in &jumps {
        if u.breakpoint_index(x).is_none() && v.breakpoint_index(x).is_none() {
            c.push(Violation::new(
                ViolationKind::InconsistentJumpSet,
                Some(x),
                "jump point is not a breakpoint of u or v",
            ));
        }
    }
    // Breakpoints outside the jump set must be removable.
    for b in merged_breakpoints(u, v) {
        if jumps.contains(&b) {
            continue;
        }
        let (ul, ur) = derivatives_at(u, b)?;
        let (vl, vr) = v.one_sided(b)?;
        if (ul - ur).abs() > 1e-9 * (1.0 + ul.abs()) || (vl - vr).abs() > 1e-9 * (1.0 + vl.abs()) {
            c.push(Violation::new(
                ViolationKind::InconsistentJumpSet,
                Some(b),
                "u' or v is discontinuous at a point missing from the jump set",
            ));
        }
    }

    let u1 = u.derivative();
    let u2 = u1.as_ref().and_then(PiecewiseFn::derivative);
    let v1 = v.derivative();

    let du = |x: f64| -> Result<f64> {
        match &u1 {
            Some(d) => d.eval(x),
            None => central_first(&u.segments()[u.segment_index(x)], x),
        }
    };
    let dv = |x: f64| -> Result<f64> {
        match &v1 {
            Some(d) => d.eval(x),
            None => central_first(&v.segments()[v.segment_index(x)], x),
        }
    };
    for &x in probe {
        if u.breakpoint_index(x).is_some() || v.breakpoint_index(x).is_some() {
            continue;
        }
        match (du(x), dv(x)) {
            (Ok(a), Ok(b)) => {
                if !(a > 0.0) {
                    c.push(Violation::new(ViolationKind::Monotonicity, Some(x), format!("u' = {a} <= 0")));
                }
                if !(b > 0.0) {
                    c.push(Violation::new(ViolationKind::Monotonicity, Some(x), format!("v' = {b} <= 0")));
                }
            }
            (Err(e), _) | (_, Err(e)) => {
                c.push(Violation::new(ViolationKind::NonFinite, Some(x), e.to_string()));
            }
        }
    }

    let mut sticky = Vec::with_capacity(jumps.len());
    for &x in &jumps {
        let (ul, ur) = derivatives_at(u, x)?;
        let (vl, vr) = v.one_sided(x)?;
        if ul < MIN_SCALE_DERIVATIVE || ur < MIN_SCALE_DERIVATIVE {
            c.push(Violation::new(
                ViolationKind::DegenerateDerivative,
                Some(x),
                format!("one-sided scale derivatives ({ul}, {ur}) below {MIN_SCALE_DERIVATIVE}"),
            ));
            continue;
        }
        if vr < vl {
            c.push(Violation::new(ViolationKind::Monotonicity, Some(x), format!("v decreases from {vl} to {vr}")));
            continue;
        }
        let sum = ur + ul;
        sticky.push(StickyPoint { x, p_plus: ul / sum, p_minus: ur / sum, alpha: (vr - vl) * ur * ul / sum });
    }
    let violations = c.finish();
    if !violations.is_empty() {
        return Err(Error::Spec(violations));
    }

    let breaks = merged_breakpoints(u, v);
    let mut drift_segs = Vec::with_capacity(breaks.len() + 1);
    let mut vol_segs = Vec::with_capacity(breaks.len() + 1);
    for k in 0..=breaks.len() {
        let mid = interior_point(&breaks, k);
        let (iu, iv) = (u.segment_index(mid), v.segment_index(mid));
        let symbolic = (&u1, &u2, &v1);
        if let (Some(u1), Some(u2), Some(v1)) = symbolic {
            let a1 = u1.segments()[iu].as_expr().expect("symbolic");
            let a2 = u2.segments()[iu].as_expr().expect("symbolic");
            let b1 = v1.segments()[iv].as_expr().expect("symbolic");
            let denom = build::mul(build::pow(a1.clone(), Expr::num(2.0)), b1.clone());
            drift_segs.push(Segment::from_expr(build::negate(build::div(a2, denom))));
            vol_segs.push(Segment::from_expr(build::sqrt(build::div(Expr::num(2.0), build::mul(a1, b1)))));
        } else {
            let useg = u.segments()[iu].clone();
            let vseg = v.segments()[iv].clone();
            let (us, vs) = (useg.clone(), vseg.clone());
            drift_segs.push(Segment::Func(Arc::new(move |x| {
                let a1 = central_first(&useg, x).unwrap_or(f64::NAN);
                let a2 = central_second(&useg, x).unwrap_or(f64::NAN);
                let b1 = central_first(&vseg, x).unwrap_or(f64::NAN);
                -a2 / (a1 * a1 * b1)
            })));
            vol_segs.push(Segment::Func(Arc::new(move |x| {
                let a1 = central_first(&us, x).unwrap_or(f64::NAN);
                let b1 = central_first(&vs, x).unwrap_or(f64::NAN);
                (2.0 / (a1 * b1)).sqrt()
            })));
        }
    }
    let drift = PiecewiseFn::new(breaks.clone(), drift_segs)?;
    let vol = PiecewiseFn::new(breaks, vol_segs)?;

    let mut min_sq = f64::INFINITY;
    for &x in probe {
        if let Ok(s) = vol.eval(x) {
            min_sq = min_sq.min(s * s);
        }
    }
    for i in 0..vol.breakpoints().len() {
        for s in [vol.left_limit(i), vol.right_limit(i)].into_iter().flatten() {
            min_sq = min_sq.min(s * s);
        }
    }
    let ellipticity = if min_sq.is_finite() && min_sq > 0.0 { min_sq * (1.0 - 1e-9) } else { 1.0 };
    Ok(ProcessSpec::new(drift, vol, sticky, ellipticity))
}

/// Narrow-tube data: smooth positive cross section `v1`, step height
/// `beta` to the right of the origin and point mass `mu` at the origin.
#[derive(Debug, Clone)]
pub struct TubeSpec {
    pub v1: PiecewiseFn,
    pub beta: f64,
    pub mu: f64,
}

/// Limiting one-dimensional process of the tube: unit volatility, drift
/// `½ (ln V1)'` left of the origin and `½ (ln(V1 + β))'` right of it, and a
/// single sticky point at 0.
pub fn tube_compile(ts: &TubeSpec, probe: &[f64]) -> Result<ProcessSpec> {
    let mut c = Collector::new();
    c.extend(ts.v1.violations());
    if !(ts.beta >= 0.0 && ts.beta.is_finite()) {
        c.push(Violation::new(ViolationKind::InvalidTube, None, format!("beta = {} must be >= 0", ts.beta)));
    }
    if !(ts.mu >= 0.0 && ts.mu.is_finite()) {
        c.push(Violation::new(ViolationKind::InvalidTube, None, format!("mu = {} must be >= 0", ts.mu)));
    }
    let gamma = ts.v1.eval(0.0)?;
    if !(gamma > 0.0) {
        c.push(Violation::new(ViolationKind::InvalidTube, Some(0.0), format!("V1(0) = {gamma} must be > 0")));
    }
    for &x in probe {
        match ts.v1.eval(x) {
            Ok(v) if v > 0.0 => {}
            Ok(v) => c.push(Violation::new(ViolationKind::InvalidTube, Some(x), format!("V1 = {v} <= 0"))),
            Err(e) => c.push(Violation::new(ViolationKind::NonFinite, Some(x), e.to_string())),
        }
    }
    let violations = c.finish();
    if !violations.is_empty() {
        return Err(Error::Spec(violations));
    }

    let beta = ts.beta;
    let single_symbolic = ts.v1.breakpoints().is_empty() && ts.v1.is_symbolic();
    let (left, right) = if single_symbolic {
        let v1 = ts.v1.segments()[0].as_expr().expect("symbolic");
        let d = v1.derivative();
        let half = Expr::num(0.5);
        let left = build::mul(half.clone(), build::div(d.clone(), v1.clone()));
        let right = build::mul(half, build::div(d, build::add(v1, Expr::num(beta))));
        (Segment::from_expr(left), Segment::from_expr(right))
    } else {
        let (fl, fr) = (ts.v1.clone(), ts.v1.clone());
        let deriv = |f: &PiecewiseFn, x: f64| -> f64 {
            let h = diff_step(x);
            match (f.eval(x + h), f.eval(x - h)) {
                (Ok(a), Ok(b)) => (a - b) / (2.0 * h),
                _ => f64::NAN,
            }
        };
        let left = Segment::Func(Arc::new(move |x| 0.5 * deriv(&fl, x) / fl.eval(x).unwrap_or(f64::NAN)));
        let right = Segment::Func(Arc::new(move |x| {
            0.5 * deriv(&fr, x) / (fr.eval(x).unwrap_or(f64::NAN) + beta)
        }));
        (left, right)
    };
    let drift = PiecewiseFn::new(vec![0.0], vec![left, right])?;
    let denom = 2.0 * gamma + beta;
    let point = StickyPoint {
        x: 0.0,
        p_plus: (gamma + beta) / denom,
        p_minus: gamma / denom,
        alpha: 2.0 * ts.mu / denom,
    };
    Ok(ProcessSpec::new(drift, PiecewiseFn::constant(1.0), vec![point], 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> Vec<f64> {
        probe_grid(-3.0, 3.0, 601)
    }

    #[test]
    fn constant_sticky_spec_is_valid() {
        let spec = ProcessSpec::new(
            PiecewiseFn::constant(0.0),
            PiecewiseFn::constant(1.0),
            vec![StickyPoint::symmetric(0.0, 1.0)],
            0.5,
        );
        let v = validate_process_spec(spec, &grid()).unwrap();
        assert_eq!(v.sigma_max(), 1.0);
        assert_eq!(v.drift.breakpoints(), &[0.0]);
    }

    #[test]
    fn probability_sum_violation() {
        let mut p = StickyPoint::symmetric(0.0, 1.0);
        p.p_plus = 0.6;
        p.p_minus = 0.6;
        let spec = ProcessSpec::constant(0.0, 1.0, vec![p]);
        let err = validate_process_spec(spec, &grid()).unwrap_err();
        assert!(err.violations().iter().any(|v| v.kind == ViolationKind::ProbabilitySum));
        assert!(err.to_string().contains("p_+ + p_- != 1"));
    }

    #[test]
    fn ellipticity_violation_near_zero() {
        let spec = ProcessSpec::new(PiecewiseFn::constant(0.0), PiecewiseFn::parse("x").unwrap(), vec![], 0.1);
        let err = validate_process_spec(spec, &probe_grid(0.0, 1.0, 101)).unwrap_err();
        let locs: Vec<f64> = err
            .violations()
            .iter()
            .filter(|v| v.kind == ViolationKind::Ellipticity)
            .filter_map(|v| v.location)
            .collect();
        assert!(!locs.is_empty());
        assert!(locs.iter().all(|&x| x * x < 0.1 + 1e-12));
        assert!(locs.contains(&0.0));
    }

    #[test]
    fn other_violations() {
        let mut spec = ProcessSpec::constant(0.0, 1.0, vec![StickyPoint::new(1.0, 0.5, -1.0)]);
        spec.sticky.push(StickyPoint::symmetric(0.0, 0.0));
        let err = validate_process_spec(spec, &[]).unwrap_err();
        let kinds: Vec<_> = err.violations().iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::NegativeDelay));
        assert!(kinds.contains(&ViolationKind::StickyOrder));
        assert!(kinds.contains(&ViolationKind::EmptyProbeGrid));
        let spec = ProcessSpec::new(PiecewiseFn::parse("1/x").unwrap(), PiecewiseFn::constant(1.0), vec![], 1.0);
        let err = validate_process_spec(spec, &[-1.0, 0.0, 1.0]).unwrap_err();
        assert_eq!(err.violations()[0].kind, ViolationKind::NonFinite);
        assert_eq!(err.violations()[0].location, Some(0.0));
    }

    #[test]
    fn feller_identity_case() {
        let ss = ScaleSpeedSpec::with_breakpoints_as_jumps(PiecewiseFn::parse("x").unwrap(), PiecewiseFn::parse("x").unwrap());
        let spec = feller_compile(&ss, &grid()).unwrap();
        assert!(spec.sticky.is_empty());
        assert!(matches!(spec.drift.segments()[0], Segment::Const(b) if b == 0.0));
        assert!(matches!(spec.vol.segments()[0], Segment::Const(s) if s == 2f64.sqrt()));
    }

    #[test]
    fn feller_skew_case() {
        let ss = ScaleSpeedSpec::with_breakpoints_as_jumps(
            PiecewiseFn::parse("[x, 0: 3*x]").unwrap(),
            PiecewiseFn::parse("x").unwrap(),
        );
        let spec = feller_compile(&ss, &grid()).unwrap();
        assert_eq!(spec.sticky, vec![StickyPoint { x: 0.0, p_plus: 0.25, p_minus: 0.75, alpha: 0.0 }]);
        // Generator (1/v') d/dx (1/u') d/dx: vol^2 = 2/(u'v').
        assert_eq!(spec.vol.eval(-1.0).unwrap(), 2f64.sqrt());
        assert_eq!(spec.vol.eval(1.0).unwrap(), (2.0f64 / 3.0).sqrt());
    }

    #[test]
    fn feller_delay_case() {
        let ss = ScaleSpeedSpec::with_breakpoints_as_jumps(
            PiecewiseFn::parse("x").unwrap(),
            PiecewiseFn::parse("[x, 0: x + 2]").unwrap(),
        );
        let spec = feller_compile(&ss, &grid()).unwrap();
        assert_eq!(spec.sticky, vec![StickyPoint { x: 0.0, p_plus: 0.5, p_minus: 0.5, alpha: 1.0 }]);
    }

    #[test]
    fn feller_drift_from_curved_scale() {
        // u = exp(2x): u' = 2e^{2x}, u'' = 4e^{2x}; v = x: b = -4e^{2x}/(4e^{4x}) = -e^{-2x}.
        let ss = ScaleSpeedSpec::with_breakpoints_as_jumps(
            PiecewiseFn::parse("exp(2*x)").unwrap(),
            PiecewiseFn::parse("x").unwrap(),
        );
        let spec = feller_compile(&ss, &grid()).unwrap();
        for x in [-1.0, 0.0, 0.5] {
            let b = spec.drift.eval(x).unwrap();
            assert!((b + (-2.0 * x).exp()).abs() < 1e-12);
        }
    }

    #[test]
    fn feller_numeric_fallback_agrees_with_symbolic() {
        let u = PiecewiseFn::new(
            vec![0.0],
            vec![
                Segment::Func(Arc::new(|x: f64| x + 0.1 * x * x * x)),
                Segment::Func(Arc::new(|x: f64| 3.0 * x + x * x)),
            ],
        )
        .unwrap();
        let v = PiecewiseFn::new(
            vec![0.0],
            vec![Segment::Func(Arc::new(|x: f64| x)), Segment::Func(Arc::new(|x: f64| x + 2.0))],
        )
        .unwrap();
        let numeric = feller_compile(&ScaleSpeedSpec::with_breakpoints_as_jumps(u, v), &probe_grid(-1.0, 1.0, 41)).unwrap();
        let symbolic = feller_compile(
            &ScaleSpeedSpec::with_breakpoints_as_jumps(
                PiecewiseFn::parse("[x + 0.1*x^3, 0: 3*x + x^2]").unwrap(),
                PiecewiseFn::parse("[x, 0: x + 2]").unwrap(),
            ),
            &probe_grid(-1.0, 1.0, 41),
        )
        .unwrap();
        let (pn, ps) = (numeric.sticky[0], symbolic.sticky[0]);
        assert!((pn.p_plus - ps.p_plus).abs() < 1e-8);
        assert!((pn.alpha - ps.alpha).abs() < 1e-8);
        for x in [-0.7, -0.2, 0.3, 0.9] {
            let (bn, bs) = (numeric.drift.eval(x).unwrap(), symbolic.drift.eval(x).unwrap());
            assert!((bn - bs).abs() < 1e-5, "{x}: {bn} vs {bs}");
            let (sn, ss) = (numeric.vol.eval(x).unwrap(), symbolic.vol.eval(x).unwrap());
            assert!((sn - ss).abs() < 1e-8);
        }
    }

    #[test]
    fn feller_errors() {
        let decreasing = ScaleSpeedSpec::with_breakpoints_as_jumps(PiecewiseFn::parse("-x").unwrap(), PiecewiseFn::parse("x").unwrap());
        let err = feller_compile(&decreasing, &grid()).unwrap_err();
        assert!(err.violations().iter().any(|v| v.kind == ViolationKind::Monotonicity));

        let stray = ScaleSpeedSpec {
            u: PiecewiseFn::parse("x").unwrap(),
            v: PiecewiseFn::parse("x").unwrap(),
            jumps: vec![0.5],
        };
        let err = feller_compile(&stray, &grid()).unwrap_err();
        assert_eq!(err.violations()[0].kind, ViolationKind::InconsistentJumpSet);

        let missing = ScaleSpeedSpec {
            u: PiecewiseFn::parse("[x, 0: 3*x]").unwrap(),
            v: PiecewiseFn::parse("x").unwrap(),
            jumps: vec![],
        };
        assert!(feller_compile(&missing, &grid()).is_err());

        let broken = ScaleSpeedSpec::with_breakpoints_as_jumps(
            PiecewiseFn::parse("[x, 0: x + 1]").unwrap(),
            PiecewiseFn::parse("x").unwrap(),
        );
        let err = feller_compile(&broken, &grid()).unwrap_err();
        assert_eq!(err.violations()[0].kind, ViolationKind::Continuity);

        let flat = ScaleSpeedSpec::with_breakpoints_as_jumps(
            PiecewiseFn::parse("[1e-14*x, 0: x]").unwrap(),
            PiecewiseFn::parse("x").unwrap(),
        );
        let err = feller_compile(&flat, &probe_grid(0.5, 1.0, 3)).unwrap_err();
        assert!(err.violations().iter().any(|v| v.kind == ViolationKind::DegenerateDerivative));
    }

    #[test]
    fn tube_brownian_case() {
        let ts = TubeSpec { v1: PiecewiseFn::constant(1.0), beta: 0.0, mu: 0.0 };
        let spec = tube_compile(&ts, &grid()).unwrap();
        assert_eq!(spec.sticky, vec![StickyPoint { x: 0.0, p_plus: 0.5, p_minus: 0.5, alpha: 0.0 }]);
        assert_eq!(spec.drift.eval(-1.0).unwrap(), 0.0);
        assert_eq!(spec.drift.eval(1.0).unwrap(), 0.0);
    }

    #[test]
    fn tube_skew_sticky_case() {
        let ts = TubeSpec { v1: PiecewiseFn::constant(1.0), beta: 2.0, mu: 1.0 };
        let spec = tube_compile(&ts, &grid()).unwrap();
        assert_eq!(spec.sticky, vec![StickyPoint { x: 0.0, p_plus: 0.75, p_minus: 0.25, alpha: 0.5 }]);
        assert_eq!(spec.drift.eval(-0.5).unwrap(), 0.0);
        assert_eq!(spec.drift.eval(0.5).unwrap(), 0.0);
    }

    #[test]
    fn tube_exponential_cross_section() {
        let ts = TubeSpec { v1: PiecewiseFn::parse("exp(x)").unwrap(), beta: 0.0, mu: 0.0 };
        let spec = tube_compile(&ts, &grid()).unwrap();
        for x in [-2.0, -0.1, 0.0, 0.1, 2.0] {
            assert!((spec.drift.eval(x).unwrap() - 0.5).abs() < 1e-15);
        }
        let numeric = TubeSpec { v1: PiecewiseFn::from_fn(f64::exp), beta: 0.0, mu: 0.0 };
        let spec = tube_compile(&numeric, &grid()).unwrap();
        assert!((spec.drift.eval(1.0).unwrap() - 0.5).abs() < 1e-8);
    }

    #[test]
    fn tube_rejects_nonpositive_cross_section() {
        let ts = TubeSpec { v1: PiecewiseFn::parse("x").unwrap(), beta: 0.0, mu: 0.0 };
        let err = tube_compile(&ts, &grid()).unwrap_err();
        assert_eq!(err.violations()[0].kind, ViolationKind::InvalidTube);
    }

    proptest! {
        #[test]
        fn scale_factor_cancels_in_skew(a in 0.01f64..100.0, b in 0.01f64..100.0, k in -20i32..20, c in 0.001f64..1000.0) {
            let compile = |scale: f64| {
                let u = PiecewiseFn::parse(&format!("[{}*x, 0: {}*x]", a * scale, b * scale)).unwrap();
                let ss = ScaleSpeedSpec::with_breakpoints_as_jumps(u, PiecewiseFn::parse("x").unwrap());
                feller_compile(&ss, &[-1.0, 1.0]).unwrap().sticky[0]
            };
            let base = compile(1.0);
            let pow2 = compile(2f64.powi(k));
            prop_assert_eq!(base.p_plus, pow2.p_plus);
            prop_assert_eq!(base.p_minus, pow2.p_minus);
            let scaled = compile(c);
            prop_assert!((base.p_plus - scaled.p_plus).abs() <= 4.0 * f64::EPSILON);
        }

        #[test]
        fn tube_output_is_always_valid(beta in 0.0f64..50.0, mu in 0.0f64..50.0, g in 0.01f64..10.0, s in -1.0f64..1.0) {
            let v1 = PiecewiseFn::parse(&format!("{g}*exp({s}*x)")).unwrap();
            let spec = tube_compile(&TubeSpec { v1, beta, mu }, &grid()).unwrap();
            let p = spec.sticky[0];
            prop_assert!(p.p_plus >= 0.5);
            prop_assert!((p.p_plus + p.p_minus - 1.0).abs() <= PROBABILITY_TOLERANCE);
            prop_assert!(validate_process_spec(spec, &grid()).is_ok());
        }
    }
}
