//! Piecewise real functions with explicit breakpoints.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result, Violation, ViolationKind};
use crate::expr::{Expr, Expression};

pub type Evaluator = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Evaluator for one open segment.
#[derive(Clone)]
pub enum Segment {
    Const(f64),
    Expr(Expr),
    Func(Evaluator),
}

impl Segment {
    #[inline]
    pub fn eval(&self, x: f64) -> Result<f64> {
        match self {
            Segment::Const(c) => Ok(*c),
            Segment::Expr(e) => e.eval(x),
            Segment::Func(f) => {
                let v = f(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Eval { offset: 0, x, message: "non-finite value from evaluator".into() })
                }
            }
        }
    }

    /// Symbolic derivative, when the segment is symbolic.
    pub fn derivative(&self) -> Option<Segment> {
        match self {
            Segment::Const(_) => Some(Segment::Const(0.0)),
            Segment::Expr(e) => Some(Segment::from_expr(e.derivative())),
            Segment::Func(_) => None,
        }
    }

    pub fn from_expr(e: Expr) -> Segment {
        match e.as_const() {
            Some(c) => Segment::Const(c),
            None => Segment::Expr(e),
        }
    }

    pub fn as_expr(&self) -> Option<Expr> {
        match self {
            Segment::Const(c) => Some(Expr::num(*c)),
            Segment::Expr(e) => Some(e.clone()),
            Segment::Func(_) => None,
        }
    }
}

impl fmt::Debug for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Segment::Const(c) => write!(f, "Const({c})"),
            Segment::Expr(e) => write!(f, "Expr({e})"),
            Segment::Func(_) => f.write_str("Func(..)"),
        }
    }
}

/// Explicitly supplied one-sided limits at a breakpoint.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OneSided {
    pub left: Option<f64>,
    pub right: Option<f64>,
}

/// A function of one real variable defined segment by segment.
///
/// Evaluation at a breakpoint uses the segment to its right, so the
/// function is right-continuous by convention.
#[derive(Debug, Clone)]
pub struct PiecewiseFn {
    breakpoints: Vec<f64>,
    segments: Vec<Segment>,
    limits: Vec<OneSided>,
}

impl PiecewiseFn {
    /// `segments.len()` must be `breakpoints.len() + 1`. Ordering of the
    /// breakpoints is not checked here; see [`PiecewiseFn::violations`].
    pub fn new(breakpoints: Vec<f64>, segments: Vec<Segment>) -> Result<Self> {
        if segments.len() != breakpoints.len() + 1 {
            return Err(Error::Input(format!(
                "{} segments for {} breakpoints",
                segments.len(),
                breakpoints.len()
            )));
        }
        let limits = vec![OneSided::default(); breakpoints.len()];
        Ok(PiecewiseFn { breakpoints, segments, limits })
    }

    pub fn constant(c: f64) -> Self {
        PiecewiseFn { breakpoints: Vec::new(), segments: vec![Segment::Const(c)], limits: Vec::new() }
    }

    pub fn from_fn(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        PiecewiseFn { breakpoints: Vec::new(), segments: vec![Segment::Func(Arc::new(f))], limits: Vec::new() }
    }

    pub fn from_expression(e: &Expression) -> Self {
        PiecewiseFn {
            breakpoints: e.breakpoints.clone(),
            segments: e.pieces.iter().cloned().map(Segment::from_expr).collect(),
            limits: vec![OneSided::default(); e.breakpoints.len()],
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(Self::from_expression(&crate::expr::parse_expression(text)?))
    }

    /// Supplies explicit one-sided limits at breakpoint `index`.
    pub fn with_limits(mut self, index: usize, limits: OneSided) -> Result<Self> {
        match self.limits.get_mut(index) {
            Some(slot) => {
                *slot = limits;
                Ok(self)
            }
            None => Err(Error::Input(format!("no breakpoint with index {index}"))),
        }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn breakpoint_index(&self, x: f64) -> Option<usize> {
        self.breakpoints.iter().position(|&b| b == x)
    }

    /// Splits the segment containing `x` so that `x` becomes a breakpoint.
    pub fn with_breakpoint(mut self, x: f64) -> Self {
        if self.breakpoint_index(x).is_some() {
            return self;
        }
        let i = self.breakpoints.partition_point(|&b| b < x);
        let seg = self.segments[i].clone();
        self.breakpoints.insert(i, x);
        self.segments.insert(i, seg);
        self.limits.insert(i, OneSided::default());
        self
    }

    #[inline]
    pub fn segment_index(&self, x: f64) -> usize {
        if self.breakpoints.is_empty() {
            0
        } else {
            self.breakpoints.partition_point(|&b| b <= x)
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> Result<f64> {
        self.segments[self.segment_index(x)].eval(x)
    }

    /// Value on the segment left of breakpoint `i`, approaching it.
    pub fn left_limit(&self, i: usize) -> Result<f64> {
        match self.limits[i].left {
            Some(v) => Ok(v),
            None => self.segments[i].eval(self.breakpoints[i]),
        }
    }

    pub fn right_limit(&self, i: usize) -> Result<f64> {
        match self.limits[i].right {
            Some(v) => Ok(v),
            None => self.segments[i + 1].eval(self.breakpoints[i]),
        }
    }

    /// Both one-sided limits at `x`. Away from breakpoints both equal `f(x)`.
    pub fn one_sided(&self, x: f64) -> Result<(f64, f64)> {
        match self.breakpoint_index(x) {
            Some(i) => Ok((self.left_limit(i)?, self.right_limit(i)?)),
            None => {
                let v = self.eval(x)?;
                Ok((v, v))
            }
        }
    }

    pub fn is_symbolic(&self) -> bool {
        self.segments.iter().all(|s| !matches!(s, Segment::Func(_)))
    }

    /// Symbolic derivative of every segment, or `None` if any segment is
    /// an opaque evaluator. Explicit limits are not carried over.
    pub fn derivative(&self) -> Option<PiecewiseFn> {
        let segments = self.segments.iter().map(Segment::derivative).collect::<Option<Vec<_>>>()?;
        Some(PiecewiseFn {
            breakpoints: self.breakpoints.clone(),
            segments,
            limits: vec![OneSided::default(); self.breakpoints.len()],
        })
    }

    /// Structural problems: ordering and finiteness of breakpoints.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, &b) in self.breakpoints.iter().enumerate() {
            if !b.is_finite() {
                out.push(Violation::new(ViolationKind::NonFinite, None, "non-finite breakpoint"));
            }
            if i > 0 && !(self.breakpoints[i - 1] < b) {
                out.push(Violation::new(
                    ViolationKind::IllOrderedBreakpoints,
                    Some(b),
                    format!("breakpoint {b} does not exceed its predecessor {}", self.breakpoints[i - 1]),
                ));
            }
        }
        out
    }

    /// Expression form, if every segment is symbolic.
    pub fn to_expression(&self) -> Option<Expression> {
        Some(Expression {
            breakpoints: self.breakpoints.clone(),
            pieces: self.segments.iter().map(Segment::as_expr).collect::<Option<Vec<_>>>()?,
        })
    }
}

impl fmt::Display for PiecewiseFn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.to_expression() {
            Some(e) => write!(f, "{e}"),
            None => f.write_str("<evaluator>"),
        }
    }
}
