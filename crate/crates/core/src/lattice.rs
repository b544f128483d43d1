//! Sticky skew random walk on `δℤ`, used as an independent reference.
//!
//! Away from the origin the walk steps `±δ` with equal probability after a
//! holding time of `δ²`. At the origin it holds for `αδ + δ²` and then
//! steps up with probability `p_+`. Local time at the origin is `δ` per
//! departure, and grows linearly during a holding period that is cut off
//! by the horizon. With this convention occupation equals `(α + δ)` times
//! local time on every path.

use rand::{Rng, RngCore};

use crate::engine::NoiseStream;
use crate::error::{Error, Result};
use crate::model::PROBABILITY_TOLERANCE;
use crate::stats::{run_paths, Ecdf};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeParams {
    pub delta: f64,
    pub p_plus: f64,
    pub p_minus: f64,
    pub alpha: f64,
    pub horizon: f64,
}

impl LatticeParams {
    pub fn new(delta: f64, p_plus: f64, alpha: f64, horizon: f64) -> Result<Self> {
        let p = LatticeParams { delta, p_plus, p_minus: 1.0 - p_plus, alpha, horizon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::Input(format!("lattice spacing must be positive, got {}", self.delta)));
        }
        if !(0.0..=1.0).contains(&self.p_plus) || !(0.0..=1.0).contains(&self.p_minus) {
            return Err(Error::Input("exit probabilities must lie in [0, 1]".into()));
        }
        if (self.p_plus + self.p_minus - 1.0).abs() > PROBABILITY_TOLERANCE {
            return Err(Error::Input("exit probabilities must sum to 1".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Input(format!("delay must be nonnegative, got {}", self.alpha)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Input(format!("horizon must be positive, got {}", self.horizon)));
        }
        Ok(())
    }

    pub fn holding_at_origin(&self) -> f64 {
        self.alpha * self.delta + self.delta * self.delta
    }
}

/// Walk state at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeSample {
    pub position: f64,
    pub occupation: f64,
    pub local_time: f64,
}

/// Jump of the walk: it arrives at `position` at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatticeEvent {
    pub time: f64,
    pub position: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticePath {
    pub events: Vec<LatticeEvent>,
    pub end: LatticeSample,
}

/// Fair coin flips drawn 64 at a time.
struct Bits<'a, R: RngCore> {
    rng: &'a mut R,
    word: u64,
    left: u32,
}

impl<'a, R: RngCore> Bits<'a, R> {
    /// Net displacement of `k` fair `±1` steps, `k <= 64`.
    fn walk(&mut self, k: u32) -> i64 {
        if self.left == 0 {
            self.word = self.rng.next_u64();
            self.left = 64;
        }
        let k = k.min(self.left);
        let mask = if k == 64 { u64::MAX } else { (1u64 << k) - 1 };
        let ups = (self.word & mask).count_ones() as i64;
        self.word = if k == 64 { 0 } else { self.word >> k };
        self.left -= k;
        2 * ups - k as i64
    }

    /// Number of steps the next call to `walk` can take at most.
    fn available(&mut self) -> u32 {
        if self.left == 0 {
            self.word = self.rng.next_u64();
            self.left = 64;
        }
        self.left
    }
}

fn run<R: RngCore>(params: &LatticeParams, rng: &mut R, t: f64, mut events: Option<&mut Vec<LatticeEvent>>) -> LatticeSample {
    let d = params.delta;
    let d2 = d * d;
    let hold = params.holding_at_origin();
    let rate = params.alpha + d;
    let mut bits = Bits { rng, word: 0, left: 0 };
    let mut m: i64 = 0;
    let (mut off_steps, mut visits) = (0u64, 0u64);
    loop {
        let elapsed = off_steps as f64 * d2 + visits as f64 * hold;
        if m == 0 {
            if elapsed + hold > t {
                let partial = (t - elapsed).max(0.0);
                return LatticeSample { position: 0.0, occupation: visits as f64 * hold + partial, local_time: visits as f64 * d + partial / rate };
            }
            visits += 1;
            let up = bits.rng.random::<f64>() < params.p_plus;
            m = if up { 1 } else { -1 };
            if let Some(ev) = events.as_deref_mut() {
                ev.push(LatticeEvent { time: elapsed + hold, position: m as f64 * d });
            }
        } else {
            let room = ((t - elapsed) / d2).floor();
            if room < 1.0 {
                return LatticeSample { position: m as f64 * d, occupation: visits as f64 * hold, local_time: visits as f64 * d };
            }
            // Fewer than |m| steps cannot reach the origin, so they are taken in bulk.
            let mut k = (m.unsigned_abs() - 1).min(room.min(64.0) as u64) as u32;
            if events.is_some() || k == 0 {
                k = 1;
            }
            let k = k.min(bits.available());
            m += bits.walk(k);
            off_steps += k as u64;
            if let Some(ev) = events.as_deref_mut() {
                ev.push(LatticeEvent { time: off_steps as f64 * d2 + visits as f64 * hold, position: m as f64 * d });
            }
        }
    }
}

/// Full event record of one walk up to the horizon.
pub fn oracle_simulate(params: &LatticeParams, noise: NoiseStream) -> Result<LatticePath> {
    params.validate()?;
    let mut rng = noise.rng();
    let mut events = Vec::new();
    let end = run(params, &mut rng, params.horizon, Some(&mut events));
    Ok(LatticePath { events, end })
}

/// State of one walk at time `t`, without recording events.
pub fn oracle_sample(params: &LatticeParams, noise: NoiseStream, t: f64) -> Result<LatticeSample> {
    params.validate()?;
    if !(t >= 0.0 && t <= params.horizon) {
        return Err(Error::Range(format!("time {t} outside [0, {}]", params.horizon)));
    }
    Ok(run(params, &mut noise.rng(), t, None))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleQuantity {
    Position,
    OccupationAtZero,
    LocalTimeAtZero,
}

pub fn oracle_distribution(
    params: &LatticeParams,
    n_paths: u64,
    master_seed: u64,
    quantity: OracleQuantity,
    t: f64,
) -> Result<Ecdf> {
    if n_paths == 0 {
        return Err(Error::Input("need at least one path".into()));
    }
    let values = run_paths(n_paths, |i| {
        let s = oracle_sample(params, NoiseStream::new(master_seed, i), t)?;
        Ok(match quantity {
            OracleQuantity::Position => s.position,
            OracleQuantity::OccupationAtZero => s.occupation,
            OracleQuantity::LocalTimeAtZero => s.local_time,
        })
    })?;
    Ecdf::new(values)
}
