//! Safety-triggered update schedule.
//!
//! An update moment `τᵢ` is the earlier of the first time after `τᵢ₋₁` at
//! which `h` reaches the alarm value `χᵢ`, and `τᵢ₋₁ + Δτ_max`. Alarm values
//! decay geometrically: `χ₁ = min{χ̄, γ₀·h(x(0))}`, `χᵢ = γ₁·χᵢ₋₁`.

use std::fmt;

use crate::error::{Error, Result};

pub const DEFAULT_TOL_EVENT: f64 = 1e-6;

/// Sub-intervals scanned per step when looking for the first crossing.
pub const CROSSING_SCAN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerConfig {
    pub gamma0: f64,
    pub gamma1: f64,
    /// Alarm cap; `f64::INFINITY` when unused.
    pub chi_bar: f64,
    pub delta_tau_max: f64,
    /// Required initial margin `h(x(0)) > ε`.
    pub epsilon: f64,
    /// Alarm values below this level are not watched for crossings, since
    /// `h` cannot be resolved there; interval triggers continue. Zero
    /// disables the floor.
    pub alarm_floor: f64,
}

impl TriggerConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| x > 0.0 && x < 1.0;
        if !unit(self.gamma0) || !unit(self.gamma1) {
            return Err(Error::InvalidInput(format!(
                "decay factors must lie in (0, 1), got gamma0 = {}, gamma1 = {}",
                self.gamma0, self.gamma1
            )));
        }
        if !(self.delta_tau_max > 0.0) {
            return Err(Error::InvalidInput("delta_tau_max must be positive".into()));
        }
        if !(self.chi_bar > 0.0) {
            return Err(Error::InvalidInput("chi_bar must be positive".into()));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidInput("epsilon must be positive".into()));
        }
        if !(self.alarm_floor >= 0.0) {
            return Err(Error::InvalidInput("alarm_floor must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriggerKind {
    AlarmCrossing,
    MaxInterval,
}

impl fmt::Display for TriggerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TriggerKind::AlarmCrossing => "alarm_crossing",
            TriggerKind::MaxInterval => "max_interval",
        })
    }
}

/// Why a trigger fired, and whether it changes the estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriggerCase {
    /// Interval elapsed with no new excitation.
    Case1,
    /// Alarm reached with no new excitation: a CLF/CBF conflict.
    Case2,
    /// New excitation; the estimate is updated.
    Case3,
}

impl TriggerCase {
    pub fn number(self) -> u8 {
        match self {
            TriggerCase::Case1 => 1,
            TriggerCase::Case2 => 2,
            TriggerCase::Case3 => 3,
        }
    }
}

impl fmt::Display for TriggerCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

pub fn classify_trigger(kind: TriggerKind, excitation: bool) -> TriggerCase {
    match (kind, excitation) {
        (_, true) => TriggerCase::Case3,
        (TriggerKind::MaxInterval, false) => TriggerCase::Case1,
        (TriggerKind::AlarmCrossing, false) => TriggerCase::Case2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriggerEvent {
    pub time: f64,
    pub kind: TriggerKind,
    /// Alarm value armed when the trigger fired.
    pub chi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TriggerState {
    config: TriggerConfig,
    index: usize,
    chi: f64,
    tau_prev: f64,
}

impl TriggerState {
    /// Arms the first alarm from `h0 = h(x(0))`. Rejects `h0 ≤ ε`.
    pub fn new(config: TriggerConfig, h0: f64) -> Result<Self> {
        config.validate()?;
        let mut state = Self {
            config,
            index: 0,
            chi: f64::NAN,
            tau_prev: 0.0,
        };
        state.init_alarm(h0)?;
        Ok(state)
    }

    /// `χ₁ = min{χ̄, γ₀·h0}`.
    pub fn init_alarm(&mut self, h0: f64) -> Result<f64> {
        if !(h0 > self.config.epsilon) {
            return Err(Error::InitialMargin {
                h0,
                epsilon: self.config.epsilon,
            });
        }
        self.index = 1;
        self.chi = self.config.chi_bar.min(self.config.gamma0 * h0);
        self.tau_prev = 0.0;
        Ok(self.chi)
    }

    pub fn config(&self) -> &TriggerConfig {
        &self.config
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn chi(&self) -> f64 {
        self.chi
    }

    pub fn tau_prev(&self) -> f64 {
        self.tau_prev
    }

    pub fn deadline(&self) -> f64 {
        self.tau_prev + self.config.delta_tau_max
    }

    /// Looks for a trigger in `(t_lo, t_hi]` given `h` over the step.
    ///
    /// The crossing is searched on a uniform scan of the step so that a dip
    /// through the alarm and back is still caught; the earlier of crossing
    /// and deadline wins, the crossing on ties. Below unit alarm values the
    /// localization tolerance shrinks with `χ`.
    pub fn check_trigger<H: Fn(f64) -> f64>(&self, h: H, t_lo: f64, t_hi: f64, tol_event: f64) -> Result<Option<TriggerEvent>> {
        let tol = tol_event * self.chi.abs().min(1.0);
        let crossing = if self.chi >= self.config.alarm_floor {
            first_crossing(&h, self.chi, t_lo, t_hi, tol)?
        } else {
            None
        };
        let deadline = self.deadline();
        let timed = (deadline > t_lo && deadline <= t_hi).then_some(deadline);
        let event = match (crossing, timed) {
            (Some(tc), Some(td)) if td < tc => Some((td, TriggerKind::MaxInterval)),
            (Some(tc), _) => Some((tc, TriggerKind::AlarmCrossing)),
            (None, Some(td)) => Some((td, TriggerKind::MaxInterval)),
            (None, None) => None,
        };
        Ok(event.map(|(time, kind)| TriggerEvent {
            time,
            kind,
            chi: self.chi,
        }))
    }

    /// Registers a trigger at `tau`: `i ← i + 1`, `χ ← γ₁·χ`, `τ_prev ← tau`.
    pub fn fire(&mut self, tau: f64) {
        self.index += 1;
        self.chi *= self.config.gamma1;
        self.tau_prev = tau;
    }
}

fn first_crossing<H: Fn(f64) -> f64>(h: &H, chi: f64, t_lo: f64, t_hi: f64, tol: f64) -> Result<Option<f64>> {
    if !(h(t_lo) > chi) {
        return Ok(None);
    }
    let mut a = t_lo;
    for k in 1..=CROSSING_SCAN {
        let b = if k == CROSSING_SCAN {
            t_hi
        } else {
            t_lo + (t_hi - t_lo) * k as f64 / CROSSING_SCAN as f64
        };
        if h(b) <= chi {
            return localize_crossing(h, chi, a, b, tol).map(Some);
        }
        a = b;
    }
    Ok(None)
}

/// Bisection for `τ ∈ [t_lo, t_hi]` with `|h(τ) − χ| ≤ tol`, given
/// `h(t_lo) ≥ χ ≥ h(t_hi)`.
pub fn localize_crossing<H: Fn(f64) -> f64>(h: H, chi: f64, t_lo: f64, t_hi: f64, tol: f64) -> Result<f64> {
    let (h_lo, h_hi) = (h(t_lo), h(t_hi));
    if !(t_lo <= t_hi) || !(h_lo >= chi && chi >= h_hi) {
        return Err(Error::InvalidInput(format!(
            "crossing of {chi} not bracketed by h({t_lo}) = {h_lo}, h({t_hi}) = {h_hi}"
        )));
    }
    if h_lo == chi {
        return Ok(t_lo);
    }
    let (mut lo, mut hi) = (t_lo, t_hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let hm = h(mid);
        if (hm - chi).abs() <= tol {
            return Ok(mid);
        }
        if hm > chi {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    // Resolution exhausted; the upper end is the first point at or below χ.
    Ok(hi)
}
