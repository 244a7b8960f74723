//! Closed-loop simulation of the cruise-control benchmark.
//!
//! The QP controller is evaluated at every RK4 stage, so the closed loop is
//! integrated as the continuous feedback law it is; holding the step-start
//! input over the step is available as an option. In the identified case the inner
//! integrals `∫φᵀ` and `∫(f + g u)` ride along in the augmented state, and in
//! the baseline cases the estimates do. The leader is evaluated exactly.
//!
//! When a trigger falls inside a step, the step is re-taken up to the trigger
//! time, the trigger is processed there, and stepping resumes from it towards
//! the next grid point with a fresh control.

pub mod integrator;
pub mod leader;
mod log;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::acc::{acc_qp, build_acc_model, AccParams, AccPlant, AccState, CaseId, Estimates, CBF_ROW, CLF_ROW};
use crate::baselines::{lyapunov_rates, project_rate, BoxSet, LyapunovAdaptiveState};
use crate::error::{Error, Result};
use crate::identifier::{
    has_new_excitation, null_space_basis, IdentifierState, StepIntegrals, UpdateRecord, DEFAULT_CONSISTENCY_TOL,
    DEFAULT_EXCITATION_TOL, DEFAULT_RANK_TOL,
};
use crate::model::eval_dynamics;
use crate::qp::{check_kkt, solve_qp, QpSolution};
use crate::trigger::{classify_trigger, TriggerCase, TriggerConfig, TriggerEvent, TriggerState, DEFAULT_TOL_EVENT};

pub use integrator::{rk4_step, DenseOutput, Step};
pub use leader::LeaderProfile;
pub use log::{EventRow, LogRow, Metrics, TrajectoryLog};

/// Rounding noise in `h` reaches ~1e-11 m with positions of a few hundred
/// metres; alarm levels are watched well above that.
pub const DEFAULT_ALARM_FLOOR: f64 = 1e-9;

/// Float formatting used in every CSV: 17 significant digits, which
/// round-trips `f64` exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerParams {
    pub gamma0: f64,
    pub gamma1: f64,
    /// Alarm cap; none means unbounded.
    pub chi_bar: Option<f64>,
    pub delta_tau_max: f64,
    /// Initial margin; none means `1e-3·h(x(0))`.
    pub epsilon: Option<f64>,
    /// Smallest alarm value still watched for crossings (m).
    pub alarm_floor: f64,
}

impl Default for TriggerParams {
    fn default() -> Self {
        Self {
            gamma0: 0.2,
            gamma1: 0.5,
            chi_bar: None,
            delta_tau_max: 8.0,
            epsilon: None,
            alarm_floor: DEFAULT_ALARM_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub dt: f64,
    pub t_end: f64,
    pub rank_tol: f64,
    pub excitation_tol: f64,
    pub consistency_tol: f64,
    pub tol_event: f64,
    /// Log every `log_stride`-th grid point (trigger times are always logged).
    pub log_stride: usize,
    /// Check KKT residuals of the in-loop QP every `kkt_every` grid points.
    pub kkt_every: usize,
    /// Start of the window used for the tracking-error metric.
    pub transient_end: f64,
    /// Hold the step-start input over each step instead of re-solving the QP
    /// at every stage. The hold costs `O(dt)` of barrier margin near `h = 0`.
    pub hold_control: bool,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 60.0,
            rank_tol: DEFAULT_RANK_TOL,
            excitation_tol: DEFAULT_EXCITATION_TOL,
            consistency_tol: DEFAULT_CONSISTENCY_TOL,
            tol_event: DEFAULT_TOL_EVENT,
            log_stride: 10,
            kkt_every: 100,
            transient_end: 50.0,
            hold_control: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub case: CaseId,
    #[serde(default)]
    pub acc: AccParams,
    #[serde(default)]
    pub trigger: TriggerParams,
    #[serde(default)]
    pub sim: SolverParams,
}

impl ScenarioConfig {
    pub fn preset(case: CaseId) -> Self {
        Self {
            case,
            acc: AccParams::default(),
            trigger: TriggerParams::default(),
            sim: SolverParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.acc.validate()?;
        let s = &self.sim;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", s.dt)));
        }
        if !(s.t_end > 0.0 && s.t_end.is_finite()) {
            return Err(Error::Config(format!("t_end must be positive, got {}", s.t_end)));
        }
        let n = (s.t_end / s.dt).round();
        if (n * s.dt - s.t_end).abs() > 1e-9 * s.t_end {
            return Err(Error::Config(format!("t_end = {} is not a multiple of dt = {}", s.t_end, s.dt)));
        }
        for (name, v) in [
            ("rank_tol", s.rank_tol),
            ("excitation_tol", s.excitation_tol),
            ("consistency_tol", s.consistency_tol),
            ("tol_event", s.tol_event),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if s.log_stride == 0 || s.kkt_every == 0 {
            return Err(Error::Config("log_stride and kkt_every must be at least 1".into()));
        }
        let t = &self.trigger;
        TriggerConfig {
            gamma0: t.gamma0,
            gamma1: t.gamma1,
            chi_bar: t.chi_bar.unwrap_or(f64::INFINITY),
            delta_tau_max: t.delta_tau_max,
            epsilon: t.epsilon.unwrap_or(1.0),
            alarm_floor: t.alarm_floor,
        }
        .validate()
        .map_err(|e| Error::Config(e.to_string()))
    }

    fn steps(&self) -> usize {
        (self.sim.t_end / self.sim.dt).round() as usize
    }
}

/// Extra numbers recorded at each trigger of the identified case.
#[derive(Debug, Clone, PartialEq)]
pub struct TriggerDiagnostics {
    pub tau: f64,
    pub case: TriggerCase,
    /// `‖Z − Gθ‖ / (1 + ‖G‖‖θ‖)` with the true `θ`.
    pub identity_residual: f64,
    /// `‖Z − Gθ̂‖` with the estimate before the trigger.
    pub excitation_residual: f64,
    /// `‖Gθ̂_new − Z‖ / (1 + ‖Z‖)` when the estimate changed.
    pub consistency_residual: Option<f64>,
    /// Norm of the estimate change projected on the numerical null space of G.
    pub null_projection: Option<f64>,
    pub rank: Option<usize>,
    /// `(G, Z)` at the trigger, kept when the estimate changed.
    pub gram: Option<(DMatrix<f64>, DVector<f64>)>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub config: ScenarioConfig,
    pub log: TrajectoryLog,
    pub metrics: Metrics,
    pub diagnostics: Vec<TriggerDiagnostics>,
    pub updates: Vec<UpdateRecord>,
    /// Smallest `h` over every step start and trigger time (not just logged rows).
    pub min_h_all: f64,
    /// Largest scaled KKT residual over the sampled in-loop solves.
    pub kkt_max: f64,
    pub kkt_samples: usize,
}

enum Adaptation {
    Identifier {
        id: IdentifierState,
        trigger: TriggerState,
    },
    Lyapunov {
        gains: LyapunovAdaptiveState,
        bounds: Option<BoxSet>,
    },
}

/// Layout of the integrated vector: `[x_f, v_f, ...]` followed by either the
/// inner integrals `∫φᵀ` (p entries) and `∫(f + g u)` (one entry), or
/// `θ̂_V` and `θ̂_h`.
struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    plant: AccPlant,
    leader: LeaderProfile,
    theta: DVector<f64>,
    p: usize,
}

impl Runner<'_> {
    fn acc_state(&self, t: f64, y: &DVector<f64>) -> AccState {
        AccState {
            x_f: y[0],
            v_f: y[1],
            x_l: self.leader.position(t),
            v_l: self.leader.velocity(t),
        }
    }

    fn barrier(&self, t: f64, x_f: f64, v_f: f64) -> f64 {
        let s = AccState {
            x_f,
            v_f,
            x_l: self.leader.position(t),
            v_l: self.leader.velocity(t),
        };
        self.plant.cbf.value(&s.identified(), &s.exogenous())
    }

    fn control(&self, t: f64, y: &DVector<f64>, adapt: &Adaptation) -> Result<(crate::qp::QpInstance, QpSolution)> {
        let s = self.acc_state(t, y);
        let p = self.p;
        let qp = match adapt {
            Adaptation::Identifier { id, .. } => acc_qp(&self.plant, &self.cfg.acc, &s, Estimates::Single(id.theta_hat()))?,
            Adaptation::Lyapunov { .. } => {
                let tv = y.rows(2, p).into_owned();
                let th = y.rows(2 + p, p).into_owned();
                acc_qp(&self.plant, &self.cfg.acc, &s, Estimates::Split { clf: &tv, cbf: &th })?
            }
        };
        let sol = solve_qp(&qp).map_err(|e| Error::ControllerFailure { t, source: Box::new(e) })?;
        Ok((qp, sol))
    }

    /// `held` is the step-start input under zero-order hold; otherwise the QP
    /// is solved at `(t, y)`.
    fn rhs(&self, t: f64, y: &DVector<f64>, held: Option<f64>, adapt: &Adaptation) -> Result<DVector<f64>> {
        let p = self.p;
        let u = match held {
            Some(u) => u,
            None => self.control(t, y, adapt)?.1.v[0],
        };
        let x = DVector::from_element(1, y[1]);
        let uu = DVector::from_element(1, u);
        let model = &self.plant.model;
        let mut dy = DVector::zeros(y.len());
        dy[0] = y[1];
        dy[1] = eval_dynamics(model, &x, &uu, &self.theta)?[0];
        match adapt {
            Adaptation::Identifier { .. } => {
                let phi_t = model.phi(&x)?.transpose();
                dy.rows_mut(2, p).copy_from(&phi_t.transpose());
                dy[2 + p] = (model.f(&x)? + model.g(&x)? * &uu)[0];
            }
            Adaptation::Lyapunov { gains, bounds } => {
                let s = AccState {
                    x_f: y[0],
                    v_f: y[1],
                    x_l: self.leader.position(t),
                    v_l: self.leader.velocity(t),
                };
                let (mut rv, mut rh) =
                    lyapunov_rates(&x, &s.exogenous(), gains, &self.plant.clf, &self.plant.cbf, model)?;
                if let Some(b) = bounds {
                    rv = project_rate(&b.clamp(&y.rows(2, p).into_owned()), &rv, b)?;
                    rh = project_rate(&b.clamp(&y.rows(2 + p, p).into_owned()), &rh, b)?;
                }
                dy.rows_mut(2, p).copy_from(&rv);
                dy.rows_mut(2 + p, p).copy_from(&rh);
            }
        }
        Ok(dy)
    }

    fn integrate(&self, t: f64, y: &DVector<f64>, h: f64, u: f64, adapt: &Adaptation) -> Result<Step> {
        let held = self.cfg.sim.hold_control.then_some(u);
        let mut y0 = y.clone();
        if let Adaptation::Identifier { .. } = adapt {
            y0.rows_mut(2, self.p + 1).fill(0.0);
        }
        let mut failure = None;
        let step = rk4_step(
            |s, z| match self.rhs(s, z, held, adapt) {
                Ok(d) => d,
                Err(e) => {
                    failure.get_or_insert(e);
                    DVector::zeros(z.len())
                }
            },
            t,
            &y0,
            h,
        );
        match failure {
            Some(e) => Err(e),
            None => Ok(step),
        }
    }

    /// Folds a finished step of length `h` into the adaptation state.
    fn commit(&self, step: &mut Step, h: f64, adapt: &mut Adaptation) -> Result<()> {
        let p = self.p;
        match adapt {
            Adaptation::Identifier { id, .. } => {
                let inc = StepIntegrals {
                    phi_t: DMatrix::from_row_slice(1, p, step.y.rows(2, p).as_slice()),
                    known: DVector::from_element(1, step.y[2 + p]),
                };
                id.accumulate_integrals(&DVector::from_element(1, step.y[1]), &inc, h)?;
            }
            Adaptation::Lyapunov { bounds: Some(b), .. } => {
                let tv = b.clamp(&step.y.rows(2, p).into_owned());
                let th = b.clamp(&step.y.rows(2 + p, p).into_owned());
                step.y.rows_mut(2, p).copy_from(&tv);
                step.y.rows_mut(2 + p, p).copy_from(&th);
            }
            Adaptation::Lyapunov { bounds: None, .. } => {}
        }
        Ok(())
    }

    fn log_row(&self, t: f64, y: &DVector<f64>, sol: &QpSolution, adapt: &Adaptation) -> LogRow {
        let s = self.acc_state(t, y);
        let theta = match adapt {
            Adaptation::Identifier { id, .. } => id.theta_hat().iter().copied().collect(),
            Adaptation::Lyapunov { .. } => y.rows(2, 2 * self.p).iter().copied().collect(),
        };
        LogRow {
            t,
            x_f: s.x_f,
            v_f: s.v_f,
            x_l: s.x_l,
            v_l: s.v_l,
            tau_f: sol.v[0],
            delta: sol.v[1],
            h: self.plant.cbf.value(&s.identified(), &s.exogenous()),
            v: self.plant.clf.value(&s.identified()),
            theta,
            clf_active: sol.is_active(CLF_ROW),
            cbf_active: sol.is_active(CBF_ROW),
        }
    }

    fn process_trigger(
        &self,
        ev: TriggerEvent,
        y: &DVector<f64>,
        adapt: &mut Adaptation,
    ) -> Result<(EventRow, TriggerDiagnostics)> {
        let Adaptation::Identifier { id, trigger } = adapt else {
            unreachable!("triggers only run with the identifier");
        };
        let sim = &self.cfg.sim;
        let (g, z) = id.gram();
        let identity_residual = (&z - &g * &self.theta).norm() / (1.0 + g.norm() * self.theta.norm());
        let theta_prev = id.theta_hat().clone();
        let excitation_residual = (&z - &g * &theta_prev).norm();
        let excited = has_new_excitation(&g, &z, &theta_prev, sim.excitation_tol);
        let case = classify_trigger(ev.kind, excited);
        let mut diag = TriggerDiagnostics {
            tau: ev.time,
            case,
            identity_residual,
            excitation_residual,
            consistency_residual: None,
            null_projection: None,
            rank: None,
            gram: None,
        };
        let mut changed = false;
        if case == TriggerCase::Case3 {
            changed = id.update(sim.rank_tol, sim.consistency_tol)?;
            if changed {
                let new = id.theta_hat();
                diag.consistency_residual = Some((&g * new - &z).norm() / (1.0 + z.norm()));
                let null = null_space_basis(&g, sim.rank_tol);
                diag.null_projection = Some((null.transpose() * (new - &theta_prev)).norm());
                diag.rank = id.update_log().last().map(|r| r.rank);
                diag.gram = Some((g, z));
            }
        }
        trigger.fire(ev.time);
        let row = EventRow {
            tau: ev.time,
            kind: ev.kind,
            case,
            chi: ev.chi,
            h_at_tau: self.barrier(ev.time, y[0], y[1]),
            estimate_changed: changed,
        };
        Ok((row, diag))
    }
}

/// Runs one case of the benchmark over `[0, t_end]`.
pub fn run_case(cfg: &ScenarioConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let params = &cfg.acc;
    let plant = build_acc_model(params)?;
    let p = plant.model.p;
    let runner = Runner {
        cfg,
        plant,
        leader: LeaderProfile::new(params.x_l0),
        theta: params.theta(),
        p,
    };
    let s0 = params.initial_state();
    let h0 = runner.plant.cbf.value(&s0.identified(), &s0.exogenous());

    let mut y;
    let mut adapt = if cfg.case.uses_identifier() {
        y = DVector::zeros(3 + p);
        let trigger = TriggerState::new(
            TriggerConfig {
                gamma0: cfg.trigger.gamma0,
                gamma1: cfg.trigger.gamma1,
                chi_bar: cfg.trigger.chi_bar.unwrap_or(f64::INFINITY),
                delta_tau_max: cfg.trigger.delta_tau_max,
                epsilon: cfg.trigger.epsilon.unwrap_or(1e-3 * h0),
                alarm_floor: cfg.trigger.alarm_floor,
            },
            h0,
        )?;
        let id = IdentifierState::new(&runner.plant.model, s0.identified(), params.theta_hat0())?;
        Adaptation::Identifier { id, trigger }
    } else {
        y = DVector::zeros(2 + 2 * p);
        let th0 = params.theta_hat0();
        y.rows_mut(2, p).copy_from(&th0);
        y.rows_mut(2 + p, p).copy_from(&th0);
        let bounds = match cfg.case.box_factors() {
            Some((lo, hi)) => Some(BoxSet::scaled(&runner.theta, lo, hi)?),
            None => None,
        };
        let gains = LyapunovAdaptiveState::new(th0.clone(), th0, params.c1, params.c2)?;
        Adaptation::Lyapunov { gains, bounds }
    };
    y[0] = s0.x_f;
    y[1] = s0.v_f;

    let n = cfg.steps();
    let dt = cfg.sim.dt;
    let grid = |k: usize| if k == n { cfg.sim.t_end } else { k as f64 * dt };
    let mut log = TrajectoryLog::new(p, !cfg.case.uses_identifier());
    let mut diagnostics = Vec::new();
    let mut min_h_all = f64::INFINITY;
    let mut kkt_max = 0.0f64;
    let mut kkt_samples = 0;

    let mut k = 0;
    let mut t = 0.0;
    let mut on_grid = true;
    let mut after_event = false;
    loop {
        let (qp, sol) = runner.control(t, &y, &adapt)?;
        if on_grid && k % cfg.sim.kkt_every == 0 {
            kkt_max = kkt_max.max(check_kkt(&qp, &sol).max());
            kkt_samples += 1;
        }
        min_h_all = min_h_all.min(runner.barrier(t, y[0], y[1]));
        if after_event || (on_grid && (k % cfg.sim.log_stride == 0 || k == n)) {
            log.rows.push(runner.log_row(t, &y, &sol, &adapt));
        }
        if k == n {
            break;
        }
        let u = sol.v[0];
        let t_next = grid(k + 1);
        let mut step = runner.integrate(t, &y, t_next - t, u, &adapt)?;
        let event = match &adapt {
            Adaptation::Identifier { trigger, .. } => {
                let dense = &step.dense;
                trigger.check_trigger(
                    |s| runner.barrier(s, dense.component(s, 0), dense.component(s, 1)),
                    t,
                    t_next,
                    cfg.sim.tol_event,
                )?
            }
            Adaptation::Lyapunov { .. } => None,
        };
        after_event = false;
        match event {
            Some(ev) if ev.time < t_next => {
                let h = ev.time - t;
                let mut partial = runner.integrate(t, &y, h, u, &adapt)?;
                runner.commit(&mut partial, h, &mut adapt)?;
                y = partial.y;
                t = ev.time;
                on_grid = false;
                let (row, diag) = runner.process_trigger(ev, &y, &mut adapt)?;
                log.events.push(row);
                diagnostics.push(diag);
                after_event = true;
            }
            other => {
                runner.commit(&mut step, t_next - t, &mut adapt)?;
                y = step.y;
                t = t_next;
                k += 1;
                on_grid = true;
                if let Some(ev) = other {
                    let ev = TriggerEvent { time: t, ..ev };
                    let (row, diag) = runner.process_trigger(ev, &y, &mut adapt)?;
                    log.events.push(row);
                    diagnostics.push(diag);
                    after_event = true;
                }
            }
        }
    }

    let updates = match &adapt {
        Adaptation::Identifier { id, .. } => id.update_log().to_vec(),
        Adaptation::Lyapunov { .. } => Vec::new(),
    };
    let metrics = Metrics::from_log(&log, params.v_d, cfg.sim.transient_end, 10.0);
    Ok(RunOutcome {
        config: cfg.clone(),
        log,
        metrics,
        diagnostics,
        updates,
        min_h_all,
        kkt_max,
        kkt_samples,
    })
}
