//! Command-line front end: load a configuration, run cases, write CSVs and a
//! plain-text report (`key = value`, one per line).

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::acc::{AccParams, CaseId};
use crate::baselines::BoxSet;
use crate::error::{Error, Result};
use crate::identifier::write_update_log;
use crate::qp::{compare_with_oracle, OracleComparison, KKT_TOL};
use crate::sim::{fmt_f64, run_case, RunOutcome, ScenarioConfig, SolverParams, TriggerParams};
use crate::trigger::TriggerCase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CaseArg {
    I,
    Ii,
    Iii,
    Iv,
    All,
}

impl CaseArg {
    fn cases(self) -> Vec<CaseId> {
        match self {
            CaseArg::I => vec![CaseId::I],
            CaseArg::Ii => vec![CaseId::II],
            CaseArg::Iii => vec![CaseId::III],
            CaseArg::Iv => vec![CaseId::IV],
            CaseArg::All => CaseId::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Parser)]
#[command(version, about = "Adaptive cruise control with CLF/CBF-QP control and safety-triggered identification")]
pub struct Args {
    /// Which case to run.
    #[arg(long, value_enum, default_value = "iv")]
    pub case: CaseArg,
    /// Integration step (s).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Simulation horizon (s).
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Directory for CSVs and reports.
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// TOML file with optional [acc], [trigger] and [sim] sections.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Seed for the random QP self-test.
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Run the QP oracle comparison instead of simulating.
    #[arg(long)]
    pub selftest: bool,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub acc: AccParams,
    pub trigger: TriggerParams,
    pub sim: SolverParams,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Scenario for `case`, with command-line overrides applied on top.
    pub fn scenario(&self, case: CaseId, args: &Args) -> ScenarioConfig {
        let mut cfg = ScenarioConfig {
            case,
            acc: self.acc.clone(),
            trigger: self.trigger.clone(),
            sim: self.sim.clone(),
        };
        if let Some(dt) = args.dt {
            cfg.sim.dt = dt;
        }
        if let Some(t_end) = args.t_end {
            cfg.sim.t_end = t_end;
        }
        cfg
    }
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub outcome: RunOutcome,
    pub wall_time: f64,
    pub paths: Vec<PathBuf>,
    pub gates: Vec<(&'static str, bool)>,
    pub warnings: Vec<String>,
}

impl CaseReport {
    pub fn passed(&self) -> bool {
        self.gates.iter().all(|(_, ok)| *ok)
    }

    pub fn render(&self) -> String {
        let cfg = &self.outcome.config;
        let m = &self.outcome.metrics;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("case", cfg.case.to_string());
        kv("dt", fmt_f64(cfg.sim.dt));
        kv("t_end", fmt_f64(cfg.sim.t_end));
        kv("theta", join(&cfg.acc.theta));
        kv("theta_hat0", join(&cfg.acc.theta_hat0));
        kv("gamma0", fmt_f64(cfg.trigger.gamma0));
        kv("gamma1", fmt_f64(cfg.trigger.gamma1));
        kv("delta_tau_max", fmt_f64(cfg.trigger.delta_tau_max));
        kv("min_h", fmt_f64(m.min_h));
        kv("max_tracking_error_after_transient", fmt_f64(m.max_tracking_error));
        kv("final_tracking_error", fmt_f64(m.final_tracking_error));
        kv("update_count", m.update_count.to_string());
        kv("triggers_case1", m.trigger_counts[0].to_string());
        kv("triggers_case2", m.trigger_counts[1].to_string());
        kv("triggers_case3", m.trigger_counts[2].to_string());
        kv("min_trigger_gap", fmt_f64(m.min_gap));
        kv("min_case2_gap", fmt_f64(m.min_case2_gap));
        kv("estimate_growing", m.estimate_growing.to_string());
        kv("wall_time_s", format!("{:.3}", self.wall_time));
        for (name, ok) in &self.gates {
            kv(&format!("gate.{name}"), if *ok { "pass" } else { "fail" }.to_string());
        }
        for w in &self.warnings {
            kv("warning", w.clone());
        }
        for p in &self.paths {
            kv("output", p.display().to_string());
        }
        s
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone)]
pub struct Report {
    pub cases: Vec<CaseReport>,
    pub selftest: Option<OracleComparison>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(CaseReport::passed) && self.selftest.as_ref().is_none_or(OracleComparison::passed)
    }
}

/// Pass/fail checks applied to every run.
pub fn gates(outcome: &RunOutcome) -> Vec<(&'static str, bool)> {
    let cfg = &outcome.config;
    let m = &outcome.metrics;
    let mut out = vec![
        ("safety", outcome.min_h_all >= -cfg.sim.tol_event),
        ("kkt", outcome.kkt_max <= KKT_TOL),
    ];
    if cfg.case.uses_identifier() {
        let zeno = (1.0 - cfg.trigger.gamma1) / cfg.acc.k2 - 2.0 * cfg.sim.tol_event;
        let case2: Vec<f64> = outcome
            .log
            .events
            .iter()
            .filter(|e| e.case == TriggerCase::Case2)
            .map(|e| e.tau)
            .collect();
        out.push(("finite_updates", m.update_count <= cfg.acc.theta.len()));
        out.push(("case2_gap", case2.windows(2).all(|w| w[1] - w[0] >= zeno)));
    }
    if let Some((lo, hi)) = cfg.case.box_factors() {
        let inside = BoxSet::scaled(&cfg.acc.theta(), lo, hi).is_ok_and(|b| {
            let p = cfg.acc.theta.len();
            outcome.log.rows.iter().all(|r| {
                r.theta
                    .chunks(p)
                    .all(|c| b.contains(&nalgebra::DVector::from_column_slice(c)))
            })
        });
        out.push(("estimates_in_box", inside));
    }
    out
}

fn write_outputs(outcome: &RunOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let slug = outcome.config.case.slug();
    let traj = dir.join(format!("{slug}-trajectory.csv"));
    outcome.log.write_trajectory_csv(BufWriter::new(File::create(&traj)?))?;
    let mut paths = vec![traj];
    if outcome.config.case.uses_identifier() {
        let events = dir.join(format!("{slug}-events.csv"));
        outcome.log.write_events_csv(BufWriter::new(File::create(&events)?))?;
        let updates = dir.join(format!("{slug}-updates.csv"));
        write_update_log(&outcome.updates, outcome.log.p, BufWriter::new(File::create(&updates)?))?;
        paths.push(events);
        paths.push(updates);
    }
    Ok(paths)
}

fn run_one(cfg: ScenarioConfig, dir: &Path) -> Result<CaseReport> {
    let start = Instant::now();
    let outcome = run_case(&cfg)?;
    let wall_time = start.elapsed().as_secs_f64();
    let mut paths = write_outputs(&outcome, dir)?;
    let mut warnings = Vec::new();
    if cfg.case == CaseId::I && outcome.metrics.estimate_growing {
        warnings.push("estimate norm grows monotonically over the final 10 s (unbounded estimate)".into());
    }
    let gates = gates(&outcome);
    let mut report = CaseReport {
        outcome,
        wall_time,
        paths: Vec::new(),
        gates,
        warnings,
    };
    let report_path = dir.join(format!("{}-report.txt", cfg.case.slug()));
    paths.push(report_path.clone());
    report.paths = paths;
    fs::write(&report_path, report.render())?;
    Ok(report)
}

/// Executes the requested runs, writing outputs under `args.out_dir`.
pub fn run(args: &Args) -> Result<Report> {
    if args.selftest {
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        let cmp = compare_with_oracle(&mut rng, 1000)?;
        println!("instances = {}", cmp.instances);
        println!("max_objective_diff = {}", fmt_f64(cmp.max_objective_diff));
        println!("max_argument_diff = {}", fmt_f64(cmp.max_argument_diff));
        println!("max_kkt_residual = {}", fmt_f64(cmp.max_kkt_residual));
        println!("selftest = {}", if cmp.passed() { "pass" } else { "fail" });
        return Ok(Report {
            cases: Vec::new(),
            selftest: Some(cmp),
        });
    }
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let configs: Vec<ScenarioConfig> = args.case.cases().into_iter().map(|c| file.scenario(c, args)).collect();
    for cfg in &configs {
        cfg.validate()?;
    }
    fs::create_dir_all(&args.out_dir)?;
    let dir = args.out_dir.as_path();
    let results: Vec<Result<CaseReport>> = std::thread::scope(|scope| {
        let handles: Vec<_> = configs
            .into_iter()
            .map(|cfg| scope.spawn(move || run_one(cfg, dir)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidInput("simulation thread panicked".into()))))
            .collect()
    });
    let cases = results.into_iter().collect::<Result<Vec<_>>>()?;
    for c in &cases {
        println!("{}", c.render());
    }
    Ok(Report { cases, selftest: None })
}
