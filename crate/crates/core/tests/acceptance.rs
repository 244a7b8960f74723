//! Acceptance suite. Each criterion prints one PASS/FAIL line; the binary exits
//! non-zero if any criterion fails.

mod common;

use std::fs;
use std::process::ExitCode;
use std::time::Instant;

use adaptive_safety::acc::{build_acc_model, phi, AccParams, CaseId};
use adaptive_safety::baselines::BoxSet;
use adaptive_safety::cli::{run, Args, CaseArg};
use adaptive_safety::model::eval_dynamics;
use adaptive_safety::qp::compare_with_oracle;
use adaptive_safety::sim::{rk4_step, run_case, RunOutcome, ScenarioConfig};
use adaptive_safety::trigger::{TriggerCase, TriggerKind};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

struct Verdict {
    ok: bool,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Verdict {
    Verdict { ok, detail }
}

struct Runs {
    iv: RunOutcome,
    iv_wall: f64,
    baselines: Vec<RunOutcome>,
}

fn full_run(case: CaseId) -> RunOutcome {
    let mut cfg = ScenarioConfig::preset(case);
    cfg.sim.log_stride = 1;
    run_case(&cfg).expect("run completes")
}

fn runs() -> Runs {
    // Timed with the default logging stride, as the CLI runs it.
    let start = Instant::now();
    run_case(&ScenarioConfig::preset(CaseId::IV)).expect("run completes");
    let iv_wall = start.elapsed().as_secs_f64();
    Runs {
        iv: full_run(CaseId::IV),
        iv_wall,
        baselines: [CaseId::I, CaseId::II, CaseId::III].into_iter().map(full_run).collect(),
    }
}

fn safety(r: &Runs) -> Verdict {
    let tol = r.iv.config.sim.tol_event;
    let min_rows = r.iv.log.rows.iter().map(|row| row.h).fold(f64::INFINITY, f64::min);
    let min_h = r.iv.min_h_all.min(min_rows);
    verdict(
        min_h >= -tol && r.iv_wall <= 10.0,
        format!("min_h = {min_h:.3e}, runtime = {:.2} s", r.iv_wall),
    )
}

fn finite_updates(r: &Runs) -> Verdict {
    let theta = r.iv.config.acc.theta();
    let updates = &r.iv.updates;
    let last = updates.last().map_or(0.0, |u| u.time);
    let worst = r
        .iv
        .log
        .rows
        .iter()
        .filter(|row| row.t >= last)
        .map(|row| (phi(row.v_f).transpose() * (&theta - DVector::from_column_slice(&row.theta)))[0].abs())
        .fold(0.0, f64::max);
    let bound = 1e-5 * (1.0 + theta.norm());
    verdict(
        updates.len() <= theta.len() && worst <= bound,
        format!("updates = {}, max |phi^T(theta - theta_hat)| after last = {worst:.3e}", updates.len()),
    )
}

fn least_norm_gate(r: &Runs) -> Verdict {
    let changed: Vec<_> = r.iv.diagnostics.iter().filter(|d| d.gram.is_some()).collect();
    let mut ok = !changed.is_empty() && changed.len() == r.iv.updates.len();
    let (mut worst_cons, mut worst_null) = (0.0f64, 0.0f64);
    for (d, up) in changed.iter().zip(&r.iv.updates) {
        ok &= (d.tau - up.time).abs() <= 1e-12;
        let (g, z) = d.gram.as_ref().unwrap();
        let cons = (g * &up.theta_after - z).norm() / (1.0 + z.norm());
        // Null space from an SVD, independent of the identifier's own basis.
        let svd = g.clone().svd(false, true);
        let v_t = svd.v_t.unwrap();
        let smax = svd.singular_values.max();
        let step = &up.theta_after - &up.theta_before;
        let null: f64 = svd
            .singular_values
            .iter()
            .enumerate()
            .filter(|(_, &s)| s <= r.iv.config.sim.rank_tol * smax)
            .map(|(i, _)| v_t.row(i).dot(&step.transpose()).powi(2))
            .fold(0.0, |acc, x| acc + x)
            .sqrt();
        worst_cons = worst_cons.max(cons);
        worst_null = worst_null.max(null);
    }
    ok &= worst_cons <= 1e-8 && worst_null <= 1e-8;
    verdict(
        ok,
        format!(
            "{} changes, max consistency = {worst_cons:.3e}, max null projection = {worst_null:.3e}",
            changed.len()
        ),
    )
}

fn zeno(r: &Runs) -> Verdict {
    let mut ok = true;
    let mut min_gap = f64::INFINITY;
    let mut worst_align = 0.0f64;
    let mut pairs = 0;
    for out in std::iter::once(&r.iv).chain(&r.baselines) {
        let bound = (1.0 - out.config.trigger.gamma1) / out.config.acc.k2 - 2.0 * out.config.sim.tol_event;
        let taus: Vec<f64> = out
            .log
            .events
            .iter()
            .filter(|e| e.case == TriggerCase::Case2)
            .map(|e| e.tau)
            .collect();
        for w in taus.windows(2) {
            pairs += 1;
            min_gap = min_gap.min(w[1] - w[0]);
            ok &= w[1] - w[0] >= bound;
        }
        for e in out.log.events.iter().filter(|e| e.kind == TriggerKind::AlarmCrossing) {
            worst_align = worst_align.max((e.h_at_tau - e.chi).abs());
        }
        ok &= worst_align <= out.config.sim.tol_event;
    }
    verdict(
        ok,
        format!("{pairs} Case-2 pairs, min gap = {min_gap:.6} s, max |h(tau) - chi| = {worst_align:.3e}"),
    )
}

fn qp_correctness(r: &Runs) -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let cmp = compare_with_oracle(&mut rng, 1000).expect("oracle comparison");
    let kkt = std::iter::once(&r.iv).chain(&r.baselines).map(|o| o.kkt_max).fold(0.0, f64::max);
    let samples: usize = std::iter::once(&r.iv).chain(&r.baselines).map(|o| o.kkt_samples).sum();
    verdict(
        cmp.instances == 1000 && cmp.max_objective_diff <= 1e-8 && kkt <= 1e-9 && samples > 0,
        format!(
            "max objective diff = {:.3e}, in-loop KKT max = {kkt:.3e} over {samples} samples",
            cmp.max_objective_diff
        ),
    )
}

fn accumulators(r: &Runs) -> Verdict {
    let (g_ref, z_ref) = common::direct_gram();
    let (g, z) = common::accumulated_gram();
    let g_err = (&g - &g_ref).norm() / g_ref.norm();
    let z_err = (&z - &z_ref).norm() / z_ref.norm();
    let identity = r.iv.diagnostics.iter().map(|d| d.identity_residual).fold(0.0, f64::max);
    verdict(
        g_err <= 1e-4 && z_err <= 1e-4 && identity <= 1e-6 && !r.iv.diagnostics.is_empty(),
        format!("G rel err = {g_err:.3e}, Z rel err = {z_err:.3e}, max identity residual = {identity:.3e}"),
    )
}

fn baselines(r: &Runs) -> Verdict {
    let mut ok = true;
    let mut notes = Vec::new();
    for out in &r.baselines {
        let p = out.log.p;
        let rows = &out.log.rows;
        match out.config.case {
            CaseId::I => {
                let tail: Vec<&[f64]> = rows.iter().filter(|row| row.t >= 50.0).map(|row| &row.theta[..p]).collect();
                let growing = (0..p).any(|j| tail.windows(2).all(|w| w[1][j].abs() > w[0][j].abs()));
                let norm = |c: &[f64]| c.iter().map(|x| x * x).sum::<f64>().sqrt();
                let ratio = norm(&rows.last().unwrap().theta[..p]) / norm(&rows[0].theta[..p]);
                ok &= growing && ratio >= 2.0 && tail.len() > 1;
                notes.push(format!("I: component growing = {growing}, norm ratio = {ratio:.2}"));
            }
            case => {
                let (lo, hi) = case.box_factors().unwrap();
                let set = BoxSet::scaled(&out.config.acc.theta(), lo, hi).unwrap();
                let inside = rows
                    .iter()
                    .all(|row| row.theta.chunks(p).all(|c| set.contains(&DVector::from_column_slice(c))));
                ok &= inside;
                notes.push(format!("{case}: in box = {inside}"));
            }
        }
    }
    verdict(ok, notes.join(", "))
}

fn tracking(r: &Runs) -> Verdict {
    let rows = &r.iv.log.rows;
    let tol = r.iv.config.sim.tol_event;
    let v_d = r.iv.config.acc.v_d;
    let err = rows
        .iter()
        .filter(|row| row.t >= 50.0)
        .map(|row| (row.v_f - v_d).abs())
        .fold(0.0, f64::max);
    let braking: Vec<_> = rows.iter().filter(|row| (5.0..7.0).contains(&row.t)).collect();
    let active = braking.iter().filter(|row| row.cbf_active).count();
    let min_h = braking.iter().map(|row| row.h).fold(f64::INFINITY, f64::min);
    verdict(
        err <= 0.5 && !braking.is_empty() && active == braking.len() && min_h >= -tol,
        format!(
            "max |v_f - v_d| on [50, 60] = {err:.3e}, CBF active at {active}/{} braking samples, min h there = {min_h:.3}",
            braking.len()
        ),
    )
}

fn integrator_order() -> Verdict {
    let params = AccParams::default();
    let plant = build_acc_model(&params).unwrap();
    let theta = params.theta();
    let u = DVector::from_element(1, 2500.0);
    // State [x_f, v_f], input held, from t = 10 s for one second.
    let solve = |h: f64| {
        let n = (1.0 / h).round() as usize;
        let mut y = DVector::from_column_slice(&[0.0, 12.0]);
        for k in 0..n {
            let step = rk4_step(
                |_, y| {
                    let v = DVector::from_element(1, y[1]);
                    let a = eval_dynamics(&plant.model, &v, &u, &theta).unwrap()[0];
                    DVector::from_column_slice(&[y[1], a])
                },
                10.0 + k as f64 * h,
                &y,
                h,
            );
            y = step.y;
        }
        y
    };
    let (a, b, c) = (solve(0.2), solve(0.1), solve(0.05));
    let order = ((&a - &b).norm() / (&b - &c).norm()).log2();
    verdict(order >= 3.5, format!("observed order = {order:.3}"))
}

fn determinism() -> Verdict {
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let args = Args {
            case: CaseArg::Iv,
            dt: None,
            t_end: None,
            out_dir: d.path().to_path_buf(),
            config: None,
            seed: 7,
            selftest: false,
        };
        run(&args).expect("cli run");
    }
    let names = ["case-iv-trajectory.csv", "case-iv-events.csv", "case-iv-updates.csv"];
    let same = names
        .iter()
        .all(|n| fs::read(dirs[0].path().join(n)).unwrap() == fs::read(dirs[1].path().join(n)).unwrap());
    verdict(same, format!("compared {}", names.join(", ")))
}

fn main() -> ExitCode {
    let r = runs();
    let results = [
        ("1 safety", safety(&r)),
        ("2 finite updates", finite_updates(&r)),
        ("3 least-norm update", least_norm_gate(&r)),
        ("4 Zeno bound", zeno(&r)),
        ("5 QP correctness", qp_correctness(&r)),
        ("6 accumulators", accumulators(&r)),
        ("7 baselines", baselines(&r)),
        ("8 tracking recovery", tracking(&r)),
        ("9 integrator order", integrator_order()),
        ("10 determinism", determinism()),
    ];
    let mut failed = 0;
    for (name, v) in &results {
        println!("criterion {name}: {} ({})", if v.ok { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.ok);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
