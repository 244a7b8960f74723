//! Small dense strictly convex QPs
//!
//! ```text
//!     minimize    ½ vᵀ H v + Fᵀ v
//!     subject to  aᵢ·v ≤ bᵢ,   i = 0..c
//! ```
//!
//! [`solve_qp`] is a dual active-set method in the style of Goldfarb and
//! Idnani: it starts from the unconstrained minimizer `−H⁻¹F` and adds the
//! most violated row until the iterate is primal feasible, keeping dual
//! feasibility throughout. [`enumerate_solve`] visits every active subset and
//! serves as an independent oracle for the tiny instances used here.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::error::{check_len, Error, Result};

/// Upper bound on the row count. Keeps the enumeration oracle exhaustive.
pub const MAX_ROWS: usize = 16;

/// Acceptance threshold for each scaled KKT residual.
pub const KKT_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct QpRow {
    pub a: DVector<f64>,
    pub b: f64,
}

impl QpRow {
    pub fn new(a: DVector<f64>, b: f64) -> Self {
        Self { a, b }
    }

    /// `a·v − b`; positive when the row is violated.
    pub fn violation(&self, v: &DVector<f64>) -> f64 {
        self.a.dot(v) - self.b
    }

    fn scale(&self, v: &DVector<f64>) -> f64 {
        let av: f64 = self.a.iter().zip(v.iter()).map(|(a, x)| (a * x).abs()).sum();
        1f64.max(av).max(self.b.abs())
    }
}

#[derive(Debug, Clone)]
pub struct QpInstance {
    h: DMatrix<f64>,
    f: DVector<f64>,
    rows: Vec<QpRow>,
    chol: Cholesky<f64, Dyn>,
}

impl QpInstance {
    /// Validates symmetry (within 1e-12 relative), positive definiteness,
    /// dimensions, and the row-count bound.
    pub fn new(h: DMatrix<f64>, f: DVector<f64>, rows: Vec<QpRow>) -> Result<Self> {
        let n = h.nrows();
        check_len("columns of H", n, h.ncols())?;
        check_len("F", n, f.len())?;
        if n == 0 {
            return Err(Error::InvalidInput("empty decision vector".into()));
        }
        for row in &rows {
            check_len("QP row", n, row.a.len())?;
        }
        if rows.len() > MAX_ROWS {
            return Err(Error::InvalidInput(format!(
                "{} rows exceed the bound of {MAX_ROWS}",
                rows.len()
            )));
        }
        let h_scale = h.amax().max(1.0);
        if (&h - h.transpose()).amax() > 1e-12 * h_scale {
            return Err(Error::InvalidInput("H is not symmetric".into()));
        }
        let all_finite = h.iter().chain(f.iter()).all(|x| x.is_finite())
            && rows.iter().all(|r| r.b.is_finite() && r.a.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::InvalidInput("non-finite QP data".into()));
        }
        let chol = Cholesky::new(h.clone())
            .ok_or_else(|| Error::InvalidInput("H is not positive definite".into()))?;
        Ok(Self { h, f, rows, chol })
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn f(&self) -> &DVector<f64> {
        &self.f
    }

    pub fn rows(&self) -> &[QpRow] {
        &self.rows
    }

    pub fn objective(&self, v: &DVector<f64>) -> f64 {
        0.5 * v.dot(&(&self.h * v)) + self.f.dot(v)
    }

    /// Same cost, only the rows listed in `keep`.
    pub fn restricted(&self, keep: &[usize]) -> Self {
        Self {
            h: self.h.clone(),
            f: self.f.clone(),
            rows: keep.iter().map(|&i| self.rows[i].clone()).collect(),
            chol: self.chol.clone(),
        }
    }

    fn unconstrained_minimizer(&self) -> DVector<f64> {
        -self.chol.solve(&self.f)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub v: DVector<f64>,
    /// Sorted row indices held active at the solution.
    pub active_set: Vec<usize>,
    /// One multiplier per row; zero for rows outside the active set.
    pub multipliers: DVector<f64>,
    pub objective: f64,
}

impl QpSolution {
    pub fn is_active(&self, row: usize) -> bool {
        self.active_set.binary_search(&row).is_ok()
    }
}

/// Solves the QP by the dual active-set method.
///
/// Infeasible problems return [`Error::Infeasible`] carrying an irreducible
/// infeasible subset of rows.
pub fn solve_qp(qp: &QpInstance) -> Result<QpSolution> {
    match dual_active_set(qp)? {
        Outcome::Solved(sol) => Ok(sol),
        Outcome::Infeasible(candidate) => Err(Error::Infeasible {
            rows: irreducible_subset(qp, candidate, |sub| {
                matches!(dual_active_set(sub), Ok(Outcome::Infeasible(_)))
            }),
        }),
    }
}

enum Outcome {
    Solved(QpSolution),
    Infeasible(Vec<usize>),
}

const FEAS_TOL: f64 = 1e-12;
const DEP_TOL: f64 = 1e-13;

fn dual_active_set(qp: &QpInstance) -> Result<Outcome> {
    let n = qp.dim();
    let c = qp.rows.len();
    let mut v = qp.unconstrained_minimizer();
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut lambda: Vec<f64> = Vec::with_capacity(n);
    let max_iter = 50 * (n + c + 1);
    let mut iterations = 0;

    loop {
        // Most violated inactive row, relative to its scale.
        let mut pick: Option<(usize, f64)> = None;
        for (i, row) in qp.rows.iter().enumerate() {
            if active.contains(&i) {
                continue;
            }
            let viol = row.violation(&v) / row.scale(&v);
            if viol > FEAS_TOL && pick.map_or(true, |(_, best)| viol > best) {
                pick = Some((i, viol));
            }
        }
        let Some((p, _)) = pick else { break };
        let a_p = &qp.rows[p].a;
        let mut lambda_p = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(Error::NotConverged { iterations });
            }
            let hinv_ap = qp.chol.solve(a_p);
            // r = (NᵀH⁻¹N)⁻¹ NᵀH⁻¹ a_p, z = H⁻¹(N r − a_p).
            let (r, z) = if active.is_empty() {
                (DVector::zeros(0), -hinv_ap.clone())
            } else {
                let nmat = DMatrix::from_columns(
                    &active.iter().map(|&j| qp.rows[j].a.clone()).collect::<Vec<_>>(),
                );
                let hinv_n = qp.chol.solve(&nmat);
                let gram = nmat.transpose() * &hinv_n;
                let rhs = nmat.transpose() * &hinv_ap;
                let r = gram
                    .clone()
                    .cholesky()
                    .map(|ch| ch.solve(&rhs))
                    .or_else(|| gram.lu().solve(&rhs))
                    .ok_or(Error::NotConverged { iterations })?;
                let z = &hinv_n * &r - &hinv_ap;
                (r, z)
            };

            let curvature = -a_p.dot(&z);
            let full_step = if curvature > DEP_TOL * a_p.dot(&hinv_ap).max(f64::MIN_POSITIVE) {
                Some(qp.rows[p].violation(&v) / curvature)
            } else {
                None
            };

            let mut partial: Option<(usize, f64)> = None;
            for (k, (&lam, &rk)) in lambda.iter().zip(r.iter()).enumerate() {
                if rk > 0.0 {
                    let t = lam / rk;
                    if partial.map_or(true, |(_, best)| t < best) {
                        partial = Some((k, t));
                    }
                }
            }

            match (full_step, partial) {
                (None, None) => {
                    let mut rows: Vec<usize> = active
                        .iter()
                        .zip(r.iter())
                        .filter(|(_, &rk)| rk < 0.0)
                        .map(|(&j, _)| j)
                        .collect();
                    rows.push(p);
                    rows.sort_unstable();
                    return Ok(Outcome::Infeasible(rows));
                }
                (Some(t2), partial) if partial.map_or(true, |(_, t1)| t2 <= t1) => {
                    v += &z * t2;
                    for (lam, rk) in lambda.iter_mut().zip(r.iter()) {
                        *lam -= t2 * rk;
                    }
                    active.push(p);
                    lambda.push(lambda_p + t2);
                    break;
                }
                (step, Some((k, t1))) => {
                    if step.is_some() {
                        v += &z * t1;
                    }
                    for (lam, rk) in lambda.iter_mut().zip(r.iter()) {
                        *lam -= t1 * rk;
                    }
                    lambda_p += t1;
                    active.remove(k);
                    lambda.remove(k);
                }
                (Some(_), None) => unreachable!(),
            }
        }
    }

    let mut multipliers = DVector::zeros(c);
    for (&j, &lam) in active.iter().zip(lambda.iter()) {
        multipliers[j] = lam.max(0.0);
    }
    active.sort_unstable();
    let objective = qp.objective(&v);
    Ok(Outcome::Solved(QpSolution {
        v,
        active_set: active,
        multipliers,
        objective,
    }))
}

/// Deletion filter: drops rows whose removal keeps the set infeasible.
fn irreducible_subset(
    qp: &QpInstance,
    mut rows: Vec<usize>,
    infeasible: impl Fn(&QpInstance) -> bool,
) -> Vec<usize> {
    let mut i = 0;
    while i < rows.len() {
        let mut trial = rows.clone();
        trial.remove(i);
        if infeasible(&qp.restricted(&trial)) {
            rows = trial;
        } else {
            i += 1;
        }
    }
    rows
}

/// Exhaustive active-set enumeration. Exact for `c ≤ MAX_ROWS` rows.
///
/// Among feasible KKT points keeps the least objective, breaking ties by the
/// lexicographically smallest active set.
pub fn enumerate_solve(qp: &QpInstance) -> Result<QpSolution> {
    match enumerate_kkt(qp) {
        Some(sol) => Ok(sol),
        None => {
            let all: Vec<usize> = (0..qp.rows.len()).collect();
            Err(Error::Infeasible {
                rows: irreducible_subset(qp, all, |sub| enumerate_kkt(sub).is_none()),
            })
        }
    }
}

fn enumerate_kkt(qp: &QpInstance) -> Option<QpSolution> {
    let n = qp.dim();
    let c = qp.rows.len();
    let mut best: Option<QpSolution> = None;
    for mask in 0u32..(1u32 << c) {
        let subset: Vec<usize> = (0..c).filter(|i| mask & (1 << i) != 0).collect();
        let k = subset.len();
        if k > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.h);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&qp.f));
        for (col, &i) in subset.iter().enumerate() {
            let a = &qp.rows[i].a;
            kkt.view_mut((0, n + col), (n, 1)).copy_from(a);
            kkt.view_mut((n + col, 0), (1, n)).copy_from(&a.transpose());
            rhs[n + col] = qp.rows[i].b;
        }
        // Dependent row subsets are covered by an independent subset.
        let svd = kkt.clone().svd(false, false);
        let smax = svd.singular_values.max();
        if svd.singular_values.min() <= 1e-12 * smax {
            continue;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else { continue };
        let v = sol.rows(0, n).into_owned();
        let lam = sol.rows(n, k).into_owned();
        let lam_scale = lam.amax().max(1.0);
        if lam.iter().any(|&l| l < -1e-10 * lam_scale) {
            continue;
        }
        if qp
            .rows
            .iter()
            .any(|row| row.violation(&v) > 1e-10 * row.scale(&v))
        {
            continue;
        }
        let objective = qp.objective(&v);
        let better = match &best {
            None => true,
            Some(b) => {
                let tie = 1e-12 * objective.abs().max(b.objective.abs()).max(1.0);
                objective < b.objective - tie
                    || (objective <= b.objective + tie && subset < b.active_set)
            }
        };
        if better {
            let mut multipliers = DVector::zeros(c);
            for (&i, &l) in subset.iter().zip(lam.iter()) {
                multipliers[i] = l.max(0.0);
            }
            best = Some(QpSolution {
                v,
                active_set: subset,
                multipliers,
                objective,
            });
        }
    }
    best
}

/// Scaled KKT residuals, each a max-norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktReport {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub dual_feasibility: f64,
    pub complementary_slackness: f64,
}

impl KktReport {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementary_slackness)
    }

    pub fn accepted(&self) -> bool {
        self.max() <= KKT_TOL
    }
}

/// KKT residuals of `sol` for `qp`.
///
/// Each residual is divided by `max(1, magnitude of the terms it combines)`,
/// so O(1) problems see absolute residuals while badly scaled rows (the ACC
/// rows carry 1/M coefficients and multipliers near 1e7) are not penalized
/// for round-off.
pub fn check_kkt(qp: &QpInstance, sol: &QpSolution) -> KktReport {
    let v = &sol.v;
    let hv = &qp.h * v;
    let mut grad = &hv + &qp.f;
    let mut scale = 1f64.max(hv.amax()).max(qp.f.amax());
    let mut primal: f64 = 0.0;
    let mut dual: f64 = 0.0;
    let mut comp: f64 = 0.0;
    let lam_scale = sol.multipliers.amax().max(1.0);
    for (row, &lam) in qp.rows.iter().zip(sol.multipliers.iter()) {
        grad.axpy(lam, &row.a, 1.0);
        scale = scale.max(lam.abs() * row.a.amax());
        let viol = row.violation(v);
        let row_scale = row.scale(v);
        primal = primal.max(viol.max(0.0) / row_scale);
        dual = dual.max((-lam).max(0.0) / lam_scale);
        comp = comp.max((lam * viol).abs() / (lam.abs() * row_scale).max(1.0));
    }
    KktReport {
        stationarity: grad.amax() / scale,
        primal_feasibility: primal,
        dual_feasibility: dual,
        complementary_slackness: comp,
    }
}

/// A random strictly convex instance that is feasible by construction.
pub fn random_instance<R: Rng + ?Sized>(rng: &mut R, nvar: usize, nrows: usize) -> QpInstance {
    let l = DMatrix::from_fn(nvar, nvar, |_, _| rng.random_range(-1.0..1.0));
    let h = &l * l.transpose() + DMatrix::identity(nvar, nvar) * 0.1;
    let h = (&h + h.transpose()) * 0.5;
    let f = DVector::from_fn(nvar, |_, _| rng.random_range(-3.0..3.0));
    let anchor = DVector::from_fn(nvar, |_, _| rng.random_range(-1.0..1.0));
    let rows = (0..nrows)
        .map(|_| {
            let a = DVector::from_fn(nvar, |_, _| rng.random_range(-1.0..1.0));
            let b = a.dot(&anchor) + rng.random_range(0.0..1.0);
            QpRow::new(a, b)
        })
        .collect();
    QpInstance::new(h, f, rows).expect("generated instance is valid")
}

/// Outcome of comparing [`solve_qp`] with [`enumerate_solve`] on random instances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleComparison {
    pub instances: usize,
    pub max_objective_diff: f64,
    pub max_argument_diff: f64,
    pub max_kkt_residual: f64,
    pub max_oracle_kkt_residual: f64,
}

impl OracleComparison {
    pub fn passed(&self) -> bool {
        self.max_objective_diff <= 1e-8
            && self.max_argument_diff <= 1e-6
            && self.max_kkt_residual <= KKT_TOL
            && self.max_oracle_kkt_residual <= KKT_TOL
    }
}

/// Random instances with 2–4 variables and 1–4 rows.
pub fn compare_with_oracle<R: Rng + ?Sized>(rng: &mut R, instances: usize) -> Result<OracleComparison> {
    let mut cmp = OracleComparison {
        instances,
        max_objective_diff: 0.0,
        max_argument_diff: 0.0,
        max_kkt_residual: 0.0,
        max_oracle_kkt_residual: 0.0,
    };
    for _ in 0..instances {
        let nvar = rng.random_range(2..=4);
        let nrows = rng.random_range(1..=4);
        let qp = random_instance(rng, nvar, nrows);
        let fast = solve_qp(&qp)?;
        let exact = enumerate_solve(&qp)?;
        cmp.max_objective_diff = cmp.max_objective_diff.max((fast.objective - exact.objective).abs());
        cmp.max_argument_diff = cmp.max_argument_diff.max((&fast.v - &exact.v).amax());
        cmp.max_kkt_residual = cmp.max_kkt_residual.max(check_kkt(&qp, &fast).max());
        cmp.max_oracle_kkt_residual = cmp.max_oracle_kkt_residual.max(check_kkt(&qp, &exact).max());
    }
    Ok(cmp)
}
