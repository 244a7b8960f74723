//! Batch least-squares identifier.
//!
//! Integrating the plant between any two times `σ ≤ t` gives the linear
//! regression `p(t,σ) = q(t,σ) θ` with
//!
//! ```text
//!     q(t,σ) = ∫_σ^t φ(x(s))ᵀ ds = Q(t) − Q(σ)
//!     p(t,σ) = x(t) − x(σ) − ∫_σ^t (f + g u) ds = R(t) − R(σ)
//! ```
//!
//! Weighting every pair `(t, σ)` in `[0, T]²` equally and expanding the double
//! integrals of `qᵀq` and `qᵀp` leaves four running integrals:
//!
//! ```text
//!     A = ∫ QᵀQ,  B = ∫ Q,  C = ∫ QᵀR,  D = ∫ R
//!     G(T) = 2 (T·A − BᵀB),   Z(T) = 2 (T·C − BᵀD)
//! ```
//!
//! so `Z = Gθ` holds for the true parameter and memory stays constant in `T`.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_len, Error, Result};
use crate::model::SystemModel;

/// Default relative eigenvalue cut for the pseudo-inverse.
pub const DEFAULT_RANK_TOL: f64 = 1e-8;
/// Default relative residual above which data counts as new excitation.
pub const DEFAULT_EXCITATION_TOL: f64 = 1e-9;
/// Default consistency bound on `‖G·θ_new − Z‖ / (1 + ‖Z‖)`.
pub const DEFAULT_CONSISTENCY_TOL: f64 = 1e-8;

/// Increments of `∫φᵀ` and `∫(f + g u)` over one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepIntegrals {
    pub phi_t: DMatrix<f64>,
    pub known: DVector<f64>,
}

impl StepIntegrals {
    /// Trapezoidal increments with `u` held over the step.
    pub fn trapezoid(
        model: &SystemModel,
        x_start: &DVector<f64>,
        x_end: &DVector<f64>,
        u: &DVector<f64>,
        dt: f64,
    ) -> Result<Self> {
        let half = 0.5 * dt;
        let phi_t = (model.phi(x_start)? + model.phi(x_end)?).transpose() * half;
        let g_start = model.g(x_start)?;
        let g_end = model.g(x_end)?;
        check_len("input", model.m, u.len())?;
        let known = (model.f(x_start)? + model.f(x_end)? + (g_start + g_end) * u) * half;
        Ok(Self { phi_t, known })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateRecord {
    pub time: f64,
    pub theta_before: DVector<f64>,
    pub theta_after: DVector<f64>,
    pub rank: usize,
}

/// Running accumulators and the current estimate.
#[derive(Debug, Clone)]
pub struct IdentifierState {
    q: DMatrix<f64>,
    r: DVector<f64>,
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    d: DVector<f64>,
    t: f64,
    x_last: DVector<f64>,
    theta_hat: DVector<f64>,
    update_log: Vec<UpdateRecord>,
}

impl IdentifierState {
    pub fn new(model: &SystemModel, x0: DVector<f64>, theta_hat: DVector<f64>) -> Result<Self> {
        let (n, p) = (model.n, model.p);
        check_len("initial state", n, x0.len())?;
        check_len("initial estimate", p, theta_hat.len())?;
        Ok(Self {
            q: DMatrix::zeros(n, p),
            r: DVector::zeros(n),
            a: DMatrix::zeros(p, p),
            b: DMatrix::zeros(n, p),
            c: DVector::zeros(p),
            d: DVector::zeros(n),
            t: 0.0,
            x_last: x0,
            theta_hat,
            update_log: Vec::new(),
        })
    }

    /// Advances every accumulator over a step of length `dt` ending at `x`,
    /// using trapezoidal increments of `φᵀ` and `f + g u`.
    pub fn accumulate(&mut self, model: &SystemModel, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<()> {
        let step = StepIntegrals::trapezoid(model, &self.x_last, x, u, dt)?;
        self.accumulate_integrals(x, &step, dt)
    }

    /// Advances the accumulators with inner increments supplied by the caller
    /// (e.g. integrated alongside the plant). The outer integrals `A, B, C, D`
    /// always use the trapezoidal rule.
    pub fn accumulate_integrals(&mut self, x: &DVector<f64>, step: &StepIntegrals, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidInput(format!("step must be positive, got {dt}")));
        }
        check_len("state", self.x_last.len(), x.len())?;
        check_len("rows of phi increment", self.q.nrows(), step.phi_t.nrows())?;
        check_len("columns of phi increment", self.q.ncols(), step.phi_t.ncols())?;
        check_len("known-dynamics increment", self.r.len(), step.known.len())?;

        let q_new = &self.q + &step.phi_t;
        let r_new = &self.r + (x - &self.x_last) - &step.known;
        let half = 0.5 * dt;
        self.a += (self.q.transpose() * &self.q + q_new.transpose() * &q_new) * half;
        self.b += (&self.q + &q_new) * half;
        self.c += (self.q.transpose() * &self.r + q_new.transpose() * &r_new) * half;
        self.d += (&self.r + &r_new) * half;
        self.q = q_new;
        self.r = r_new;
        self.x_last.copy_from(x);
        self.t += dt;
        Ok(())
    }

    /// `G = 2(tA − BᵀB)`, `Z = 2(tC − BᵀD)`.
    pub fn gram(&self) -> (DMatrix<f64>, DVector<f64>) {
        let bt = self.b.transpose();
        let mut g = (&self.a * self.t - &bt * &self.b) * 2.0;
        // Symmetrize away round-off.
        g = (&g + g.transpose()) * 0.5;
        let z = (&self.c * self.t - &bt * &self.d) * 2.0;
        (g, z)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn theta_hat(&self) -> &DVector<f64> {
        &self.theta_hat
    }

    pub fn update_log(&self) -> &[UpdateRecord] {
        &self.update_log
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DVector<f64> {
        &self.r
    }

    /// Runs the least-norm update at the current time. Records and applies it
    /// only when it changes the estimate; returns whether it did.
    pub fn update(&mut self, rank_tol: f64, consistency_tol: f64) -> Result<bool> {
        let (g, z) = self.gram();
        let out = least_norm_update(&g, &z, &self.theta_hat, rank_tol, consistency_tol)?;
        if out.theta == self.theta_hat {
            return Ok(false);
        }
        self.update_log.push(UpdateRecord {
            time: self.t,
            theta_before: self.theta_hat.clone(),
            theta_after: out.theta.clone(),
            rank: out.rank,
        });
        self.theta_hat = out.theta;
        Ok(true)
    }

    /// Writes the update log as CSV: `time, before_1..p, after_1..p, rank`.
    pub fn write_update_log<W: Write>(&self, out: W) -> Result<()> {
        write_update_log(&self.update_log, self.theta_hat.len(), out)
    }
}

pub fn write_update_log<W: Write>(log: &[UpdateRecord], p: usize, mut out: W) -> Result<()> {
    let mut header = vec!["time".to_string()];
    header.extend((1..=p).map(|j| format!("before_{j}")));
    header.extend((1..=p).map(|j| format!("after_{j}")));
    header.push("rank".into());
    writeln!(out, "{}", header.join(","))?;
    for rec in log {
        let mut fields = vec![crate::sim::fmt_f64(rec.time)];
        fields.extend(rec.theta_before.iter().map(|&x| crate::sim::fmt_f64(x)));
        fields.extend(rec.theta_after.iter().map(|&x| crate::sim::fmt_f64(x)));
        fields.push(rec.rank.to_string());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

/// `‖Z − Gθ‖ > tol·(1 + ‖G‖·‖θ‖)` (Euclidean / Frobenius norms).
pub fn has_new_excitation(g: &DMatrix<f64>, z: &DVector<f64>, theta_prev: &DVector<f64>, tol: f64) -> bool {
    let residual = (z - g * theta_prev).norm();
    residual > tol * (1.0 + g.norm() * theta_prev.norm())
}

/// Count of eigenvalues of the symmetric `g` above `rank_tol·λ_max`.
pub fn numerical_rank(g: &DMatrix<f64>, rank_tol: f64) -> usize {
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    if lmax == 0.0 {
        return 0;
    }
    eig.eigenvalues.iter().filter(|&&l| l > rank_tol * lmax).count()
}

/// Orthonormal basis of the eigenvectors of `g` at or below `rank_tol·λ_max`.
pub fn null_space_basis(g: &DMatrix<f64>, rank_tol: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let cols: Vec<_> = eig
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| lmax == 0.0 || l <= rank_tol * lmax)
        .map(|(k, _)| eig.eigenvectors.column(k).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(g.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeastNormUpdate {
    pub theta: DVector<f64>,
    pub rank: usize,
    /// `‖G·θ − Z‖`.
    pub residual: f64,
}

/// Projection of `theta_prev` onto `{ϑ : Gϑ = Z}`:
/// `θ_new = θ_prev + G⁺(Z − Gθ_prev)`, with `G⁺` the eigendecomposition
/// pseudo-inverse that drops eigenvalues at or below `rank_tol·λ_max`.
///
/// Fails with [`Error::InconsistentSystem`] when
/// `‖G·θ_new − Z‖ > consistency_tol·(1 + ‖Z‖)`.
pub fn least_norm_update(
    g: &DMatrix<f64>,
    z: &DVector<f64>,
    theta_prev: &DVector<f64>,
    rank_tol: f64,
    consistency_tol: f64,
) -> Result<LeastNormUpdate> {
    let p = theta_prev.len();
    check_len("rows of G", p, g.nrows())?;
    check_len("columns of G", p, g.ncols())?;
    check_len("Z", p, z.len())?;
    let residual_prev = z - g * theta_prev;
    let eig = SymmetricEigen::new(g.clone());
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, &l| m.max(l.abs()));
    let mut step = DVector::zeros(p);
    let mut rank = 0;
    if lmax > 0.0 {
        for (k, &l) in eig.eigenvalues.iter().enumerate() {
            if l > rank_tol * lmax {
                let vk = eig.eigenvectors.column(k);
                step += vk * (vk.dot(&residual_prev) / l);
                rank += 1;
            }
        }
    }
    let theta = if rank == 0 { theta_prev.clone() } else { theta_prev + step };
    let residual = (g * &theta - z).norm();
    let bound = consistency_tol * (1.0 + z.norm());
    if residual > bound {
        return Err(Error::InconsistentSystem { residual, bound });
    }
    Ok(LeastNormUpdate { theta, rank, residual })
}
