//! Control-affine plant with linearly parameterized uncertainty,
//!
//! ```text
//!     ẋ = f(x) + φ(x)ᵀ θ + g(x) u
//! ```
//!
//! together with the CLF and CBF descriptions used to build the affine
//! constraint rows of the safety QP. The decision vector of that QP is
//! `v = [u, δ]` where `δ` relaxes the CLF row.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{check_len, Result};

pub type VectorField = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixField = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ScalarField = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
pub type RowField = Arc<dyn Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync>;
/// Scalar function of the plant state and an exogenous signal vector.
pub type ExoScalarField = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> f64 + Send + Sync>;
pub type ExoRowField = Arc<dyn Fn(&DVector<f64>, &DVector<f64>) -> RowDVector<f64> + Send + Sync>;

/// Plant `ẋ = f(x) + φ(x)ᵀθ + g(x)u` with `n` states, `m` inputs and `p`
/// unknown parameters.
///
/// `phi` returns the `p×n` matrix φ(x), so φ(x)ᵀ is `n×p`.
#[derive(Clone)]
pub struct SystemModel {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    f: VectorField,
    phi: MatrixField,
    g: MatrixField,
}

impl fmt::Debug for SystemModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemModel")
            .field("n", &self.n)
            .field("m", &self.m)
            .field("p", &self.p)
            .finish_non_exhaustive()
    }
}

impl SystemModel {
    pub fn new(n: usize, m: usize, p: usize, f: VectorField, phi: MatrixField, g: MatrixField) -> Self {
        Self { n, m, p, f, phi, g }
    }

    pub fn f(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("state", self.n, x.len())?;
        let out = (self.f)(x);
        check_len("f(x)", self.n, out.len())?;
        Ok(out)
    }

    /// φ(x), shape `p×n`.
    pub fn phi(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("state", self.n, x.len())?;
        let out = (self.phi)(x);
        check_len("rows of phi(x)", self.p, out.nrows())?;
        check_len("columns of phi(x)", self.n, out.ncols())?;
        Ok(out)
    }

    /// g(x), shape `n×m`.
    pub fn g(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        check_len("state", self.n, x.len())?;
        let out = (self.g)(x);
        check_len("rows of g(x)", self.n, out.nrows())?;
        check_len("columns of g(x)", self.m, out.ncols())?;
        Ok(out)
    }

    /// Drift under a parameter vector: `f(x) + φ(x)ᵀθ`.
    pub fn drift(&self, x: &DVector<f64>, theta: &DVector<f64>) -> Result<DVector<f64>> {
        check_len("theta", self.p, theta.len())?;
        Ok(self.f(x)? + self.phi(x)?.transpose() * theta)
    }
}

/// Evaluates `f(x) + φ(x)ᵀθ + g(x)u`.
pub fn eval_dynamics(
    model: &SystemModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
    theta: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len("input", model.m, u.len())?;
    Ok(model.drift(x, theta)? + model.g(x)? * u)
}

/// Decrease rate imposed on the CLF.
#[derive(Clone)]
pub enum Alpha3 {
    /// `α₃ = k·V(x)`.
    Linear(f64),
    /// Any class-K function, applied to `V(x)`.
    Custom(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
}

impl Alpha3 {
    pub fn eval(&self, v: f64) -> f64 {
        match self {
            Alpha3::Linear(k) => k * v,
            Alpha3::Custom(func) => func(v),
        }
    }
}

impl fmt::Debug for Alpha3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha3::Linear(k) => write!(f, "Linear({k})"),
            Alpha3::Custom(_) => write!(f, "Custom(..)"),
        }
    }
}

#[derive(Clone)]
pub struct ClfSpec {
    v: ScalarField,
    grad_v: RowField,
    pub alpha3: Alpha3,
}

impl fmt::Debug for ClfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClfSpec")
            .field("alpha3", &self.alpha3)
            .finish_non_exhaustive()
    }
}

impl ClfSpec {
    pub fn new(v: ScalarField, grad_v: RowField, alpha3: Alpha3) -> Self {
        Self { v, grad_v, alpha3 }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        (self.v)(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> RowDVector<f64> {
        (self.grad_v)(x)
    }
}

/// Extended class-K function `α₄(s) = κ·s^λ` with odd `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Alpha4 {
    pub kappa: f64,
    pub lambda: u32,
}

impl Alpha4 {
    pub fn new(kappa: f64, lambda: u32) -> Result<Self> {
        if !(kappa > 0.0) || lambda % 2 == 0 {
            return Err(crate::Error::InvalidInput(format!(
                "alpha4 needs kappa > 0 and odd lambda, got kappa = {kappa}, lambda = {lambda}"
            )));
        }
        Ok(Self { kappa, lambda })
    }

    pub fn linear(kappa: f64) -> Self {
        Self { kappa, lambda: 1 }
    }

    pub fn eval(&self, s: f64) -> f64 {
        self.kappa * s.powi(self.lambda as i32)
    }

    /// Largest σ with `s / α₄(s) ≥ σ` on `(0, chi_bar]`.
    ///
    /// For λ = 1 this is `1/κ` for any cap; for λ ≥ 3 the ratio decreases in
    /// `s`, so the bound is attained at the cap and needs a finite one.
    pub fn sigma(&self, chi_bar: f64) -> Option<f64> {
        if self.lambda == 1 {
            Some(1.0 / self.kappa)
        } else if chi_bar.is_finite() && chi_bar > 0.0 {
            Some(chi_bar.powi(1 - self.lambda as i32) / self.kappa)
        } else {
            None
        }
    }
}

/// Zeroing CBF `h(x, e)` where `e` carries exogenous signals the plant
/// state does not contain. Their contribution to `ḣ` is
/// `exogenous_rate_term(x, e)`.
#[derive(Clone)]
pub struct CbfSpec {
    h: ExoScalarField,
    grad_h: ExoRowField,
    exo_rate: ExoScalarField,
    pub alpha4: Alpha4,
}

impl fmt::Debug for CbfSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CbfSpec")
            .field("alpha4", &self.alpha4)
            .finish_non_exhaustive()
    }
}

impl CbfSpec {
    pub fn new(h: ExoScalarField, grad_h: ExoRowField, exo_rate: ExoScalarField, alpha4: Alpha4) -> Self {
        Self {
            h,
            grad_h,
            exo_rate,
            alpha4,
        }
    }

    pub fn value(&self, x: &DVector<f64>, exo: &DVector<f64>) -> f64 {
        (self.h)(x, exo)
    }

    pub fn gradient(&self, x: &DVector<f64>, exo: &DVector<f64>) -> RowDVector<f64> {
        (self.grad_h)(x, exo)
    }

    pub fn exogenous_rate_term(&self, x: &DVector<f64>, exo: &DVector<f64>) -> f64 {
        (self.exo_rate)(x, exo)
    }
}

/// Inequality `coef_u·u + coef_delta·δ ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineRow {
    pub coef_u: DVector<f64>,
    pub coef_delta: f64,
    pub rhs: f64,
}

impl AffineRow {
    /// The row over the stacked decision vector `[u, δ]`.
    pub fn decision_coefficients(&self) -> DVector<f64> {
        let m = self.coef_u.len();
        let mut a = DVector::zeros(m + 1);
        a.rows_mut(0, m).copy_from(&self.coef_u);
        a[m] = self.coef_delta;
        a
    }

    /// `rhs − (coef_u·u + coef_delta·δ)`; non-negative when satisfied.
    pub fn slack(&self, u: &DVector<f64>, delta: f64) -> f64 {
        self.rhs - (self.coef_u.dot(u) + self.coef_delta * delta)
    }
}

/// CLF row `∂V/∂x·(f + φᵀθ̂ + g u) + α₃(V) ≤ δ`, rearranged to
/// `(∂V/∂x·g)·u − δ ≤ −∂V/∂x·(f + φᵀθ̂) − α₃(V)`.
pub fn clf_row(
    model: &SystemModel,
    clf: &ClfSpec,
    x: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> Result<AffineRow> {
    let grad = clf.gradient(x);
    check_len("gradient of V", model.n, grad.len())?;
    let drift = model.drift(x, theta_hat)?;
    let coef_u = (&grad * model.g(x)?).transpose();
    let rhs = -(&grad * drift)[0] - clf.alpha3.eval(clf.value(x));
    Ok(AffineRow {
        coef_u,
        coef_delta: -1.0,
        rhs,
    })
}

/// CBF row `−[∂h/∂x·(f + φᵀθ̂ + g u) + exo + α₄(h)] ≤ 0`, rearranged to
/// `−(∂h/∂x·g)·u ≤ ∂h/∂x·(f + φᵀθ̂) + exo + α₄(h)`.
pub fn cbf_row(
    model: &SystemModel,
    cbf: &CbfSpec,
    x: &DVector<f64>,
    exo: &DVector<f64>,
    theta_hat: &DVector<f64>,
) -> Result<AffineRow> {
    let grad = cbf.gradient(x, exo);
    check_len("gradient of h", model.n, grad.len())?;
    let drift = model.drift(x, theta_hat)?;
    let coef_u = -(&grad * model.g(x)?).transpose();
    let rhs = (&grad * drift)[0]
        + cbf.exogenous_rate_term(x, exo)
        + cbf.alpha4.eval(cbf.value(x, exo));
    Ok(AffineRow {
        coef_u,
        coef_delta: 0.0,
        rhs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn zero_model(n: usize, m: usize, p: usize) -> SystemModel {
        SystemModel::new(
            n,
            m,
            p,
            Arc::new(move |_| DVector::zeros(n)),
            Arc::new(move |_| DMatrix::zeros(p, n)),
            Arc::new(move |_| DMatrix::identity(n, m)),
        )
    }

    #[test]
    fn zero_everything_gives_zero_derivative() {
        let model = zero_model(3, 2, 4);
        let dx = eval_dynamics(
            &model,
            &DVector::from_vec(vec![1.0, -2.0, 3.0]),
            &DVector::zeros(2),
            &DVector::zeros(4),
        )
        .unwrap();
        assert_eq!(dx, DVector::zeros(3));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let model = zero_model(2, 1, 3);
        let err = eval_dynamics(&model, &DVector::zeros(3), &DVector::zeros(1), &DVector::zeros(3));
        assert!(matches!(err, Err(crate::Error::DimensionMismatch { .. })));
        let err = eval_dynamics(&model, &DVector::zeros(2), &DVector::zeros(2), &DVector::zeros(3));
        assert!(matches!(err, Err(crate::Error::DimensionMismatch { .. })));
        let err = eval_dynamics(&model, &DVector::zeros(2), &DVector::zeros(1), &DVector::zeros(2));
        assert!(matches!(err, Err(crate::Error::DimensionMismatch { .. })));
    }

    #[test]
    fn evaluator_with_wrong_output_shape_is_rejected() {
        let model = SystemModel::new(
            2,
            1,
            1,
            Arc::new(|_| DVector::zeros(3)),
            Arc::new(|_| DMatrix::zeros(1, 2)),
            Arc::new(|_| DMatrix::zeros(2, 1)),
        );
        assert!(model.f(&DVector::zeros(2)).is_err());
    }

    #[test]
    fn clf_row_at_equilibrium_is_trivial() {
        // V = ½x², f ≡ 0, φ ≡ 0, at x = 0.
        let model = zero_model(1, 1, 2);
        let clf = ClfSpec::new(
            Arc::new(|x| 0.5 * x[0] * x[0]),
            Arc::new(|x| RowDVector::from_element(1, x[0])),
            Alpha3::Linear(3.0),
        );
        let row = clf_row(&model, &clf, &DVector::zeros(1), &DVector::from_vec(vec![7.0, -1.0])).unwrap();
        assert_eq!(row.coef_u[0], 0.0);
        assert_eq!(row.rhs, 0.0);
        assert_eq!(row.coef_delta, -1.0);
    }

    #[test]
    fn cbf_row_on_boundary_forbids_decrease() {
        let model = zero_model(1, 1, 1);
        let cbf = CbfSpec::new(
            Arc::new(|x, _| x[0]),
            Arc::new(|_, _| RowDVector::from_element(1, 1.0)),
            Arc::new(|_, _| 0.0),
            Alpha4::linear(2.0),
        );
        let row = cbf_row(&model, &cbf, &DVector::zeros(1), &DVector::zeros(0), &DVector::zeros(1)).unwrap();
        assert_eq!(row.rhs, 0.0);
        assert_eq!(row.coef_u[0], -1.0);
        assert_eq!(row.coef_delta, 0.0);
    }

    #[test]
    fn custom_alpha3_hook() {
        let a = Alpha3::Custom(Arc::new(|v: f64| v * v));
        assert_relative_eq!(a.eval(3.0), 9.0);
    }

    #[test]
    fn alpha4_is_extended_class_k() {
        for a in [Alpha4::linear(2.0), Alpha4::new(0.5, 3).unwrap()] {
            assert_eq!(a.eval(0.0), 0.0);
            let grid: Vec<f64> = (-50..=50).map(|i| i as f64 * 0.1).collect();
            for w in grid.windows(2) {
                assert!(a.eval(w[1]) > a.eval(w[0]));
            }
        }
        assert!(Alpha4::new(1.0, 2).is_err());
        assert!(Alpha4::new(0.0, 1).is_err());
    }

    #[test]
    fn alpha4_sigma() {
        assert_relative_eq!(Alpha4::linear(2.0).sigma(f64::INFINITY).unwrap(), 0.5);
        let cubic = Alpha4::new(1.0, 3).unwrap();
        assert!(cubic.sigma(f64::INFINITY).is_none());
        // s/α₄(s) = s⁻² ≥ 1/4 on (0, 2].
        assert_relative_eq!(cubic.sigma(2.0).unwrap(), 0.25);
    }
}
