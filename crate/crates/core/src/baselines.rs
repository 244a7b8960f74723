//! Lyapunov-based adaptive laws used as comparison baselines.
//!
//! Two estimates are carried: `θ̂_V` feeds the CLF row and `θ̂_h` the CBF row.
//!
//! ```text
//!     θ̂̇_V =  c₁ (∂V/∂x · φᵀ)ᵀ
//!     θ̂̇_h = −c₂ (∂h/∂x · φᵀ)ᵀ
//! ```
//!
//! The gradients of the adaptive CLF/CBF with respect to `x` coincide with
//! those of `V` and `h`, since the estimation-error terms do not depend on `x`.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::model::{CbfSpec, ClfSpec, SystemModel};

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovAdaptiveState {
    pub theta_v: DVector<f64>,
    pub theta_h: DVector<f64>,
    pub c1: f64,
    pub c2: f64,
}

impl LyapunovAdaptiveState {
    pub fn new(theta_v: DVector<f64>, theta_h: DVector<f64>, c1: f64, c2: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > 0.0) {
            return Err(Error::InvalidInput(format!(
                "adaptation gains must be positive, got c1 = {c1}, c2 = {c2}"
            )));
        }
        check_len("theta_h", theta_v.len(), theta_h.len())?;
        Ok(Self {
            theta_v,
            theta_h,
            c1,
            c2,
        })
    }
}

/// Returns `(θ̂̇_V, θ̂̇_h)` at state `x`.
pub fn lyapunov_rates(
    x: &DVector<f64>,
    exo: &DVector<f64>,
    state: &LyapunovAdaptiveState,
    clf: &ClfSpec,
    cbf: &CbfSpec,
    model: &SystemModel,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let phi_t = model.phi(x)?.transpose();
    let grad_v = clf.gradient(x);
    let grad_h = cbf.gradient(x, exo);
    check_len("gradient of V", model.n, grad_v.len())?;
    check_len("gradient of h", model.n, grad_h.len())?;
    let rate_v = (grad_v * &phi_t).transpose() * state.c1;
    let rate_h = (grad_h * &phi_t).transpose() * -state.c2;
    Ok((rate_v, rate_h))
}

/// Componentwise bounds `lower ≤ θ ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxSet {
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl BoxSet {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_len("upper bound", lower.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::InvalidInput("box needs lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    /// `[lo·θ, hi·θ]` taken componentwise (bounds ordered per component, so
    /// negative entries are handled).
    pub fn scaled(theta: &DVector<f64>, lo: f64, hi: f64) -> Result<Self> {
        let a = theta * lo;
        let b = theta * hi;
        Self::new(a.zip_map(&b, f64::min), a.zip_map(&b, f64::max))
    }

    pub fn contains(&self, theta: &DVector<f64>) -> bool {
        theta.len() == self.lower.len()
            && theta
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .all(|(t, (l, u))| l <= t && t <= u)
    }

    pub fn clamp(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            theta.len(),
            theta
                .iter()
                .zip(self.lower.iter().zip(self.upper.iter()))
                .map(|(t, (l, u))| t.clamp(*l, *u)),
        )
    }
}

/// Zeroes each rate component that would push `theta_hat` out of the box
/// through a face it currently sits on.
pub fn project_rate(theta_hat: &DVector<f64>, rate: &DVector<f64>, bounds: &BoxSet) -> Result<DVector<f64>> {
    check_len("rate", theta_hat.len(), rate.len())?;
    if !bounds.contains(theta_hat) {
        return Err(Error::OutsideBox {
            theta: theta_hat.iter().copied().collect(),
        });
    }
    let mut out = rate.clone();
    for j in 0..out.len() {
        let at_upper = theta_hat[j] >= bounds.upper[j] && out[j] > 0.0;
        let at_lower = theta_hat[j] <= bounds.lower[j] && out[j] < 0.0;
        if at_upper || at_lower {
            out[j] = 0.0;
        }
    }
    Ok(out)
}
