//! Adaptive cruise control benchmark.
//!
//! Follower kinematics `ẋ_f = v_f`, `v̇_f = τ_f/M + φ(v_f)ᵀθ` with
//! `φ(v) = −0.1·[1, v, v²]ᵀ` lumping rolling resistance and drag. The
//! identified channel is `v_f` alone (n = m = 1, p = 3); positions enter the
//! barrier through the exogenous vector `[x_f, x_l, v_l]`.
//!
//! CLF `V = ½(v_f − v_d)²`, CBF `h = x_l − x_f − k_d·v_f` (time headway).

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cbf_row, clf_row, Alpha3, Alpha4, CbfSpec, ClfSpec, SystemModel};
use crate::qp::{QpInstance, QpRow};

/// Row order in every ACC QP.
pub const CLF_ROW: usize = 0;
pub const CBF_ROW: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AccParams {
    /// Vehicle mass (kg).
    pub mass: f64,
    /// Time headway (s).
    pub k_d: f64,
    /// Desired speed (m/s).
    pub v_d: f64,
    pub theta: Vec<f64>,
    pub theta_hat0: Vec<f64>,
    pub k1: f64,
    pub k2: f64,
    pub c1: f64,
    pub c2: f64,
    /// Diagonal of the QP cost `H = diag(h_u, h_delta)`.
    pub h_u: f64,
    pub h_delta: f64,
    pub x_l0: f64,
    pub v_l0: f64,
    pub x_f0: f64,
    pub v_f0: f64,
}

impl Default for AccParams {
    fn default() -> Self {
        Self {
            mass: 1650.0,
            k_d: 1.8,
            v_d: 20.0,
            theta: vec![0.5, 5.0, 0.25],
            theta_hat0: vec![0.4, 4.0, 0.3],
            k1: 1.0,
            k2: 2.0,
            c1: 0.25,
            c2: 0.25,
            h_u: 1.0,
            h_delta: 10.0,
            x_l0: 100.0,
            v_l0: 18.0,
            x_f0: 0.0,
            v_f0: 0.0,
        }
    }
}

impl AccParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("k_d", self.k_d),
            ("k1", self.k1),
            ("k2", self.k2),
            ("c1", self.c1),
            ("c2", self.c2),
            ("h_u", self.h_u),
            ("h_delta", self.h_delta),
        ];
        for (name, value) in positive {
            if !(value > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        if self.theta.len() != 3 || self.theta_hat0.len() != 3 {
            return Err(Error::Config("theta and theta_hat0 need three components".into()));
        }
        Ok(())
    }

    pub fn theta(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta)
    }

    pub fn theta_hat0(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.theta_hat0)
    }

    pub fn initial_state(&self) -> AccState {
        AccState {
            x_f: self.x_f0,
            v_f: self.v_f0,
            x_l: self.x_l0,
            v_l: self.v_l0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CaseId {
    /// Lyapunov-based laws, no projection.
    I,
    /// Lyapunov-based laws projected onto `[0.8θ, 1.2θ]`.
    II,
    /// Lyapunov-based laws projected onto `[0.2θ, 1.8θ]`.
    III,
    /// Safety-triggered batch least-squares identifier.
    IV,
}

impl CaseId {
    pub const ALL: [CaseId; 4] = [CaseId::I, CaseId::II, CaseId::III, CaseId::IV];

    /// Box factors `(lo, hi)` of the projection set, if any.
    pub fn box_factors(self) -> Option<(f64, f64)> {
        match self {
            CaseId::II => Some((0.8, 1.2)),
            CaseId::III => Some((0.2, 1.8)),
            CaseId::I | CaseId::IV => None,
        }
    }

    pub fn uses_identifier(self) -> bool {
        self == CaseId::IV
    }

    pub fn slug(self) -> &'static str {
        match self {
            CaseId::I => "case-i",
            CaseId::II => "case-ii",
            CaseId::III => "case-iii",
            CaseId::IV => "case-iv",
        }
    }
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl FromStr for CaseId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().trim_start_matches("case-") {
            "i" | "1" => Ok(CaseId::I),
            "ii" | "2" => Ok(CaseId::II),
            "iii" | "3" => Ok(CaseId::III),
            "iv" | "4" => Ok(CaseId::IV),
            other => Err(Error::Config(format!("unknown case `{other}`"))),
        }
    }
}

/// Follower and leader positions and speeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccState {
    pub x_f: f64,
    pub v_f: f64,
    pub x_l: f64,
    pub v_l: f64,
}

impl AccState {
    /// State of the identified channel, `[v_f]`.
    pub fn identified(&self) -> DVector<f64> {
        DVector::from_element(1, self.v_f)
    }

    /// `[x_f, x_l, v_l]`.
    pub fn exogenous(&self) -> DVector<f64> {
        DVector::from_column_slice(&[self.x_f, self.x_l, self.v_l])
    }
}

/// `φ(v) = −0.1·[1, v, v²]ᵀ`.
pub fn phi(v: f64) -> DVector<f64> {
    DVector::from_column_slice(&[-0.1, -0.1 * v, -0.1 * v * v])
}

#[derive(Debug, Clone)]
pub struct AccPlant {
    pub model: SystemModel,
    pub clf: ClfSpec,
    pub cbf: CbfSpec,
}

pub fn build_acc_model(params: &AccParams) -> Result<AccPlant> {
    params.validate()?;
    let mass = params.mass;
    let model = SystemModel::new(
        1,
        1,
        3,
        Arc::new(|_| DVector::zeros(1)),
        Arc::new(|x| DMatrix::from_column_slice(3, 1, phi(x[0]).as_slice())),
        Arc::new(move |_| DMatrix::from_element(1, 1, 1.0 / mass)),
    );
    let v_d = params.v_d;
    let clf = ClfSpec::new(
        Arc::new(move |x| 0.5 * (x[0] - v_d).powi(2)),
        Arc::new(move |x| RowDVector::from_element(1, x[0] - v_d)),
        Alpha3::Linear(params.k1),
    );
    let k_d = params.k_d;
    let cbf = CbfSpec::new(
        Arc::new(move |x, e| e[1] - e[0] - k_d * x[0]),
        Arc::new(move |_, _| RowDVector::from_element(1, -k_d)),
        // ẋ_l − ẋ_f
        Arc::new(|x, e| e[2] - x[0]),
        Alpha4::linear(params.k2),
    );
    Ok(AccPlant { model, clf, cbf })
}

/// Estimates fed to the controller.
#[derive(Debug, Clone, Copy)]
pub enum Estimates<'a> {
    /// One estimate shared by both rows.
    Single(&'a DVector<f64>),
    /// `θ̂_V` in the CLF row, `θ̂_h` in the CBF row.
    Split {
        clf: &'a DVector<f64>,
        cbf: &'a DVector<f64>,
    },
}

/// The two-row QP over `[τ_f, δ]`: CLF row first, CBF row second, cost
/// `H = diag(h_u, h_delta)`, `F = [2M·φᵀ(θ̂_V + θ̂_h), 0]` for split estimates
/// and `F = [2M·φᵀθ̂, 0]` otherwise.
pub fn acc_qp(plant: &AccPlant, params: &AccParams, state: &AccState, estimates: Estimates<'_>) -> Result<QpInstance> {
    let x = state.identified();
    let exo = state.exogenous();
    let (theta_clf, theta_cbf, theta_cost) = match estimates {
        Estimates::Single(t) => (t, t, t.clone()),
        Estimates::Split { clf, cbf } => (clf, cbf, clf + cbf),
    };
    let clf = clf_row(&plant.model, &plant.clf, &x, theta_clf)?;
    let cbf = cbf_row(&plant.model, &plant.cbf, &x, &exo, theta_cbf)?;
    let h = DMatrix::from_diagonal(&DVector::from_column_slice(&[params.h_u, params.h_delta]));
    let f = DVector::from_column_slice(&[2.0 * params.mass * phi(state.v_f).dot(&theta_cost), 0.0]);
    QpInstance::new(
        h,
        f,
        vec![
            QpRow::new(clf.decision_coefficients(), clf.rhs),
            QpRow::new(cbf.decision_coefficients(), cbf.rhs),
        ],
    )
}
