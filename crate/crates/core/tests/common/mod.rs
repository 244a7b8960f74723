//! Synthetic one-second trajectory shared by the identifier tests, with a
//! direct double-quadrature oracle for the Gram pair.

use std::sync::Arc;

use adaptive_safety::identifier::{IdentifierState, StepIntegrals};
use adaptive_safety::model::SystemModel;
use nalgebra::{DMatrix, DVector};

pub fn phi_row(x: f64) -> [f64; 3] {
    [1.0, x, x.sin()]
}

pub fn scalar_model() -> SystemModel {
    SystemModel::new(
        1,
        1,
        3,
        Arc::new(|x| DVector::from_element(1, -x[0])),
        Arc::new(|x| DMatrix::from_column_slice(3, 1, &phi_row(x[0]))),
        Arc::new(|x| DMatrix::from_element(1, 1, 1.0 + 0.1 * x[0] * x[0])),
    )
}

// A prescribed trajectory and input; no plant consistency is needed to compare
// two ways of forming the same integrals.
fn traj(t: f64) -> f64 {
    (2.0 * t).sin() + 0.5 * t
}

pub fn input(t: f64) -> f64 {
    (3.0 * t).cos()
}

fn known_rate(t: f64) -> f64 {
    let x = traj(t);
    -x + (1.0 + 0.1 * x * x) * input(t)
}

/// Composite Simpson cumulative integrals of `f` on `[0, T]` sampled every
/// `T / coarse`, each cell refined `fine` times.
fn cumulative(f: impl Fn(f64) -> f64, t_end: f64, coarse: usize, fine: usize) -> Vec<f64> {
    let h = t_end / coarse as f64;
    let mut out = vec![0.0; coarse + 1];
    for i in 0..coarse {
        let a = i as f64 * h;
        let k = h / (2 * fine) as f64;
        let mut s = f(a) + f(a + h);
        for j in 1..2 * fine {
            s += f(a + j as f64 * k) * if j % 2 == 1 { 4.0 } else { 2.0 };
        }
        out[i + 1] = out[i] + s * k / 3.0;
    }
    out
}

/// `(G, Z)` on `[0, 1]` from the 2-D trapezoid rule over a 200-interval grid
/// of directly integrated `q(t,σ)` and `p(t,σ)`.
pub fn direct_gram() -> (DMatrix<f64>, DVector<f64>) {
    let t_end = 1.0;
    let n = 200;
    let h = t_end / n as f64;
    let q_cols: Vec<Vec<f64>> = (0..3).map(|j| cumulative(|s| phi_row(traj(s))[j], t_end, n, 8)).collect();
    let k = cumulative(known_rate, t_end, n, 8);
    let w = |i: usize| if i == 0 || i == n { 0.5 * h } else { h };
    let mut g = DMatrix::<f64>::zeros(3, 3);
    let mut z = DVector::<f64>::zeros(3);
    for a in 0..=n {
        for b in 0..=n {
            let q = DVector::from_fn(3, |j, _| q_cols[j][a] - q_cols[j][b]);
            let p = traj(a as f64 * h) - traj(b as f64 * h) - (k[a] - k[b]);
            let weight = w(a) * w(b);
            g += &q * q.transpose() * weight;
            z += &q * (p * weight);
        }
    }
    (g, z)
}

/// `(G, Z)` on `[0, 1]` from the running accumulators, 1000 steps with
/// trapezoidal inner increments.
pub fn accumulated_gram() -> (DMatrix<f64>, DVector<f64>) {
    let model = scalar_model();
    let steps = 1000;
    let dt = 1.0 / steps as f64;
    let mut id = IdentifierState::new(&model, DVector::from_element(1, traj(0.0)), DVector::zeros(3)).unwrap();
    for s in 0..steps {
        let (t0, t1) = (s as f64 * dt, (s + 1) as f64 * dt);
        let x0 = traj(t0);
        let x1 = DVector::from_element(1, traj(t1));
        let phi_t = (DMatrix::from_row_slice(1, 3, &phi_row(x0)) + DMatrix::from_row_slice(1, 3, &phi_row(x1[0])))
            * (0.5 * dt);
        let known = DVector::from_element(1, 0.5 * dt * (known_rate(t0) + known_rate(t1)));
        id.accumulate_integrals(&x1, &StepIntegrals { phi_t, known }, dt).unwrap();
    }
    id.gram()
}
