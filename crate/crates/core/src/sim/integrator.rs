//! Classical fourth-order Runge–Kutta step with cubic Hermite dense output.

use nalgebra::DVector;

/// Cubic Hermite interpolant over one step, built from the end values and
/// end derivatives. Its error is O(h⁴), matching the step's accuracy.
#[derive(Debug, Clone)]
pub struct DenseOutput {
    pub t0: f64,
    pub h: f64,
    pub y0: DVector<f64>,
    pub y1: DVector<f64>,
    pub f0: DVector<f64>,
    pub f1: DVector<f64>,
}

impl DenseOutput {
    fn weights(&self, t: f64) -> (f64, f64, f64, f64) {
        let s = (t - self.t0) / self.h;
        let s2 = s * s;
        let s3 = s2 * s;
        (
            2.0 * s3 - 3.0 * s2 + 1.0,
            (s3 - 2.0 * s2 + s) * self.h,
            -2.0 * s3 + 3.0 * s2,
            (s3 - s2) * self.h,
        )
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let (h00, h10, h01, h11) = self.weights(t);
        &self.y0 * h00 + &self.f0 * h10 + &self.y1 * h01 + &self.f1 * h11
    }

    pub fn component(&self, t: f64, i: usize) -> f64 {
        let (h00, h10, h01, h11) = self.weights(t);
        self.y0[i] * h00 + self.f0[i] * h10 + self.y1[i] * h01 + self.f1[i] * h11
    }
}

#[derive(Debug, Clone)]
pub struct Step {
    pub y: DVector<f64>,
    pub dense: DenseOutput,
}

/// Advances `ẏ = rhs(t, y)` from `(t, y)` by `h`.
pub fn rk4_step<F>(mut rhs: F, t: f64, y: &DVector<f64>, h: f64) -> Step
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = rhs(t, y);
    let k2 = rhs(t + 0.5 * h, &(y + &k1 * (0.5 * h)));
    let k3 = rhs(t + 0.5 * h, &(y + &k2 * (0.5 * h)));
    let k4 = rhs(t + h, &(y + &k3 * h));
    let y1 = y + (&k1 + &k2 * 2.0 + &k3 * 2.0 + &k4) * (h / 6.0);
    let f1 = rhs(t + h, &y1);
    Step {
        y: y1.clone(),
        dense: DenseOutput {
            t0: t,
            h,
            y0: y.clone(),
            y1,
            f0: k1,
            f1,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_state_stays_constant() {
        let y0 = DVector::from_column_slice(&[1.5, -2.0, 0.25]);
        let step = rk4_step(|_, y| DVector::zeros(y.len()), 0.0, &y0, 0.1);
        assert_eq!(step.y, y0);
        assert_eq!(step.dense.eval(0.05), y0);
    }

    #[test]
    fn exponential_decay_single_step() {
        let y0 = DVector::from_element(1, 1.0);
        let step = rk4_step(|_, y| -y, 0.0, &y0, 0.1);
        assert!((step.y[0] - (-0.1f64).exp()).abs() <= 1e-7);
    }

    #[test]
    fn dense_output_matches_ends_and_is_accurate_inside() {
        let y0 = DVector::from_element(1, 1.0);
        let h = 0.05;
        let step = rk4_step(|_, y| -y, 0.0, &y0, h);
        assert_eq!(step.dense.eval(0.0)[0], 1.0);
        assert_eq!(step.dense.eval(h)[0], step.y[0]);
        // Hermite error h⁴/384·max|y⁗| plus the step's own local error.
        let bound = h.powi(4) / 384.0 + h.powi(5) / 120.0;
        for k in 1..10 {
            let t = h * k as f64 / 10.0;
            assert!((step.dense.component(t, 0) - (-t).exp()).abs() < bound);
        }
    }

    #[test]
    fn observed_order_is_four() {
        // ẏ = y·cos t, y(0) = 1, exact y = exp(sin t).
        let solve = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y = DVector::from_element(1, 1.0);
            for k in 0..n {
                y = rk4_step(|t, y| y * t.cos(), k as f64 * h, &y, h).y;
            }
            (y[0] - 1f64.sin().exp()).abs()
        };
        let order = (solve(10) / solve(20)).log2();
        assert!(order > 3.8, "order {order}");
    }
}
