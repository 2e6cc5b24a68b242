//! Adaptive Dormand-Prince 5(4) stepper with fourth-order dense output.
//!
//! The stepper is first-same-as-last: the accepted derivative at the step
//! end seeds the next step. Error control uses the usual mixed
//! absolute/relative weighting with a PI-free step factor clamped to
//! [0.2, 10].

use crate::error::{Error, Result};
use nalgebra::DVector;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Dense interpolant of one accepted step on `[t0, t0 + h]`.
#[derive(Debug, Clone)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    rcont: [DVector<f64>; 5],
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.h >= 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        t >= lo && t <= hi
    }

    /// Evaluate the interpolant; `t` is clamped to the step window.
    pub fn eval(&self, t: f64) -> DVector<f64> {
        let theta = if self.h == 0.0 {
            0.0
        } else {
            ((t - self.t0) / self.h).clamp(0.0, 1.0)
        };
        let theta1 = 1.0 - theta;
        let [c1, c2, c3, c4, c5] = &self.rcont;
        c1 + theta * (c2 + theta1 * (c3 + theta * (c4 + theta1 * c5)))
    }
}

pub struct StepControl {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        StepControl {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
        }
    }
}

// the accepted variant is the hot path; boxing it would cost an allocation
// per step for no benefit
#[allow(clippy::large_enum_variant)]
pub enum StepOutcome {
    Accepted {
        y1: DVector<f64>,
        f1: DVector<f64>,
        dense: DenseStep,
        h_used: f64,
        h_next: f64,
    },
    Rejected {
        h_next: f64,
    },
}

/// One attempted step of the embedded pair from `(t, y)` with derivative
/// `f0 = f(t, y)` and trial size `h`.
pub fn try_step<F>(
    f: &F,
    t: f64,
    y: &DVector<f64>,
    f0: &DVector<f64>,
    h: f64,
    ctrl: &StepControl,
) -> Result<StepOutcome>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let k1 = f0;
    let y2 = y + h * A21 * k1;
    let k2 = f(t + C2 * h, &y2)?;
    let y3 = y + h * (A31 * k1 + A32 * &k2);
    let k3 = f(t + C3 * h, &y3)?;
    let y4 = y + h * (A41 * k1 + A42 * &k2 + A43 * &k3);
    let k4 = f(t + C4 * h, &y4)?;
    let y5 = y + h * (A51 * k1 + A52 * &k2 + A53 * &k3 + A54 * &k4);
    let k5 = f(t + C5 * h, &y5)?;
    let y6 = y + h * (A61 * k1 + A62 * &k2 + A63 * &k3 + A64 * &k4 + A65 * &k5);
    let k6 = f(t + h, &y6)?;
    let y1 = y + h * (A71 * k1 + A73 * &k3 + A74 * &k4 + A75 * &k5 + A76 * &k6);
    let k7 = f(t + h, &y1)?;

    let err_vec = h * (E1 * k1 + E3 * &k3 + E4 * &k4 + E5 * &k5 + E6 * &k6 + E7 * &k7);
    let n = y.len();
    let mut err_sq = 0.0;
    for i in 0..n {
        let sc = ctrl.abs_tol + ctrl.rel_tol * y[i].abs().max(y1[i].abs());
        let e = err_vec[i] / sc;
        err_sq += e * e;
    }
    let err = (err_sq / n as f64).sqrt();

    let order_inv = 0.2;
    let factor = if err == 0.0 {
        10.0
    } else {
        (0.9 * err.powf(-order_inv)).clamp(0.2, 10.0)
    };

    if err <= 1.0 {
        let ydiff = &y1 - y;
        let bspl = h * k1 - &ydiff;
        let rcont4 = &ydiff - h * &k7 - &bspl;
        let rcont5 = h * (D1 * k1 + D3 * &k3 + D4 * &k4 + D5 * &k5 + D6 * &k6 + D7 * &k7);
        let dense = DenseStep {
            t0: t,
            h,
            rcont: [y.clone(), ydiff, bspl, rcont4, rcont5],
        };
        let h_next = (h * factor).min(ctrl.max_step);
        Ok(StepOutcome::Accepted {
            y1,
            f1: k7,
            dense,
            h_used: h,
            h_next,
        })
    } else {
        // cap growth after a rejection
        Ok(StepOutcome::Rejected {
            h_next: h * factor.min(1.0),
        })
    }
}

/// Starting step size, following the usual two-evaluation heuristic.
pub fn initial_step<F>(
    f: &F,
    t: f64,
    y: &DVector<f64>,
    f0: &DVector<f64>,
    span: f64,
    ctrl: &StepControl,
) -> Result<f64>
where
    F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    let n = y.len();
    let sc = |v: &DVector<f64>, w: &DVector<f64>| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            let scale = ctrl.abs_tol + ctrl.rel_tol * w[i].abs();
            let e = v[i] / scale;
            s += e * e;
        }
        (s / n as f64).sqrt()
    };
    let d0 = sc(y, y);
    let d1 = sc(f0, y);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    };
    let h0 = h0.min(span.abs()).max(1e-12);
    let y1 = y + h0 * f0;
    let f1 = f(t + h0, &y1)?;
    let d2 = sc(&(&f1 - f0), y) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    let h = (100.0 * h0).min(h1).min(span.abs()).min(ctrl.max_step);
    if h.is_finite() && h > 0.0 {
        Ok(h)
    } else {
        Err(Error::input("could not determine an initial step size"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn integrate_to<F>(
        f: &F,
        t0: f64,
        y0: DVector<f64>,
        t_end: f64,
        ctrl: &StepControl,
    ) -> DVector<f64>
    where
        F: Fn(f64, &DVector<f64>) -> Result<DVector<f64>>,
    {
        let mut t = t0;
        let mut y = y0;
        let mut fcur = f(t, &y).unwrap();
        let mut h = initial_step(f, t, &y, &fcur, t_end - t0, ctrl).unwrap();
        while t < t_end {
            h = h.min(t_end - t);
            match try_step(f, t, &y, &fcur, h, ctrl).unwrap() {
                StepOutcome::Accepted {
                    y1,
                    f1,
                    h_used,
                    h_next,
                    ..
                } => {
                    t += h_used;
                    y = y1;
                    fcur = f1;
                    h = h_next;
                }
                StepOutcome::Rejected { h_next } => h = h_next,
            }
        }
        y
    }

    #[test]
    fn harmonic_oscillator_period() {
        let f = |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
            Ok(DVector::from_row_slice(&[y[1], -y[0]]))
        };
        let ctrl = StepControl {
            rel_tol: 1e-10,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
        };
        let y = integrate_to(
            &f,
            0.0,
            DVector::from_row_slice(&[1.0, 0.0]),
            std::f64::consts::TAU,
            &ctrl,
        );
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(y[1], 0.0, epsilon = 1e-8);
    }

    #[test]
    fn dense_output_matches_exponential() {
        let f = |_t: f64, y: &DVector<f64>| -> Result<DVector<f64>> { Ok(y.clone()) };
        let ctrl = StepControl::default();
        let y0 = DVector::from_row_slice(&[1.0]);
        let f0 = f(0.0, &y0).unwrap();
        let h = 0.01;
        match try_step(&f, 0.0, &y0, &f0, h, &ctrl).unwrap() {
            StepOutcome::Accepted { dense, .. } => {
                for k in 0..=10 {
                    let t = h * k as f64 / 10.0;
                    assert_abs_diff_eq!(dense.eval(t)[0], t.exp(), epsilon = 1e-12);
                }
            }
            StepOutcome::Rejected { .. } => panic!("step rejected"),
        }
    }
}
