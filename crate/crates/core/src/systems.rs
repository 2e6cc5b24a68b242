//! Ready-made example systems with exact stratified codistributions and
//! closed-form reference data for testing.
//!
//! All three constructions default to unit mass; the mass multiplies the
//! metric and cancels out of every jump result.

use crate::dynamics::{eom_rhs, MechanicalSystem, PhaseState, StratumId};
use crate::error::{Error, Result};
use crate::geometry::{Codistribution, Metric, Stratum};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

fn mollifier(x: f64) -> f64 {
    if x > 0.0 {
        (-1.0 / (x * x)).exp()
    } else {
        0.0
    }
}

/// Particle in the plane, free on `x <= 0` and constrained to velocities
/// with `xdot = ydot` on `x > 0`.
///
/// The smooth description carries the mollified row
/// `exp(-1/x^2) (dx - dy)`; the strata give the same spans exactly. Both
/// produce identical one-sided limits at the axis.
pub fn plane_particle(mass: f64) -> Result<MechanicalSystem> {
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::input(format!("mass must be positive, got {mass}")));
    }
    let codist = Codistribution::new(2, 1, |q: &DVector<f64>| {
        let s = mollifier(q[0]);
        DMatrix::from_row_slice(1, 2, &[s, -s])
    })
    .with_strata(vec![
        Stratum::constant_rows(|q: &DVector<f64>| q[0] <= 0.0, DMatrix::zeros(0, 2)),
        Stratum::constant_rows(
            |q: &DVector<f64>| q[0] > 0.0,
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        ),
    ])
    .with_singular_indicator(|q| q[0]);
    let metric = Metric::constant(DMatrix::identity(2, 2) * mass);
    Ok(MechanicalSystem::new(metric, codist).with_coordinate_names(vec!["x", "y"]))
}

/// Parameters of the rolling sphere.
#[derive(Debug, Clone, Copy)]
pub struct SphereParams {
    pub radius: f64,
    /// Gyration radius `k`; `k^2 = 2/5` for a homogeneous solid sphere of
    /// unit radius.
    pub gyration: f64,
    pub mass: f64,
}

impl Default for SphereParams {
    fn default() -> Self {
        SphereParams {
            radius: 1.0,
            gyration: (2.0_f64 / 5.0).sqrt(),
            mass: 1.0,
        }
    }
}

impl SphereParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("radius", self.radius),
            ("gyration", self.gyration),
            ("mass", self.mass),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::input(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sphere on a plane that is smooth on `x < 0` and rough on `x > 0`.
///
/// Coordinates `(x, y, q1, q2, q3)` live in the moving coframe whose last
/// three covelocities are the angular velocities `(wx, wy, wz)`; the
/// coframe is not exact, which is immaterial to the dynamics because metric
/// and constraint rows are constant in it. On the rough side the contact
/// point cannot slip: `dx - r dq2` and `dy + r dq1` annihilate the
/// velocity. Euler-angle reconstruction is not carried along; the flow and
/// the jump close in this coframe.
pub fn rolling_sphere(params: SphereParams) -> Result<MechanicalSystem> {
    params.validate()?;
    let SphereParams {
        radius: r,
        gyration: k,
        mass: m,
    } = params;
    let k2 = k * k;
    let metric = Metric::constant(
        DMatrix::from_diagonal(&DVector::from_row_slice(&[1.0, 1.0, k2, k2, k2])) * m,
    );
    let rough_rows = DMatrix::from_row_slice(
        2,
        5,
        &[
            1.0, 0.0, 0.0, -r, 0.0, //
            0.0, 1.0, r, 0.0, 0.0,
        ],
    );
    let rows_for_forms = rough_rows.clone();
    let codist = Codistribution::new(5, 2, move |q: &DVector<f64>| {
        if q[0] > 0.0 {
            rows_for_forms.clone()
        } else {
            DMatrix::zeros(2, 5)
        }
    })
    .with_strata(vec![
        Stratum::constant_rows(|q: &DVector<f64>| q[0] <= 0.0, DMatrix::zeros(0, 5)),
        Stratum::constant_rows(|q: &DVector<f64>| q[0] > 0.0, rough_rows),
    ])
    .with_singular_indicator(|q| q[0]);
    Ok(MechanicalSystem::new(metric, codist)
        .with_coordinate_names(vec!["x", "y", "q1", "q2", "q3"]))
}

/// Particle in 3-space under the central force field centered at
/// `(0, 0, 1)`, subject to one curved constraint row
/// `(y^2 - x^2 - z) dx + (z - y^2 - x y) dy + x dz`.
///
/// The row vanishes exactly on the line `x = 0, z = y^2`, where the rank
/// drops to zero; the singular indicator `x^2 + (z - y^2)^2` is smooth and
/// vanishes exactly there.
pub fn central_force_particle() -> MechanicalSystem {
    let codist = Codistribution::new(3, 1, |q: &DVector<f64>| {
        let (x, y, z) = (q[0], q[1], q[2]);
        DMatrix::from_row_slice(1, 3, &[y * y - x * x - z, z - y * y - x * y, x])
    })
    .with_singular_indicator(|q| {
        let w = q[2] - q[1] * q[1];
        q[0] * q[0] + w * w
    });
    MechanicalSystem::new(Metric::euclidean(3), codist)
        .with_potential(|q| 0.5 * (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] - 2.0 * q[2]))
        .with_potential_gradient(|q| DVector::from_row_slice(&[q[0], q[1], q[2] - 1.0]))
        .with_coordinate_names(vec!["x", "y", "z"])
}

/// Residual of the invariant surface of [`central_force_particle`]:
/// `c(q) = z - x^2 - y^2 + x y`. Motions started on the surface with a
/// tangent velocity keep `c = 0`; the singular line lies inside the
/// surface.
pub fn central_force_surface_residual(q: &DVector<f64>) -> f64 {
    q[2] - q[0] * q[0] - q[1] * q[1] + q[0] * q[1]
}

// ---------------------------------------------------------------------------
// Closed-form references
// ---------------------------------------------------------------------------

/// Post-crossing velocities of the plane particle: both components become
/// the mean of the incoming pair.
pub fn plane_post_jump_velocity(v: [f64; 2]) -> [f64; 2] {
    let mean = 0.5 * (v[0] + v[1]);
    [mean, mean]
}

/// Post-crossing velocities `(xdot, ydot, wx, wy, wz)` of the rolling
/// sphere entering the rough half-plane.
pub fn sphere_post_jump_velocity(params: &SphereParams, v: [f64; 5]) -> [f64; 5] {
    let r = params.radius;
    let k2 = params.gyration * params.gyration;
    let d = r * r + k2;
    let [xd, yd, wx, wy, wz] = v;
    [
        (r * r * xd + r * k2 * wy) / d,
        (r * r * yd - r * k2 * wx) / d,
        (-r * yd + k2 * wx) / d,
        (r * xd + k2 * wy) / d,
        wz,
    ]
}

/// Closed-form state function `t -> (q, p)` with a validity window and the
/// stratum it lives on.
#[derive(Clone)]
pub struct ReferenceSolution {
    pub window: (f64, f64),
    pub stratum: StratumId,
    state: Arc<dyn Fn(f64) -> PhaseState + Send + Sync>,
}

impl ReferenceSolution {
    /// Uniform motion `q(t) = q_ref + (t - t_ref) v` with constant
    /// momentum, the generic regular-stratum solution of the constant-metric
    /// force-free systems.
    pub fn uniform_motion(
        system: &MechanicalSystem,
        stratum: StratumId,
        window: (f64, f64),
        t_ref: f64,
        q_ref: DVector<f64>,
        v: DVector<f64>,
    ) -> Result<Self> {
        let p = system.momentum(&q_ref, &v)?;
        Ok(ReferenceSolution {
            window,
            stratum,
            state: Arc::new(move |t| PhaseState {
                t,
                q: &q_ref + (t - t_ref) * &v,
                p: p.clone(),
            }),
        })
    }

    pub fn state_at(&self, t: f64) -> PhaseState {
        (self.state)(t)
    }

    /// Largest right-hand-side residual of the reference over `samples`
    /// interior points: the finite-difference time derivative of the
    /// reference compared against the equations of motion.
    pub fn max_eom_residual(&self, system: &MechanicalSystem, samples: usize) -> Result<f64> {
        let (a, b) = self.window;
        let h = 1e-6 * (b - a).abs().max(1.0);
        let mut worst = 0.0_f64;
        for k in 0..samples {
            let t = a + (b - a) * (k as f64 + 0.5) / samples as f64;
            let sp = self.state_at(t + h);
            let sm = self.state_at(t - h);
            let qd_fd = (&sp.q - &sm.q) / (2.0 * h);
            let pd_fd = (&sp.p - &sm.p) / (2.0 * h);
            let (qd, pd) = eom_rhs(system, &self.state_at(t), &self.stratum)?;
            worst = worst.max((qd_fd - qd).amax()).max((pd_fd - pd).amax());
        }
        Ok(worst)
    }
}
