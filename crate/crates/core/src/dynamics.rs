//! Equations of motion and adaptive integration on one maximal-rank region.
//!
//! States are carried in Hamiltonian form `(q, p)` with `p = g(q) qdot`.
//! Active constraints are enforced by Lagrange multipliers obtained from the
//! time-differentiated constraint equations, plus a cometric projection of
//! the momentum after every accepted step to remove residual drift.
//!
//! Multiplier convention: the reaction force enters the momentum balance as
//! `pdot = f - omega^T lambda`, which makes `lambda` coincide with the
//! closed-form multiplier of the standard vector-field formulation
//! `G_L + lambda Z`, `Z = -(omega sharp)`.

use crate::error::{Error, Result};
use crate::geometry::{constraint_projector, Codistribution, Metric, MetricAt};
use crate::linalg::{check_finite_vector, select_independent_rows, DEFAULT_RANK_TOL};
use crate::rk::{initial_step, try_step, DenseStep, StepControl, StepOutcome};
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;

// ---------------------------------------------------------------------------
// MechanicalSystem and PhaseState
// ---------------------------------------------------------------------------

/// Mechanical system on a chart: kinetic metric, potential, and the
/// constraint codistribution. Immutable and shareable across workers.
#[derive(Clone)]
pub struct MechanicalSystem {
    dim: usize,
    metric: Metric,
    codist: Codistribution,
    potential: ScalarFn,
    grad_potential: Option<VectorFn>,
    coord_names: Vec<String>,
}

impl fmt::Debug for MechanicalSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("MechanicalSystem")
            .field("dim", &self.dim)
            .field("coords", &self.coord_names)
            .finish()
    }
}

impl MechanicalSystem {
    pub fn new(metric: Metric, codist: Codistribution) -> Self {
        assert_eq!(
            metric.dim(),
            codist.dim(),
            "metric and codistribution dimensions must agree"
        );
        let dim = metric.dim();
        MechanicalSystem {
            dim,
            metric,
            codist,
            potential: Arc::new(|_q| 0.0),
            grad_potential: None,
            coord_names: (1..=dim).map(|i| format!("q{i}")).collect(),
        }
    }

    pub fn with_potential(
        mut self,
        potential: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.potential = Arc::new(potential);
        self
    }

    pub fn with_potential_gradient(
        mut self,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad_potential = Some(Arc::new(grad));
        self
    }

    pub fn with_coordinate_names<S: Into<String>>(mut self, names: Vec<S>) -> Self {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        assert_eq!(names.len(), self.dim, "one name per coordinate");
        self.coord_names = names;
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn codistribution(&self) -> &Codistribution {
        &self.codist
    }

    pub fn coordinate_names(&self) -> &[String] {
        &self.coord_names
    }

    pub fn potential_at(&self, q: &DVector<f64>) -> f64 {
        (self.potential)(q)
    }

    /// Potential gradient: analytic when supplied, else central differences
    /// with step `1e-6 * max(1, |q_A|)` per coordinate.
    pub fn potential_gradient_at(&self, q: &DVector<f64>) -> DVector<f64> {
        if let Some(g) = &self.grad_potential {
            return g(q);
        }
        let mut out = DVector::zeros(self.dim);
        for a in 0..self.dim {
            let h = 1e-6 * q[a].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[a] += h;
            qm[a] -= h;
            out[a] = ((self.potential)(&qp) - (self.potential)(&qm)) / (2.0 * h);
        }
        out
    }

    /// Max deviation between the supplied gradient and finite differences.
    pub fn potential_gradient_deviation(&self, q: &DVector<f64>) -> f64 {
        let Some(g) = &self.grad_potential else {
            return 0.0;
        };
        let analytic = g(q);
        let mut worst = 0.0_f64;
        for a in 0..self.dim {
            let h = 1e-6 * q[a].abs().max(1.0);
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[a] += h;
            qm[a] -= h;
            let fd = ((self.potential)(&qp) - (self.potential)(&qm)) / (2.0 * h);
            worst = worst.max((fd - analytic[a]).abs());
        }
        worst
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, p: &DVector<f64>) -> Result<f64> {
        Ok(self.metric.at(q)?.kinetic(p))
    }

    pub fn total_energy(&self, state: &PhaseState) -> Result<f64> {
        Ok(self.kinetic_energy(&state.q, &state.p)? + self.potential_at(&state.q))
    }

    /// Velocity `qdot = g^{-1} p`.
    pub fn velocity(&self, q: &DVector<f64>, p: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.metric.at(q)?.raise(p))
    }

    /// Momentum `p = g qdot`.
    pub fn momentum(&self, q: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self.metric.at(q)?.lower(v))
    }
}

/// Point of the phase flow: time, chart configuration, momentum covector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhaseState {
    pub t: f64,
    pub q: DVector<f64>,
    pub p: DVector<f64>,
}

impl PhaseState {
    pub fn new(t: f64, q: DVector<f64>, p: DVector<f64>) -> Self {
        PhaseState { t, q, p }
    }

    pub fn from_velocity(
        system: &MechanicalSystem,
        t: f64,
        q: DVector<f64>,
        v: &DVector<f64>,
    ) -> Result<Self> {
        let p = system.momentum(&q, v)?;
        Ok(PhaseState { t, q, p })
    }
}

// ---------------------------------------------------------------------------
// Constraint frames
// ---------------------------------------------------------------------------

/// Which constraint rows are enforced along a segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum StratumId {
    /// Index into the codistribution's declared strata.
    Declared(usize),
    /// Subset of the smooth generating rows, chosen independent at the
    /// segment start.
    Active(Vec<usize>),
}

impl StratumId {
    /// Numeric id for tabular output: the stratum index for declared
    /// strata, a bitmask of active rows otherwise.
    pub fn csv_id(&self) -> u64 {
        match self {
            StratumId::Declared(i) => *i as u64,
            StratumId::Active(rows) => rows.iter().fold(0u64, |acc, &r| acc | (1 << r.min(63))),
        }
    }
}

impl fmt::Display for StratumId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.csv_id())
    }
}

/// Constraint rows of a frame, evaluated at `q`.
pub fn frame_rows(system: &MechanicalSystem, frame: &StratumId, q: &DVector<f64>) -> DMatrix<f64> {
    let codist = system.codistribution();
    match frame {
        StratumId::Declared(i) => codist.strata()[*i].rows_at(q),
        StratumId::Active(rows) => {
            let all = codist.forms(q);
            let mut out = DMatrix::zeros(rows.len(), codist.dim());
            for (k, &r) in rows.iter().enumerate() {
                out.row_mut(k).copy_from(&all.row(r));
            }
            out
        }
    }
}

/// Resolve which constraint frame governs the motion leaving `(q, v)`.
///
/// The decision is made a small step ahead of `q` along `v`, so a state
/// sitting exactly on a stratum boundary is attributed to the stratum it is
/// entering. For smooth codistributions the frame is the independent row
/// subset at the probe point.
pub fn resolve_frame(
    system: &MechanicalSystem,
    q: &DVector<f64>,
    v: &DVector<f64>,
    probe_scale: f64,
    rank_tol: f64,
) -> Result<StratumId> {
    let vmax = v.amax();
    let probe = if vmax > 0.0 {
        let delta = probe_scale * (1.0 + q.amax()) / vmax;
        q + v * delta
    } else {
        q.clone()
    };
    let codist = system.codistribution();
    if codist.has_strata() {
        let idx = codist
            .stratum_index(&probe)
            .or_else(|| codist.stratum_index(q))
            .ok_or_else(|| Error::input("no stratum contains the segment start"))?;
        Ok(StratumId::Declared(idx))
    } else {
        let rows = codist.forms(&probe);
        let at = system.metric.at(&probe)?;
        let whitened = at.whiten_rows(&rows);
        let (independent, _) = select_independent_rows(&whitened, rank_tol);
        Ok(StratumId::Active(independent))
    }
}

// ---------------------------------------------------------------------------
// Equations of motion
// ---------------------------------------------------------------------------

/// Free force on momenta: `f_A = v^T (dg/dq^A) v / 2 - dU/dq^A`.
fn free_force(
    system: &MechanicalSystem,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mut f = -system.potential_gradient_at(q);
    let dgs = system.metric.grad(q)?;
    for a in 0..system.dim {
        let dg = &dgs[a];
        if dg.amax() != 0.0 {
            f[a] += 0.5 * v.dot(&(dg * v));
        }
    }
    Ok(f)
}

/// Directional derivative of `s -> rows(q + s v) * v` at `s = 0`.
fn constraint_rate(
    rows_fn: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> DVector<f64> {
    let h = 1e-6 * q.amax().max(1.0) / v.amax().max(1.0);
    let qp = q + v * h;
    let qm = q - v * h;
    let vp = rows_fn(&qp) * v;
    let vm = rows_fn(&qm) * v;
    (vp - vm) / (2.0 * h)
}

/// Directional derivative of `s -> g(q + s v)^{-1} p` at `s = 0`.
pub(crate) fn cometric_rate(
    system: &MechanicalSystem,
    at: &MetricAt,
    q: &DVector<f64>,
    v: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<DVector<f64>> {
    if system.metric.has_analytic_derivative() {
        let dgs = system.metric.grad(q)?;
        let mut dvg = DMatrix::zeros(system.dim, system.dim);
        for c in 0..system.dim {
            if v[c] != 0.0 {
                dvg += &dgs[c] * v[c];
            }
        }
        if dvg.amax() == 0.0 {
            return Ok(DVector::zeros(system.dim));
        }
        let ginv_p = at.raise(p);
        return Ok(-at.raise(&(&dvg * ginv_p)));
    }
    let h = 1e-6 * q.amax().max(1.0) / v.amax().max(1.0);
    let qp = q + v * h;
    let qm = q - v * h;
    let rp = system.metric.at(&qp)?.raise(p);
    let rm = system.metric.at(&qm)?.raise(p);
    Ok((rp - rm) / (2.0 * h))
}

pub(crate) fn multipliers_rows(
    system: &MechanicalSystem,
    state: &PhaseState,
    rows_fn: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
) -> Result<DVector<f64>> {
    let at = system.metric.at(&state.q)?;
    let omega = rows_fn(&state.q);
    let m = omega.nrows();
    if m == 0 {
        return Ok(DVector::zeros(0));
    }
    let v = at.raise(&state.p);
    let f = free_force(system, &state.q, &v)?;
    let mut u = constraint_rate(rows_fn, &state.q, &v);
    if v.amax() > 0.0 {
        let dcom = cometric_rate(system, &at, &state.q, &v, &state.p)?;
        if dcom.amax() != 0.0 {
            u += &omega * dcom;
        }
    }
    u += &omega * at.raise(&f);
    let w = at.whiten_rows(&omega);
    let c = &w * w.transpose();
    let chol = Cholesky::new(c).ok_or_else(|| {
        let (_, dependent) = select_independent_rows(&w, DEFAULT_RANK_TOL);
        Error::DegenerateConstraints { dependent }
    })?;
    Ok(chol.solve(&u))
}

/// Lagrange multipliers of the active constraint rows at `state`.
///
/// Solves `C lambda = u` where `u` collects the rate of the constraint
/// pairings along the free flow, so that `pdot = f - omega^T lambda`
/// preserves `omega(q) qdot = 0` to first order.
pub fn multipliers(
    system: &MechanicalSystem,
    state: &PhaseState,
    frame: &StratumId,
) -> Result<DVector<f64>> {
    multipliers_rows(system, state, &|q| frame_rows(system, frame, q))
}

pub(crate) fn eom_rhs_rows(
    system: &MechanicalSystem,
    state: &PhaseState,
    rows_fn: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let at = system.metric.at(&state.q)?;
    let v = at.raise(&state.p);
    let f = free_force(system, &state.q, &v)?;
    let omega = rows_fn(&state.q);
    let pdot = if omega.nrows() == 0 {
        f
    } else {
        let lambda = multipliers_rows(system, state, rows_fn)?;
        f - omega.transpose() * lambda
    };
    Ok((v, pdot))
}

/// Right-hand side of the constrained flow: `(qdot, pdot)`.
pub fn eom_rhs(
    system: &MechanicalSystem,
    state: &PhaseState,
    frame: &StratumId,
) -> Result<(DVector<f64>, DVector<f64>)> {
    eom_rhs_rows(system, state, &|q| frame_rows(system, frame, q))
}

/// Max constraint pairing `|omega_i(q) g^{-1} p|` over the frame rows.
pub fn constraint_residual(
    system: &MechanicalSystem,
    frame: &StratumId,
    q: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<f64> {
    let omega = frame_rows(system, frame, q);
    if omega.nrows() == 0 {
        return Ok(0.0);
    }
    let v = system.metric.at(q)?.raise(p);
    Ok((omega * v).amax())
}

// ---------------------------------------------------------------------------
// Trajectory segments
// ---------------------------------------------------------------------------

/// Why a segment ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExitCause {
    HorizonReached,
    SingularCrossing { t0: f64 },
    IntegrationFailure { t: f64, reason: String },
}

/// Dense-output trajectory over one constraint frame.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectorySegment {
    /// States at the segment start and after each accepted step, strictly
    /// increasing in time. Momenta are projected onto the constraint null
    /// space, except at a crossing state where the projector may be
    /// degenerate.
    pub states: Vec<PhaseState>,
    pub stratum: StratumId,
    pub exit: ExitCause,
    #[serde(skip)]
    dense: Vec<DenseStep>,
}

impl TrajectorySegment {
    pub fn start(&self) -> &PhaseState {
        self.states
            .first()
            .expect("segment holds at least one state")
    }

    pub fn end(&self) -> &PhaseState {
        self.states
            .last()
            .expect("segment holds at least one state")
    }

    pub fn crossing_time(&self) -> Option<f64> {
        match self.exit {
            ExitCause::SingularCrossing { t0 } => Some(t0),
            _ => None,
        }
    }

    /// Evaluate the stacked `[q; p]` interpolant at `t`; `None` outside the
    /// covered window or when the interpolants were stripped (e.g. after
    /// deserialization).
    pub fn sample(&self, t: f64) -> Option<DVector<f64>> {
        if self.dense.is_empty() {
            return None;
        }
        let first = self.dense.first().unwrap();
        let last = self.dense.last().unwrap();
        if t < first.t0 - 1e-12 || t > last.t1() + 1e-12 {
            return None;
        }
        let idx = self
            .dense
            .partition_point(|step| step.t1() < t)
            .min(self.dense.len() - 1);
        Some(self.dense[idx].eval(t))
    }

    /// Time window covered by the dense interpolants.
    pub fn dense_window(&self) -> Option<(f64, f64)> {
        let first = self.dense.first()?;
        let last = self.dense.last()?;
        Some((first.t0, last.t1()))
    }
}

// ---------------------------------------------------------------------------
// Segment integration
// ---------------------------------------------------------------------------

/// Options for [`integrate_segment`].
#[derive(Debug, Clone)]
pub struct IntegrateOpts {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    pub max_steps: usize,
    /// Constraint residual allowed at the segment start.
    pub start_drift_tol: f64,
    /// Declare a crossing when the indicator magnitude dips below this.
    pub touch_tol: f64,
    /// Touch detection arms once the indicator magnitude exceeds this.
    pub arm_tol: f64,
    /// Relative width of the event-time bracket: `1e-12 * max(1, |t|)`.
    pub event_time_rel: f64,
    pub rank_tol: f64,
    /// Explicit frame override; otherwise resolved by probing ahead.
    pub frame: Option<StratumId>,
    pub probe_scale: f64,
}

impl Default for IntegrateOpts {
    fn default() -> Self {
        IntegrateOpts {
            rel_tol: 1e-9,
            abs_tol: 1e-12,
            max_step: f64::INFINITY,
            max_steps: 1_000_000,
            start_drift_tol: 1e-8,
            touch_tol: 1e-18,
            arm_tol: 1e-9,
            event_time_rel: 1e-12,
            rank_tol: DEFAULT_RANK_TOL,
            frame: None,
            probe_scale: 1e-9,
        }
    }
}

enum EventMonitor {
    Indicator {
        ref_sign: Option<f64>,
        touch_armed: bool,
    },
    Key(FrameKey),
}

#[derive(PartialEq, Eq, Clone, Copy, Debug)]
enum FrameKey {
    Stratum(usize),
    Rank(usize),
}

fn frame_key(system: &MechanicalSystem, q: &DVector<f64>, rank_tol: f64) -> Result<FrameKey> {
    let codist = system.codistribution();
    if codist.has_strata() {
        codist
            .stratum_index(q)
            .map(FrameKey::Stratum)
            .ok_or_else(|| Error::input("no stratum contains a sampled point"))
    } else {
        Ok(FrameKey::Rank(codist.rank_at(q, rank_tol)?))
    }
}

/// Integrate the constrained flow from `start` until `horizon` or until the
/// motion reaches the rank-transition set.
///
/// Crossing detection uses the codistribution's singular indicator when one
/// is declared (sign changes, plus near-zero "touches" for indicators that
/// never change sign); otherwise a per-step rank/stratum monitor triggers a
/// bisection on the transition time. The crossing time `t0` is refined to a
/// bracket of width `1e-12 * max(1, |t0|)` and reported as the last time on
/// the incoming side; the crossing state is read from the dense interpolant.
pub fn integrate_segment(
    system: &MechanicalSystem,
    start: &PhaseState,
    horizon: f64,
    opts: &IntegrateOpts,
) -> Result<TrajectorySegment> {
    let n = system.dim();
    if start.q.len() != n || start.p.len() != n {
        return Err(Error::Dimension {
            what: "segment start state",
            expected: n,
            got: start.q.len(),
        });
    }
    check_finite_vector(&start.q, "segment start configuration")?;
    check_finite_vector(&start.p, "segment start momentum")?;
    if !horizon.is_finite() || horizon < start.t {
        return Err(Error::input(format!(
            "horizon {horizon} must be finite and not precede the start time {}",
            start.t
        )));
    }

    let at0 = system.metric.at(&start.q)?;
    let v0 = at0.raise(&start.p);
    let frame = match &opts.frame {
        Some(f) => f.clone(),
        None => resolve_frame(system, &start.q, &v0, opts.probe_scale, opts.rank_tol)?,
    };

    let residual = constraint_residual(system, &frame, &start.q, &start.p)?;
    let scale = 1.0 + at0.conorm(&start.p);
    if residual > opts.start_drift_tol * scale {
        return Err(Error::input(format!(
            "start state violates the active constraints (residual {residual:.3e}); \
             project the momentum onto the constraint null space first"
        )));
    }

    let mut segment = TrajectorySegment {
        states: vec![start.clone()],
        stratum: frame.clone(),
        exit: ExitCause::HorizonReached,
        dense: Vec::new(),
    };
    if horizon == start.t {
        return Ok(segment);
    }

    let has_active = frame_rows(system, &frame, &start.q).nrows() > 0;
    let indicator = system.codistribution().has_singular_indicator();
    // an indicator magnitude below arm_tol is treated as "still on the
    // transition set": event refinement leaves the restart point a hair on
    // either side of it, and that jitter must not seed the reference sign
    let mut monitor = if indicator {
        let s0 = system
            .codistribution()
            .singular_indicator_at(&start.q)
            .unwrap();
        EventMonitor::Indicator {
            ref_sign: if s0.abs() > opts.arm_tol {
                Some(s0.signum())
            } else {
                None
            },
            touch_armed: s0.abs() > opts.arm_tol,
        }
    } else {
        // key the monitor to the frame the segment runs, not to the raw
        // start point, which may sit across the boundary by the jitter
        EventMonitor::Key(match &frame {
            StratumId::Declared(i) => FrameKey::Stratum(*i),
            StratumId::Active(rows) => FrameKey::Rank(rows.len()),
        })
    };

    let rhs = |t: f64, y: &DVector<f64>| -> Result<DVector<f64>> {
        let q = y.rows(0, n).into_owned();
        let p = y.rows(n, n).into_owned();
        let state = PhaseState { t, q, p };
        let (qdot, pdot) = eom_rhs(system, &state, &frame)?;
        let mut out = DVector::zeros(2 * n);
        out.rows_mut(0, n).copy_from(&qdot);
        out.rows_mut(n, n).copy_from(&pdot);
        Ok(out)
    };

    let ctrl = StepControl {
        rel_tol: opts.rel_tol,
        abs_tol: opts.abs_tol,
        max_step: opts.max_step,
    };

    let mut t = start.t;
    let mut y = DVector::zeros(2 * n);
    y.rows_mut(0, n).copy_from(&start.q);
    y.rows_mut(n, n).copy_from(&start.p);
    let mut fcur = rhs(t, &y)?;
    let mut h = initial_step(&rhs, t, &y, &fcur, horizon - t, &ctrl)?;

    let fail = |segment: &mut TrajectorySegment, t: f64, reason: String| {
        segment.exit = ExitCause::IntegrationFailure { t, reason };
    };

    let mut steps = 0usize;
    loop {
        if t >= horizon - 1e-14 * horizon.abs().max(1.0) {
            segment.exit = ExitCause::HorizonReached;
            // land the final stored state exactly on the horizon
            if let Some(last) = segment.states.last_mut() {
                last.t = horizon;
            }
            return Ok(segment);
        }
        steps += 1;
        if steps > opts.max_steps {
            fail(
                &mut segment,
                t,
                format!("step budget of {} exhausted", opts.max_steps),
            );
            return Ok(segment);
        }
        h = h.min(horizon - t);
        if h < 1e-14 * t.abs().max(1.0) {
            fail(&mut segment, t, "step size underflow".to_string());
            return Ok(segment);
        }
        let outcome = match try_step(&rhs, t, &y, &fcur, h, &ctrl) {
            Ok(o) => o,
            Err(e) => {
                fail(&mut segment, t, e.to_string());
                return Ok(segment);
            }
        };
        match outcome {
            StepOutcome::Rejected { h_next } => {
                h = h_next;
            }
            StepOutcome::Accepted {
                mut y1,
                mut f1,
                dense,
                h_used,
                h_next,
            } => {
                let event = match detect_event(system, &mut monitor, &dense, opts, n) {
                    Ok(ev) => ev,
                    Err(e) => {
                        fail(&mut segment, t, e.to_string());
                        return Ok(segment);
                    }
                };
                if let Some(t0) = event {
                    let y0 = dense.eval(t0);
                    segment.dense.push(dense);
                    segment.states.push(PhaseState {
                        t: t0,
                        q: y0.rows(0, n).into_owned(),
                        p: y0.rows(n, n).into_owned(),
                    });
                    segment.exit = ExitCause::SingularCrossing { t0 };
                    return Ok(segment);
                }
                if has_active {
                    // kill constraint drift accumulated over the step
                    let q1 = y1.rows(0, n).into_owned();
                    let rows = frame_rows(system, &frame, &q1);
                    match constraint_projector(system.metric(), &q1, &rows) {
                        Ok(proj) => {
                            let p1 = proj * y1.rows(n, n).into_owned();
                            y1.rows_mut(n, n).copy_from(&p1);
                            match rhs(t + h_used, &y1) {
                                Ok(f) => f1 = f,
                                Err(e) => {
                                    fail(&mut segment, t + h_used, e.to_string());
                                    return Ok(segment);
                                }
                            }
                        }
                        // rows may collapse right at the transition set;
                        // the event monitor is about to stop the segment
                        Err(Error::DegenerateConstraints { .. }) => {}
                        Err(e) => {
                            fail(&mut segment, t + h_used, e.to_string());
                            return Ok(segment);
                        }
                    }
                }
                t += h_used;
                segment.states.push(PhaseState {
                    t,
                    q: y1.rows(0, n).into_owned(),
                    p: y1.rows(n, n).into_owned(),
                });
                segment.dense.push(dense);
                y = y1;
                fcur = f1;
                h = h_next;
            }
        }
    }
}

/// Scan one accepted step for a singular-set event; returns the refined
/// crossing time.
fn detect_event(
    system: &MechanicalSystem,
    monitor: &mut EventMonitor,
    dense: &DenseStep,
    opts: &IntegrateOpts,
    n: usize,
) -> Result<Option<f64>> {
    let q_of = |t: f64| dense.eval(t).rows(0, n).into_owned();
    let t_lo = dense.t0;
    let t_hi = dense.t1();
    let tol_t = opts.event_time_rel * t_hi.abs().max(1.0);
    match monitor {
        EventMonitor::Indicator {
            ref_sign,
            touch_armed,
        } => {
            let s = |t: f64| {
                system
                    .codistribution()
                    .singular_indicator_at(&q_of(t))
                    .expect("indicator declared")
            };
            // sign-change detection against the reference side
            if let Some(sig) = *ref_sign {
                const SCAN: usize = 16;
                let mut prev_t = t_lo;
                for k in 1..=SCAN {
                    let tk = t_lo + (t_hi - t_lo) * k as f64 / SCAN as f64;
                    let sk = s(tk);
                    if sk != 0.0 && sk.signum() == -sig {
                        // bisect: lo keeps the old sign (or exact zero)
                        let mut lo = prev_t;
                        let mut hi = tk;
                        while hi - lo > tol_t {
                            let mid = 0.5 * (lo + hi);
                            let sm = s(mid);
                            if sm != 0.0 && sm.signum() == -sig {
                                hi = mid;
                            } else {
                                lo = mid;
                            }
                        }
                        return Ok(Some(lo));
                    }
                    prev_t = tk;
                }
            }
            // touch detection for indicators that approach zero without
            // changing sign
            let s_end = s(t_hi);
            if *touch_armed {
                if let Some((t_min, s_min)) = minimize_abs(&s, t_lo, t_hi, tol_t) {
                    if s_min <= opts.touch_tol {
                        return Ok(Some(t_min));
                    }
                }
            }
            if ref_sign.is_none() && s_end.abs() > opts.arm_tol {
                *ref_sign = Some(s_end.signum());
            }
            if s_end.abs() > opts.arm_tol {
                *touch_armed = true;
            }
            Ok(None)
        }
        EventMonitor::Key(base) => {
            let key_end = frame_key(system, &q_of(t_hi), opts.rank_tol)?;
            if key_end == *base {
                return Ok(None);
            }
            // last time still attached to the incoming frame
            let mut lo = t_lo;
            let mut hi = t_hi;
            while hi - lo > tol_t {
                let mid = 0.5 * (lo + hi);
                if frame_key(system, &q_of(mid), opts.rank_tol)? == *base {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            Ok(Some(lo))
        }
    }
}

/// Coarse scan plus golden-section refinement of `|s|` over `[a, b]`.
fn minimize_abs(s: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Option<(f64, f64)> {
    const SCAN: usize = 16;
    let mut best_k = 0;
    let mut best = f64::INFINITY;
    for k in 0..=SCAN {
        let t = a + (b - a) * k as f64 / SCAN as f64;
        let v = s(t).abs();
        if v < best {
            best = v;
            best_k = k;
        }
    }
    let lo = a + (b - a) * best_k.saturating_sub(1) as f64 / SCAN as f64;
    let hi = a + (b - a) * (best_k + 1).min(SCAN) as f64 / SCAN as f64;
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - phi * (hi - lo), lo + phi * (hi - lo));
    let (mut lo, mut hi) = (lo, hi);
    let (mut f1, mut f2) = (s(x1).abs(), s(x2).abs());
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - phi * (hi - lo);
            f1 = s(x1).abs();
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + phi * (hi - lo);
            f2 = s(x2).abs();
        }
    }
    let t = 0.5 * (lo + hi);
    Some((t, s(t).abs().min(f1).min(f2).min(best)))
}
