//! Everything that happens where the constraint rank changes: one-sided
//! limit subspaces along an approach path, the jump decision, the momentum
//! projection rule, external impulses, and the kinetic-energy audit.
//!
//! A crossing at time `t0` is resolved from two one-sided paths. The
//! incoming side is read off the trajectory that produced the crossing. The
//! outgoing side is a short continued flight from `(q(t0), p_minus)` that
//! deliberately ignores any constraints appearing past `t0`; the limit of
//! the constraint subspace along that flight defines the span the momentum
//! must satisfy after the crossing. By convention the jump is booked at
//! `q(t0)` itself.

use crate::dynamics::{
    cometric_rate, eom_rhs_rows, frame_rows, MechanicalSystem, PhaseState, StratumId,
    TrajectorySegment,
};
use crate::error::{Error, Result};
use crate::geometry::{
    constraint_projector, orthonormalize_subspace, subspace_contained, Codistribution, Metric,
    SubspaceBasis,
};
use crate::linalg::{select_independent_rows, DEFAULT_RANK_TOL};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

// ---------------------------------------------------------------------------
// Approach paths
// ---------------------------------------------------------------------------

/// Which side of the crossing a path parametrizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Before,
    After,
}

/// One-sided curve `eps -> q(t0 -/+ eps)`, `eps > 0`, approaching the
/// crossing point as `eps -> 0`.
#[derive(Clone)]
pub struct ApproachPath {
    pub side: Side,
    pub t0: f64,
    q0: DVector<f64>,
    sampler: Arc<dyn Fn(f64) -> DVector<f64> + Send + Sync>,
    max_eps: f64,
}

impl fmt::Debug for ApproachPath {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ApproachPath")
            .field("side", &self.side)
            .field("t0", &self.t0)
            .field("max_eps", &self.max_eps)
            .finish()
    }
}

impl ApproachPath {
    pub fn base_point(&self) -> &DVector<f64> {
        &self.q0
    }

    pub fn max_eps(&self) -> f64 {
        self.max_eps
    }

    /// Configuration at parameter `eps > 0` from the crossing.
    pub fn sample(&self, eps: f64) -> DVector<f64> {
        (self.sampler)(eps.min(self.max_eps))
    }

    /// Incoming path read from the dense interpolant of the segment that
    /// ended in the crossing.
    pub fn before_from_segment(segment: &TrajectorySegment) -> Result<Self> {
        let t0 = segment
            .crossing_time()
            .ok_or_else(|| Error::input("segment did not end in a singular crossing"))?;
        let (w_lo, _) = segment
            .dense_window()
            .ok_or_else(|| Error::input("segment carries no dense interpolant"))?;
        let n = segment.start().q.len();
        let q0 = segment
            .sample(t0)
            .expect("crossing time lies in the dense window")
            .rows(0, n)
            .into_owned();
        let seg = segment.clone();
        let max_eps = (t0 - w_lo).max(0.0);
        if max_eps == 0.0 {
            return Err(Error::input("segment has no extent before the crossing"));
        }
        Ok(ApproachPath {
            side: Side::Before,
            t0,
            q0,
            sampler: Arc::new(move |eps| {
                let t = (t0 - eps).max(w_lo);
                seg.sample(t)
                    .expect("sample time inside dense window")
                    .rows(0, n)
                    .into_owned()
            }),
            max_eps,
        })
    }

    /// Continued flight from `(q0, p)`: second-order expansion of the flow
    /// that keeps the rows active before the crossing (reduced to an
    /// independent subset at `q0`) and ignores any constraints appearing
    /// past it. Falls back to the free flow when the old rows collapse.
    pub fn ballistic(
        system: &MechanicalSystem,
        side: Side,
        t0: f64,
        q0: &DVector<f64>,
        p: &DVector<f64>,
        old_frame: Option<&StratumId>,
        rank_tol: f64,
    ) -> Result<Self> {
        let at = system.metric().at(q0)?;
        let v = at.raise(p);
        let state = PhaseState::new(t0, q0.clone(), p.clone());

        let keep: Vec<usize> = match old_frame {
            None => vec![],
            Some(frame) => {
                let rows = frame_rows(system, frame, q0);
                let w = at.whiten_rows(&rows);
                let (independent, _) = select_independent_rows(&w, rank_tol);
                independent
            }
        };
        let rows_fn = |q: &DVector<f64>| -> DMatrix<f64> {
            match old_frame {
                None => DMatrix::zeros(0, q.len()),
                Some(frame) => {
                    let all = frame_rows(system, frame, q);
                    let mut out = DMatrix::zeros(keep.len(), q.len());
                    for (k, &r) in keep.iter().enumerate() {
                        out.row_mut(k).copy_from(&all.row(r));
                    }
                    out
                }
            }
        };
        let (_, pdot) = match eom_rhs_rows(system, &state, &rows_fn) {
            Ok(rhs) => rhs,
            Err(Error::DegenerateConstraints { .. }) => {
                eom_rhs_rows(system, &state, &|q: &DVector<f64>| {
                    DMatrix::zeros(0, q.len())
                })?
            }
            Err(e) => return Err(e),
        };
        let mut acc = at.raise(&pdot);
        if v.amax() > 0.0 {
            acc += cometric_rate(system, &at, q0, &v, p)?;
        }
        let q0c = q0.clone();
        let sign = match side {
            Side::After => 1.0,
            Side::Before => -1.0,
        };
        Ok(ApproachPath {
            side,
            t0,
            q0: q0.clone(),
            sampler: Arc::new(move |eps| &q0c + sign * eps * &v + 0.5 * eps * eps * &acc),
            max_eps: f64::INFINITY,
        })
    }

    /// Path given directly as a function of the approach parameter.
    pub fn parametric(
        side: Side,
        t0: f64,
        q0: DVector<f64>,
        f: impl Fn(f64) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        ApproachPath {
            side,
            t0,
            q0,
            sampler: Arc::new(f),
            max_eps: f64::INFINITY,
        }
    }
}

// ---------------------------------------------------------------------------
// Limit subspaces
// ---------------------------------------------------------------------------

/// Options for limit computation and crossing resolution.
#[derive(Debug, Clone)]
pub struct TransitionOpts {
    /// Largest approach parameter of the refinement sequence
    /// `eps_k = eps0 * 2^{-k}`.
    pub eps0: f64,
    /// Number of refinement levels `k = 0..=levels`.
    pub levels: usize,
    /// Principal-angle agreement accepted between successive bases.
    pub angle_tol: f64,
    pub rank_tol: f64,
    /// Relative threshold on `|b_i g^{-1} p|` deciding whether the incoming
    /// momentum violates the new constraints.
    pub decision_tol: f64,
    /// Largest principal angle tolerated between outgoing bases computed
    /// along different probe paths before the crossing counts as
    /// path-dependent.
    pub path_agreement_tol: f64,
    /// Compute limits numerically even when exact strata are declared.
    pub force_numeric: bool,
    /// Fallback used when the outgoing limit is path-dependent.
    pub hypothesis: Option<Hypothesis>,
}

impl Default for TransitionOpts {
    fn default() -> Self {
        TransitionOpts {
            eps0: 1e-3,
            levels: 20,
            angle_tol: 1e-7,
            rank_tol: DEFAULT_RANK_TOL,
            decision_tol: 1e-8,
            path_agreement_tol: 1e-4,
            force_numeric: false,
            hypothesis: None,
        }
    }
}

/// User-supplied resolution of a path-dependent outgoing limit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hypothesis {
    /// Assume the approach balance is the same on both sides, which makes
    /// the outgoing subspace equal the incoming one and suppresses the jump.
    SameBalance,
}

/// One-sided limit of the constraint subspace along `path`.
///
/// For codistributions with declared strata the limit is exact: the stratum
/// the path lies in is probed at the smallest parameter and its rows are
/// evaluated at the base point. Otherwise the generating forms are sampled
/// at `eps_k = eps0 * 2^{-k}`, each nonzero row normalized in the cometric
/// at the base point, orthonormalized, and the sequence is accepted at the
/// first pair of successive bases agreeing to `angle_tol` in principal
/// angles. Per-row normalization makes the limit invariant under scaling
/// the generating forms by positive functions.
pub fn limit_subspace(
    codist: &Codistribution,
    path: &ApproachPath,
    metric: &Metric,
    opts: &TransitionOpts,
) -> Result<SubspaceBasis> {
    let q0 = path.base_point();
    let eps_start = if path.max_eps().is_finite() {
        opts.eps0.min(0.9 * path.max_eps())
    } else {
        opts.eps0
    };
    if eps_start <= 0.0 || eps_start.is_nan() {
        return Err(Error::input("approach path has no extent"));
    }
    let eps_min = eps_start * 0.5_f64.powi(opts.levels as i32);
    let q_near = path.sample(eps_min);
    if (&q_near - q0).norm() > 1e-5 * (1.0 + q0.norm()) {
        return Err(Error::input(
            "approach path does not converge to its base point",
        ));
    }

    if codist.has_strata() && !opts.force_numeric {
        let idx = codist.stratum_index(&q_near).ok_or_else(|| {
            Error::input("no stratum contains the approach path near the crossing")
        })?;
        let rows = codist.strata()[idx].rows_at(q0);
        return orthonormalize_subspace(metric, q0, &rows, opts.rank_tol);
    }

    let at = metric.at(q0)?;
    // samples where every row is exactly zero carry no direction and are
    // skipped: normalization rescues arbitrarily small nonzero rows, but a
    // generating family that underflows along the tail must not masquerade
    // as a zero limit
    let mut previous: Option<SubspaceBasis> = None;
    let mut before_previous: Option<SubspaceBasis> = None;
    let mut last_gap = f64::INFINITY;
    for k in 0..=opts.levels {
        let eps = eps_start * 0.5_f64.powi(k as i32);
        let q = path.sample(eps);
        let raw = codist.forms(&q);
        let mut rows: Vec<DVector<f64>> = Vec::new();
        for i in 0..raw.nrows() {
            let row = raw.row(i).transpose();
            let norm = at.conorm(&row);
            if norm > 0.0 && norm.is_finite() {
                rows.push(row / norm);
            }
        }
        if rows.is_empty() {
            continue;
        }
        let mut stacked = DMatrix::zeros(rows.len(), codist.dim());
        for (i, r) in rows.iter().enumerate() {
            stacked.row_mut(i).copy_from(&r.transpose());
        }
        let basis = orthonormalize_subspace(metric, q0, &stacked, opts.rank_tol)?;
        if let Some(prev) = &previous {
            match prev.max_angle(&basis) {
                Some(gap) if gap <= opts.angle_tol => return Ok(basis),
                Some(gap) => last_gap = gap,
                None => last_gap = f64::INFINITY,
            }
        }
        before_previous = previous.take();
        previous = Some(basis);
    }
    match previous {
        // the generating family vanishes along the whole path side
        None => Ok(SubspaceBasis::empty(q0.clone())),
        Some(last) => Err(Error::LimitIndeterminate {
            previous: Box::new(before_previous.unwrap_or_else(|| last.clone())),
            last: Box::new(last),
            gap: last_gap,
        }),
    }
}

// ---------------------------------------------------------------------------
// Decision and jump rule
// ---------------------------------------------------------------------------

/// What happens to the momentum at a crossing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    /// The outgoing subspace is contained in the incoming one; nothing to
    /// enforce.
    NoJumpContained,
    /// New constraints appear but the incoming momentum already satisfies
    /// them.
    NoJumpCompatible,
    /// New constraints appear and the momentum must be projected.
    Jump,
    /// Boundary created by an external impulse, not by a rank change.
    Impulse,
}

impl Decision {
    pub fn as_str(&self) -> &'static str {
        match self {
            Decision::NoJumpContained => "no_jump_contained",
            Decision::NoJumpCompatible => "no_jump_compatible",
            Decision::Jump => "jump",
            Decision::Impulse => "impulse",
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Jump decision from the two one-sided subspaces and the incoming
/// momentum. `tol` is relative to the cometric norm of `p_minus`.
pub fn jump_decision(
    basis_minus: &SubspaceBasis,
    basis_plus: &SubspaceBasis,
    p_minus: &DVector<f64>,
    metric: &Metric,
    tol: f64,
) -> Result<Decision> {
    if subspace_contained(basis_plus, basis_minus, DEFAULT_RANK_TOL)? {
        return Ok(Decision::NoJumpContained);
    }
    let at = metric.at(basis_plus.point())?;
    let wp = at.whiten(p_minus);
    let violation = (basis_plus.whitened() * &wp).amax();
    if violation > tol * at.conorm(p_minus) {
        Ok(Decision::Jump)
    } else {
        Ok(Decision::NoJumpCompatible)
    }
}

/// Project the incoming momentum onto the annihilator of the outgoing
/// subspace: the unique momentum satisfying the new constraints whose
/// difference from `p_minus` lies in the outgoing span, equivalently the
/// constraint-satisfying momentum closest to `p_minus` in kinetic energy.
pub fn apply_jump(
    metric: &Metric,
    q: &DVector<f64>,
    basis_plus: &SubspaceBasis,
    p_minus: &DVector<f64>,
) -> Result<DVector<f64>> {
    if basis_plus.is_empty() {
        return Ok(p_minus.clone());
    }
    let projector = constraint_projector(metric, q, basis_plus.rows())?;
    Ok(projector * p_minus)
}

/// Momentum after an external impulse `imp` applied against the active
/// constraint span: `p_plus = P (p_minus + imp)`. With no active
/// constraints this is plain momentum addition.
pub fn apply_external_impulse(
    metric: &Metric,
    q: &DVector<f64>,
    basis_active: &SubspaceBasis,
    p_minus: &DVector<f64>,
    imp: &DVector<f64>,
) -> Result<DVector<f64>> {
    if p_minus.len() != imp.len() {
        return Err(Error::Dimension {
            what: "external impulse",
            expected: p_minus.len(),
            got: imp.len(),
        });
    }
    let total = p_minus + imp;
    if basis_active.is_empty() {
        return Ok(total);
    }
    let projector = constraint_projector(metric, q, basis_active.rows())?;
    Ok(projector * total)
}

/// Kinetic-energy drop `T(p_minus) - T(p_plus)` across a jump.
///
/// For pure projection jumps the drop can never be negative; a negative
/// value beyond rounding slack signals an internal inconsistency and is
/// returned as an error.
pub fn carnot_audit(
    metric: &Metric,
    q: &DVector<f64>,
    p_minus: &DVector<f64>,
    p_plus: &DVector<f64>,
) -> Result<f64> {
    let at = metric.at(q)?;
    let t_minus = at.kinetic(p_minus);
    let t_plus = at.kinetic(p_plus);
    let delta = t_minus - t_plus;
    if delta < -1e-12 * t_minus.max(1.0) {
        return Err(Error::CarnotViolation { increase: -delta });
    }
    Ok(delta)
}

// ---------------------------------------------------------------------------
// Crossing reports
// ---------------------------------------------------------------------------

/// Rank pattern of a crossing: incoming rank, rank at the crossing point,
/// outgoing rank.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CrossingCase {
    /// Rank kept on entry, higher on exit.
    RankGain,
    /// Rank collapsed at the point and stays at the collapsed value.
    RankCollapse,
    /// Rank collapsed at the point and rises again on exit.
    CollapseRegain,
    /// Any other pattern (including no change).
    Other,
}

impl CrossingCase {
    pub fn classify(rho_minus: usize, rho_0: usize, rho_plus: usize) -> Self {
        if rho_0 == rho_minus && rho_plus > rho_0 {
            CrossingCase::RankGain
        } else if rho_0 < rho_minus && rho_plus == rho_0 {
            CrossingCase::RankCollapse
        } else if rho_0 < rho_minus && rho_plus > rho_0 {
            CrossingCase::CollapseRegain
        } else {
            CrossingCase::Other
        }
    }

    /// Numeric id used in tabular output; `0` for [`CrossingCase::Other`].
    pub fn case_id(&self) -> u8 {
        match self {
            CrossingCase::RankGain => 1,
            CrossingCase::RankCollapse => 2,
            CrossingCase::CollapseRegain => 3,
            CrossingCase::Other => 0,
        }
    }
}

/// Full record of one resolved crossing or impulse boundary.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JumpReport {
    pub t0: f64,
    pub q: DVector<f64>,
    pub rho_minus: usize,
    pub rho_0: usize,
    pub rho_plus: usize,
    pub case: CrossingCase,
    pub basis_minus: SubspaceBasis,
    pub basis_plus: SubspaceBasis,
    pub decision: Decision,
    pub p_minus: DVector<f64>,
    pub p_plus: DVector<f64>,
    /// Kinetic-energy drop `T(p_minus) - T(p_plus)`; nonnegative unless an
    /// external impulse is present.
    pub delta_t: f64,
    pub impulse: Option<DVector<f64>>,
    /// Whether the outgoing subspace came from a hypothesis rather than a
    /// converged limit.
    pub by_hypothesis: bool,
}

impl JumpReport {
    /// Residuals of the two jump conditions: the component of
    /// `p_plus - p_minus - impulse` outside the outgoing span, and the
    /// largest pairing of `p_plus` against the outgoing basis. Both vanish
    /// for a valid jump.
    pub fn jump_residuals(&self, metric: &Metric) -> Result<(f64, f64)> {
        let mut delta = &self.p_plus - &self.p_minus;
        if let Some(imp) = &self.impulse {
            delta -= imp;
        }
        let span_residual = self.basis_plus.projection_residual(metric, &delta)?;
        let at = metric.at(&self.q)?;
        let pairing = if self.basis_plus.is_empty() {
            0.0
        } else {
            (self.basis_plus.whitened() * at.whiten(&self.p_plus)).amax()
        };
        Ok((span_residual, pairing))
    }
}

/// Crossing whose outgoing subspace could not be pinned down.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndeterminateCrossing {
    pub t0: f64,
    pub q: DVector<f64>,
    pub p_minus: DVector<f64>,
    pub basis_minus: Option<SubspaceBasis>,
    /// Candidate outgoing bases that failed to agree (the last refinement
    /// levels of a non-convergent sequence, or the per-path limits of a
    /// path-dependent crossing).
    pub candidates: Vec<SubspaceBasis>,
    /// Largest principal-angle separation among the candidates, when the
    /// ranks allow one.
    pub max_gap: Option<f64>,
    pub reason: String,
}

/// Outcome of resolving a crossing.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[allow(clippy::large_enum_variant)]
pub enum CrossingOutcome {
    Resolved {
        report: JumpReport,
        restart: PhaseState,
    },
    Indeterminate(IndeterminateCrossing),
}

// ---------------------------------------------------------------------------
// Crossing resolution
// ---------------------------------------------------------------------------

/// Resolve a crossing from explicit one-sided paths.
///
/// `paths_plus` holds one or more candidate outgoing paths; their limits
/// must agree within `opts.path_agreement_tol`, otherwise the crossing is
/// reported as path-dependent (resolvable by `opts.hypothesis`).
pub fn probe_crossing(
    system: &MechanicalSystem,
    q0: &DVector<f64>,
    p_minus: &DVector<f64>,
    path_minus: &ApproachPath,
    paths_plus: &[ApproachPath],
    opts: &TransitionOpts,
) -> Result<CrossingOutcome> {
    let metric = system.metric();
    let codist = system.codistribution();
    let t0 = path_minus.t0;

    let basis_minus = match limit_subspace(codist, path_minus, metric, opts) {
        Ok(b) => b,
        Err(Error::LimitIndeterminate {
            previous,
            last,
            gap,
        }) => {
            return Ok(CrossingOutcome::Indeterminate(IndeterminateCrossing {
                t0,
                q: q0.clone(),
                p_minus: p_minus.clone(),
                basis_minus: None,
                candidates: vec![*previous, *last],
                max_gap: Some(gap),
                reason: "incoming limit did not converge".to_string(),
            }))
        }
        Err(e) => return Err(e),
    };

    if paths_plus.is_empty() {
        return Err(Error::input("at least one outgoing path is required"));
    }
    let mut limits: Vec<SubspaceBasis> = Vec::with_capacity(paths_plus.len());
    let mut failure: Option<(Vec<SubspaceBasis>, Option<f64>, String)> = None;
    for path in paths_plus {
        match limit_subspace(codist, path, metric, opts) {
            Ok(b) => limits.push(b),
            Err(Error::LimitIndeterminate {
                previous,
                last,
                gap,
            }) => {
                failure = Some((
                    vec![*previous, *last],
                    Some(gap),
                    "outgoing limit did not converge".to_string(),
                ));
                break;
            }
            Err(e) => return Err(e),
        }
    }
    if failure.is_none() && limits.len() > 1 {
        let mut worst: Option<f64> = Some(0.0);
        'outer: for i in 0..limits.len() {
            for j in (i + 1)..limits.len() {
                match limits[i].max_angle(&limits[j]) {
                    Some(gap) => {
                        worst = Some(worst.unwrap_or(0.0).max(gap));
                        if gap > opts.path_agreement_tol {
                            break 'outer;
                        }
                    }
                    None => {
                        worst = None;
                        break 'outer;
                    }
                }
            }
        }
        let disagree = match worst {
            Some(gap) => gap > opts.path_agreement_tol,
            None => true,
        };
        if disagree {
            failure = Some((
                limits.clone(),
                worst,
                "outgoing limit depends on the approach path".to_string(),
            ));
        }
    }

    let (basis_plus, by_hypothesis) = match failure {
        None => (limits.remove(0), false),
        Some((candidates, max_gap, reason)) => match opts.hypothesis {
            Some(Hypothesis::SameBalance) => (basis_minus.clone(), true),
            None => {
                return Ok(CrossingOutcome::Indeterminate(IndeterminateCrossing {
                    t0,
                    q: q0.clone(),
                    p_minus: p_minus.clone(),
                    basis_minus: Some(basis_minus),
                    candidates,
                    max_gap,
                    reason,
                }))
            }
        },
    };

    let rho_minus = basis_minus.rank();
    let rho_plus = basis_plus.rank();
    let rho_0 = rank_at_crossing(codist, q0, path_minus, paths_plus.first(), opts)?;
    let case = CrossingCase::classify(rho_minus, rho_0, rho_plus);
    let decision = jump_decision(
        &basis_minus,
        &basis_plus,
        p_minus,
        metric,
        opts.decision_tol,
    )?;
    let p_plus = match decision {
        Decision::Jump => apply_jump(metric, q0, &basis_plus, p_minus)?,
        _ => p_minus.clone(),
    };
    let delta_t = carnot_audit(metric, q0, p_minus, &p_plus)?;

    let report = JumpReport {
        t0,
        q: q0.clone(),
        rho_minus,
        rho_0,
        rho_plus,
        case,
        basis_minus,
        basis_plus,
        decision,
        p_minus: p_minus.clone(),
        p_plus: p_plus.clone(),
        delta_t,
        impulse: None,
        by_hypothesis,
    };
    let restart = PhaseState::new(t0, q0.clone(), p_plus);
    Ok(CrossingOutcome::Resolved { report, restart })
}

/// Rank at the crossing point itself.
///
/// The refined crossing point carries time jitter of order `1e-12`, which
/// is enough to land an exact stratum lookup on either side of the
/// boundary. The rank "at" the crossing is therefore sampled as the minimum
/// over the point and the two one-sided probes at the smallest refinement
/// parameter; rank lower semicontinuity makes the minimum the right pick.
fn rank_at_crossing(
    codist: &Codistribution,
    q0: &DVector<f64>,
    path_minus: &ApproachPath,
    path_plus: Option<&ApproachPath>,
    opts: &TransitionOpts,
) -> Result<usize> {
    let eps_min = opts.eps0 * 0.5_f64.powi(opts.levels as i32);
    let mut rho = codist.rank_at(q0, opts.rank_tol)?;
    rho = rho.min(codist.rank_at(&path_minus.sample(eps_min), opts.rank_tol)?);
    if let Some(plus) = path_plus {
        rho = rho.min(codist.rank_at(&plus.sample(eps_min), opts.rank_tol)?);
    }
    Ok(rho)
}

/// Resolve the crossing that ended `segment`.
///
/// The incoming subspace is taken along the segment's own dense
/// interpolant; the outgoing subspace along the ballistic continuation of
/// `(q(t0), p(t0))`. The restart state reuses the crossing time and point
/// with the post-crossing momentum.
pub fn resolve_crossing(
    system: &MechanicalSystem,
    segment: &TrajectorySegment,
    opts: &TransitionOpts,
) -> Result<CrossingOutcome> {
    let t0 = segment
        .crossing_time()
        .ok_or_else(|| Error::input("segment did not end in a singular crossing"))?;
    let n = system.dim();
    let y0 = segment
        .sample(t0)
        .ok_or_else(|| Error::input("segment carries no dense interpolant at the crossing"))?;
    let q0 = y0.rows(0, n).into_owned();
    let p_minus = y0.rows(n, n).into_owned();

    let path_minus = ApproachPath::before_from_segment(segment)?;
    let path_plus = ApproachPath::ballistic(
        system,
        Side::After,
        t0,
        &q0,
        &p_minus,
        Some(&segment.stratum),
        opts.rank_tol,
    )?;
    probe_crossing(system, &q0, &p_minus, &path_minus, &[path_plus], opts)
}
