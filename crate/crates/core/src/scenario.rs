//! Scenario files and the drivers behind the command-line interface.
//!
//! A scenario is a TOML file selecting a system (built-in or inline via the
//! expression grammar), an initial state, integrator and transition
//! options, an external-impulse schedule, and output paths. [`run_scenario`]
//! alternates segment integration, crossing resolution, and impulse
//! application until the horizon; results export to fixed-schema CSV files
//! and a JSON file that round-trips bit-exactly.

use crate::dynamics::{
    constraint_residual, frame_rows, integrate_segment, resolve_frame, ExitCause, IntegrateOpts,
    MechanicalSystem, PhaseState, StratumId, TrajectorySegment,
};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::geometry::{
    classify_point, orthonormalize_subspace, ClassifyOpts, Codistribution, Metric, PointClass,
    Stratum, SubspaceBasis,
};
use crate::systems::{central_force_particle, plane_particle, rolling_sphere, SphereParams};
use crate::transitions::{
    apply_external_impulse, resolve_crossing, ApproachPath, CrossingCase, CrossingOutcome,
    Decision, Hypothesis, IndeterminateCrossing, JumpReport, Side, TransitionOpts,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

// ---------------------------------------------------------------------------
// Scenario schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub system: SystemSpec,
    #[serde(default)]
    pub initial: Option<InitialSpec>,
    #[serde(default)]
    pub run: Option<RunSpec>,
    #[serde(default)]
    pub integrator: IntegratorSpec,
    #[serde(default)]
    pub transition: TransitionSpec,
    #[serde(default)]
    pub impulse: Vec<ImpulseSpec>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub probe: Option<ProbeSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(default)]
    pub builtin: Option<String>,
    #[serde(default)]
    pub mass: Option<f64>,
    #[serde(default)]
    pub radius: Option<f64>,
    #[serde(default)]
    pub gyration: Option<f64>,
    #[serde(default)]
    pub inline: Option<InlineSystem>,
}

/// System defined inside the scenario file through expressions in the
/// declared coordinates.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineSystem {
    pub dim: usize,
    pub coords: Vec<String>,
    /// Metric entries as expressions; row-major `dim x dim`.
    pub metric: Vec<Vec<String>>,
    #[serde(default)]
    pub potential: Option<String>,
    /// Generating constraint rows; each row holds `dim` component
    /// expressions.
    #[serde(default)]
    pub forms: Vec<Vec<String>>,
    #[serde(default)]
    pub singular_indicator: Option<String>,
    /// Exact piecewise description; looked up in declaration order, a point
    /// belongs to the first stratum whose `when` expression is >= 0.
    #[serde(default)]
    pub strata: Vec<InlineStratum>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineStratum {
    pub when: String,
    #[serde(default)]
    pub rows: Vec<Vec<String>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSpec {
    #[serde(default)]
    pub t: f64,
    pub q: Vec<f64>,
    #[serde(default)]
    pub qdot: Option<Vec<f64>>,
    #[serde(default)]
    pub p: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub horizon: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSpec {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: Option<f64>,
    pub max_steps: usize,
    pub start_drift_tol: f64,
    pub touch_tol: f64,
    pub arm_tol: f64,
}

impl Default for IntegratorSpec {
    fn default() -> Self {
        let o = IntegrateOpts::default();
        IntegratorSpec {
            rel_tol: o.rel_tol,
            abs_tol: o.abs_tol,
            max_step: None,
            max_steps: o.max_steps,
            start_drift_tol: o.start_drift_tol,
            touch_tol: o.touch_tol,
            arm_tol: o.arm_tol,
        }
    }
}

impl IntegratorSpec {
    pub fn to_opts(&self) -> IntegrateOpts {
        IntegrateOpts {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step.unwrap_or(f64::INFINITY),
            max_steps: self.max_steps,
            start_drift_tol: self.start_drift_tol,
            touch_tol: self.touch_tol,
            arm_tol: self.arm_tol,
            ..IntegrateOpts::default()
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionSpec {
    pub eps0: f64,
    pub levels: usize,
    pub angle_tol: f64,
    pub rank_tol: f64,
    pub decision_tol: f64,
    pub path_agreement_tol: f64,
    pub force_numeric: bool,
    /// `"same-balance"` resolves path-dependent outgoing limits by reusing
    /// the incoming subspace.
    pub hypothesis: Option<String>,
}

impl Default for TransitionSpec {
    fn default() -> Self {
        let o = TransitionOpts::default();
        TransitionSpec {
            eps0: o.eps0,
            levels: o.levels,
            angle_tol: o.angle_tol,
            rank_tol: o.rank_tol,
            decision_tol: o.decision_tol,
            path_agreement_tol: o.path_agreement_tol,
            force_numeric: o.force_numeric,
            hypothesis: None,
        }
    }
}

impl TransitionSpec {
    pub fn to_opts(&self) -> Result<TransitionOpts> {
        let hypothesis = match self.hypothesis.as_deref() {
            None => None,
            Some("same-balance") | Some("same_balance") => Some(Hypothesis::SameBalance),
            Some(other) => {
                return Err(Error::scenario(format!(
                    "unknown transition hypothesis `{other}` (expected \"same-balance\")"
                )))
            }
        };
        Ok(TransitionOpts {
            eps0: self.eps0,
            levels: self.levels,
            angle_tol: self.angle_tol,
            rank_tol: self.rank_tol,
            decision_tol: self.decision_tol,
            path_agreement_tol: self.path_agreement_tol,
            force_numeric: self.force_numeric,
            hypothesis,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImpulseSpec {
    pub t: f64,
    pub p: Vec<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub trajectory: Option<String>,
    pub jumps: Option<String>,
    pub result: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    /// Candidate outgoing paths; each entry holds `dim` expressions in
    /// `eps`.
    pub paths: Vec<Vec<String>>,
}

pub fn load_scenario(path: &Path) -> Result<ScenarioFile> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::scenario(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Error::scenario(format!("{}: {e}", path.display())))
}

pub fn parse_scenario_str(text: &str) -> Result<ScenarioFile> {
    toml::from_str(text).map_err(|e| Error::scenario(e.to_string()))
}

// ---------------------------------------------------------------------------
// System building
// ---------------------------------------------------------------------------

pub fn build_system(spec: &SystemSpec) -> Result<MechanicalSystem> {
    match (&spec.builtin, &spec.inline) {
        (Some(_), Some(_)) => Err(Error::scenario(
            "system: choose either `builtin` or `inline`, not both",
        )),
        (None, None) => Err(Error::scenario("system: `builtin` or `inline` required")),
        (Some(name), None) => {
            let mass = spec.mass.unwrap_or(1.0);
            match name.as_str() {
                "plane-particle" => plane_particle(mass),
                "rolling-sphere" => {
                    let defaults = SphereParams::default();
                    rolling_sphere(SphereParams {
                        radius: spec.radius.unwrap_or(defaults.radius),
                        gyration: spec.gyration.unwrap_or(defaults.gyration),
                        mass,
                    })
                }
                "central-force-particle" => Ok(central_force_particle()),
                other => Err(Error::scenario(format!(
                    "unknown builtin system `{other}` (expected plane-particle, rolling-sphere, \
                     or central-force-particle)"
                ))),
            }
        }
        (None, Some(inline)) => build_inline(inline),
    }
}

fn parse_matrix(
    entries: &[Vec<String>],
    dim: usize,
    coords: &[String],
    what: &str,
) -> Result<Vec<Vec<Expr>>> {
    entries
        .iter()
        .enumerate()
        .map(|(i, row)| {
            if row.len() != dim {
                return Err(Error::scenario(format!(
                    "{what}: row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            row.iter().map(|s| Expr::parse(s, coords)).collect()
        })
        .collect()
}

fn eval_rows(rows: &[Vec<Expr>], q: &DVector<f64>) -> DMatrix<f64> {
    let vals: Vec<f64> = q.iter().cloned().collect();
    let m = rows.len();
    let n = q.len();
    let mut out = DMatrix::zeros(m, n);
    for (i, row) in rows.iter().enumerate() {
        for (j, e) in row.iter().enumerate() {
            out[(i, j)] = e.eval(&vals);
        }
    }
    out
}

fn build_inline(inline: &InlineSystem) -> Result<MechanicalSystem> {
    let dim = inline.dim;
    if dim == 0 {
        return Err(Error::scenario("inline system: dim must be positive"));
    }
    if inline.coords.len() != dim {
        return Err(Error::scenario(format!(
            "inline system: {} coordinate names for dim {dim}",
            inline.coords.len()
        )));
    }
    if inline.metric.len() != dim {
        return Err(Error::scenario(format!(
            "inline system: metric has {} rows, expected {dim}",
            inline.metric.len()
        )));
    }
    let coords = inline.coords.clone();
    let metric_exprs = parse_matrix(&inline.metric, dim, &coords, "metric")?;
    let metric = Metric::new(dim, move |q| eval_rows(&metric_exprs, q));

    let form_exprs = parse_matrix(&inline.forms, dim, &coords, "forms")?;
    let m = form_exprs.len();
    let mut codist = Codistribution::new(dim, m, move |q| eval_rows(&form_exprs, q));

    if !inline.strata.is_empty() {
        let mut strata = Vec::with_capacity(inline.strata.len());
        for s in &inline.strata {
            let when = Expr::parse(&s.when, &coords)?;
            let rows = parse_matrix(&s.rows, dim, &coords, "stratum rows")?;
            let count = rows.len();
            strata.push(Stratum::new(
                move |q: &DVector<f64>| {
                    let vals: Vec<f64> = q.iter().cloned().collect();
                    when.eval(&vals) >= 0.0
                },
                count,
                move |q: &DVector<f64>| eval_rows(&rows, q),
            ));
        }
        codist = codist.with_strata(strata);
    }
    if let Some(ind) = &inline.singular_indicator {
        let e = Expr::parse(ind, &coords)?;
        codist = codist.with_singular_indicator(move |q: &DVector<f64>| {
            let vals: Vec<f64> = q.iter().cloned().collect();
            e.eval(&vals)
        });
    }

    let mut system = MechanicalSystem::new(metric, codist).with_coordinate_names(coords.clone());
    if let Some(pot) = &inline.potential {
        let e = Expr::parse(pot, &coords)?;
        system = system.with_potential(move |q: &DVector<f64>| {
            let vals: Vec<f64> = q.iter().cloned().collect();
            e.eval(&vals)
        });
    }
    Ok(system)
}

// ---------------------------------------------------------------------------
// Run driver
// ---------------------------------------------------------------------------

/// How a run ended; determines the process exit code.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum RunStatus {
    Completed,
    /// Halted at a crossing whose outgoing subspace is path-dependent or
    /// non-convergent and no hypothesis was supplied.
    IndeterminateCrossing(Box<IndeterminateCrossing>),
    IntegrationFailure {
        t: f64,
        reason: String,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnergySample {
    pub t: f64,
    pub energy: f64,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunSummary {
    /// Total energy at every segment boundary.
    pub energy_trace: Vec<EnergySample>,
    /// Largest constraint pairing over all stored states.
    pub max_drift: f64,
    /// Crossing counts keyed by case id (`"1"`, `"2"`, `"3"`, `"0"`) plus
    /// `"impulse"` boundaries and `"jumps"` (decision = jump).
    pub counts: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunResult {
    pub segments: Vec<TrajectorySegment>,
    pub reports: Vec<JumpReport>,
    pub summary: RunSummary,
    pub status: RunStatus,
}

impl RunResult {
    pub fn save_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::scenario(format!("serializing result: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::scenario(format!("reading result: {e}")))
    }
}

fn to_dvector(v: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(v)
}

/// Cometric-orthonormal basis of a frame's rows at `q`; rank-revealing, so
/// rows collapsing at a stratum boundary reduce cleanly.
fn active_basis(
    system: &MechanicalSystem,
    frame: &StratumId,
    q: &DVector<f64>,
    rank_tol: f64,
) -> Result<SubspaceBasis> {
    let rows = frame_rows(system, frame, q);
    orthonormalize_subspace(system.metric(), q, &rows, rank_tol)
}

/// Initial phase state of a scenario, with the constraint-compatibility
/// check and a projected suggestion on rejection.
pub fn initial_state(
    system: &MechanicalSystem,
    init: &InitialSpec,
    drift_tol: f64,
) -> Result<PhaseState> {
    let n = system.dim();
    if init.q.len() != n {
        return Err(Error::scenario(format!(
            "initial.q has dimension {}, system has {n}",
            init.q.len()
        )));
    }
    let q = to_dvector(&init.q);
    let p = match (&init.qdot, &init.p) {
        (Some(_), Some(_)) => {
            return Err(Error::scenario("initial: give either qdot or p, not both"))
        }
        (None, None) => return Err(Error::scenario("initial: qdot or p required")),
        (Some(v), None) => {
            if v.len() != n {
                return Err(Error::scenario(format!(
                    "initial.qdot has dimension {}, system has {n}",
                    v.len()
                )));
            }
            system.momentum(&q, &to_dvector(v))?
        }
        (None, Some(p)) => {
            if p.len() != n {
                return Err(Error::scenario(format!(
                    "initial.p has dimension {}, system has {n}",
                    p.len()
                )));
            }
            to_dvector(p)
        }
    };
    let state = PhaseState::new(init.t, q, p);
    let at = system.metric().at(&state.q)?;
    let v = at.raise(&state.p);
    let frame = resolve_frame(system, &state.q, &v, 1e-9, 1e-9)?;
    let residual = constraint_residual(system, &frame, &state.q, &state.p)?;
    if residual > drift_tol * (1.0 + at.conorm(&state.p)) {
        let rows = frame_rows(system, &frame, &state.q);
        let basis = orthonormalize_subspace(system.metric(), &state.q, &rows, 1e-9)?;
        let projected = apply_external_impulse(
            system.metric(),
            &state.q,
            &basis,
            &state.p,
            &DVector::zeros(n),
        )?;
        let suggestion: Vec<String> = projected.iter().map(|x| format!("{x:.12}")).collect();
        return Err(Error::scenario(format!(
            "initial state violates the active constraints (residual {residual:.3e}); \
             nearest compatible momentum: p = [{}]",
            suggestion.join(", ")
        )));
    }
    Ok(state)
}

/// Execute a scenario: integrate, resolve crossings, apply impulses,
/// summarize. Deterministic for a fixed scenario file.
pub fn run_scenario(sc: &ScenarioFile) -> Result<RunResult> {
    let system = build_system(&sc.system)?;
    let init = sc
        .initial
        .as_ref()
        .ok_or_else(|| Error::scenario("[initial] section required to run"))?;
    let horizon = sc
        .run
        .as_ref()
        .ok_or_else(|| Error::scenario("[run] section with horizon required"))?
        .horizon;
    let iopts = sc.integrator.to_opts();
    let topts = sc.transition.to_opts()?;
    let start = initial_state(&system, init, iopts.start_drift_tol)?;
    if horizon <= start.t || !horizon.is_finite() {
        return Err(Error::scenario(format!(
            "run.horizon {horizon} must exceed the initial time {}",
            start.t
        )));
    }

    let n = system.dim();
    let mut impulses: Vec<(f64, DVector<f64>)> = Vec::new();
    for imp in &sc.impulse {
        if imp.p.len() != n {
            return Err(Error::scenario(format!(
                "impulse at t={} has dimension {}, system has {n}",
                imp.t,
                imp.p.len()
            )));
        }
        if !(imp.t > start.t && imp.t < horizon) {
            return Err(Error::scenario(format!(
                "impulse time {} must lie strictly inside ({}, {horizon})",
                imp.t, start.t
            )));
        }
        impulses.push((imp.t, to_dvector(&imp.p)));
    }
    impulses.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut segments: Vec<TrajectorySegment> = Vec::new();
    let mut reports: Vec<JumpReport> = Vec::new();
    let mut state = start;
    let mut imp_idx = 0usize;
    let mut first_leg = true;

    let status = loop {
        let next_imp = impulses.get(imp_idx).map(|x| x.0);
        let leg_end = next_imp.unwrap_or(horizon).min(horizon);
        let seg = match integrate_segment(&system, &state, leg_end, &iopts) {
            Ok(seg) => seg,
            Err(e) if first_leg => return Err(e),
            Err(e) => {
                break RunStatus::IntegrationFailure {
                    t: state.t,
                    reason: e.to_string(),
                }
            }
        };
        first_leg = false;
        let exit = seg.exit.clone();
        segments.push(seg);
        let seg_ref = segments.last().unwrap();
        match exit {
            ExitCause::IntegrationFailure { t, reason } => {
                break RunStatus::IntegrationFailure { t, reason }
            }
            ExitCause::HorizonReached => {
                if leg_end < horizon {
                    // scheduled impulse boundary; the impulse is projected
                    // against the span governing the outgoing motion, which
                    // may differ from the incoming one when the impulse
                    // lands on a stratum boundary or reverses the motion
                    let (ti, impv) = impulses[imp_idx].clone();
                    imp_idx += 1;
                    let end = seg_ref.end().clone();
                    let at = system.metric().at(&end.q)?;
                    let basis_in = active_basis(&system, &seg_ref.stratum, &end.q, topts.rank_tol)?;
                    // fixed point of frame choice vs projected velocity
                    let mut p_new = &end.p + &impv;
                    let mut basis_out = basis_in.clone();
                    for _ in 0..2 {
                        let v = at.raise(&p_new);
                        let frame_out = resolve_frame(&system, &end.q, &v, 1e-9, topts.rank_tol)?;
                        basis_out = active_basis(&system, &frame_out, &end.q, topts.rank_tol)?;
                        p_new = apply_external_impulse(
                            system.metric(),
                            &end.q,
                            &basis_out,
                            &end.p,
                            &impv,
                        )?;
                    }
                    reports.push(JumpReport {
                        t0: ti,
                        q: end.q.clone(),
                        rho_minus: basis_in.rank(),
                        rho_0: basis_in.rank().min(basis_out.rank()),
                        rho_plus: basis_out.rank(),
                        case: CrossingCase::Other,
                        basis_minus: basis_in,
                        basis_plus: basis_out,
                        decision: Decision::Impulse,
                        p_minus: end.p.clone(),
                        p_plus: p_new.clone(),
                        delta_t: at.kinetic(&end.p) - at.kinetic(&p_new),
                        impulse: Some(impv),
                        by_hypothesis: false,
                    });
                    state = PhaseState::new(ti, end.q, p_new);
                    continue;
                }
                break RunStatus::Completed;
            }
            ExitCause::SingularCrossing { t0 } => {
                match resolve_crossing(&system, seg_ref, &topts)? {
                    CrossingOutcome::Indeterminate(info) => {
                        break RunStatus::IndeterminateCrossing(Box::new(info))
                    }
                    CrossingOutcome::Resolved {
                        mut report,
                        mut restart,
                    } => {
                        // an impulse scheduled at the crossing time folds
                        // into the jump projection
                        if let Some(&(ti, ref impv)) = impulses.get(imp_idx) {
                            if (ti - t0).abs() <= 1e-9 * t0.abs().max(1.0) {
                                let p2 = apply_external_impulse(
                                    system.metric(),
                                    &report.q,
                                    &report.basis_plus,
                                    &report.p_plus,
                                    impv,
                                )?;
                                let at = system.metric().at(&report.q)?;
                                report.impulse = Some(impv.clone());
                                report.delta_t = at.kinetic(&report.p_minus) - at.kinetic(&p2);
                                report.p_plus = p2.clone();
                                restart.p = p2;
                                imp_idx += 1;
                            }
                        }
                        reports.push(report);
                        state = restart;
                    }
                }
            }
        }
    };

    let summary = summarize(&system, &segments, &reports)?;
    Ok(RunResult {
        segments,
        reports,
        summary,
        status,
    })
}

fn summarize(
    system: &MechanicalSystem,
    segments: &[TrajectorySegment],
    reports: &[JumpReport],
) -> Result<RunSummary> {
    let mut trace = Vec::new();
    let mut max_drift = 0.0_f64;
    for seg in segments {
        for endpoint in [seg.start(), seg.end()] {
            trace.push(EnergySample {
                t: endpoint.t,
                energy: system.total_energy(endpoint)?,
            });
        }
        for s in &seg.states {
            max_drift = max_drift.max(constraint_residual(system, &seg.stratum, &s.q, &s.p)?);
        }
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in reports {
        if r.decision == Decision::Impulse {
            *counts.entry("impulse".to_string()).or_default() += 1;
        } else {
            *counts.entry(r.case.case_id().to_string()).or_default() += 1;
        }
        if r.decision == Decision::Jump {
            *counts.entry("jumps".to_string()).or_default() += 1;
        }
    }
    Ok(RunSummary {
        energy_trace: trace,
        max_drift,
        counts,
    })
}

// ---------------------------------------------------------------------------
// CSV export
// ---------------------------------------------------------------------------

/// 17 significant digits: round-trips every f64 exactly.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Trajectory table: `t, q_1..q_n, p_1..p_n, qdot_1..qdot_n, stratum_id,
/// energy, drift`, one row per stored state.
pub fn trajectory_csv(system: &MechanicalSystem, segments: &[TrajectorySegment]) -> Result<String> {
    let n = system.dim();
    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        let _ = write!(out, ",q_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",p_{i}");
    }
    for i in 1..=n {
        let _ = write!(out, ",qdot_{i}");
    }
    out.push_str(",stratum_id,energy,drift\n");
    for seg in segments {
        for s in &seg.states {
            let qdot = system.velocity(&s.q, &s.p)?;
            let energy = system.total_energy(s)?;
            let drift = constraint_residual(system, &seg.stratum, &s.q, &s.p)?;
            let _ = write!(out, "{}", fmt_f64(s.t));
            for x in s.q.iter() {
                let _ = write!(out, ",{}", fmt_f64(*x));
            }
            for x in s.p.iter() {
                let _ = write!(out, ",{}", fmt_f64(*x));
            }
            for x in qdot.iter() {
                let _ = write!(out, ",{}", fmt_f64(*x));
            }
            let _ = writeln!(
                out,
                ",{},{},{}",
                seg.stratum.csv_id(),
                fmt_f64(energy),
                fmt_f64(drift)
            );
        }
    }
    Ok(out)
}

/// Jump-report table: `t0, q_1..q_n, rho_minus, rho_0, rho_plus, case_id,
/// decision, p_minus_1..n, p_plus_1..n, deltaT`.
pub fn jumps_csv(dim: usize, reports: &[JumpReport]) -> String {
    let mut out = String::new();
    out.push_str("t0");
    for i in 1..=dim {
        let _ = write!(out, ",q_{i}");
    }
    out.push_str(",rho_minus,rho_0,rho_plus,case_id,decision");
    for i in 1..=dim {
        let _ = write!(out, ",p_minus_{i}");
    }
    for i in 1..=dim {
        let _ = write!(out, ",p_plus_{i}");
    }
    out.push_str(",deltaT\n");
    for r in reports {
        let _ = write!(out, "{}", fmt_f64(r.t0));
        for x in r.q.iter() {
            let _ = write!(out, ",{}", fmt_f64(*x));
        }
        let _ = write!(
            out,
            ",{},{},{},{},{}",
            r.rho_minus,
            r.rho_0,
            r.rho_plus,
            r.case.case_id(),
            r.decision
        );
        for x in r.p_minus.iter() {
            let _ = write!(out, ",{}", fmt_f64(*x));
        }
        for x in r.p_plus.iter() {
            let _ = write!(out, ",{}", fmt_f64(*x));
        }
        let _ = writeln!(out, ",{}", fmt_f64(r.delta_t));
    }
    out
}

/// Resolve an output file path against a base directory.
fn resolve_out(base: &Path, p: &str) -> PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

/// Write trajectory CSV, jump CSV, and result JSON per the scenario's
/// output section; `stem` names defaults for unset entries. Returns the
/// written paths.
pub fn write_outputs(
    sc: &ScenarioFile,
    system: &MechanicalSystem,
    result: &RunResult,
    base_dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(base_dir)?;
    let traj = sc
        .output
        .trajectory
        .clone()
        .unwrap_or_else(|| format!("{stem}_trajectory.csv"));
    let jumps = sc
        .output
        .jumps
        .clone()
        .unwrap_or_else(|| format!("{stem}_jumps.csv"));
    let resj = sc
        .output
        .result
        .clone()
        .unwrap_or_else(|| format!("{stem}_result.json"));
    let mut written = Vec::new();
    let p = resolve_out(base_dir, &traj);
    std::fs::write(&p, trajectory_csv(system, &result.segments)?)?;
    written.push(p);
    let p = resolve_out(base_dir, &jumps);
    std::fs::write(&p, jumps_csv(system.dim(), &result.reports))?;
    written.push(p);
    let p = resolve_out(base_dir, &resj);
    result.save_json(&p)?;
    written.push(p);
    Ok(written)
}

// ---------------------------------------------------------------------------
// Classification driver
// ---------------------------------------------------------------------------

/// One coordinate of a classification grid.
#[derive(Debug, Clone)]
pub enum GridAxis {
    Fixed(f64),
    Linspace { start: f64, stop: f64, count: usize },
}

impl GridAxis {
    fn values(&self) -> Vec<f64> {
        match self {
            GridAxis::Fixed(v) => vec![*v],
            GridAxis::Linspace { start, stop, count } => {
                if *count == 1 {
                    return vec![*start];
                }
                (0..*count)
                    .map(|k| start + (stop - start) * k as f64 / (*count as f64 - 1.0))
                    .collect()
            }
        }
    }

    fn step(&self) -> Option<f64> {
        match self {
            GridAxis::Fixed(_) => None,
            GridAxis::Linspace { start, stop, count } => {
                if *count > 1 {
                    Some((stop - start).abs() / (*count as f64 - 1.0))
                } else {
                    None
                }
            }
        }
    }
}

/// Parse a grid spec like `x=-1:1:21,y=0.5`; every system coordinate must
/// appear exactly once.
pub fn parse_grid(spec: &str, coords: &[String]) -> Result<Vec<GridAxis>> {
    let mut axes: Vec<Option<GridAxis>> = vec![None; coords.len()];
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let (name, rest) = part
            .split_once('=')
            .ok_or_else(|| Error::scenario(format!("grid component `{part}` lacks `=`")))?;
        let idx = coords
            .iter()
            .position(|c| c == name.trim())
            .ok_or_else(|| {
                Error::scenario(format!(
                    "unknown grid coordinate `{}` (expected one of {coords:?})",
                    name.trim()
                ))
            })?;
        let pieces: Vec<&str> = rest.split(':').collect();
        let axis = match pieces.len() {
            1 => GridAxis::Fixed(parse_f64(pieces[0])?),
            3 => GridAxis::Linspace {
                start: parse_f64(pieces[0])?,
                stop: parse_f64(pieces[1])?,
                count: pieces[2]
                    .trim()
                    .parse()
                    .map_err(|_| Error::scenario(format!("bad grid count `{}`", pieces[2])))?,
            },
            _ => {
                return Err(Error::scenario(format!(
                    "grid component `{part}` must be `name=value` or `name=start:stop:count`"
                )))
            }
        };
        if axes[idx].is_some() {
            return Err(Error::scenario(format!(
                "grid coordinate `{name}` repeated"
            )));
        }
        axes[idx] = Some(axis);
    }
    axes.into_iter()
        .enumerate()
        .map(|(i, a)| {
            a.ok_or_else(|| Error::scenario(format!("grid misses coordinate `{}`", coords[i])))
        })
        .collect()
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::scenario(format!("bad number `{s}`")))
}

#[derive(Debug, Clone, Serialize)]
pub struct ClassifyRow {
    pub q: Vec<f64>,
    pub rank: usize,
    pub class: PointClass,
}

/// Classify every grid point. The default radius is half the smallest grid
/// step (or 0.05 with no extended axis).
pub fn classify_grid(
    system: &MechanicalSystem,
    axes: &[GridAxis],
    radius: Option<f64>,
    samples: Option<usize>,
) -> Result<Vec<ClassifyRow>> {
    let dim = system.dim();
    let radius = radius.unwrap_or_else(|| {
        axes.iter()
            .filter_map(GridAxis::step)
            .fold(f64::INFINITY, f64::min)
            .map_or_grid_default()
    });
    let mut opts = ClassifyOpts::for_dim(dim, radius);
    if let Some(s) = samples {
        opts.samples = s;
    }
    let value_lists: Vec<Vec<f64>> = axes.iter().map(GridAxis::values).collect();
    let mut rows = Vec::new();
    let mut idx = vec![0usize; dim];
    loop {
        let q: Vec<f64> = (0..dim).map(|i| value_lists[i][idx[i]]).collect();
        let qv = to_dvector(&q);
        let class = classify_point(system.codistribution(), &qv, &opts)?;
        rows.push(ClassifyRow {
            q,
            rank: class.rank(),
            class,
        });
        // odometer increment, last coordinate fastest
        let mut c = dim;
        loop {
            if c == 0 {
                return Ok(rows);
            }
            c -= 1;
            idx[c] += 1;
            if idx[c] < value_lists[c].len() {
                break;
            }
            idx[c] = 0;
        }
    }
}

trait GridDefault {
    fn map_or_grid_default(self) -> f64;
}

impl GridDefault for f64 {
    fn map_or_grid_default(self) -> f64 {
        if self.is_finite() && self > 0.0 {
            0.5 * self
        } else {
            0.05
        }
    }
}

/// Classification table: `q_1..q_n, rho, class`.
pub fn classify_csv(dim: usize, rows: &[ClassifyRow]) -> String {
    let mut out = String::new();
    for i in 1..=dim {
        let _ = write!(out, "q_{i},");
    }
    out.push_str("rho,class\n");
    for r in rows {
        for x in &r.q {
            let _ = write!(out, "{},", fmt_f64(*x));
        }
        let _ = writeln!(out, "{},{}", r.rank, r.class);
    }
    out
}

// ---------------------------------------------------------------------------
// Probe driver
// ---------------------------------------------------------------------------

/// Stand-alone crossing analysis at `point` with incoming momentum
/// `p_minus`, without integrating a trajectory.
///
/// Candidate outgoing paths come from the scenario's `[probe]` section or
/// the `paths` argument (expressions in `eps`); with none supplied, both
/// sides are continued ballistically from `(point, p_minus)`.
pub fn probe(
    system: &MechanicalSystem,
    point: &DVector<f64>,
    p_minus: &DVector<f64>,
    paths: &[Vec<String>],
    topts: &TransitionOpts,
) -> Result<CrossingOutcome> {
    let n = system.dim();
    if point.len() != n || p_minus.len() != n {
        return Err(Error::scenario(format!(
            "probe point and momentum must have dimension {n}"
        )));
    }
    let path_minus = ApproachPath::ballistic(
        system,
        Side::Before,
        0.0,
        point,
        p_minus,
        None,
        topts.rank_tol,
    )?;
    let paths_plus: Vec<ApproachPath> = if paths.is_empty() {
        vec![ApproachPath::ballistic(
            system,
            Side::After,
            0.0,
            point,
            p_minus,
            None,
            topts.rank_tol,
        )?]
    } else {
        let eps_var = vec!["eps".to_string()];
        let mut out = Vec::with_capacity(paths.len());
        for (k, exprs) in paths.iter().enumerate() {
            if exprs.len() != n {
                return Err(Error::scenario(format!(
                    "probe path {k} has {} components, system has {n}",
                    exprs.len()
                )));
            }
            let parsed: Vec<Expr> = exprs
                .iter()
                .map(|s| Expr::parse(s, &eps_var))
                .collect::<Result<_>>()?;
            out.push(ApproachPath::parametric(
                Side::After,
                0.0,
                point.clone(),
                move |eps| {
                    DVector::from_iterator(parsed.len(), parsed.iter().map(|e| e.eval(&[eps])))
                },
            ));
        }
        out
    };
    crate::transitions::probe_crossing(system, point, p_minus, &path_minus, &paths_plus, topts)
}

/// Human-readable probe summary.
pub fn describe_outcome(outcome: &CrossingOutcome) -> String {
    let mut out = String::new();
    match outcome {
        CrossingOutcome::Resolved { report, .. } => {
            let _ = writeln!(
                out,
                "crossing at t0 = {} resolved: case {} ({:?}), decision {}",
                report.t0,
                report.case.case_id(),
                report.case,
                report.decision
            );
            let _ = writeln!(
                out,
                "  ranks (before/at/after): {}/{}/{}",
                report.rho_minus, report.rho_0, report.rho_plus
            );
            let _ = writeln!(out, "  p_minus = {:?}", report.p_minus.as_slice());
            let _ = writeln!(out, "  p_plus  = {:?}", report.p_plus.as_slice());
            let _ = writeln!(out, "  kinetic-energy drop = {}", report.delta_t);
            if report.by_hypothesis {
                let _ = writeln!(out, "  (outgoing subspace supplied by hypothesis)");
            }
        }
        CrossingOutcome::Indeterminate(info) => {
            let _ = writeln!(out, "indeterminate crossing: {}", info.reason);
            if let Some(gap) = info.max_gap {
                let _ = writeln!(out, "  principal-angle separation: {gap:.6} rad");
            }
            for (k, b) in info.candidates.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "  candidate {k}: rank {} basis {:?}",
                    b.rank(),
                    b.rows().as_slice()
                );
            }
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Sweep support
// ---------------------------------------------------------------------------

/// Parse a sweep spec `dotted.path=start:stop:count` or
/// `dotted.path=v1,v2,...` into the key and its values.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<f64>)> {
    let (key, rest) = spec
        .split_once('=')
        .ok_or_else(|| Error::scenario(format!("sweep spec `{spec}` lacks `=`")))?;
    let rest = rest.trim();
    let values = if rest.contains(':') {
        let pieces: Vec<&str> = rest.split(':').collect();
        if pieces.len() != 3 {
            return Err(Error::scenario(format!(
                "sweep range `{rest}` must be start:stop:count"
            )));
        }
        let start = parse_f64(pieces[0])?;
        let stop = parse_f64(pieces[1])?;
        let count: usize = pieces[2]
            .trim()
            .parse()
            .map_err(|_| Error::scenario(format!("bad sweep count `{}`", pieces[2])))?;
        if count < 2 {
            return Err(Error::scenario("sweep count must be at least 2"));
        }
        (0..count)
            .map(|k| start + (stop - start) * k as f64 / (count as f64 - 1.0))
            .collect()
    } else {
        rest.split(',')
            .map(parse_f64)
            .collect::<Result<Vec<f64>>>()?
    };
    if values.is_empty() {
        return Err(Error::scenario("sweep produced no values"));
    }
    Ok((key.trim().to_string(), values))
}

/// Set `dotted.path[idx]`-addressed keys in a TOML document.
pub fn apply_override(doc: &mut toml::Value, path: &str, value: f64) -> Result<()> {
    let mut current = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (depth, raw) in parts.iter().enumerate() {
        let last = depth + 1 == parts.len();
        let (name, index) = match raw.find('[') {
            None => (*raw, None),
            Some(b) => {
                let close = raw
                    .rfind(']')
                    .ok_or_else(|| Error::scenario(format!("unclosed index in `{raw}`")))?;
                let idx: usize = raw[b + 1..close]
                    .parse()
                    .map_err(|_| Error::scenario(format!("bad index in `{raw}`")))?;
                (&raw[..b], Some(idx))
            }
        };
        let table = current.as_table_mut().ok_or_else(|| {
            Error::scenario(format!("`{name}` is not addressable in the scenario"))
        })?;
        let entry = table.get_mut(name).ok_or_else(|| {
            Error::scenario(format!("scenario has no key `{name}` on path `{path}`"))
        })?;
        let slot = match index {
            None => entry,
            Some(idx) => entry
                .as_array_mut()
                .and_then(|a| a.get_mut(idx))
                .ok_or_else(|| Error::scenario(format!("index {raw} out of bounds on `{path}`")))?,
        };
        if last {
            *slot = toml::Value::Float(value);
            return Ok(());
        }
        current = slot;
    }
    unreachable!("loop returns on the last component");
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const PLANE_SCENARIO: &str = r#"
        [system]
        builtin = "plane-particle"

        [initial]
        q = [-1.0, 1.0]
        qdot = [1.0, 0.0]

        [run]
        horizon = 2.0
    "#;

    #[test]
    fn plane_jump_end_to_end() {
        let sc = parse_scenario_str(PLANE_SCENARIO).unwrap();
        let result = run_scenario(&sc).unwrap();
        assert!(matches!(result.status, RunStatus::Completed));
        assert_eq!(result.segments.len(), 2);
        assert_eq!(result.reports.len(), 1);
        let r = &result.reports[0];
        assert_eq!(r.decision, Decision::Jump);
        assert_abs_diff_eq!(r.t0, 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_plus[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(r.p_plus[1], 0.5, epsilon = 1e-9);
        assert_eq!(result.summary.counts.get("jumps"), Some(&1));
        // post-crossing leg runs on the constrained stratum
        assert_eq!(result.segments[1].stratum, StratumId::Declared(1));
        let end = result.segments[1].end();
        assert_abs_diff_eq!(end.t, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(end.q[0], 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(end.q[1], 1.5, epsilon = 1e-8);
    }

    #[test]
    fn impulse_schedule_applies() {
        let text = r#"
            [system]
            builtin = "plane-particle"

            [initial]
            q = [-2.0, 0.0]
            qdot = [0.5, 0.0]

            [run]
            horizon = 1.0

            [[impulse]]
            t = 0.5
            p = [0.25, -0.5]
        "#;
        let sc = parse_scenario_str(text).unwrap();
        let result = run_scenario(&sc).unwrap();
        assert!(matches!(result.status, RunStatus::Completed));
        assert_eq!(result.reports.len(), 1);
        let r = &result.reports[0];
        assert_eq!(r.decision, Decision::Impulse);
        assert_abs_diff_eq!(r.p_plus[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r.p_plus[1], -0.5, epsilon = 1e-12);
        assert_eq!(result.segments.len(), 2);
    }

    #[test]
    fn rejects_incompatible_initial_state() {
        let text = r#"
            [system]
            builtin = "plane-particle"

            [initial]
            q = [1.0, 1.0]
            qdot = [1.0, 0.0]

            [run]
            horizon = 1.0
        "#;
        let sc = parse_scenario_str(text).unwrap();
        let err = run_scenario(&sc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("nearest compatible momentum"), "got: {msg}");
    }

    #[test]
    fn inline_system_matches_builtin() {
        let text = r#"
            [system.inline]
            dim = 2
            coords = ["x", "y"]
            metric = [["1", "0"], ["0", "1"]]
            potential = "0"
            forms = [["max(sign(x),0)*exp(-1/x^2)", "-max(sign(x),0)*exp(-1/x^2)"]]
            singular_indicator = "x"

            [[system.inline.strata]]
            when = "-x"
            rows = []

            [[system.inline.strata]]
            when = "x"
            rows = [["1", "-1"]]

            [initial]
            q = [-1.0, 1.0]
            qdot = [1.0, 0.0]

            [run]
            horizon = 2.0
        "#;
        let sc = parse_scenario_str(text).unwrap();
        let result = run_scenario(&sc).unwrap();
        assert!(matches!(result.status, RunStatus::Completed));
        assert_eq!(result.reports.len(), 1);
        assert_abs_diff_eq!(result.reports[0].p_plus[0], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn csv_headers_match_schema() {
        let sc = parse_scenario_str(PLANE_SCENARIO).unwrap();
        let system = build_system(&sc.system).unwrap();
        let result = run_scenario(&sc).unwrap();
        let traj = trajectory_csv(&system, &result.segments).unwrap();
        assert!(traj.starts_with("t,q_1,q_2,p_1,p_2,qdot_1,qdot_2,stratum_id,energy,drift\n"));
        let jumps = jumps_csv(2, &result.reports);
        assert!(jumps.starts_with(
            "t0,q_1,q_2,rho_minus,rho_0,rho_plus,case_id,decision,p_minus_1,p_minus_2,p_plus_1,p_plus_2,deltaT\n"
        ));
        assert_eq!(jumps.lines().count(), 2);
    }

    #[test]
    fn result_json_roundtrip_is_exact() {
        let sc = parse_scenario_str(PLANE_SCENARIO).unwrap();
        let result = run_scenario(&sc).unwrap();
        let dir = std::env::temp_dir().join("nonholo_scenario_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("result.json");
        result.save_json(&path).unwrap();
        let back = RunResult::load_json(&path).unwrap();
        assert_eq!(result.segments.len(), back.segments.len());
        for (a, b) in result.segments.iter().zip(&back.segments) {
            assert_eq!(a.states.len(), b.states.len());
            for (sa, sb) in a.states.iter().zip(&b.states) {
                assert!(sa.t.to_bits() == sb.t.to_bits());
                assert!(sa
                    .q
                    .iter()
                    .zip(sb.q.iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits()));
                assert!(sa
                    .p
                    .iter()
                    .zip(sb.p.iter())
                    .all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
        std::fs::remove_file(&path).ok();
    }

    #[test]
    fn grid_parse_and_classify() {
        let system = plane_particle(1.0).unwrap();
        let axes = parse_grid("x=-1:1:5,y=0.0", system.coordinate_names()).unwrap();
        let rows = classify_grid(&system, &axes, Some(0.1), None).unwrap();
        assert_eq!(rows.len(), 5);
        // x = -1, -0.5 regular rank 0; x = 0 singular; x = 0.5, 1 regular rank 1
        assert_eq!(rows[0].rank, 0);
        assert!(!rows[0].class.is_singular());
        assert!(rows[2].class.is_singular());
        assert_eq!(rows[4].rank, 1);
    }

    #[test]
    fn grid_requires_all_coordinates() {
        let system = plane_particle(1.0).unwrap();
        assert!(parse_grid("x=-1:1:5", system.coordinate_names()).is_err());
        assert!(parse_grid("x=0,y=0,z=0", system.coordinate_names()).is_err());
    }

    #[test]
    fn probe_plane_particle() {
        let system = plane_particle(1.0).unwrap();
        let outcome = probe(
            &system,
            &DVector::from_row_slice(&[0.0, 0.0]),
            &DVector::from_row_slice(&[1.0, 0.0]),
            &[],
            &TransitionOpts::default(),
        )
        .unwrap();
        let CrossingOutcome::Resolved { report, .. } = outcome else {
            panic!("expected resolution");
        };
        assert_eq!(report.decision, Decision::Jump);
        assert_abs_diff_eq!(report.p_plus[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(report.delta_t, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn probe_curved_system_two_balances() {
        let system = central_force_particle();
        let paths = vec![
            vec!["eps^2".into(), "1".into(), "1 + eps".into()],
            vec!["eps".into(), "1".into(), "1 + eps^2".into()],
        ];
        let outcome = probe(
            &system,
            &DVector::from_row_slice(&[0.0, 1.0, 1.0]),
            &DVector::from_row_slice(&[1.0, 0.0, 0.0]),
            &paths,
            &TransitionOpts::default(),
        )
        .unwrap();
        let CrossingOutcome::Indeterminate(info) = outcome else {
            panic!("expected indeterminate outcome");
        };
        assert_eq!(info.candidates.len(), 2);
        assert!(info.max_gap.unwrap() > 0.1);
    }

    #[test]
    fn sweep_parse_and_override() {
        let (key, values) = parse_sweep("initial.q[0]=-2:-1:3").unwrap();
        assert_eq!(key, "initial.q[0]");
        assert_eq!(values, vec![-2.0, -1.5, -1.0]);
        let mut doc: toml::Value = toml::from_str(PLANE_SCENARIO).unwrap();
        apply_override(&mut doc, "initial.q[0]", -1.5).unwrap();
        let sc: ScenarioFile = doc.try_into().unwrap();
        assert_abs_diff_eq!(sc.initial.unwrap().q[0], -1.5, epsilon = 0.0);
    }
}
