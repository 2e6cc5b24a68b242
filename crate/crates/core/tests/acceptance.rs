//! Acceptance suite: every criterion pinned to its stated tolerance, one
//! pass/fail line per criterion (run with `--nocapture` to see them on
//! success).

mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use nonholo::dynamics::{multipliers, PhaseState, StratumId};
use nonholo::geometry::{
    constraint_projector, orthonormalize_subspace, Codistribution, Metric, SubspaceBasis,
};
use nonholo::scenario::{load_scenario, run_scenario, RunResult, RunStatus};
use nonholo::systems::{
    central_force_particle, central_force_surface_residual, sphere_post_jump_velocity, SphereParams,
};
use nonholo::transitions::{
    apply_jump, jump_decision, probe_crossing, ApproachPath, CrossingOutcome, Decision, Side,
    TransitionOpts,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn scenario_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn run_bundled(name: &str) -> RunResult {
    let sc = load_scenario(&scenario_dir().join(name)).expect("bundled scenario parses");
    run_scenario(&sc).expect("bundled scenario runs")
}

fn finish(criterion: u32, desc: &str, failures: Vec<String>) {
    if failures.is_empty() {
        println!("ACCEPTANCE {criterion} PASS: {desc}");
    } else {
        println!("ACCEPTANCE {criterion} FAIL: {desc}");
        for f in &failures {
            println!("    - {f}");
        }
        panic!("acceptance criterion {criterion} failed");
    }
}

macro_rules! check {
    ($failures:ident, $cond:expr, $($msg:tt)*) => {
        if $cond {
        } else {
            $failures.push(format!($($msg)*));
        }
    };
}

#[test]
fn acceptance_1_plane_particle_jump() {
    let mut failures = Vec::new();
    let clock = Instant::now();

    let forward = run_bundled("plane_left_to_right.toml");
    check!(
        failures,
        matches!(forward.status, RunStatus::Completed),
        "forward run did not complete"
    );
    let jumps: Vec<_> = forward
        .reports
        .iter()
        .filter(|r| r.decision == Decision::Jump)
        .collect();
    check!(
        failures,
        jumps.len() == 1,
        "expected exactly one jump, got {}",
        jumps.len()
    );
    if let Some(r) = jumps.first() {
        check!(
            failures,
            (r.t0 - 1.0).abs() <= 1e-9,
            "jump time {} != 1",
            r.t0
        );
        check!(
            failures,
            (r.p_plus[0] - 0.5).abs() <= 1e-9 && (r.p_plus[1] - 0.5).abs() <= 1e-9,
            "post-jump velocities {:?} != (1/2, 1/2)",
            r.p_plus.as_slice()
        );
    }

    let reverse = run_bundled("plane_right_to_left.toml");
    check!(
        failures,
        matches!(reverse.status, RunStatus::Completed),
        "reverse run did not complete"
    );
    let reverse_jumps = reverse
        .reports
        .iter()
        .filter(|r| r.decision == Decision::Jump)
        .count();
    check!(
        failures,
        reverse_jumps == 0,
        "reverse run produced {reverse_jumps} jump(s)"
    );

    let elapsed = clock.elapsed();
    check!(
        failures,
        elapsed.as_secs_f64() < 1.0,
        "runtime {:?} exceeds 1 s",
        elapsed
    );
    finish(
        1,
        "plane-particle forward jump at t=1 to (1/2,1/2); reverse crossing jump-free; < 1 s",
        failures,
    );
}

#[test]
fn acceptance_2_rolling_sphere_closed_forms() {
    let mut failures = Vec::new();
    let clock = Instant::now();

    let params = SphereParams::default(); // r = 1, k^2 = 2/5
    let q0 = [-1.0, 0.0, 0.0, 0.0, 0.0];
    let v0 = [1.0, 0.3, -0.2, 0.5, 0.7];
    let t_bar = 1.0; // -x0 / xdot0

    let result = run_bundled("sphere_smooth_to_rough.toml");
    check!(
        failures,
        matches!(result.status, RunStatus::Completed),
        "sphere run did not complete"
    );
    check!(
        failures,
        result.segments.len() == 2,
        "expected two segments"
    );
    check!(
        failures,
        result.reports.len() == 1,
        "expected one crossing report"
    );

    // free flight: q(t) = q0 + v0 t, momenta constant
    let k2 = params.gyration * params.gyration;
    let pre = &result.segments[0];
    let mut worst_pre = 0.0_f64;
    for s in &pre.states {
        for i in 0..5 {
            worst_pre = worst_pre.max((s.q[i] - (q0[i] + v0[i] * s.t)).abs());
        }
        let p_expected = [v0[0], v0[1], k2 * v0[2], k2 * v0[3], k2 * v0[4]];
        for (pi, ei) in s.p.iter().zip(&p_expected) {
            worst_pre = worst_pre.max((pi - ei).abs());
        }
    }
    check!(
        failures,
        worst_pre <= 1e-8,
        "pre-crossing deviation {worst_pre:.3e} > 1e-8"
    );

    // impact map
    let report = &result.reports[0];
    check!(
        failures,
        (report.t0 - t_bar).abs() <= 1e-9,
        "crossing time {} != 1",
        report.t0
    );
    let v_plus = sphere_post_jump_velocity(&params, v0);
    let p_plus_expected = [
        v_plus[0],
        v_plus[1],
        k2 * v_plus[2],
        k2 * v_plus[3],
        k2 * v_plus[4],
    ];
    let mut worst_jump = 0.0_f64;
    for (pi, ei) in report.p_plus.iter().zip(&p_plus_expected) {
        worst_jump = worst_jump.max((pi - ei).abs());
    }
    check!(
        failures,
        worst_jump <= 1e-8,
        "post-jump state deviation {worst_jump:.3e} > 1e-8"
    );

    // uniform rolling: q(t) = q(t_bar) + v_plus (t - t_bar) over one unit
    let post = &result.segments[1];
    let q_bar = &post.start().q;
    let mut worst_post = 0.0_f64;
    for s in post.states.iter().filter(|s| s.t <= t_bar + 1.0 + 1e-9) {
        for i in 0..5 {
            worst_post = worst_post.max((s.q[i] - (q_bar[i] + v_plus[i] * (s.t - t_bar))).abs());
        }
    }
    check!(
        failures,
        worst_post <= 1e-7,
        "post-crossing deviation {worst_post:.3e} > 1e-7"
    );

    let elapsed = clock.elapsed();
    check!(
        failures,
        elapsed.as_secs_f64() < 2.0,
        "runtime {:?} exceeds 2 s",
        elapsed
    );
    finish(
        2,
        "rolling sphere: free flight to 1e-8, impact map to 1e-8, rolling to 1e-7; < 2 s",
        failures,
    );
}

#[test]
fn acceptance_3_multiplier_oracle() {
    let mut failures = Vec::new();
    let system = central_force_particle();
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let mut checked = 0;
    let mut worst = 0.0_f64;
    while checked < 100 {
        let q = DVector::from_iterator(3, (0..3).map(|_| 4.0 * rng.gen::<f64>() - 2.0));
        let row = system.codistribution().forms(&q).row(0).transpose();
        if row.norm_squared() < 0.1 {
            continue;
        }
        let mut v = gaussian_vector(&mut rng, 3);
        v -= &row * (row.dot(&v) / row.norm_squared());
        let state = PhaseState::from_velocity(&system, 0.0, q.clone(), &v).unwrap();
        let lambda = multipliers(&system, &state, &StratumId::Active(vec![0])).unwrap();
        let reference = central_force_multiplier(&q, &v);
        let rel = (lambda[0] - reference).abs() / reference.abs().max(1.0);
        worst = worst.max(rel);
        checked += 1;
    }
    check!(
        failures,
        worst <= 1e-8,
        "worst relative multiplier error {worst:.3e} > 1e-8"
    );
    finish(
        3,
        "multipliers match the closed form on 100 random constraint-satisfying states (rel 1e-8)",
        failures,
    );
}

/// 1000 randomized projection-jump instances in dimensions 2..=6, shared
/// by criteria 4 and 5.
struct JumpInstance {
    metric: Metric,
    g: DMatrix<f64>,
    omega: DMatrix<f64>,
    basis_plus: SubspaceBasis,
    p_minus: DVector<f64>,
    decision: Decision,
    p_plus: DVector<f64>,
}

fn jump_instances() -> Vec<JumpInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xCA1207);
    let mut out = Vec::with_capacity(1000);
    for k in 0..1000 {
        let n = 2 + (k % 5); // dimensions 2..=6
        let m = rng.gen_range(1..n);
        let g = random_spd(&mut rng, n);
        let omega = random_independent_rows(&mut rng, m, n);
        let metric = Metric::constant(g.clone());
        let q = DVector::zeros(n);
        let basis_plus = orthonormalize_subspace(&metric, &q, &omega, 1e-9).unwrap();
        let mut p_minus = gaussian_vector(&mut rng, n);
        // mix the three decision routes: vanished incoming span (jump
        // likely), equal spans (contained), pre-projected momentum
        // (compatible)
        let basis_minus = match k % 3 {
            0 => SubspaceBasis::empty(q.clone()),
            1 => basis_plus.clone(),
            _ => {
                p_minus = apply_jump(&metric, &q, &basis_plus, &p_minus).unwrap();
                SubspaceBasis::empty(q.clone())
            }
        };
        let decision = jump_decision(&basis_minus, &basis_plus, &p_minus, &metric, 1e-8).unwrap();
        let p_plus = match decision {
            Decision::Jump => apply_jump(&metric, &q, &basis_plus, &p_minus).unwrap(),
            _ => p_minus.clone(),
        };
        out.push(JumpInstance {
            metric,
            g,
            omega,
            basis_plus,
            p_minus,
            decision,
            p_plus,
        });
    }
    out
}

#[test]
fn acceptance_4_carnot_suite() {
    let mut failures = Vec::new();
    let instances = jump_instances();
    check!(failures, instances.len() == 1000, "expected 1000 instances");
    let mut jumps = 0;
    for (k, inst) in instances.iter().enumerate() {
        let q = DVector::zeros(inst.g.nrows());
        let at = inst.metric.at(&q).unwrap();
        let t_minus = at.kinetic(&inst.p_minus);
        let t_plus = at.kinetic(&inst.p_plus);
        check!(
            failures,
            t_plus <= t_minus + 1e-12,
            "instance {k}: kinetic energy grew by {:.3e}",
            t_plus - t_minus
        );
        match inst.decision {
            Decision::Jump => {
                jumps += 1;
                check!(
                    failures,
                    t_minus - t_plus > 1e-12,
                    "instance {k}: jump with no strict energy drop"
                );
            }
            _ => {
                check!(
                    failures,
                    t_plus == t_minus,
                    "instance {k}: no-jump decision with an energy change"
                );
            }
        }
        if failures.len() > 5 {
            break;
        }
    }
    check!(
        failures,
        jumps > 200,
        "too few jump instances ({jumps}) for a meaningful suite"
    );
    finish(
        4,
        "1000 randomized projection jumps: T(p+) <= T(p-) + 1e-12, equality iff no jump",
        failures,
    );
}

#[test]
fn acceptance_5_minimality_oracle() {
    let mut failures = Vec::new();
    let instances = jump_instances();
    let mut worst = 0.0_f64;
    for inst in &instances {
        let q = DVector::zeros(inst.g.nrows());
        let projected = apply_jump(&inst.metric, &q, &inst.basis_plus, &inst.p_minus).unwrap();
        let oracle = nullspace_lsq_oracle(&inst.g, &inst.omega, &inst.p_minus);
        worst = worst.max((projected - oracle).amax() / inst.p_minus.amax().max(1.0));
    }
    check!(
        failures,
        worst <= 1e-8,
        "worst oracle deviation {worst:.3e} > 1e-8"
    );
    finish(
        5,
        "projection jump equals the independent null-space least-squares oracle (1e-8)",
        failures,
    );
}

#[test]
fn acceptance_6_projector_algebra() {
    let mut failures = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0xA16E);
    let mut worst_idem = 0.0_f64;
    let mut worst_annihilation = 0.0_f64;
    let mut worst_adjoint = 0.0_f64;
    for _ in 0..300 {
        let n = rng.gen_range(2..=6usize);
        let m = rng.gen_range(1..n);
        let g = random_spd(&mut rng, n);
        let omega = random_independent_rows(&mut rng, m, n);
        let metric = Metric::constant(g.clone());
        let q = DVector::zeros(n);
        let p = constraint_projector(&metric, &q, &omega).unwrap();
        let g_inv = g.try_inverse().unwrap();
        worst_idem = worst_idem.max((&p * &p - &p).norm() / p.norm());
        worst_annihilation = worst_annihilation.max((&omega * &g_inv * &p).amax());
        let sym = p.transpose() * &g_inv - &g_inv * &p;
        worst_adjoint = worst_adjoint.max(sym.amax());
    }
    check!(
        failures,
        worst_idem <= 1e-10,
        "idempotence residual {worst_idem:.3e} > 1e-10"
    );
    check!(
        failures,
        worst_annihilation <= 1e-10,
        "annihilation residual {worst_annihilation:.3e} > 1e-10"
    );
    check!(
        failures,
        worst_adjoint <= 1e-10,
        "self-adjointness residual {worst_adjoint:.3e} > 1e-10"
    );

    // the sphere projector against its closed form, entrywise
    let r = 1.0_f64;
    let k2 = 0.4_f64;
    let metric = Metric::constant(DMatrix::from_diagonal(&DVector::from_row_slice(&[
        1.0, 1.0, k2, k2, k2,
    ])));
    let omega = DMatrix::from_row_slice(2, 5, &[1.0, 0.0, 0.0, -r, 0.0, 0.0, 1.0, r, 0.0, 0.0]);
    let p = constraint_projector(&metric, &DVector::zeros(5), &omega).unwrap();
    let d = r * r + k2;
    let expected = DMatrix::from_row_slice(
        5,
        5,
        &[
            r * r / d,
            0.0,
            0.0,
            r / d,
            0.0, //
            0.0,
            r * r / d,
            -r / d,
            0.0,
            0.0, //
            0.0,
            -r * k2 / d,
            k2 / d,
            0.0,
            0.0, //
            r * k2 / d,
            0.0,
            0.0,
            k2 / d,
            0.0, //
            0.0,
            0.0,
            0.0,
            0.0,
            1.0,
        ],
    );
    let dev = (p - expected).abs().max();
    check!(
        failures,
        dev <= 1e-12,
        "sphere projector deviates by {dev:.3e} > 1e-12"
    );
    finish(
        6,
        "projector idempotent, annihilating, self-adjoint (1e-10); sphere projector exact to 1e-12",
        failures,
    );
}

#[test]
fn acceptance_7_limit_scale_invariance() {
    let mut failures = Vec::new();
    // the mollified plane form scaled by constant factors 1e6 and 1e-6
    let make_codist = |factor: f64| {
        Codistribution::new(2, 1, move |q: &DVector<f64>| {
            let s = if q[0] > 0.0 {
                factor * (-1.0 / (q[0] * q[0])).exp()
            } else {
                0.0
            };
            DMatrix::from_row_slice(1, 2, &[s, -s])
        })
    };
    let metric = Metric::euclidean(2);
    let q0 = DVector::from_row_slice(&[0.0, 1.0]);
    let p_minus = DVector::from_row_slice(&[1.0, 0.0]);
    let v = DVector::from_row_slice(&[1.0, 0.0]);
    let line = |side: Side| {
        let q0 = q0.clone();
        let v = v.clone();
        let sign = if side == Side::After { 1.0 } else { -1.0 };
        ApproachPath::parametric(side, 0.0, q0.clone(), move |eps| &q0 + sign * eps * &v)
    };
    // refinement must sample above the underflow scale of exp(-1/x^2)
    let opts = TransitionOpts {
        eps0: 0.5,
        ..TransitionOpts::default()
    };
    let resolve = |factor: f64| {
        let system = nonholo::dynamics::MechanicalSystem::new(metric.clone(), make_codist(factor));
        match probe_crossing(
            &system,
            &q0,
            &p_minus,
            &line(Side::Before),
            &[line(Side::After)],
            &opts,
        )
        .unwrap()
        {
            CrossingOutcome::Resolved { report, .. } => report,
            CrossingOutcome::Indeterminate(info) => panic!("indeterminate: {}", info.reason),
        }
    };
    let base = resolve(1.0);
    for factor in [1e6, 1e-6] {
        let scaled = resolve(factor);
        check!(
            failures,
            scaled.decision == base.decision,
            "decision changed under scaling by {factor:e}"
        );
        let gap = base
            .basis_plus
            .max_angle(&scaled.basis_plus)
            .unwrap_or(f64::INFINITY);
        check!(
            failures,
            gap <= 1e-8,
            "outgoing subspace moved by {gap:.3e} rad under scaling by {factor:e}"
        );
        let dp = (&scaled.p_plus - &base.p_plus).amax();
        check!(
            failures,
            dp <= 1e-8,
            "post-jump momentum moved by {dp:.3e} under scaling by {factor:e}"
        );
    }
    finish(
        7,
        "outgoing limit, decision, and post-jump momentum invariant under form scaling by 1e+-6",
        failures,
    );
}

#[test]
fn acceptance_8_conservation_and_drift() {
    let mut failures = Vec::new();
    let bundled = [
        "plane_left_to_right.toml",
        "plane_right_to_left.toml",
        "plane_compatible.toml",
        "sphere_smooth_to_rough.toml",
        "central_force_surface.toml",
        "central_force_toward_singular.toml",
    ];
    for name in bundled {
        let sc = load_scenario(&scenario_dir().join(name)).unwrap();
        let system = nonholo::scenario::build_system(&sc.system).unwrap();
        let result = run_scenario(&sc).unwrap();
        check!(
            failures,
            matches!(result.status, RunStatus::Completed),
            "{name}: run did not complete"
        );
        for (k, seg) in result.segments.iter().enumerate() {
            let e0 = system.total_energy(seg.start()).unwrap();
            let e1 = system.total_energy(seg.end()).unwrap();
            let duration = (seg.end().t - seg.start().t).max(1.0);
            check!(
                failures,
                (e1 - e0).abs() <= 1e-6 * e0.abs().max(1.0) * duration,
                "{name}: segment {k} energy drift {:.3e}",
                (e1 - e0).abs()
            );
        }
        let p_scale = result
            .segments
            .iter()
            .flat_map(|s| s.states.iter())
            .map(|s| s.p.amax())
            .fold(0.0_f64, f64::max);
        check!(
            failures,
            result.summary.max_drift <= 1e-8 * (1.0 + p_scale),
            "{name}: constraint drift {:.3e}",
            result.summary.max_drift
        );
    }

    // the invariant surface of the curved-constraint system over one unit
    let result = run_bundled("central_force_surface.toml");
    let mut worst = 0.0_f64;
    for seg in &result.segments {
        for s in seg.states.iter().filter(|s| s.t <= 1.0 + 1e-12) {
            worst = worst.max(central_force_surface_residual(&s.q).abs());
        }
    }
    check!(
        failures,
        worst <= 1e-6,
        "surface residual {worst:.3e} > 1e-6"
    );
    finish(
        8,
        "bundled scenarios: energy drift <= 1e-6, constraint residual <= 1e-8; surface residual <= 1e-6",
        failures,
    );
}

#[test]
fn acceptance_9_path_dependent_limit_reported() {
    let mut failures = Vec::new();

    // library route: the two balances produce distinct outgoing subspaces
    let system = central_force_particle();
    let paths = vec![
        vec!["eps^2".to_string(), "1".to_string(), "1 + eps".to_string()],
        vec!["eps".to_string(), "1".to_string(), "1 + eps^2".to_string()],
    ];
    let outcome = nonholo::scenario::probe(
        &system,
        &DVector::from_row_slice(&[0.0, 1.0, 1.0]),
        &DVector::from_row_slice(&[1.0, 0.0, 0.0]),
        &paths,
        &TransitionOpts::default(),
    )
    .unwrap();
    match outcome {
        CrossingOutcome::Indeterminate(info) => {
            check!(
                failures,
                info.candidates.len() == 2,
                "expected two candidate bases"
            );
            let gap = info.max_gap.unwrap_or(0.0);
            check!(
                failures,
                gap > 0.1,
                "candidate separation {gap:.3} rad <= 0.1"
            );
        }
        CrossingOutcome::Resolved { .. } => {
            failures.push("probe unexpectedly resolved a path-dependent crossing".to_string())
        }
    }

    // binary route: exit code 3 without a hypothesis
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_nonholo"))
        .args([
            "jump-probe",
            scenario_dir()
                .join("central_force_probe.toml")
                .to_str()
                .unwrap(),
            "--at",
            "0,1,1",
            "--p",
            "1,0,0",
        ])
        .output()
        .expect("binary runs");
    check!(
        failures,
        out.status.code() == Some(3),
        "jump-probe exit code {:?} != 3",
        out.status.code()
    );
    finish(
        9,
        "path-dependent outgoing limit surfaces as two distinct bases (> 0.1 rad) and exit code 3",
        failures,
    );
}
