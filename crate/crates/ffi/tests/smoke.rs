//! Exercise the C ABI the way a foreign binding would: through raw
//! pointers and status codes.

use nonholo_ffi::*;
use std::ptr;

fn make_plane() -> *mut NhSystem {
    let mut sys: *mut NhSystem = ptr::null_mut();
    let status = unsafe { nh_system_plane_particle(1.0, &mut sys) };
    assert_eq!(status, NhStatus::Ok);
    assert!(!sys.is_null());
    sys
}

#[test]
fn construct_query_free() {
    let sys = make_plane();
    unsafe {
        assert_eq!(nh_system_dim(sys), 2);
        let mut rank = usize::MAX;
        let q = [-1.0, 0.5];
        assert_eq!(nh_rank_at(sys, q.as_ptr(), 2, &mut rank), NhStatus::Ok);
        assert_eq!(rank, 0);
        let q = [1.0, 0.5];
        assert_eq!(nh_rank_at(sys, q.as_ptr(), 2, &mut rank), NhStatus::Ok);
        assert_eq!(rank, 1);
        nh_system_free(sys);
    }
}

#[test]
fn classification_through_the_abi() {
    let sys = make_plane();
    unsafe {
        let mut singular = -1;
        let mut rank = usize::MAX;
        let origin = [0.0, 0.0];
        assert_eq!(
            nh_classify_point(sys, origin.as_ptr(), 2, 0.1, 0, &mut singular, &mut rank),
            NhStatus::Ok
        );
        assert_eq!(singular, 1);
        assert_eq!(rank, 0);
        let left = [-1.0, 0.0];
        assert_eq!(
            nh_classify_point(sys, left.as_ptr(), 2, 0.1, 0, &mut singular, &mut rank),
            NhStatus::Ok
        );
        assert_eq!(singular, 0);
        nh_system_free(sys);
    }
}

#[test]
fn jump_probe_matches_projection() {
    let sys = make_plane();
    unsafe {
        let q = [0.0, 0.0];
        let p_minus = [1.0, 0.0];
        let mut p_plus = [0.0_f64; 2];
        let mut delta_t = 0.0;
        let mut decision = NhDecision::NoJumpContained;
        let status = nh_jump_probe(
            sys,
            q.as_ptr(),
            p_minus.as_ptr(),
            2,
            p_plus.as_mut_ptr(),
            &mut delta_t,
            &mut decision,
        );
        assert_eq!(status, NhStatus::Ok);
        assert_eq!(decision, NhDecision::Jump);
        assert!((p_plus[0] - 0.5).abs() < 1e-12);
        assert!((p_plus[1] - 0.5).abs() < 1e-12);
        assert!((delta_t - 0.25).abs() < 1e-12);
        nh_system_free(sys);
    }
}

#[test]
fn errors_set_a_message() {
    let sys = make_plane();
    unsafe {
        let mut rank = 0usize;
        let q = [1.0, 2.0, 3.0];
        assert_eq!(
            nh_rank_at(sys, q.as_ptr(), 3, &mut rank),
            NhStatus::InvalidInput
        );
        let mut buf = [0i8; 256];
        let n = nh_last_error(buf.as_mut_ptr(), buf.len());
        assert!(n > 0);
        let msg = std::ffi::CStr::from_ptr(buf.as_ptr()).to_string_lossy();
        assert!(msg.contains("length 3"), "got: {msg}");
        nh_system_free(sys);
    }
}

#[test]
fn bad_params_rejected() {
    let mut sys: *mut NhSystem = ptr::null_mut();
    let status = unsafe { nh_system_rolling_sphere(-1.0, 0.5, 1.0, &mut sys) };
    assert_eq!(status, NhStatus::InvalidInput);
    assert!(sys.is_null());
    assert_eq!(unsafe { nh_system_dim(ptr::null()) }, 0);
    unsafe { nh_system_free(ptr::null_mut()) };
}

#[test]
fn scenario_runner_status() {
    let dir = std::env::temp_dir().join("nonholo_ffi_smoke");
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("plane.toml");
    std::fs::write(
        &path,
        r#"
[system]
builtin = "plane-particle"

[initial]
q = [-1.0, 1.0]
qdot = [1.0, 0.0]

[run]
horizon = 2.0
"#,
    )
    .unwrap();
    let cpath = std::ffi::CString::new(path.to_str().unwrap()).unwrap();
    let status = unsafe { nh_run_scenario(cpath.as_ptr()) };
    assert_eq!(status, NhStatus::Ok);
    assert!(dir.join("plane_jumps.csv").exists());
    let status = unsafe { nh_run_scenario(ptr::null()) };
    assert_eq!(status, NhStatus::NullPointer);
}
