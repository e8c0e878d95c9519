use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use moe2_core::harness::generate_instance;
use moe2_core::io;
use moe2_core::synth::{FleetSpec, WorkloadSpec};
use moe2_ffi::*;

struct Handles {
    fleet: *mut Moe2Fleet,
    workload: *mut Moe2Workload,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            moe2_fleet_free(self.fleet);
            moe2_workload_free(self.workload);
        }
    }
}

fn json_docs() -> (CString, CString) {
    let spec = WorkloadSpec { n_prompts: 80, ..WorkloadSpec::default() };
    let (w, f) = generate_instance(&spec, &FleetSpec::default(), 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    io::write_workload(&dir.path().join("w.json"), &w).unwrap();
    io::write_fleet(&dir.path().join("f.json"), &f).unwrap();
    let read = |p: &Path| CString::new(std::fs::read(p).unwrap()).unwrap();
    (read(&dir.path().join("w.json")), read(&dir.path().join("f.json")))
}

fn load() -> Handles {
    let (w, f) = json_docs();
    let mut h = Handles { fleet: ptr::null_mut(), workload: ptr::null_mut() };
    unsafe {
        assert_eq!(moe2_workload_from_json(w.as_ptr(), &mut h.workload), Moe2Status::Ok);
        assert_eq!(moe2_fleet_from_json(f.as_ptr(), &mut h.fleet), Moe2Status::Ok);
    }
    h
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(moe2_last_error()).to_string_lossy().into_owned() }
}

fn constraints(tau: f64, e: f64, classes: usize) -> *mut Moe2Constraints {
    let taus = vec![tau; classes];
    let mut c = ptr::null_mut();
    assert_eq!(unsafe { moe2_constraints_new(taus.as_ptr(), classes, e, &mut c) }, Moe2Status::Ok);
    c
}

#[test]
fn handles_report_sizes() {
    let h = load();
    unsafe {
        assert_eq!(moe2_fleet_len(h.fleet), 8);
        assert_eq!(moe2_workload_len(h.workload), 80);
        assert!(moe2_workload_n_classes(h.workload) >= 1);
        assert_eq!(moe2_fleet_len(ptr::null()), 0);
        assert!(!CStr::from_ptr(moe2_version()).to_bytes().is_empty());
    }
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let mut f = ptr::null_mut();
    unsafe {
        assert_eq!(moe2_fleet_from_json(ptr::null(), &mut f), Moe2Status::NullPointer);
        assert!(last_error().contains("json"));
        let garbage = CString::new("{not json").unwrap();
        assert_eq!(moe2_fleet_from_json(garbage.as_ptr(), &mut f), Moe2Status::InvalidInput);
        let wrong = CString::new(r#"{"schema_version": 7, "experts": []}"#).unwrap();
        assert_eq!(moe2_fleet_from_json(wrong.as_ptr(), &mut f), Moe2Status::InvalidInput);
        assert!(last_error().contains('7'), "{}", last_error());
        let bad_utf8 = [0xffu8, 0xfe, 0];
        assert_eq!(moe2_fleet_from_json(bad_utf8.as_ptr().cast(), &mut f), Moe2Status::InvalidUtf8);
        assert!(f.is_null());
        let mut c = ptr::null_mut();
        let taus = [1.0];
        assert_eq!(moe2_constraints_new(taus.as_ptr(), 1, -1.0, &mut c), Moe2Status::InvalidInput);
        assert!(c.is_null());
    }
}

#[test]
fn feasibility_and_selection_agree() {
    let h = load();
    unsafe {
        let m = moe2_workload_n_classes(h.workload);
        let loose = constraints(1e9, 1e9, m);
        let mut feasible = false;
        assert_eq!(moe2_is_feasible(h.workload, h.fleet, loose, 0xff, &mut feasible), Moe2Status::Ok);
        assert!(feasible);
        let mut mask = 0u64;
        assert_eq!(moe2_select_subset(h.workload, h.fleet, ptr::null(), loose, 0.0, &mut mask), Moe2Status::Ok);
        assert_eq!(mask, 0xff);

        let tight = constraints(1e9, 1e-6, m);
        assert_eq!(
            moe2_select_subset(h.workload, h.fleet, ptr::null(), tight, 0.0, &mut mask),
            Moe2Status::Infeasible
        );
        assert!(last_error().contains("no nonempty subset"), "{}", last_error());

        let mid = constraints(1e9, 8.0, m);
        match moe2_select_subset(h.workload, h.fleet, ptr::null(), mid, 0.0, &mut mask) {
            Moe2Status::Ok => {
                assert_eq!(moe2_is_feasible(h.workload, h.fleet, mid, mask, &mut feasible), Moe2Status::Ok);
                assert!(feasible);
            }
            s => assert_eq!(s, Moe2Status::Infeasible),
        }
        assert_eq!(moe2_is_feasible(h.workload, h.fleet, mid, 0, &mut feasible), Moe2Status::InvalidInput);
        assert_eq!(moe2_is_feasible(h.workload, h.fleet, mid, 1 << 9, &mut feasible), Moe2Status::InvalidInput);
        for c in [loose, tight, mid] {
            moe2_constraints_free(c);
        }
    }
}

#[test]
fn top_k_orders_and_renormalises() {
    let scores = [0.5, 3.0, 1.0, 2.0];
    let mut experts = [0usize; 2];
    let mut weights = [0.0; 2];
    unsafe {
        assert_eq!(moe2_top_k(scores.as_ptr(), 4, 0b1101, 2, experts.as_mut_ptr(), weights.as_mut_ptr()), Moe2Status::Ok);
        assert_eq!(experts, [3, 2]);
        assert_eq!(weights, [2.0 / 3.0, 1.0 / 3.0]);
        assert_eq!(
            moe2_top_k(scores.as_ptr(), 4, 0b0001, 2, experts.as_mut_ptr(), weights.as_mut_ptr()),
            Moe2Status::InvalidInput
        );
    }
}

#[test]
fn inference_round_trips_through_json() {
    let h = load();
    let dir = tempfile::tempdir().unwrap();
    let data = moe2_core::gating::GatingDataset::from_workload(
        &io::parse_workload(json_docs().0.as_bytes(), "w").unwrap(),
        &io::parse_fleet(json_docs().1.as_bytes(), "f").unwrap(),
    )
    .unwrap();
    let cfg = moe2_core::gating::TrainConfig { epochs: 2, ..Default::default() };
    let theta = moe2_core::gating::train_gating(&data, moe2_core::SubsetMask::full(8), &cfg).unwrap().params;
    io::write_json(&dir.path().join("theta.json"), &theta).unwrap();
    let theta_json = CString::new(std::fs::read(dir.path().join("theta.json")).unwrap()).unwrap();
    unsafe {
        let mut g = ptr::null_mut();
        assert_eq!(moe2_gating_from_json(theta_json.as_ptr(), &mut g), Moe2Status::Ok);

        let x = data.input(0).to_vec();
        let mut scores = vec![0.0; 8];
        assert_eq!(moe2_gating_scores(g, x.as_ptr(), x.len(), scores.as_mut_ptr(), 8), Moe2Status::Ok);
        assert!(scores.iter().all(|s| *s > 0.0));
        assert_eq!(moe2_gating_scores(g, x.as_ptr(), x.len(), scores.as_mut_ptr(), 3), Moe2Status::InvalidInput);

        let mut out = ptr::null_mut();
        assert_eq!(moe2_infer_json(g, h.workload, h.fleet, 0, 0xff, 2, &mut out), Moe2Status::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(out).to_str().unwrap()).unwrap();
        moe2_string_free(out);
        assert_eq!(v["experts"].as_array().unwrap().len(), 2);
        assert!(!v["tokens"].as_array().unwrap().is_empty());

        assert_eq!(moe2_infer_json(g, h.workload, h.fleet, 10_000, 0xff, 2, &mut out), Moe2Status::InvalidInput);
        assert!(last_error().contains("10000"));
        moe2_gating_free(g);
    }
}

#[test]
fn free_functions_accept_null() {
    unsafe {
        moe2_fleet_free(ptr::null_mut());
        moe2_workload_free(ptr::null_mut());
        moe2_gating_free(ptr::null_mut());
        moe2_constraints_free(ptr::null_mut());
        moe2_string_free(ptr::null_mut());
    }
}

/// The C example must compile against the generated header.
#[test]
fn header_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let Ok(out) = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(dir.join("include"))
        .arg(dir.join("examples/c/select.c"))
        .output()
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
