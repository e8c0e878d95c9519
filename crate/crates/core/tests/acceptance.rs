//! Acceptance suite. Runs as a plain binary (`harness = false`) and prints one
//! PASS/FAIL line per criterion.
//!
//! `cargo test -p moe2-core --test acceptance -- 4 5` runs a selection.
//! Criteria listed in `KNOWN_RED` are reported but do not fail the process
//! unless `MOE2_ACCEPTANCE_STRICT=1`.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use common::*;
use moe2_core::costs::{expected_costs, CostParams, CostTable};
use moe2_core::gating::{
    batch_loss, fuse_distributions, loss_gradient, loss_with_weights, normalize_weights, tabular_optimal_loss,
    tabular_optimal_weights, tabular_prompt_loss, GatingDataset,
};
use moe2_core::harness::{
    average_expert_accuracy, ordering_report, prepare_seed, run_experiment, ExperimentConfig, Method,
};
use moe2_core::inference::{gate_scores, generate_answer, score_accuracy, InferenceConfig};
use moe2_core::io::{self, RunManifest};
use moe2_core::rng::seeded_rng;
use moe2_core::smo::{exhaustive_select, smo_select, CostFeasibility, SmoConfig, TabularObjective};
use moe2_core::{ConstraintSet, SubsetMask};
use rand::Rng;
use rayon::prelude::*;

/// Criteria expected to be red, with the reason printed alongside.
const KNOWN_RED: &[(u32, &str)] = &[(
    5,
    "renormalising the full-fleet optimum onto S is not optimal on S once answers span several tokens",
)];

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Verdict,
}

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let strict = std::env::var("MOE2_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let criteria = [
        Criterion { id: 1, name: "normalization and fusion", limit: Duration::from_secs(10), run: c1_normalization },
        Criterion { id: 2, name: "gradient check", limit: Duration::from_secs(30), run: c2_gradient },
        Criterion { id: 3, name: "cost monotonicity", limit: Duration::from_secs(10), run: c3_costs },
        Criterion { id: 4, name: "nested-subset optimum monotone", limit: Duration::from_secs(120), run: c4_monotone },
        Criterion { id: 5, name: "restricted full-fleet optimum", limit: Duration::from_secs(120), run: c5_restriction },
        Criterion { id: 6, name: "SMO matches exhaustive", limit: Duration::from_secs(300), run: c6_smo },
        Criterion { id: 7, name: "end-to-end ordering", limit: Duration::from_secs(900), run: c7_ordering },
        Criterion { id: 8, name: "specialisation beats A.E.A.", limit: Duration::from_secs(600), run: c8_specialisation },
        Criterion { id: 9, name: "CLI determinism", limit: Duration::from_secs(600), run: c9_determinism },
        Criterion { id: 10, name: "select-subset compliance", limit: Duration::from_secs(600), run: c10_compliance },
    ];
    let mut unexpected = Vec::new();
    for c in criteria.iter().filter(|c| selected.is_empty() || selected.contains(&c.id)) {
        let t0 = Instant::now();
        let v = (c.run)();
        let elapsed = t0.elapsed();
        let in_time = elapsed <= c.limit;
        let pass = v.pass && in_time;
        let known = KNOWN_RED.iter().find(|(id, _)| *id == c.id);
        let mut line = format!(
            "criterion {:>2} {:<32} {} ({:.1}s / {}s) {}",
            c.id,
            c.name,
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            v.detail
        );
        if !in_time {
            line.push_str(" [over time limit]");
        }
        if let (false, Some((_, why))) = (pass, known) {
            line.push_str(&format!(" [known red: {why}]"));
        }
        println!("{line}");
        if !pass && (strict || known.is_none()) {
            unexpected.push(c.id);
        }
        if pass && known.is_some() {
            println!("criterion {:>2} is listed as known red but passed", c.id);
        }
    }
    if !unexpected.is_empty() {
        println!("failing criteria: {unexpected:?}");
        std::process::exit(1);
    }
}

fn c1_normalization() -> Verdict {
    let worst = (0..10_000u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = seeded_rng(seed);
            let n = rng.gen_range(1..=10);
            let d = rng.gen_range(1..=6);
            let theta = random_params(d, n, &mut rng);
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let s = random_mask(n, &mut rng);
            let w = normalize_weights(&gate_scores(&theta, &x).unwrap(), s).unwrap();
            let w_err = (s.members().map(|i| w[i]).sum::<f64>() - 1.0).abs();
            let v = rng.gen_range(2..=64);
            let members = s.member_vec();
            let dists: Vec<_> = members.iter().map(|_| random_distribution(v, &mut rng)).collect();
            let refs: Vec<_> = dists.iter().collect();
            let ws: Vec<f64> = members.iter().map(|&i| w[i]).collect();
            let f = fuse_distributions(&ws, &refs).unwrap();
            let f_err = (f.probs().iter().sum::<f64>() - 1.0).abs();
            let negative = f.probs().iter().any(|&p| p < 0.0);
            (w_err, if negative { f64::INFINITY } else { f_err })
        })
        .reduce(|| (0.0, 0.0), |a, b| (a.0.max(b.0), a.1.max(b.1)));
    verdict(
        worst.0 <= 1e-12 && worst.1 <= 1e-9,
        format!("max |sum w - 1| = {:.2e}, max |sum F - 1| = {:.2e}", worst.0, worst.1),
    )
}

fn c2_gradient() -> Verdict {
    let h = 1e-5;
    let floor = 1e-6;
    let worst = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = seeded_rng(1_000 + seed);
            let n = rng.gen_range(1..=5);
            let d = rng.gen_range(1..=4);
            let theta = random_params(d, n, &mut rng);
            let prompts = rng.gen_range(1..=5);
            let inputs = (0..prompts).map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect();
            let data = GatingDataset::new(inputs, random_targets(prompts, n, 3, &mut rng)).unwrap();
            let s = random_mask(n, &mut rng);
            let batch: Vec<usize> = (0..prompts).collect();
            let grad = loss_gradient(&theta, s, &data, &batch).unwrap().flatten();
            let flat = theta.flatten();
            let mut worst: f64 = 0.0;
            for i in 0..flat.len() {
                let eval = |delta: f64| {
                    let mut p = flat.clone();
                    p[i] += delta;
                    let mut t = theta.clone();
                    t.set_flat(&p).unwrap();
                    batch_loss(&t, s, &data, &batch).unwrap()
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let rel = (grad[i] - fd).abs() / grad[i].abs().max(fd.abs()).max(floor);
                worst = worst.max(rel);
            }
            worst
        })
        .reduce(|| 0.0, f64::max);
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over 100 nets (h = {h}, floor {floor})"))
}

fn c3_costs() -> Verdict {
    let results: Vec<(bool, bool)> = (0..1_000u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = seeded_rng(2_000 + seed);
            let n = rng.gen_range(2..=8);
            let fleet = random_fleet(n, 2, &mut rng);
            let w = random_workload(6, 2, 2, 2, 8, 4, &mut rng);
            let params = CostParams::default();
            let mut s = random_mask(n, &mut rng);
            while s.count() < 2 {
                s = random_mask(n, &mut rng);
            }
            let sub = loop {
                let t = random_submask(s, &mut rng);
                if t != s {
                    break t;
                }
            };
            let big = expected_costs(&w, s, &fleet, &params).unwrap();
            let small = expected_costs(&w, sub, &fleet, &params).unwrap();
            let per_prompt = w.prompts.iter().all(|p| {
                moe2_core::costs::mean_prompt_delay(p, sub, &fleet, &params).unwrap()
                    <= moe2_core::costs::mean_prompt_delay(p, s, &fleet, &params).unwrap()
                    && moe2_core::costs::mean_prompt_energy(p, sub, &fleet).unwrap()
                        <= moe2_core::costs::mean_prompt_energy(p, s, &fleet).unwrap()
            });
            let monotone = per_prompt
                && big.class_delay.iter().zip(&small.class_delay).all(|(b, s)| s <= b)
                && small.energy <= big.energy;
            let c = ConstraintSet::new(
                big.class_delay.iter().map(|d| d * rng.gen_range(0.5..1.5)).collect(),
                big.energy * rng.gen_range(0.5..1.5),
            )
            .unwrap();
            let table = CostTable::new(&w, &fleet, &params).unwrap();
            let down_closed = !table.is_feasible(s, &c).unwrap().feasible || table.is_feasible(sub, &c).unwrap().feasible;
            (monotone, down_closed)
        })
        .collect();
    let bad_mono = results.iter().filter(|r| !r.0).count();
    let bad_closed = results.iter().filter(|r| !r.1).count();
    verdict(
        bad_mono == 0 && bad_closed == 0,
        format!("1000 pairs: {bad_mono} monotonicity violations, {bad_closed} downward-closure violations"),
    )
}

fn tabular_instances() -> Vec<GatingDataset> {
    (0..200u64).map(|seed| tabular_instance(&mut seeded_rng(3_000 + seed))).collect()
}

fn c4_monotone() -> Verdict {
    let instances = tabular_instances();
    let (pairs, worst) = instances
        .par_iter()
        .map(|data| {
            let n = data.n_experts();
            let loss: BTreeMap<u64, f64> =
                SubsetMask::all_nonempty(n).map(|s| (s.bits(), tabular_optimal_loss(data, s).unwrap())).collect();
            let mut pairs = 0usize;
            let mut worst = f64::NEG_INFINITY;
            for s in SubsetMask::all_nonempty(n) {
                for sub in SubsetMask::all_nonempty(n).filter(|t| t.is_subset_of(&s) && *t != s) {
                    pairs += 1;
                    worst = worst.max(loss[&s.bits()] - loss[&sub.bits()]);
                }
            }
            (pairs, worst)
        })
        .reduce(|| (0, f64::NEG_INFINITY), |a, b| (a.0 + b.0, a.1.max(b.1)));
    verdict(
        worst <= 1e-6,
        format!("200 instances, {pairs} nested pairs, max L*(S) - L*(S') = {worst:.2e} (tolerance 1e-6)"),
    )
}

struct RestrictionStats {
    checks: usize,
    degenerate: usize,
    violations: usize,
    violations_single_token: usize,
    bad_instances: usize,
    worst_gap: f64,
    example: Option<String>,
}

fn c5_restriction() -> Verdict {
    let instances = tabular_instances();
    let per_instance: Vec<RestrictionStats> = instances
        .par_iter()
        .enumerate()
        .map(|(idx, data)| {
            let n = data.n_experts();
            let full = SubsetMask::full(n);
            let mut st = RestrictionStats {
                checks: 0,
                degenerate: 0,
                violations: 0,
                violations_single_token: 0,
                bad_instances: 0,
                worst_gap: f64::NEG_INFINITY,
                example: None,
            };
            for i in 0..data.len() {
                let targets = data.targets(i);
                let w_full = tabular_optimal_weights(targets, full).unwrap();
                for s in SubsetMask::all_nonempty(n) {
                    let mass: f64 = s.members().map(|j| w_full[j]).sum();
                    if mass < 1e-6 {
                        st.degenerate += 1;
                        continue;
                    }
                    st.checks += 1;
                    let restricted: Vec<f64> =
                        (0..n).map(|j| if s.contains(j) { w_full[j] / mass } else { 0.0 }).collect();
                    let direct = tabular_optimal_weights(targets, s).unwrap();
                    // both losses come from explicit weight vectors on S, so a
                    // positive gap is a witness regardless of solver accuracy
                    let gap = loss_with_weights(&restricted, targets) - loss_with_weights(&direct, targets);
                    debug_assert_eq!(loss_with_weights(&direct, targets), tabular_prompt_loss(targets, s).unwrap());
                    if gap > st.worst_gap {
                        st.worst_gap = gap;
                    }
                    if gap > 1e-6 {
                        st.violations += 1;
                        if targets.len() == 1 {
                            st.violations_single_token += 1;
                        }
                        if st.example.is_none() {
                            st.example = Some(format!(
                                "instance {idx} prompt {i} S={s} T={}: restricted loss exceeds optimum by {gap:.3e}",
                                targets.len()
                            ));
                        }
                    }
                }
            }
            st.bad_instances = usize::from(st.violations > 0);
            st
        })
        .collect();
    let sum = |f: fn(&RestrictionStats) -> usize| per_instance.iter().map(f).sum::<usize>();
    let worst = per_instance.iter().map(|s| s.worst_gap).fold(f64::NEG_INFINITY, f64::max);
    let violations = sum(|s| s.violations);
    let example = per_instance.iter().find_map(|s| s.example.clone()).unwrap_or_default();
    verdict(
        violations == 0,
        format!(
            "{} checks on {} instances: {} violations in {} instances ({} with T = 1), {} degenerate skipped, max gap {:.3e}; {}",
            sum(|s| s.checks),
            per_instance.len(),
            violations,
            sum(|s| s.bad_instances),
            sum(|s| s.violations_single_token),
            sum(|s| s.degenerate),
            worst,
            example
        ),
    )
}

fn c6_smo() -> Verdict {
    let results: Vec<(bool, bool, bool, usize)> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = seeded_rng(4_000 + seed);
            let n = rng.gen_range(2..=10);
            let prompts = rng.gen_range(2..=8);
            let inputs = (0..prompts).map(|_| vec![0.0]).collect();
            let data = GatingDataset::new(inputs, random_targets(prompts, n, 3, &mut rng)).unwrap();
            let fleet = random_fleet(n, 2, &mut rng);
            let w = random_workload(10, 2, 2, 2, 8, 3, &mut rng);
            let table = CostTable::new(&w, &fleet, &CostParams::default()).unwrap();
            let full = table.expected_costs(SubsetMask::full(n)).unwrap();
            let c = ConstraintSet::new(
                full.class_delay.iter().map(|d| d * rng.gen_range(0.4..1.0)).collect(),
                full.energy * rng.gen_range(0.15..0.8),
            )
            .unwrap();
            let objective = TabularObjective { data: &data };
            let feas = CostFeasibility { table: &table, constraints: &c };
            match (smo_select(n, &objective, &feas, &SmoConfig::default()), exhaustive_select(n, &objective, &feas)) {
                (Ok(out), Ok((_, best))) => {
                    let feasible = table.is_feasible(out.mask, &c).unwrap().feasible;
                    (out.value == best, feasible, false, out.trace.evaluations)
                }
                (Err(_), Err(_)) => (true, true, true, 0),
                _ => (false, false, false, 0),
            }
        })
        .collect();
    let mismatched = results.iter().filter(|r| !r.0).count();
    let infeasible = results.iter().filter(|r| !r.1).count();
    let empty = results.iter().filter(|r| r.2).count();
    let evals: usize = results.iter().map(|r| r.3).sum();
    verdict(
        mismatched == 0 && infeasible == 0,
        format!(
            "50 instances (N <= 10): {mismatched} objective mismatches, {infeasible} infeasible masks, {empty} with no feasible subset, {evals} objective evaluations"
        ),
    )
}

fn c7_ordering() -> Verdict {
    let cfg = ExperimentConfig::default();
    let table = run_experiment(&cfg).expect("experiment");
    let report = ordering_report(&table, &cfg.tau_grid, &cfg.e_grid);
    let rows_ok = report.monotone_inversions.iter().all(|row| row.len() <= 1 && row.iter().all(|&d| d <= 0.5));
    let infeasible_reported = table
        .rows
        .iter()
        // the full-fleet vote is an unconstrained reference and carries the full mask in every cell
        .filter(|r| r.mask.is_some() && !r.feasible && r.method != Method::MajorityVoteFull)
        .count();
    verdict(
        report.fraction >= 0.9 && rows_ok && infeasible_reported == 0,
        format!(
            "{}/{} cells ordered ({:.1}%), moe2 inversions per row {:?}, {} infeasible masks from constrained methods",
            report.ordered_cells,
            report.cells,
            100.0 * report.fraction,
            report.monotone_inversions,
            infeasible_reported
        ),
    )
}

fn c8_specialisation() -> Verdict {
    let cfg = ExperimentConfig::default();
    let per_seed: Vec<(f64, f64)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let setup = prepare_seed(&cfg, seed).expect("setup");
            let full = setup.fleet.full_mask();
            let inf = InferenceConfig { k: 2, ..cfg.inference.clone() };
            let outputs: Vec<Vec<usize>> = setup
                .test
                .prompts
                .iter()
                .map(|p| {
                    generate_answer(&setup.theta, full, p, &setup.fleet, &setup.workload.token_model, &cfg.costs, &inf)
                        .unwrap()
                        .tokens
                })
                .collect();
            let moe2 = score_accuracy(&outputs, &setup.test.prompts).unwrap();
            let aea = average_expert_accuracy(&setup.test, &setup.fleet, &cfg.costs).unwrap();
            (moe2, aea)
        })
        .collect();
    let n = per_seed.len() as f64;
    let moe2 = 100.0 * per_seed.iter().map(|r| r.0).sum::<f64>() / n;
    let aea = 100.0 * per_seed.iter().map(|r| r.1).sum::<f64>() / n;
    verdict(
        moe2 - aea >= 5.0,
        format!("{} seeds: MoE2 (k = 2) {moe2:.2}% vs A.E.A. {aea:.2}%, margin {:.2} points", per_seed.len(), moe2 - aea),
    )
}

const BIN: &str = env!("CARGO_BIN_EXE_moe2");

fn moe2(args: &[&str]) -> std::process::Output {
    Command::new(BIN).args(args).env_remove("MOE2_SEED").output().expect("spawn moe2")
}

fn ok(args: &[&str]) {
    let out = moe2(args);
    assert!(out.status.success(), "moe2 {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// gen-workload, train-gate, cost-report, select-subset, infer (greedy and
/// sampled) and a small sweep, each into its own directory under `root`.
fn pipeline(root: &Path) -> Vec<PathBuf> {
    let sweep_cfg = root.join("sweep_config.json");
    std::fs::create_dir_all(root).unwrap();
    std::fs::write(
        &sweep_cfg,
        r#"{"seed": 2, "workload": {"n_prompts": 120}, "train": {"epochs": 3}, "tau_grid": [2.0],
            "e_grid": [10.0, 25.0], "seeds": [0, 1]}"#,
    )
    .unwrap();
    let d = |n: &str| root.join(n);
    let (w, f, theta) = (d("gen/workload.json"), d("gen/fleet.json"), d("train/theta.json"));
    ok(&["gen-workload", "--out-dir", s(&d("gen")), "--seed", "5", "--prompts", "160"]);
    ok(&["train-gate", "--workload", s(&w), "--fleet", s(&f), "--out-dir", s(&d("train")), "--epochs", "4"]);
    ok(&["cost-report", "--workload", s(&w), "--fleet", s(&f), "--out-dir", s(&d("cost")), "--tau-max", "2", "--e-max", "12"]);
    ok(&[
        "select-subset", "--workload", s(&w), "--fleet", s(&f), "--theta", s(&theta), "--out-dir", s(&d("select")),
        "--tau-max", "0=2", "--tau-max", "1=2.5", "--e-max", "12",
    ]);
    ok(&["infer", "--workload", s(&w), "--fleet", s(&f), "--theta", s(&theta), "--mask", "11100000", "--out-dir", s(&d("greedy"))]);
    ok(&[
        "infer", "--workload", s(&w), "--fleet", s(&f), "--theta", s(&theta), "--mask", "01101001", "--mode", "sample",
        "--seed", "9", "--k", "3", "--out-dir", s(&d("sample")),
    ]);
    ok(&["sweep", "--config", s(&sweep_cfg), "--out-dir", s(&d("sweep"))]);
    ["gen", "train", "cost", "select", "greedy", "sample", "sweep"].iter().map(|n| d(n)).collect()
}

/// File name to bytes for every primary output in `dir` (the manifest
/// carries wall-clock timings and absolute paths, so it is left out).
fn primary_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect()
}

/// Re-runs the command recorded in a manifest with a different output directory.
fn replay(manifest: &RunManifest, out_dir: &Path) {
    let mut args: Vec<String> = manifest.argv[1..].to_vec();
    let i = args.iter().position(|a| a == "--out-dir").expect("manifest argv has --out-dir");
    args[i + 1] = out_dir.to_string_lossy().into_owned();
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    ok(&refs);
}

fn c9_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let a = pipeline(&tmp.path().join("a"));
    let b = pipeline(&tmp.path().join("b"));
    let mut compared = 0;
    let mut differing = Vec::new();
    for (da, db) in a.iter().zip(&b) {
        let (oa, ob) = (primary_outputs(da), primary_outputs(db));
        if oa.keys().ne(ob.keys()) {
            differing.push(format!("{}: file sets differ", da.display()));
        }
        for (name, bytes) in &oa {
            compared += 1;
            if ob.get(name) != Some(bytes) {
                differing.push(format!("{}/{name}", da.file_name().unwrap().to_string_lossy()));
            }
        }
    }
    // replay every manifest of run `a` and compare against `a`
    let mut replayed = 0;
    for da in &a {
        let manifest: RunManifest = io::read_json(&da.join("manifest.json")).unwrap();
        manifest.verify().unwrap();
        let out = tmp.path().join("replay").join(da.file_name().unwrap());
        replay(&manifest, &out);
        let again: RunManifest = io::read_json(&out.join("manifest.json")).unwrap();
        if again.config_sha256 != manifest.config_sha256 {
            differing.push(format!("replay of {}: config hash differs", manifest.command));
        }
        let (oa, oc) = (primary_outputs(da), primary_outputs(&out));
        for (name, bytes) in &oa {
            replayed += 1;
            if oc.get(name) != Some(bytes) {
                differing.push(format!("replay {}/{name}", da.file_name().unwrap().to_string_lossy()));
            }
        }
    }
    verdict(
        differing.is_empty() && compared > 0,
        format!("{compared} files compared across two runs, {replayed} after manifest replay; differing: {differing:?}"),
    )
}

fn c10_compliance() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let (w, f, theta) = (root.join("gen/workload.json"), root.join("gen/fleet.json"), root.join("train/theta.json"));
    ok(&["gen-workload", "--out-dir", s(&root.join("gen")), "--seed", "7", "--prompts", "400"]);
    ok(&["train-gate", "--workload", s(&w), "--fleet", s(&f), "--out-dir", s(&root.join("train")), "--epochs", "10"]);
    let workload = io::read_workload(&w).unwrap();
    let fleet = io::read_fleet(&f).unwrap();
    let params = CostParams::default();
    let mut emitted = 0;
    let mut infeasible_exits = 0;
    let mut violations = Vec::new();
    let mut other = Vec::new();
    let budgets = [0.55, 0.8, 1.2, 1.7, 2.5, 4.0]
        .iter()
        .flat_map(|&t| [2.0, 4.0, 7.0, 12.0, 20.0, 40.0].iter().map(move |&e| (t, e)))
        .collect::<Vec<_>>();
    for (i, (t, e)) in budgets.iter().enumerate() {
        for objective in ["restricted", "tabular"] {
            if objective == "tabular" && i % 3 != 0 {
                continue;
            }
            let out_dir = root.join(format!("sel_{i}_{objective}"));
            let (t0, t1) = (format!("0={t}"), format!("1={}", t * 1.1));
            let es = e.to_string();
            let out = moe2(&[
                "select-subset", "--workload", s(&w), "--fleet", s(&f), "--theta", s(&theta), "--out-dir", s(&out_dir),
                "--tau-max", &t0, "--tau-max", &t1, "--e-max", &es, "--objective", objective,
            ]);
            match out.status.code() {
                Some(0) => {
                    emitted += 1;
                    let sel: serde_json::Value = io::read_json(&out_dir.join("selection.json")).unwrap();
                    let mask: SubsetMask = sel["mask"].as_str().unwrap().parse().unwrap();
                    let costs = expected_costs(&workload, mask, &fleet, &params).unwrap();
                    let limits = [*t, t * 1.1];
                    let ok = costs.class_delay.iter().zip(limits).all(|(d, l)| *d <= l) && costs.energy <= *e;
                    if !ok {
                        violations.push(format!("tau {t} e {e}: {mask} -> {costs:?}"));
                    }
                }
                Some(3) => {
                    infeasible_exits += 1;
                    let c = ConstraintSet::new(vec![*t, t * 1.1], *e).unwrap();
                    let any = (0..fleet.len()).any(|i| {
                        let m = SubsetMask::singleton(fleet.len(), i);
                        let costs = expected_costs(&workload, m, &fleet, &params).unwrap();
                        costs.class_delay.iter().zip(&c.tau_max).all(|(d, l)| d <= l) && costs.energy <= c.e_max
                    });
                    if any {
                        violations.push(format!("tau {t} e {e}: exit 3 although a singleton is feasible"));
                    }
                }
                code => other.push(format!("tau {t} e {e}: exit {code:?}")),
            }
        }
    }
    verdict(
        violations.is_empty() && other.is_empty() && emitted > 0,
        format!(
            "{emitted} masks emitted, {infeasible_exits} infeasible exits, {} violations, unexpected: {other:?}",
            violations.len()
        ),
    )
}
