use std::fmt::Write as _;
use std::path::Path;

use moe2_core::config::{Config, SEED_ENV};
use moe2_core::costs::{CostTable, FeasibilityReport};
use moe2_core::gating::{train_gating, GatingDataset, GatingParams};
use moe2_core::harness::{generate_instance, ordering_report, run_experiment, CellSummary, Method, OrderingReport};
use moe2_core::inference::{generate_answer, score_accuracy, DecodeMode, Generation};
use moe2_core::io::{self, FleetDocument, WorkloadDocument, SCHEMA_VERSION};
use moe2_core::rng::derive_seed;
use moe2_core::smo::{select_subset, ObjectiveMode, SmoStatus, SmoTrace};
use moe2_core::{ConstraintSet, Error, Fleet, Result, SubsetMask, Workload};
use rayon::prelude::*;
use serde::Serialize;
use tracing::info;

use super::run::Run;
use super::{
    Budget, Command, CostReportArgs, GenWorkloadArgs, InferArgs, Instance, ModeArg, ObjectiveArg, SelectSubsetArgs,
    SweepArgs, TauArg, TrainGateArgs,
};

/// Largest fleet `cost-report` will enumerate.
const COST_REPORT_MAX_EXPERTS: usize = 16;

pub fn dispatch(command: Command, argv: Vec<String>) -> Result<()> {
    match command {
        Command::GenWorkload(a) => gen_workload(a, argv),
        Command::TrainGate(a) => train_gate(a, argv),
        Command::CostReport(a) => cost_report(a, argv),
        Command::SelectSubset(a) => select(a, argv),
        Command::Infer(a) => infer(a, argv),
        Command::Sweep(a) => sweep(a, argv),
    }
}

/// Config file, then `MOE2_SEED`, then `--seed`.
fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    let mut cfg = match path {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.apply_env_seed(std::env::var(SEED_ENV).ok().as_deref())?;
    if let Some(s) = seed {
        cfg.override_seed(s)?;
    }
    Ok(cfg)
}

fn open_config(run: &mut Run, path: Option<&Path>, seed: Option<u64>) -> Result<Config> {
    if let Some(p) = path {
        run.input(p)?;
    }
    load_config(path, seed)
}

fn open_instance(run: &mut Run, inst: &Instance) -> Result<(Workload, Fleet)> {
    run.input(&inst.workload)?;
    run.input(&inst.fleet)?;
    let workload = io::read_workload(&inst.workload)?;
    let fleet = io::read_fleet(&inst.fleet)?;
    if fleet.n_clusters() != workload.n_clusters {
        return Err(Error::Invalid(format!(
            "fleet has competences for {} clusters, workload has {}",
            fleet.n_clusters(),
            workload.n_clusters
        )));
    }
    if workload.prompts.is_empty() {
        return Err(Error::Invalid("workload has no prompts".into()));
    }
    Ok((workload, fleet))
}

fn open_params(run: &mut Run, path: &Path, fleet: &Fleet, workload: &Workload) -> Result<GatingParams> {
    run.input(path)?;
    let theta = io::read_params(path)?;
    if theta.output_dim != fleet.len() || theta.input_dim != workload.embedding_dim() {
        return Err(Error::Invalid(format!(
            "gate maps {} -> {}, instance needs {} -> {}",
            theta.input_dim,
            theta.output_dim,
            workload.embedding_dim(),
            fleet.len()
        )));
    }
    Ok(theta)
}

/// Budgets from the config, overridden per class by the flags. `None` when
/// neither gives any budget.
fn resolve_constraints(base: Option<&ConstraintSet>, budget: &Budget, n_classes: usize) -> Result<Option<ConstraintSet>> {
    let mut tau: Vec<Option<f64>> = vec![None; n_classes];
    let mut e_max = None;
    if let Some(c) = base {
        if c.tau_max.len() != n_classes {
            return Err(Error::Invalid(format!(
                "configured deadlines cover {} classes, workload has {n_classes}",
                c.tau_max.len()
            )));
        }
        tau = c.tau_max.iter().map(|&t| Some(t)).collect();
        e_max = Some(c.e_max);
    }
    for arg in &budget.tau_max {
        match *arg {
            TauArg::All(v) => tau.iter_mut().for_each(|t| *t = Some(v)),
            TauArg::Class(m, v) => {
                let slot = tau
                    .get_mut(m)
                    .ok_or_else(|| Error::Invalid(format!("--tau-max class {m} out of range (workload has {n_classes})")))?;
                *slot = Some(v);
            }
        }
    }
    if budget.e_max.is_some() {
        e_max = budget.e_max;
    }
    if e_max.is_none() && tau.iter().all(Option::is_none) {
        return Ok(None);
    }
    let tau_max = tau
        .iter()
        .enumerate()
        .map(|(m, t)| t.ok_or_else(|| Error::Invalid(format!("no deadline for class {m}; pass --tau-max {m}=SECONDS"))))
        .collect::<Result<Vec<_>>>()?;
    let e_max = e_max.ok_or_else(|| Error::Invalid("no energy budget; pass --e-max JOULES".into()))?;
    if tau_max.iter().chain([&e_max]).any(|v| !v.is_finite()) {
        return Err(Error::Invalid("budgets must be finite".into()));
    }
    Ok(Some(ConstraintSet::new(tau_max, e_max)?))
}

fn gen_workload(a: GenWorkloadArgs, argv: Vec<String>) -> Result<()> {
    let mut run = Run::new("gen-workload", argv, &a.common.out_dir)?;
    let mut cfg = open_config(&mut run, a.common.config.as_deref(), a.common.seed)?;
    let spec = &mut cfg.experiment.workload;
    if let Some(n) = a.prompts {
        spec.n_prompts = n;
    }
    if let Some(k) = a.clusters {
        spec.k_clusters = k;
    }
    if let Some(m) = a.app_classes {
        spec.n_app_classes = m;
    }
    if let Some(v) = a.vocab_size {
        spec.vocab_size = v;
    }
    cfg.validate()?;
    let (workload, fleet) =
        run.stage("generate", || generate_instance(&cfg.experiment.workload, &cfg.experiment.fleet, cfg.seed))?;
    info!(prompts = workload.prompts.len(), experts = fleet.len(), "instance generated");
    run.write_json("workload.json", &WorkloadDocument { schema_version: SCHEMA_VERSION, workload })?;
    run.write_json("fleet.json", &FleetDocument { schema_version: SCHEMA_VERSION, experts: fleet })?;
    run.finish(&cfg)
}

#[derive(Serialize)]
struct TrainSummary {
    initial_loss: f64,
    final_loss: f64,
    best_epoch: usize,
    epochs: usize,
    steps: usize,
}

fn train_gate(a: TrainGateArgs, argv: Vec<String>) -> Result<()> {
    let mut run = Run::new("train-gate", argv, &a.common.out_dir)?;
    let mut cfg = open_config(&mut run, a.common.config.as_deref(), a.common.seed)?;
    let train = &mut cfg.experiment.train;
    if let Some(e) = a.epochs {
        train.epochs = e;
    }
    if let Some(lr) = a.learning_rate {
        train.learning_rate = lr;
    }
    if let Some(b) = a.batch_size {
        train.batch_size = b;
    }
    if let Some(d) = a.dropout {
        train.dropout = d;
    }
    cfg.validate()?;
    let (workload, fleet) = open_instance(&mut run, &a.instance)?;
    let data = run.stage("targets", || GatingDataset::from_workload(&workload, &fleet))?;
    let train_cfg = moe2_core::gating::TrainConfig {
        seed: derive_seed(cfg.seed, &[4, cfg.experiment.train.seed]),
        ..cfg.experiment.train.clone()
    };
    let outcome = run.stage("train", || train_gating(&data, fleet.full_mask(), &train_cfg))?;
    info!(initial = outcome.initial_loss, final_loss = outcome.final_loss, "gate trained");

    let mut csv = String::from("epoch,loss\n");
    for (i, l) in outcome.epoch_losses.iter().enumerate() {
        writeln!(csv, "{i},{l}").expect("write to string");
    }
    run.write_json("theta.json", &outcome.params)?;
    run.write_bytes("loss.csv", csv.as_bytes())?;
    run.write_json(
        "train_summary.json",
        &TrainSummary {
            initial_loss: outcome.initial_loss,
            final_loss: outcome.final_loss,
            best_epoch: outcome.best_epoch,
            epochs: outcome.epoch_losses.len() - 1,
            steps: outcome.step_losses.len(),
        },
    )?;
    run.finish(&cfg)
}

fn cost_report(a: CostReportArgs, argv: Vec<String>) -> Result<()> {
    let mut run = Run::new("cost-report", argv, &a.common.out_dir)?;
    let mut cfg = open_config(&mut run, a.common.config.as_deref(), a.common.seed)?;
    let (workload, fleet) = open_instance(&mut run, &a.instance)?;
    let m = workload.n_app_classes;
    let constraints = resolve_constraints(cfg.constraints.as_ref(), &a.budget, m)?;
    cfg.constraints = constraints.clone();
    cfg.validate()?;
    if fleet.len() > COST_REPORT_MAX_EXPERTS {
        return Err(Error::Invalid(format!(
            "cost-report enumerates every subset; fleet of {} exceeds {COST_REPORT_MAX_EXPERTS}",
            fleet.len()
        )));
    }
    let table = run.stage("cost_table", || CostTable::new(&workload, &fleet, &cfg.experiment.costs))?;
    let masks: Vec<SubsetMask> = SubsetMask::all_nonempty(fleet.len()).collect();
    let rows = run.stage("enumerate", || {
        masks
            .par_iter()
            .map(|&s| match &constraints {
                Some(c) => table.is_feasible(s, c).map(|r| (r.costs.clone(), Some(r))),
                None => table.expected_costs(s).map(|c| (c, None)),
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut csv = String::from("mask");
    for k in 0..m {
        write!(csv, ",delay_class_{k}").expect("write to string");
    }
    csv.push_str(",energy,feasible");
    for k in 0..m {
        write!(csv, ",delay_slack_{k}").expect("write to string");
    }
    csv.push_str(",energy_slack\n");
    for (s, (costs, report)) in masks.iter().zip(&rows) {
        write!(csv, "{s}").expect("write to string");
        for d in &costs.class_delay {
            write!(csv, ",{d}").expect("write to string");
        }
        write!(csv, ",{}", costs.energy).expect("write to string");
        match report {
            Some(r) => {
                write!(csv, ",{}", r.feasible).expect("write to string");
                for d in &r.delay_slack {
                    write!(csv, ",{d}").expect("write to string");
                }
                writeln!(csv, ",{}", r.energy_slack).expect("write to string");
            }
            None => {
                csv.push(',');
                csv.push_str(&",".repeat(m));
                csv.push_str(",\n");
            }
        }
    }
    run.write_bytes("costs.csv", csv.as_bytes())?;
    run.finish(&cfg)
}

#[derive(Serialize)]
struct Selection {
    mask: SubsetMask,
    members: Vec<usize>,
    objective: ObjectiveMode,
    /// Negated empirical loss.
    value: f64,
    loss: f64,
    status: SmoStatus,
    report: FeasibilityReport,
    trace: SmoTrace,
}

fn select(a: SelectSubsetArgs, argv: Vec<String>) -> Result<()> {
    let mut run = Run::new("select-subset", argv, &a.common.out_dir)?;
    let mut cfg = open_config(&mut run, a.common.config.as_deref(), a.common.seed)?;
    let (workload, fleet) = open_instance(&mut run, &a.instance)?;
    let constraints = resolve_constraints(cfg.constraints.as_ref(), &a.budget, workload.n_app_classes)?
        .ok_or_else(|| Error::Invalid("select-subset needs budgets: --tau-max and --e-max, or a constraints section".into()))?;
    cfg.constraints = Some(constraints.clone());
    let smo = &mut cfg.experiment.smo;
    if let Some(e) = a.epsilon {
        smo.epsilon = e;
    }
    if let Some(o) = a.objective {
        smo.objective = match o {
            ObjectiveArg::Restricted => ObjectiveMode::Restricted,
            ObjectiveArg::Tabular => ObjectiveMode::Tabular,
        };
    }
    if let Some(i) = a.max_iterations {
        smo.max_iterations = i;
    }
    cfg.validate()?;
    let theta = match &a.theta {
        Some(p) => Some(open_params(&mut run, p, &fleet, &workload)?),
        None if cfg.experiment.smo.objective == ObjectiveMode::Restricted => {
            return Err(Error::Invalid("--theta is required by the restricted objective".into()));
        }
        None => None,
    };
    let data = run.stage("targets", || GatingDataset::from_workload(&workload, &fleet))?;
    let table = run.stage("cost_table", || CostTable::new(&workload, &fleet, &cfg.experiment.costs))?;
    let outcome = match run.stage("smo", || select_subset(&data, theta.as_ref(), &table, &constraints, &cfg.experiment.smo)) {
        Err(Error::Infeasible(_)) => {
            let why = table.infeasibility_diagnostic(&constraints)?;
            return Err(Error::Infeasible(why.join("; ")));
        }
        other => other?,
    };
    let report = table.is_feasible(outcome.mask, &constraints)?;
    if !report.feasible {
        return Err(Error::Invalid(format!("selected mask {} violates {}", outcome.mask, report.binding().join(", "))));
    }
    info!(mask = %outcome.mask, value = outcome.value, evaluations = outcome.trace.evaluations, "subset selected");
    run.write_json(
        "selection.json",
        &Selection {
            mask: outcome.mask,
            members: outcome.mask.member_vec(),
            objective: cfg.experiment.smo.objective,
            value: outcome.value,
            loss: -outcome.value,
            status: outcome.status,
            report,
            trace: outcome.trace,
        },
    )?;
    run.finish(&cfg)
}

#[derive(Serialize)]
struct Answer<'a> {
    correct: bool,
    target: &'a [usize],
    #[serde(flatten)]
    generation: &'a Generation,
}

#[derive(Serialize)]
struct InferSummary {
    mask: SubsetMask,
    k: usize,
    mode: DecodeMode,
    prompts: usize,
    accuracy: f64,
    mean_delay: f64,
    mean_energy: f64,
}

fn infer(a: InferArgs, argv: Vec<String>) -> Result<()> {
    let mut run = Run::new("infer", argv, &a.common.out_dir)?;
    let mut cfg = open_config(&mut run, a.common.config.as_deref(), a.common.seed)?;
    let inf = &mut cfg.experiment.inference;
    if let Some(k) = a.k {
        inf.k = k;
    }
    if let Some(m) = a.mode {
        inf.mode = match m {
            ModeArg::Greedy => DecodeMode::Greedy,
            ModeArg::Sample => DecodeMode::Sampled { seed: cfg.seed },
        };
    }
    if a.max_tokens.is_some() {
        inf.max_tokens = a.max_tokens;
    }
    cfg.validate()?;
    let (workload, fleet) = open_instance(&mut run, &a.instance)?;
    let theta = open_params(&mut run, &a.theta, &fleet, &workload)?;
    let mask: SubsetMask = a.mask.parse()?;
    mask.require_len(fleet.len())?;
    mask.require_nonempty()?;
    let inf = cfg.experiment.inference.clone();
    let gens = run.stage("decode", || {
        workload
            .prompts
            .par_iter()
            .map(|p| generate_answer(&theta, mask, p, &fleet, &workload.token_model, &cfg.experiment.costs, &inf))
            .collect::<Result<Vec<_>>>()
    })?;
    let outputs: Vec<Vec<usize>> = gens.iter().map(|g| g.tokens.clone()).collect();
    let accuracy = score_accuracy(&outputs, &workload.prompts)?;
    let mut lines = String::new();
    for (g, p) in gens.iter().zip(&workload.prompts) {
        let line = Answer { correct: g.tokens == p.answer, target: &p.answer, generation: g };
        lines.push_str(&serde_json::to_string(&line)?);
        lines.push('\n');
    }
    let n = gens.len() as f64;
    run.write_bytes("answers.jsonl", lines.as_bytes())?;
    run.write_json(
        "summary.json",
        &InferSummary {
            mask,
            k: inf.k,
            mode: inf.mode,
            prompts: gens.len(),
            accuracy,
            mean_delay: gens.iter().map(|g| g.costs.mean_delay).sum::<f64>() / n,
            mean_energy: gens.iter().map(|g| g.costs.mean_energy).sum::<f64>() / n,
        },
    )?;
    info!(accuracy, "decoded");
    run.finish(&cfg)
}

#[derive(Serialize)]
struct SweepSummary {
    cells: Vec<CellSummary>,
    /// Present when moe2, smo_mv and rand_mv were all run.
    ordering: Option<OrderingReport>,
}

fn sweep(a: SweepArgs, argv: Vec<String>) -> Result<()> {
    let mut run = Run::new("sweep", argv, &a.out_dir)?;
    let mut cfg = open_config(&mut run, Some(&a.config), a.seed)?;
    if let Some(r) = a.replicates {
        let base = cfg.experiment.seeds.first().copied().unwrap_or(cfg.seed);
        cfg.experiment.seeds = (base..base.saturating_add(r as u64)).collect();
    }
    cfg.validate()?;
    let exp = &cfg.experiment;
    let table = run.stage("experiment", || run_experiment(exp))?;
    run.write_json("results.json", &table)?;
    for &tau in &exp.tau_grid {
        run.write_bytes(&format!("results_tau_{tau}.csv"), table.to_csv(tau, &exp.methods, &exp.e_grid).as_bytes())?;
    }
    let has = |m: Method| exp.methods.contains(&m);
    let ordering = (has(Method::Moe2) && has(Method::SmoMv) && has(Method::RandMv))
        .then(|| ordering_report(&table, &exp.tau_grid, &exp.e_grid));
    if let Some(o) = &ordering {
        info!(fraction = o.fraction, "ordering");
    }
    run.write_json("summary.json", &SweepSummary { cells: table.summarize(), ordering })?;
    run.finish(&cfg)
}
