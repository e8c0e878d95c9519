//! End-to-end experiments: synthetic setup, gate training, subset selection,
//! decoding and baselines over a grid of delay and energy budgets.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::info;

use crate::costs::{CostParams, CostTable, ExpectedCosts};
use crate::domain::{ConstraintSet, Fleet, SubsetMask, Workload};
use crate::error::{Error, Result};
use crate::gating::{train_gating, GatingDataset, GatingParams, TrainConfig};
use crate::inference::{generate_answer, generate_with_weights, score_accuracy, Generation, InferenceConfig};
use crate::rng::{derive_seed, keyed_rng, substream};
use crate::smo::{
    smo_select, CostFeasibility, Memo, Objective, ObjectiveMode, RestrictedGateObjective, SmoConfig, TabularObjective,
};
use crate::synth::{align_labels, generate_fleet, generate_workload, kmeans_cluster, FleetSpec, WorkloadSpec};

/// Cap on rejection-sampling draws for the random-subset baseline.
pub const RAND_MAX_DRAWS: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Moe2,
    SmoMv,
    RandMv,
    SingleAgent,
    MajorityVoteFull,
    AverageExpertAccuracy,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Moe2,
        Method::SmoMv,
        Method::RandMv,
        Method::SingleAgent,
        Method::MajorityVoteFull,
        Method::AverageExpertAccuracy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Moe2 => "moe2",
            Method::SmoMv => "smo_mv",
            Method::RandMv => "rand_mv",
            Method::SingleAgent => "single_agent",
            Method::MajorityVoteFull => "majority_vote_full",
            Method::AverageExpertAccuracy => "average_expert_accuracy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub workload: WorkloadSpec,
    pub fleet: FleetSpec,
    pub train: TrainConfig,
    pub smo: SmoConfig,
    pub costs: CostParams,
    pub inference: InferenceConfig,
    /// Deadlines, applied to every application class.
    pub tau_grid: Vec<f64>,
    pub e_grid: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            workload: WorkloadSpec::default(),
            fleet: FleetSpec::default(),
            train: TrainConfig::default(),
            smo: SmoConfig::default(),
            costs: CostParams::default(),
            inference: InferenceConfig::default(),
            tau_grid: vec![1.0, 2.0, 3.0],
            e_grid: vec![5.0, 10.0, 15.0, 20.0, 25.0, 35.0, 50.0],
            methods: Method::ALL.to_vec(),
            seeds: (0..20).collect(),
            train_fraction: 0.8,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.tau_grid.is_empty() || self.e_grid.is_empty() {
            return Err(Error::invalid("constraint grid is empty"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("no methods requested"));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid("no seeds requested"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::invalid("train_fraction must lie in (0, 1)"));
        }
        if self.inference.k == 0 {
            return Err(Error::invalid("k must be positive"));
        }
        for &t in &self.tau_grid {
            ConstraintSet::uniform(1, t, 1.0)?;
        }
        for &e in &self.e_grid {
            ConstraintSet::uniform(1, 1.0, e)?;
        }
        self.workload.validate()?;
        self.fleet.validate()?;
        self.train.validate()?;
        self.smo.validate()?;
        self.costs.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub tau_max: f64,
    pub e_max: f64,
    pub k: usize,
    pub seed: u64,
    /// `None` when the method has no feasible subset in this cell.
    pub accuracy: Option<f64>,
    pub mask: Option<SubsetMask>,
    /// Whether `mask` satisfies the cell's constraints.
    pub feasible: bool,
    /// Expected per-class delay and energy of `mask` on the full workload.
    pub class_delay: Option<Vec<f64>>,
    pub energy: Option<f64>,
    /// Mean realised per-prompt delay and energy of the queried experts on the test split.
    pub realized_delay: Option<f64>,
    pub realized_energy: Option<f64>,
    /// Rejection-sampling draws (random-subset baseline only).
    pub draws: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: Method,
    pub tau_max: f64,
    pub e_max: f64,
    /// Mean accuracy over seeds with a result.
    pub mean_accuracy: Option<f64>,
    pub seeds_with_result: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn row(&self, method: Method, tau_max: f64, e_max: f64, seed: u64) -> Option<&ResultRow> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.tau_max == tau_max && r.e_max == e_max && r.seed == seed)
    }

    /// Mean accuracy per (method, τ_max, E_max), in row order of first appearance.
    pub fn summarize(&self) -> Vec<CellSummary> {
        let mut order: Vec<(Method, u64, u64)> = Vec::new();
        let mut acc: HashMap<(Method, u64, u64), (f64, usize)> = HashMap::new();
        for r in &self.rows {
            let key = (r.method, r.tau_max.to_bits(), r.e_max.to_bits());
            let entry = acc.entry(key).or_insert_with(|| {
                order.push(key);
                (0.0, 0)
            });
            if let Some(a) = r.accuracy {
                entry.0 += a;
                entry.1 += 1;
            }
        }
        order
            .into_iter()
            .map(|key| {
                let (sum, n) = acc[&key];
                CellSummary {
                    method: key.0,
                    tau_max: f64::from_bits(key.1),
                    e_max: f64::from_bits(key.2),
                    mean_accuracy: (n > 0).then(|| sum / n as f64),
                    seeds_with_result: n,
                }
            })
            .collect()
    }

    /// One table per deadline: methods as rows, energy budgets as columns,
    /// mean accuracy in percent.
    pub fn to_csv(&self, tau_max: f64, methods: &[Method], e_grid: &[f64]) -> String {
        let summary = self.summarize();
        let mut out = String::from("method");
        for e in e_grid {
            write!(out, ",e_max={e}").expect("write to string");
        }
        out.push('\n');
        for &m in methods {
            out.push_str(m.name());
            for &e in e_grid {
                let cell = summary.iter().find(|c| c.method == m && c.tau_max == tau_max && c.e_max == e);
                match cell.and_then(|c| c.mean_accuracy) {
                    Some(a) => write!(out, ",{:.2}", 100.0 * a).expect("write to string"),
                    None => out.push_str(",infeasible"),
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Everything the grid cells of one seed share.
pub struct SeedSetup {
    pub seed: u64,
    pub workload: Workload,
    pub fleet: Fleet,
    pub train_idx: Vec<usize>,
    pub test: Workload,
    pub train_data: GatingDataset,
    pub theta: GatingParams,
    pub cost_table: CostTable,
}

/// Workload and a fleet specialised on its k-means clusters.
pub fn generate_instance(workload: &WorkloadSpec, fleet: &FleetSpec, seed: u64) -> Result<(Workload, Fleet)> {
    let w = generate_workload(workload, &mut substream(seed, 0))?;
    let points: Vec<Vec<f64>> = w.prompts.iter().map(|p| p.embedding.clone()).collect();
    let k = workload.k_clusters;
    let km = kmeans_cluster(&points, k, &mut substream(seed, 1))?;
    let truth: Vec<usize> = w.prompts.iter().map(|p| p.cluster_label).collect();
    let labels = align_labels(&km.labels, &truth, k);
    let fleet_spec = FleetSpec { k_clusters: k, ..fleet.clone() };
    let f = generate_fleet(&fleet_spec, &labels, &mut substream(seed, 2))?;
    Ok((w, f))
}

/// Workload, k-means specialisation, fleet, split and trained gate for a seed.
pub fn prepare_seed(config: &ExperimentConfig, seed: u64) -> Result<SeedSetup> {
    let (workload, fleet) = generate_instance(&config.workload, &config.fleet, seed)?;

    let mut order: Vec<usize> = (0..workload.prompts.len()).collect();
    order.shuffle(&mut substream(seed, 3));
    let n_train = ((order.len() as f64 * config.train_fraction).round() as usize).clamp(1, order.len() - 1);
    let (train_idx, test_idx) = order.split_at(n_train);
    let mut train_idx = train_idx.to_vec();
    let mut test_idx = test_idx.to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let train_data = GatingDataset::from_workload(&workload.subset(&train_idx), &fleet)?;
    let train_cfg = TrainConfig { seed: derive_seed(seed, &[4, config.train.seed]), ..config.train.clone() };
    let outcome = train_gating(&train_data, fleet.full_mask(), &train_cfg)?;
    info!(seed, initial = outcome.initial_loss, final_loss = outcome.final_loss, "gate trained");
    let cost_table = CostTable::new(&workload, &fleet, &config.costs)?;
    Ok(SeedSetup {
        seed,
        test: workload.subset(&test_idx),
        workload,
        fleet,
        train_idx,
        train_data,
        theta: outcome.params,
        cost_table,
    })
}

/// Decoded accuracy and mean realised costs on the test split.
#[derive(Clone, Copy, Debug)]
struct Decoded {
    accuracy: f64,
    delay: f64,
    energy: f64,
}

fn summarize_generations(gens: &[Generation], test: &Workload) -> Result<Decoded> {
    let outputs: Vec<Vec<usize>> = gens.iter().map(|g| g.tokens.clone()).collect();
    let n = gens.len() as f64;
    Ok(Decoded {
        accuracy: score_accuracy(&outputs, &test.prompts)?,
        delay: gens.iter().map(|g| g.costs.mean_delay).sum::<f64>() / n,
        energy: gens.iter().map(|g| g.costs.mean_energy).sum::<f64>() / n,
    })
}

/// Per-seed decode caches keyed by mask; decoding does not depend on the cell.
struct Caches {
    moe2: Mutex<HashMap<u64, Decoded>>,
    vote: Mutex<HashMap<u64, Decoded>>,
}

impl SeedSetup {
    fn decode_moe2(&self, s: SubsetMask, config: &ExperimentConfig, caches: &Caches) -> Result<Decoded> {
        if let Some(d) = caches.moe2.lock().expect("cache poisoned").get(&s.bits()) {
            return Ok(*d);
        }
        let cfg = InferenceConfig { k: config.inference.k.min(s.count()), ..config.inference.clone() };
        let gens = self
            .test
            .prompts
            .par_iter()
            .map(|p| generate_answer(&self.theta, s, p, &self.fleet, &self.workload.token_model, &config.costs, &cfg))
            .collect::<Result<Vec<_>>>()?;
        let d = summarize_generations(&gens, &self.test)?;
        caches.moe2.lock().expect("cache poisoned").insert(s.bits(), d);
        Ok(d)
    }

    /// Uniform weights over every member of `s`; the gate is bypassed.
    fn decode_vote(&self, s: SubsetMask, config: &ExperimentConfig, caches: &Caches) -> Result<Decoded> {
        if let Some(d) = caches.vote.lock().expect("cache poisoned").get(&s.bits()) {
            return Ok(*d);
        }
        let d = run_baseline_majority_vote(s, &self.test, &self.fleet, &config.costs, &config.inference)?;
        caches.vote.lock().expect("cache poisoned").insert(s.bits(), d.0);
        Ok(d.0)
    }
}

/// Majority-vote fusion: uniform weights over `s`, greedy decoding.
/// Returns accuracy with mean realised delay and energy.
fn run_baseline_majority_vote(
    s: SubsetMask,
    test: &Workload,
    fleet: &Fleet,
    params: &CostParams,
    inference: &InferenceConfig,
) -> Result<(Decoded, Vec<Generation>)> {
    s.require_nonempty()?;
    let members = s.member_vec();
    let weights = vec![1.0 / members.len() as f64; members.len()];
    let cfg = InferenceConfig { mode: crate::inference::DecodeMode::Greedy, ..inference.clone() };
    let gens = test
        .prompts
        .par_iter()
        .map(|p| generate_with_weights(&members, &weights, s, p, fleet, &test.token_model, params, &cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((summarize_generations(&gens, test)?, gens))
}

/// Accuracy of uniform-weight fusion over `s` on `workload`.
pub fn majority_vote_accuracy(
    s: SubsetMask,
    workload: &Workload,
    fleet: &Fleet,
    params: &CostParams,
    inference: &InferenceConfig,
) -> Result<f64> {
    Ok(run_baseline_majority_vote(s, workload, fleet, params, inference)?.0.accuracy)
}

/// Mean over experts of single-expert greedy accuracy on `workload`.
pub fn average_expert_accuracy(workload: &Workload, fleet: &Fleet, params: &CostParams) -> Result<f64> {
    let n = fleet.len();
    let mut total = 0.0;
    for i in 0..n {
        total += majority_vote_accuracy(SubsetMask::singleton(n, i), workload, fleet, params, &InferenceConfig::default())?;
    }
    Ok(total / n as f64)
}

/// Uniformly random nonempty mask that passes `feasible`, by rejection.
/// Returns the mask and the number of draws used.
pub fn sample_feasible_mask<R: Rng>(
    n: usize,
    rng: &mut R,
    mut feasible: impl FnMut(SubsetMask) -> Result<bool>,
) -> Result<(SubsetMask, usize)> {
    let top = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
    for draw in 1..=RAND_MAX_DRAWS {
        let bits = rng.gen_range(1..=top);
        let m = SubsetMask::from_bits(n, bits)?;
        if feasible(m)? {
            return Ok((m, draw));
        }
    }
    Err(Error::Infeasible(format!("no feasible mask in {RAND_MAX_DRAWS} random draws")))
}

fn costs_of(setup: &SeedSetup, s: SubsetMask, constraints: &ConstraintSet) -> Result<(bool, ExpectedCosts)> {
    let r = setup.cost_table.is_feasible(s, constraints)?;
    Ok((r.feasible, r.costs))
}

#[allow(clippy::too_many_arguments)]
fn row(
    method: Method,
    tau: f64,
    e: f64,
    k: usize,
    seed: u64,
    mask: Option<SubsetMask>,
    decoded: Option<Decoded>,
    costs: Option<(bool, ExpectedCosts)>,
    draws: Option<usize>,
) -> ResultRow {
    ResultRow {
        method,
        tau_max: tau,
        e_max: e,
        k,
        seed,
        accuracy: decoded.map(|d| d.accuracy),
        mask,
        feasible: costs.as_ref().is_some_and(|c| c.0),
        class_delay: costs.as_ref().map(|c| c.1.class_delay.clone()),
        energy: costs.as_ref().map(|c| c.1.energy),
        realized_delay: decoded.map(|d| d.delay),
        realized_energy: decoded.map(|d| d.energy),
        draws,
    }
}

enum SeedObjective<'a> {
    Restricted(RestrictedGateObjective<'a>),
    Tabular(TabularObjective<'a>),
}

impl Objective for SeedObjective<'_> {
    fn value(&self, s: SubsetMask) -> Result<f64> {
        match self {
            SeedObjective::Restricted(o) => o.value(s),
            SeedObjective::Tabular(o) => o.value(s),
        }
    }
}

/// Every requested method in every grid cell for one prepared seed.
pub fn run_seed(config: &ExperimentConfig, setup: &SeedSetup) -> Result<Vec<ResultRow>> {
    let n = setup.fleet.len();
    let seed = setup.seed;
    let caches = Caches { moe2: Mutex::new(HashMap::new()), vote: Mutex::new(HashMap::new()) };
    let objective = Memo::new(match config.smo.objective {
        ObjectiveMode::Restricted => {
            SeedObjective::Restricted(RestrictedGateObjective::new(&setup.theta, &setup.train_data)?)
        }
        ObjectiveMode::Tabular => SeedObjective::Tabular(TabularObjective { data: &setup.train_data }),
    });
    let aea = if config.methods.contains(&Method::AverageExpertAccuracy) {
        let mut total = 0.0;
        for i in 0..n {
            total += setup.decode_vote(SubsetMask::singleton(n, i), config, &caches)?.accuracy;
        }
        Some(total / n as f64)
    } else {
        None
    };

    let cells: Vec<(f64, f64)> =
        config.tau_grid.iter().flat_map(|&t| config.e_grid.iter().map(move |&e| (t, e))).collect();
    let per_cell = cells
        .par_iter()
        .map(|&(tau, e)| {
            let constraints = ConstraintSet::uniform(setup.workload.n_app_classes, tau, e)?;
            let feas = CostFeasibility { table: &setup.cost_table, constraints: &constraints };
            let k = config.inference.k;
            let mut rows = Vec::new();
            let selected = match smo_select(n, &objective, &feas, &config.smo) {
                Ok(out) => Some(out.mask),
                Err(Error::Infeasible(_)) => None,
                Err(Error::IterationLimit { best, .. }) => best.map(|b| b.0),
                Err(err) => return Err(err),
            };
            for &method in &config.methods {
                let r = match method {
                    Method::Moe2 | Method::SmoMv => match selected {
                        Some(s) => {
                            let d = if method == Method::Moe2 {
                                setup.decode_moe2(s, config, &caches)?
                            } else {
                                setup.decode_vote(s, config, &caches)?
                            };
                            row(method, tau, e, k, seed, Some(s), Some(d), Some(costs_of(setup, s, &constraints)?), None)
                        }
                        None => row(method, tau, e, k, seed, None, None, None, None),
                    },
                    Method::RandMv => {
                        let mut rng = keyed_rng(seed, &[5, tau.to_bits(), e.to_bits()]);
                        match sample_feasible_mask(n, &mut rng, |m| Ok(setup.cost_table.is_feasible(m, &constraints)?.feasible)) {
                            Ok((s, draws)) => {
                                let d = setup.decode_vote(s, config, &caches)?;
                                row(method, tau, e, k, seed, Some(s), Some(d), Some(costs_of(setup, s, &constraints)?), Some(draws))
                            }
                            Err(Error::Infeasible(_)) => row(method, tau, e, k, seed, None, None, None, Some(RAND_MAX_DRAWS)),
                            Err(err) => return Err(err),
                        }
                    }
                    Method::SingleAgent => {
                        let mut best: Option<(SubsetMask, f64)> = None;
                        for i in 0..n {
                            let s = SubsetMask::singleton(n, i);
                            if setup.cost_table.is_feasible(s, &constraints)?.feasible {
                                let v = objective.value(s)?;
                                if best.map_or(true, |(_, bv)| v > bv) {
                                    best = Some((s, v));
                                }
                            }
                        }
                        match best {
                            Some((s, _)) => {
                                let d = setup.decode_vote(s, config, &caches)?;
                                row(method, tau, e, k, seed, Some(s), Some(d), Some(costs_of(setup, s, &constraints)?), None)
                            }
                            None => row(method, tau, e, k, seed, None, None, None, None),
                        }
                    }
                    Method::MajorityVoteFull => {
                        let s = setup.fleet.full_mask();
                        let d = setup.decode_vote(s, config, &caches)?;
                        row(method, tau, e, k, seed, Some(s), Some(d), Some(costs_of(setup, s, &constraints)?), None)
                    }
                    Method::AverageExpertAccuracy => {
                        let mut r = row(method, tau, e, k, seed, None, None, None, None);
                        r.accuracy = aea;
                        r
                    }
                };
                rows.push(r);
            }
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_cell.into_iter().flatten().collect())
}

/// Runs every seed (in parallel) and collects rows in seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let per_seed = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let setup = prepare_seed(config, seed)?;
            run_seed(config, &setup)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable { rows: per_seed.into_iter().flatten().collect() })
}

/// Outcome of the cell-wise ordering check on seed-averaged accuracies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub cells: usize,
    pub ordered_cells: usize,
    pub fraction: f64,
    /// Per deadline: decreases of moe2 accuracy along increasing E_max (percentage points).
    pub monotone_inversions: Vec<Vec<f64>>,
}

/// `moe2 ≥ smo_mv ≥ rand_mv` on mean accuracy per cell, and the row-wise
/// monotonicity of moe2 in E_max. Cells without a moe2 result are skipped.
pub fn ordering_report(table: &ResultTable, tau_grid: &[f64], e_grid: &[f64]) -> OrderingReport {
    let summary = table.summarize();
    let get = |m: Method, t: f64, e: f64| {
        summary.iter().find(|c| c.method == m && c.tau_max == t && c.e_max == e).and_then(|c| c.mean_accuracy)
    };
    let mut cells = 0;
    let mut ordered = 0;
    let mut inversions = Vec::new();
    for &t in tau_grid {
        let mut row_inv = Vec::new();
        let mut prev: Option<f64> = None;
        for &e in e_grid {
            let (a, b, c) = (get(Method::Moe2, t, e), get(Method::SmoMv, t, e), get(Method::RandMv, t, e));
            if let (Some(a), Some(b), Some(c)) = (a, b, c) {
                cells += 1;
                if a >= b && b >= c {
                    ordered += 1;
                }
            }
            if let Some(a) = a {
                if let Some(p) = prev {
                    if a < p {
                        row_inv.push(100.0 * (p - a));
                    }
                }
                prev = Some(a);
            }
        }
        inversions.push(row_inv);
    }
    OrderingReport {
        cells,
        ordered_cells: ordered,
        fraction: if cells == 0 { 0.0 } else { ordered as f64 / cells as f64 },
        monotone_inversions: inversions,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded_rng;

    #[test]
    fn rejection_sampling_uniform_over_nonempty() {
        let mut rng = seeded_rng(10);
        let n = 4;
        let mut counts = [0usize; 16];
        for _ in 0..4000 {
            let (m, draws) = sample_feasible_mask(n, &mut rng, |_| Ok(true)).unwrap();
            assert_eq!(draws, 1);
            counts[m.bits() as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        let expected = 4000.0 / 15.0;
        let chi2: f64 = counts[1..].iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square critical value, 14 degrees of freedom, alpha = 0.01
        assert!(chi2 < 29.14, "chi2 = {chi2}");
    }

    #[test]
    fn rejection_sampling_single_feasible_and_none() {
        let mut rng = seeded_rng(11);
        let only = SubsetMask::from_members(5, &[1, 3]).unwrap();
        for _ in 0..20 {
            assert_eq!(sample_feasible_mask(5, &mut rng, |m| Ok(m == only)).unwrap().0, only);
        }
        assert!(matches!(sample_feasible_mask(3, &mut rng, |_| Ok(false)), Err(Error::Infeasible(_))));
    }

    fn tiny_config() -> ExperimentConfig {
        ExperimentConfig {
            workload: WorkloadSpec { n_prompts: 120, ..Default::default() },
            train: TrainConfig { epochs: 3, ..Default::default() },
            tau_grid: vec![2.0],
            e_grid: vec![10.0],
            seeds: vec![1],
            ..Default::default()
        }
    }

    #[test]
    fn single_cell_single_method() {
        let cfg = ExperimentConfig { methods: vec![Method::Moe2], ..tiny_config() };
        let t = run_experiment(&cfg).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert!(t.rows[0].feasible);
    }

    #[test]
    fn rerun_identical_and_round_trips() {
        let cfg = tiny_config();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        let back: ResultTable = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(back, a);
        for r in &a.rows {
            if r.mask.is_some() && r.method != Method::MajorityVoteFull {
                assert!(r.feasible, "{r:?}");
            }
        }
    }

    #[test]
    fn csv_layout() {
        let cfg = tiny_config();
        let t = run_experiment(&cfg).unwrap();
        let csv = t.to_csv(2.0, &cfg.methods, &cfg.e_grid);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "method,e_max=10");
        assert_eq!(lines.len(), 1 + cfg.methods.len());
        assert!(lines[1].starts_with("moe2,"));
    }
}
