use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ExpertProfile, Fleet};
use crate::error::{Error, Result};
use crate::rng::SimRng;

/// Closed interval sampled uniformly; `lo == hi` is a constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span(pub f64, pub f64);

impl Span {
    pub fn fixed(v: f64) -> Self {
        Span(v, v)
    }

    fn sample(&self, rng: &mut SimRng) -> f64 {
        if self.0 == self.1 {
            self.0
        } else {
            rng.gen_range(self.0..=self.1)
        }
    }

    fn valid(&self) -> bool {
        self.0.is_finite() && self.1.is_finite() && self.0 <= self.1
    }
}

/// A group of identical-class edge servers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HardwareTier {
    pub name: String,
    pub count: usize,
    pub compute_capability: Span,
    pub flops_per_token: Span,
    pub mem_access_size: Span,
    pub mem_bandwidth: Span,
    pub overhead_seconds: Span,
    pub data_rate: Span,
    pub energy_base: Span,
    pub energy_per_context_token: Span,
    pub sharpness: Span,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompetenceProfile {
    pub home: f64,
    pub other_base: f64,
    pub other_jitter: f64,
}

impl Default for CompetenceProfile {
    fn default() -> Self {
        Self { home: 0.9, other_base: 0.1, other_jitter: 0.4 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FleetSpec {
    pub n_experts: usize,
    pub k_clusters: usize,
    pub tiers: Vec<HardwareTier>,
    pub competence: CompetenceProfile,
}

impl Default for FleetSpec {
    /// Three fast/high-power servers, three mid servers, two slow/low-power
    /// servers. At the default prompt lengths the per-prompt mean delays are
    /// roughly 0.6, 1.6 and 2.4 time units and the energies 4.6, 2.3 and 1.6
    /// energy units.
    fn default() -> Self {
        let tier = |name: &str, count, cap: (f64, f64), bw, rate, ovh, e_base: (f64, f64), e_slope: (f64, f64)| HardwareTier {
            name: name.to_string(),
            count,
            compute_capability: Span(cap.0, cap.1),
            flops_per_token: Span::fixed(8e9),
            mem_access_size: Span::fixed(4e9),
            mem_bandwidth: Span::fixed(bw),
            overhead_seconds: Span::fixed(ovh),
            data_rate: Span::fixed(rate),
            energy_base: Span(e_base.0, e_base.1),
            energy_per_context_token: Span(e_slope.0, e_slope.1),
            sharpness: Span(3.0, 5.0),
        };
        Self {
            n_experts: 8,
            k_clusters: 8,
            tiers: vec![
                tier("fast", 3, (2.0e12, 2.4e12), 4e10, 1e6, 0.02, (1.9, 2.1), (0.019, 0.021)),
                tier("mid", 3, (0.7e12, 0.8e12), 2e10, 5e5, 0.05, (0.95, 1.05), (0.0095, 0.0105)),
                tier("slow", 2, (0.45e12, 0.5e12), 2e10, 5e5, 0.05, (0.55, 0.65), (0.0075, 0.0085)),
            ],
            competence: CompetenceProfile::default(),
        }
    }
}

impl FleetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_experts == 0 || self.k_clusters == 0 {
            return Err(Error::invalid("need at least one expert and one cluster"));
        }
        let total: usize = self.tiers.iter().map(|t| t.count).sum();
        if total != self.n_experts {
            return Err(Error::invalid(format!("tier counts sum to {total}, expected {}", self.n_experts)));
        }
        for t in &self.tiers {
            let spans = [
                t.compute_capability,
                t.flops_per_token,
                t.mem_access_size,
                t.mem_bandwidth,
                t.overhead_seconds,
                t.data_rate,
                t.energy_base,
                t.energy_per_context_token,
                t.sharpness,
            ];
            if spans.iter().any(|s| !s.valid()) {
                return Err(Error::invalid(format!("tier {}: malformed range", t.name)));
            }
        }
        let c = &self.competence;
        let in_unit = |x: f64| (0.0..=1.0).contains(&x);
        if !in_unit(c.home) || !in_unit(c.other_base) || !in_unit(c.other_base + c.other_jitter) || c.other_jitter < 0.0 {
            return Err(Error::invalid("competence profile must stay within [0,1]"));
        }
        Ok(())
    }
}

/// Builds a fleet whose experts specialise on the clusters of `labels`.
///
/// Clusters are ranked by how many points `labels` assigns them (larger
/// first, ties to the smaller id); expert `n` takes cluster `rank[n % K]` as
/// its home, so `N = K` gives a bijection. Tiers are laid out over expert ids
/// in declaration order.
pub fn generate_fleet(spec: &FleetSpec, labels: &[usize], rng: &mut SimRng) -> Result<Fleet> {
    spec.validate()?;
    let k = spec.k_clusters;
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::invalid(format!("label {l} outside {k} clusters")));
        }
        counts[l] += 1;
    }
    let mut rank: Vec<usize> = (0..k).collect();
    rank.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));

    let mut experts = Vec::with_capacity(spec.n_experts);
    let mut id = 0;
    for tier in &spec.tiers {
        for _ in 0..tier.count {
            let home = rank[id % k];
            let competence = (0..k)
                .map(|j| {
                    if j == home {
                        spec.competence.home
                    } else {
                        spec.competence.other_base + spec.competence.other_jitter * rng.gen::<f64>()
                    }
                })
                .collect();
            experts.push(ExpertProfile {
                id,
                competence,
                sharpness: tier.sharpness.sample(rng),
                flops_per_token: tier.flops_per_token.sample(rng),
                compute_capability: tier.compute_capability.sample(rng),
                mem_access_size: tier.mem_access_size.sample(rng),
                mem_bandwidth: tier.mem_bandwidth.sample(rng),
                overhead_seconds: tier.overhead_seconds.sample(rng),
                data_rate: tier.data_rate.sample(rng),
                energy_base: tier.energy_base.sample(rng),
                energy_per_context_token: tier.energy_per_context_token.sample(rng),
            });
            id += 1;
        }
    }
    Fleet::new(experts)
}

/// Index of the cluster with the highest competence for each expert.
pub fn home_clusters(fleet: &Fleet) -> Vec<usize> {
    fleet
        .experts()
        .iter()
        .map(|e| {
            let mut best = 0;
            for (j, &c) in e.competence.iter().enumerate() {
                if c > e.competence[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
