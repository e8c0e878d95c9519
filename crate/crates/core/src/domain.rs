//! Core value types shared by every module.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::synth::TokenModel;

/// Largest fleet a [`SubsetMask`] can address.
pub const MAX_EXPERTS: usize = 64;

/// Tolerance on the total mass of a [`VocabDistribution`].
pub const DIST_SUM_TOL: f64 = 1e-9;

/// One simulated edge LLM.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertProfile {
    pub id: usize,
    /// Affinity to each domain cluster, in `[0, 1]`.
    pub competence: Vec<f64>,
    pub sharpness: f64,
    /// FLOPs per generated token per context token.
    pub flops_per_token: f64,
    /// FLOPs/s.
    pub compute_capability: f64,
    /// Bytes.
    pub mem_access_size: f64,
    /// Bytes/s.
    pub mem_bandwidth: f64,
    /// Seconds per token.
    pub overhead_seconds: f64,
    /// Bytes/s, used for both directions.
    pub data_rate: f64,
    /// Joules per generated token.
    pub energy_base: f64,
    /// Joules per generated token per context token.
    pub energy_per_context_token: f64,
}

impl ExpertProfile {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("sharpness", self.sharpness),
            ("flops_per_token", self.flops_per_token),
            ("compute_capability", self.compute_capability),
            ("mem_bandwidth", self.mem_bandwidth),
            ("data_rate", self.data_rate),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("expert {}: {name} must be positive, got {v}", self.id)));
            }
        }
        let nonneg = [
            ("mem_access_size", self.mem_access_size),
            ("overhead_seconds", self.overhead_seconds),
            ("energy_base", self.energy_base),
            ("energy_per_context_token", self.energy_per_context_token),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("expert {}: {name} must be nonnegative, got {v}", self.id)));
            }
        }
        if self.competence.is_empty() {
            return Err(Error::invalid(format!("expert {}: empty competence vector", self.id)));
        }
        if let Some(c) = self.competence.iter().find(|c| !(0.0..=1.0).contains(*c)) {
            return Err(Error::invalid(format!("expert {}: competence {c} outside [0,1]", self.id)));
        }
        Ok(())
    }
}

/// A validated expert fleet: ids are `0..N` in order.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct Fleet {
    experts: Vec<ExpertProfile>,
}

impl Fleet {
    pub fn new(experts: Vec<ExpertProfile>) -> Result<Self> {
        if experts.is_empty() {
            return Err(Error::invalid("fleet has no experts"));
        }
        if experts.len() > MAX_EXPERTS {
            return Err(Error::invalid(format!("fleet of {} exceeds {MAX_EXPERTS} experts", experts.len())));
        }
        let k = experts[0].competence.len();
        for (i, e) in experts.iter().enumerate() {
            if e.id != i {
                return Err(Error::invalid(format!("expert ids must be contiguous from 0; position {i} has id {}", e.id)));
            }
            if e.competence.len() != k {
                return Err(Error::invalid(format!("expert {i} has {} competence entries, expected {k}", e.competence.len())));
            }
            e.validate()?;
        }
        Ok(Self { experts })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn n_clusters(&self) -> usize {
        self.experts[0].competence.len()
    }

    pub fn experts(&self) -> &[ExpertProfile] {
        &self.experts
    }

    pub fn get(&self, id: usize) -> &ExpertProfile {
        &self.experts[id]
    }

    pub fn full_mask(&self) -> SubsetMask {
        SubsetMask::full(self.len())
    }
}

impl<'de> Deserialize<'de> for Fleet {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let experts = Vec::<ExpertProfile>::deserialize(d)?;
        Fleet::new(experts).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prompt {
    pub id: usize,
    pub embedding: Vec<f64>,
    pub app_class: usize,
    /// Ground-truth domain; synthetic workloads only.
    pub cluster_label: usize,
    pub prompt_length_tokens: usize,
    pub data_size_bytes: f64,
    pub answer: Vec<usize>,
}

impl Prompt {
    pub fn answer_len(&self) -> usize {
        self.answer.len()
    }

    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.answer.is_empty() {
            return Err(Error::invalid(format!("prompt {}: empty answer", self.id)));
        }
        if let Some(tok) = self.answer.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::invalid(format!("prompt {}: token {tok} outside vocabulary of {vocab_size}", self.id)));
        }
        if !(self.data_size_bytes > 0.0 && self.data_size_bytes.is_finite()) {
            return Err(Error::invalid(format!("prompt {}: data size must be positive", self.id)));
        }
        if self.prompt_length_tokens == 0 {
            return Err(Error::invalid(format!("prompt {}: prompt length must be at least 1", self.id)));
        }
        Ok(())
    }
}

/// A dataset of prompts plus the token model the simulated experts answer with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub n_clusters: usize,
    pub n_app_classes: usize,
    pub token_model: TokenModel,
    pub prompts: Vec<Prompt>,
}

impl Workload {
    pub fn validate(&self) -> Result<()> {
        self.token_model.validate()?;
        let dim = self.prompts.first().map(|p| p.embedding.len());
        for p in &self.prompts {
            p.validate(self.token_model.vocab_size)?;
            if Some(p.embedding.len()) != dim {
                return Err(Error::invalid(format!("prompt {}: embedding dimension differs", p.id)));
            }
            if p.app_class >= self.n_app_classes {
                return Err(Error::invalid(format!("prompt {}: app class {} >= {}", p.id, p.app_class, self.n_app_classes)));
            }
            if p.cluster_label >= self.n_clusters {
                return Err(Error::invalid(format!("prompt {}: cluster {} >= {}", p.id, p.cluster_label, self.n_clusters)));
            }
        }
        Ok(())
    }

    pub fn vocab_size(&self) -> usize {
        self.token_model.vocab_size
    }

    pub fn embedding_dim(&self) -> usize {
        self.prompts.first().map_or(0, |p| p.embedding.len())
    }

    /// Same token model and class layout, restricted to the given prompts.
    pub fn subset(&self, indices: &[usize]) -> Workload {
        Workload {
            n_clusters: self.n_clusters,
            n_app_classes: self.n_app_classes,
            token_model: self.token_model.clone(),
            prompts: indices.iter().map(|&i| self.prompts[i].clone()).collect(),
        }
    }
}

/// Binary selection over a fleet of `n` experts; bit `i` set means expert `i`
/// participates.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubsetMask {
    bits: u64,
    n: u8,
}

impl SubsetMask {
    fn limit(n: usize) -> u64 {
        if n == 64 {
            u64::MAX
        } else {
            (1u64 << n) - 1
        }
    }

    pub fn from_bits(n: usize, bits: u64) -> Result<Self> {
        if n == 0 || n > MAX_EXPERTS {
            return Err(Error::invalid(format!("mask length {n} outside 1..={MAX_EXPERTS}")));
        }
        if bits & !Self::limit(n) != 0 {
            return Err(Error::invalid(format!("mask bits {bits:#x} exceed length {n}")));
        }
        Ok(Self { bits, n: n as u8 })
    }

    pub fn full(n: usize) -> Self {
        assert!((1..=MAX_EXPERTS).contains(&n));
        Self { bits: Self::limit(n), n: n as u8 }
    }

    pub fn empty(n: usize) -> Self {
        assert!((1..=MAX_EXPERTS).contains(&n));
        Self { bits: 0, n: n as u8 }
    }

    pub fn singleton(n: usize, i: usize) -> Self {
        Self::empty(n).with(i)
    }

    pub fn from_members(n: usize, members: &[usize]) -> Result<Self> {
        let mut m = Self::from_bits(n, 0)?;
        for &i in members {
            if i >= n {
                return Err(Error::invalid(format!("expert {i} outside fleet of {n}")));
            }
            m = m.with(i);
        }
        Ok(m)
    }

    pub fn bits(&self) -> u64 {
        self.bits
    }

    /// Fleet size the mask ranges over.
    pub fn n(&self) -> usize {
        self.n as usize
    }

    pub fn count(&self) -> usize {
        self.bits.count_ones() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn contains(&self, i: usize) -> bool {
        i < self.n() && self.bits >> i & 1 == 1
    }

    pub fn with(self, i: usize) -> Self {
        assert!(i < self.n());
        Self { bits: self.bits | 1 << i, ..self }
    }

    pub fn without(self, i: usize) -> Self {
        assert!(i < self.n());
        Self { bits: self.bits & !(1 << i), ..self }
    }

    pub fn is_subset_of(&self, other: &SubsetMask) -> bool {
        self.bits & !other.bits == 0
    }

    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&i| self.contains(i))
    }

    pub fn member_vec(&self) -> Vec<usize> {
        self.members().collect()
    }

    /// Errors with [`Error::EmptySubset`] when no expert is selected.
    pub fn require_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::EmptySubset)
        } else {
            Ok(())
        }
    }

    pub fn require_len(&self, n: usize) -> Result<()> {
        if self.n() != n {
            Err(Error::Dimension { expected: n, got: self.n() })
        } else {
            Ok(())
        }
    }

    /// Lexicographic order on the bit vector `[b0, b1, ...]`.
    pub fn lex_cmp(&self, other: &SubsetMask) -> Ordering {
        let diff = self.bits ^ other.bits;
        if diff == 0 {
            return Ordering::Equal;
        }
        let i = diff.trailing_zeros();
        if self.bits >> i & 1 == 0 {
            Ordering::Less
        } else {
            Ordering::Greater
        }
    }

    /// Deterministic tie-break: fewer members first, then lexicographically smaller.
    pub fn tie_break_cmp(&self, other: &SubsetMask) -> Ordering {
        self.count().cmp(&other.count()).then_with(|| self.lex_cmp(other))
    }

    /// Every nonempty mask over `n` experts, in increasing bit order.
    pub fn all_nonempty(n: usize) -> impl Iterator<Item = SubsetMask> {
        let limit = Self::limit(n);
        (1..=limit).map(move |bits| SubsetMask { bits, n: n as u8 })
    }
}

impl fmt::Display for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n() {
            f.write_str(if self.contains(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for SubsetMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SubsetMask({self})")
    }
}

impl FromStr for SubsetMask {
    type Err = Error;

    /// Parses a bit string such as `"10110"`, expert 0 first.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut bits = 0u64;
        for (i, c) in s.chars().enumerate() {
            match c {
                '1' if i < MAX_EXPERTS => bits |= 1 << i,
                '0' => {}
                _ => return Err(Error::invalid(format!("bad mask string {s:?}"))),
            }
        }
        SubsetMask::from_bits(s.len(), bits)
    }
}

impl Serialize for SubsetMask {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SubsetMask {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Per-class deadlines and the energy budget. Entries may be `+inf`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub tau_max: Vec<f64>,
    pub e_max: f64,
}

impl ConstraintSet {
    pub fn new(tau_max: Vec<f64>, e_max: f64) -> Result<Self> {
        let c = Self { tau_max, e_max };
        c.validate()?;
        Ok(c)
    }

    pub fn unconstrained(n_classes: usize) -> Self {
        Self { tau_max: vec![f64::INFINITY; n_classes], e_max: f64::INFINITY }
    }

    pub fn uniform(n_classes: usize, tau_max: f64, e_max: f64) -> Result<Self> {
        Self::new(vec![tau_max; n_classes], e_max)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau_max.is_empty() {
            return Err(Error::invalid("constraint set needs at least one application class"));
        }
        if let Some(t) = self.tau_max.iter().find(|t| !(**t > 0.0)) {
            return Err(Error::invalid(format!("deadline {t} must be positive")));
        }
        if !(self.e_max > 0.0) {
            return Err(Error::invalid(format!("energy budget {} must be positive", self.e_max)));
        }
        Ok(())
    }
}

/// A probability distribution over the vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct VocabDistribution {
    probs: Vec<f64>,
}

impl VocabDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty distribution"));
        }
        if let Some(p) = probs.iter().find(|p| !(**p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid(format!("negative or non-finite probability {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DIST_SUM_TOL {
            return Err(Error::invalid(format!("probabilities sum to {sum}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(v: usize) -> Self {
        Self { probs: vec![1.0 / v as f64; v] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn prob(&self, token: usize) -> f64 {
        self.probs[token]
    }

    /// Most likely token; ties go to the smaller id.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }
}

/// `h(x, t)`: the prompt plus tokens generated so far.
#[derive(Clone, Debug, PartialEq)]
pub struct History {
    pub prompt_id: usize,
    pub prompt_length_tokens: usize,
    pub generated: Vec<usize>,
}

impl History {
    pub fn new(prompt: &Prompt) -> Self {
        Self { prompt_id: prompt.id, prompt_length_tokens: prompt.prompt_length_tokens, generated: Vec::new() }
    }

    pub fn push(&mut self, token: usize) {
        self.generated.push(token);
    }

    /// Step index of the next token to generate (1-based).
    pub fn next_step(&self) -> usize {
        self.generated.len() + 1
    }

    pub fn context_length_tokens(&self) -> usize {
        self.prompt_length_tokens + self.generated.len()
    }
}
