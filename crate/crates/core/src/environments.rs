//! Finite-support instances: representation, generators, sampling, exact
//! expectations and the JSON fixture format.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{ActionSubset, Context, Policy, PolicyClass, RewardVector, SeededRng, SIMPLEX_TOL};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// How a context's reward vector is generated.
#[derive(Debug, Clone, PartialEq)]
pub enum RewardLaw {
    Fixed(RewardVector),
    /// Independent per-action Bernoulli draws with these means.
    Bernoulli(Vec<f64>),
}

impl RewardLaw {
    pub fn means(&self) -> &[f64] {
        match self {
            RewardLaw::Fixed(r) => r.values(),
            RewardLaw::Bernoulli(means) => means,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextLaw {
    pub prob: f64,
    pub law: RewardLaw,
}

/// Whether every realized reward vector satisfies `‖r‖₁ ≤ s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sparsity {
    Sure,
    HighProbability,
}

/// A distribution over (context, reward) pairs with finite context support.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    k: usize,
    m: usize,
    s: f64,
    contexts: Vec<ContextLaw>,
    sparsity: Sparsity,
}

impl Instance {
    pub fn new(k: usize, m: usize, s: f64, contexts: Vec<ContextLaw>) -> Result<Self> {
        if m == 0 || m > k {
            return Err(Error::InvalidInstance(format!("need 1 ≤ m ≤ K, got m = {m}, K = {k}")));
        }
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidInstance(format!("sparsity s must be positive, got {s}")));
        }
        if contexts.is_empty() {
            return Err(Error::InvalidInstance("no contexts".into()));
        }
        let mut total = 0.0;
        let mut sparsity = Sparsity::Sure;
        for (x, c) in contexts.iter().enumerate() {
            if !(c.prob.is_finite() && c.prob >= 0.0) {
                return Err(Error::InvalidInstance(format!("context {x} has probability {}", c.prob)));
            }
            total += c.prob;
            if c.law.means().len() != k {
                return Err(Error::InvalidInstance(format!(
                    "context {x} has {} rewards, expected K = {k}",
                    c.law.means().len()
                )));
            }
            match &c.law {
                RewardLaw::Fixed(r) => {
                    if r.l1() > s + crate::domain::SPARSITY_TOL {
                        return Err(Error::InvalidInstance(format!("context {x}: ‖r‖₁ = {} exceeds s = {s}", r.l1())));
                    }
                }
                RewardLaw::Bernoulli(means) => {
                    if let Some(mu) = means.iter().find(|mu| !(mu.is_finite() && (0.0..=1.0).contains(*mu))) {
                        return Err(Error::InvalidInstance(format!("context {x}: Bernoulli mean {mu} outside [0, 1]")));
                    }
                    // a realization can only be nonzero where the mean is positive
                    let support = means.iter().filter(|mu| **mu > 0.0).count();
                    if support as f64 > s {
                        sparsity = Sparsity::HighProbability;
                    }
                }
            }
        }
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidInstance(format!("context probabilities sum to {total}")));
        }
        Ok(Self { k, m, s, contexts, sparsity })
    }

    /// Single-context instance with a fixed reward vector.
    pub fn deterministic(m: usize, s: f64, r: Vec<f64>) -> Result<Self> {
        let k = r.len();
        let law = RewardLaw::Fixed(RewardVector::new(r, s)?);
        Self::new(k, m, s, vec![ContextLaw { prob: 1.0, law }])
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn sparsity(&self) -> Sparsity {
        self.sparsity
    }

    pub fn contexts(&self) -> &[ContextLaw] {
        &self.contexts
    }

    pub fn n_contexts(&self) -> usize {
        self.contexts.len()
    }

    pub fn prob(&self, x: Context) -> f64 {
        self.contexts[x.0].prob
    }

    /// Per-action mean rewards at context `x`.
    pub fn mean_rewards(&self, x: Context) -> &[f64] {
        self.contexts[x.0].law.means()
    }

    /// True when every context has a fixed reward vector.
    pub fn is_deterministic(&self) -> bool {
        self.contexts.iter().all(|c| matches!(c.law, RewardLaw::Fixed(_)))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = InstanceDoc {
            version: SCHEMA_VERSION,
            k: self.k,
            m: self.m,
            s: self.s,
            contexts: self
                .contexts
                .iter()
                .map(|c| ContextDoc {
                    prob: c.prob,
                    law: match &c.law {
                        RewardLaw::Fixed(r) => LawDoc::Fixed { r: r.values().to_vec() },
                        RewardLaw::Bernoulli(means) => LawDoc::Bernoulli { means: means.clone() },
                    },
                })
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: InstanceDoc = serde_json::from_str(text)?;
        if doc.version != SCHEMA_VERSION {
            return Err(Error::UnsupportedVersion(doc.version));
        }
        let contexts = doc
            .contexts
            .into_iter()
            .map(|c| {
                let law = match c.law {
                    LawDoc::Fixed { r } => RewardLaw::Fixed(RewardVector::new(r, doc.s)?),
                    LawDoc::Bernoulli { means } => RewardLaw::Bernoulli(means),
                };
                Ok(ContextLaw { prob: c.prob, law })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(doc.k, doc.m, doc.s, contexts)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct InstanceDoc {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    m: usize,
    s: f64,
    contexts: Vec<ContextDoc>,
}

#[derive(Serialize, Deserialize)]
struct ContextDoc {
    prob: f64,
    law: LawDoc,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LawDoc {
    Fixed { r: Vec<f64> },
    Bernoulli { means: Vec<f64> },
}

#[derive(Serialize, Deserialize)]
struct PolicyClassDoc {
    version: u32,
    #[serde(rename = "K")]
    k: usize,
    m: usize,
    policies: Vec<Vec<Vec<usize>>>,
}

pub fn policy_class_to_json(cls: &PolicyClass) -> Result<String> {
    let doc = PolicyClassDoc {
        version: SCHEMA_VERSION,
        k: cls.k(),
        m: cls.m(),
        policies: cls.policies().iter().map(|pi| pi.table().iter().map(|a| a.members().to_vec()).collect()).collect(),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn policy_class_from_json(text: &str) -> Result<PolicyClass> {
    let doc: PolicyClassDoc = serde_json::from_str(text)?;
    if doc.version != SCHEMA_VERSION {
        return Err(Error::UnsupportedVersion(doc.version));
    }
    let policies = doc
        .policies
        .into_iter()
        .map(|table| {
            let subsets =
                table.into_iter().map(|members| ActionSubset::new(members, doc.k)).collect::<Result<Vec<_>>>()?;
            Policy::new(subsets)
        })
        .collect::<Result<Vec<_>>>()?;
    PolicyClass::new(policies, doc.k, doc.m)
}

pub fn save_policy_class(cls: &PolicyClass, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, policy_class_to_json(cls)?)?;
    Ok(())
}

pub fn load_policy_class(path: impl AsRef<Path>) -> Result<PolicyClass> {
    policy_class_from_json(&std::fs::read_to_string(path)?)
}

/// Checks that a class and an instance describe the same problem.
pub fn check_compatible(inst: &Instance, cls: &PolicyClass) -> Result<()> {
    if inst.k() != cls.k() || inst.m() != cls.m() || inst.n_contexts() != cls.n_contexts() {
        return Err(Error::InvalidInstance(format!(
            "instance (K = {}, m = {}, {} contexts) does not match class (K = {}, m = {}, {} contexts)",
            inst.k(),
            inst.m(),
            inst.n_contexts(),
            cls.k(),
            cls.m(),
            cls.n_contexts()
        )));
    }
    Ok(())
}

fn sample_context<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> Context {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (x, c) in inst.contexts.iter().enumerate() {
        if c.prob > 0.0 {
            acc += c.prob;
            last = x;
            if u < acc {
                return Context(x);
            }
        }
    }
    Context(last)
}

/// One i.i.d. draw `(x, r) ∼ 𝒟`.
pub fn sample_round<R: Rng + ?Sized>(inst: &Instance, rng: &mut R) -> (Context, RewardVector) {
    let x = sample_context(inst, rng);
    let r = match &inst.contexts[x.0].law {
        RewardLaw::Fixed(r) => r.clone(),
        RewardLaw::Bernoulli(means) => {
            let values: Vec<f64> = means.iter().map(|&mu| if rng.gen::<f64>() < mu { 1.0 } else { 0.0 }).collect();
            match inst.sparsity {
                Sparsity::Sure => RewardVector::new(values, inst.s),
                Sparsity::HighProbability => RewardVector::unbudgeted(values),
            }
            .expect("Bernoulli draws are 0/1")
        }
    };
    (x, r)
}

/// A source of `(x_t, r_t)` rounds for the PAC learners.
pub trait Environment {
    /// The next round, or `None` once the stream is exhausted.
    fn next_round(&mut self) -> Option<(Context, RewardVector)>;
}

/// Endless i.i.d. rounds from an instance, driven by its own generator.
#[derive(Debug, Clone)]
pub struct InstanceStream<'a> {
    inst: &'a Instance,
    rng: SeededRng,
    drawn: usize,
}

impl<'a> InstanceStream<'a> {
    pub fn new(inst: &'a Instance, rng: SeededRng) -> Self {
        Self { inst, rng, drawn: 0 }
    }

    pub fn drawn(&self) -> usize {
        self.drawn
    }
}

impl Environment for InstanceStream<'_> {
    fn next_round(&mut self) -> Option<(Context, RewardVector)> {
        self.drawn += 1;
        Some(sample_round(self.inst, &mut self.rng))
    }
}

/// A finite, prerecorded stream.
#[derive(Debug, Clone, Default)]
pub struct ReplayStream {
    rounds: VecDeque<(Context, RewardVector)>,
}

impl ReplayStream {
    pub fn new(rounds: impl IntoIterator<Item = (Context, RewardVector)>) -> Self {
        Self { rounds: rounds.into_iter().collect() }
    }

    pub fn remaining(&self) -> usize {
        self.rounds.len()
    }
}

impl Environment for ReplayStream {
    fn next_round(&mut self) -> Option<(Context, RewardVector)> {
        self.rounds.pop_front()
    }
}

/// Parameters of the hard instance family `𝓘_𝒮`.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerBoundSpec {
    pub k: usize,
    pub m: usize,
    pub s: f64,
    pub eps: f64,
    pub good_set: ActionSubset,
}

impl LowerBoundSpec {
    pub fn new(k: usize, m: usize, s: f64, eps: f64, good_set: ActionSubset) -> Result<Self> {
        let spec = Self { k, m, s, eps, good_set };
        spec.validate()?;
        Ok(spec)
    }

    pub fn good_mean(&self) -> f64 {
        self.s / (2.0 * self.k as f64) + self.eps / self.m as f64
    }

    pub fn bad_mean(&self) -> f64 {
        self.s / (2.0 * self.k as f64) - self.eps / (self.k - self.m) as f64
    }

    fn validate(&self) -> Result<()> {
        if self.m == 0 || 2 * self.m > self.k {
            return Err(Error::InvalidInstance(format!(
                "lower-bound instances need 1 ≤ m ≤ K/2, got m = {}, K = {}",
                self.m, self.k
            )));
        }
        if self.good_set.capacity() != self.k || self.good_set.size() != self.m {
            return Err(Error::InvalidInstance("good set must be a size-m subset of [K]".into()));
        }
        if !(self.s.is_finite() && self.s > 0.0 && self.eps.is_finite() && self.eps >= 0.0) {
            return Err(Error::InvalidInstance(format!("bad s = {} or ε = {}", self.s, self.eps)));
        }
        for mu in [self.good_mean(), self.bad_mean()] {
            if !(0.0..=1.0).contains(&mu) {
                return Err(Error::InvalidInstance(format!("Bernoulli mean {mu} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Single-context Bernoulli instance whose good set gains `ε/m` per action
/// while the rest lose `ε/(K − m)`; the total mean is exactly `s/2`.
pub fn lower_bound_instance(spec: &LowerBoundSpec) -> Result<Instance> {
    spec.validate()?;
    let (good, bad) = (spec.good_mean(), spec.bad_mean());
    let means = (0..spec.k).map(|y| if spec.good_set.contains(y) { good } else { bad }).collect();
    let mut inst =
        Instance::new(spec.k, spec.m, spec.s, vec![ContextLaw { prob: 1.0, law: RewardLaw::Bernoulli(means) }])?;
    inst.sparsity = Sparsity::HighProbability;
    Ok(inst)
}

/// Per context, a probability and the set of true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ListClassificationInstance {
    pub k: usize,
    pub m: usize,
    pub s: usize,
    pub contexts: Vec<(f64, Vec<usize>)>,
}

impl ListClassificationInstance {
    pub fn new(k: usize, m: usize, s: usize, contexts: Vec<(f64, Vec<usize>)>) -> Result<Self> {
        for (x, (_, labels)) in contexts.iter().enumerate() {
            if labels.len() > s {
                return Err(Error::InvalidInstance(format!(
                    "context {x} has {} true labels, more than s = {s}",
                    labels.len()
                )));
            }
            let mut sorted = labels.clone();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != labels.len() || sorted.last().is_some_and(|&y| y >= k) {
                return Err(Error::InvalidInstance(format!("context {x} has invalid labels {labels:?}")));
            }
        }
        Ok(Self { k, m, s, contexts })
    }
}

/// The reward at context `x` becomes the indicator of its true-label set.
pub fn list_instance_to_rewards(lci: &ListClassificationInstance) -> Result<Instance> {
    let s = lci.s.max(1) as f64;
    let contexts = lci
        .contexts
        .iter()
        .map(|(prob, labels)| {
            let mut r = vec![0.0; lci.k];
            for &y in labels {
                r[y] = 1.0;
            }
            Ok(ContextLaw { prob: *prob, law: RewardLaw::Fixed(RewardVector::new(r, s)?) })
        })
        .collect::<Result<Vec<_>>>()?;
    Instance::new(lci.k, lci.m, s, contexts)
}

/// `r_𝒟(π) = E[r · π(x)]`, computed exactly from the mean rewards.
pub fn exact_policy_reward(inst: &Instance, pi: &Policy) -> f64 {
    assert_eq!(pi.n_contexts(), inst.n_contexts(), "policy and instance context counts differ");
    inst.contexts
        .iter()
        .zip(pi.table())
        .map(|(c, a)| {
            let means = c.law.means();
            c.prob * a.members().iter().map(|&y| means[y]).sum::<f64>()
        })
        .sum()
}

pub fn exact_policy_rewards(inst: &Instance, cls: &PolicyClass) -> Vec<f64> {
    cls.policies().iter().map(|pi| exact_policy_reward(inst, pi)).collect()
}

/// Index of the best policy in the class (lowest index among ties).
pub fn best_policy(inst: &Instance, cls: &PolicyClass) -> usize {
    let rewards = exact_policy_rewards(inst, cls);
    let mut best = 0;
    for (j, &v) in rewards.iter().enumerate() {
        if v > rewards[best] {
            best = j;
        }
    }
    best
}

/// `max_{π'∈Π} r_𝒟(π') − r_𝒟(π)`.
pub fn exact_gap_to_best(inst: &Instance, cls: &PolicyClass, pi: &Policy) -> f64 {
    let best = exact_policy_rewards(inst, cls).into_iter().fold(f64::NEG_INFINITY, f64::max);
    best - exact_policy_reward(inst, pi)
}

/// Seeded fixture generator: a deterministic-reward instance with
/// `‖r‖₁ ≤ s` at every context, and a class that always contains the
/// policy playing each context's top-`m` actions.
pub fn random_sparse_instance<R: Rng + ?Sized>(
    k: usize,
    m: usize,
    s: f64,
    n_contexts: usize,
    n_policies: usize,
    rng: &mut R,
) -> Result<(Instance, PolicyClass)> {
    if m == 0 || m > k || !(s > 0.0 && s <= k as f64) || n_contexts == 0 || n_policies == 0 {
        return Err(Error::InvalidParameter(format!(
            "random instance needs 1 ≤ m ≤ K, 0 < s ≤ K and nonempty contexts/policies \
             (K = {k}, m = {m}, s = {s}, contexts = {n_contexts}, policies = {n_policies})"
        )));
    }
    let raw: Vec<f64> = (0..n_contexts).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let hot = (s.ceil() as usize).clamp(1, k);

    let mut contexts = Vec::with_capacity(n_contexts);
    let mut best_table = Vec::with_capacity(n_contexts);
    for &w in &raw {
        let mut r: Vec<f64> = (0..k).map(|_| 0.1 * rng.gen::<f64>().powi(3)).collect();
        let hot_set = crate::domain::sample_uniform_action(k, hot, rng)?;
        for &y in hot_set.members() {
            r[y] = 0.5 + 0.5 * rng.gen::<f64>();
        }
        let l1: f64 = r.iter().sum();
        if l1 > s {
            let scale = s / l1 * (1.0 - 1e-12);
            r.iter_mut().for_each(|v| *v *= scale);
        }
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| r[b].total_cmp(&r[a]).then(a.cmp(&b)));
        best_table.push(ActionSubset::new(order[..m].iter().copied(), k)?);
        contexts.push(ContextLaw { prob: w / total, law: RewardLaw::Fixed(RewardVector::new(r, s)?) });
    }
    let inst = Instance::new(k, m, s, contexts)?;

    let best_slot = rng.gen_range(0..n_policies);
    let mut policies = Vec::with_capacity(n_policies);
    for j in 0..n_policies {
        if j == best_slot {
            policies.push(Policy::new(best_table.clone())?);
        } else {
            let table =
                (0..n_contexts).map(|_| crate::domain::sample_uniform_action(k, m, rng)).collect::<Result<Vec<_>>>()?;
            policies.push(Policy::new(table)?);
        }
    }
    let cls = PolicyClass::new(policies, k, m)?;
    Ok((inst, cls))
}

/// A random list-classification instance: each context gets between one and
/// `s` true labels.
pub fn random_list_instance<R: Rng + ?Sized>(
    k: usize,
    m: usize,
    s: usize,
    n_contexts: usize,
    rng: &mut R,
) -> Result<ListClassificationInstance> {
    if s == 0 || s > k || n_contexts == 0 {
        return Err(Error::InvalidParameter(format!(
            "list instance needs 1 ≤ s ≤ K and at least one context (K = {k}, s = {s})"
        )));
    }
    let raw: Vec<f64> = (0..n_contexts).map(|_| 0.5 + rng.gen::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    let contexts = raw
        .iter()
        .map(|w| {
            let size = rng.gen_range(1..=s);
            let labels = crate::domain::sample_uniform_action(k, size, rng)?;
            Ok((w / total, labels.members().to_vec()))
        })
        .collect::<Result<Vec<_>>>()?;
    ListClassificationInstance::new(k, m, s, contexts)
}
