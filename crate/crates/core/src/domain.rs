//! Contexts, combinatorial actions, rewards, policies and distributions over
//! policies, together with the marginal-probability and sampling primitives
//! shared by every learner.
//!
//! All values are immutable once constructed. The sampling functions only
//! mutate the generator handed to them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance on `Σ p_i = 1` accepted by [`SimplexWeights::new`].
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Slack allowed on `‖r‖₁ ≤ s` to absorb floating-point summation error.
pub const SPARSITY_TOL: f64 = 1e-9;

/// The one generator type threaded through every randomized operation.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator keyed by `seed`.
///
/// Streams of the same seed never overlap, so trial `i` of a sweep can use
/// `derived_rng(seed, i)` and stay reproducible regardless of scheduling.
pub fn derived_rng(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index into the finite context universe of an instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Context(pub usize);

impl Context {
    pub fn id(self) -> usize {
        self.0
    }
}

/// A size-`m` subset of the `K` base actions.
///
/// Members are stored sorted, which makes equality structural.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ActionSubset {
    members: Vec<usize>,
    capacity: usize,
}

impl ActionSubset {
    pub fn new(members: impl IntoIterator<Item = usize>, capacity: usize) -> Result<Self> {
        let mut members: Vec<usize> = members.into_iter().collect();
        members.sort_unstable();
        if members.is_empty() {
            return Err(Error::InvalidSubset("subset must be nonempty".into()));
        }
        if members.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidSubset(format!("duplicate members in {members:?}")));
        }
        if let Some(&last) = members.last() {
            if last >= capacity {
                return Err(Error::InvalidSubset(format!("member {last} out of range for K = {capacity}")));
            }
        }
        Ok(Self { members, capacity })
    }

    /// The full action set `[0, K)`.
    pub fn full(capacity: usize) -> Result<Self> {
        Self::new(0..capacity, capacity)
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    /// `m`, the number of members.
    pub fn size(&self) -> usize {
        self.members.len()
    }

    /// `K`, the number of base actions.
    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn contains(&self, action: usize) -> bool {
        self.members.binary_search(&action).is_ok()
    }

    /// The 0/1 indicator vector of length `K`.
    pub fn indicator(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.capacity];
        for &y in &self.members {
            out[y] = 1.0;
        }
        out
    }
}

/// Every size-`m` subset of `[0, K)` in lexicographic order.
pub fn all_subsets(k: usize, m: usize) -> Vec<ActionSubset> {
    let mut out = Vec::new();
    if m == 0 || m > k {
        return out;
    }
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        out.push(ActionSubset { members: idx.clone(), capacity: k });
        let mut i = m;
        while i > 0 && idx[i - 1] == k - m + (i - 1) {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// Per-action rewards in `[0, 1]^K`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    values: Vec<f64>,
    budget: f64,
}

impl RewardVector {
    /// Rewards that satisfy the sparsity budget `‖r‖₁ ≤ s`.
    pub fn new(values: Vec<f64>, s: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::InvalidReward(format!("sparsity budget must be positive, got {s}")));
        }
        check_unit_interval(&values)?;
        let l1: f64 = values.iter().sum();
        if l1 > s + SPARSITY_TOL {
            return Err(Error::InvalidReward(format!("‖r‖₁ = {l1} exceeds s = {s}")));
        }
        Ok(Self { values, budget: s })
    }

    /// Rewards with no sparsity guarantee beyond the trivial `‖r‖₁ ≤ K`.
    ///
    /// Used for realizations of Bernoulli laws, where sparsity only holds with
    /// high probability.
    pub fn unbudgeted(values: Vec<f64>) -> Result<Self> {
        check_unit_interval(&values)?;
        let budget = values.len() as f64;
        Ok(Self { values, budget })
    }

    pub fn zeros(k: usize) -> Self {
        Self { values: vec![0.0; k], budget: k.max(1) as f64 }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, action: usize) -> f64 {
        self.values[action]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// The budget this vector was validated against.
    pub fn budget(&self) -> f64 {
        self.budget
    }

    pub fn l1(&self) -> f64 {
        self.values.iter().sum()
    }
}

fn check_unit_interval(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::InvalidReward("reward vector is empty".into()));
    }
    if let Some((y, v)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
        return Err(Error::InvalidReward(format!("r({y}) = {v} is outside [0, 1]")));
    }
    Ok(())
}

/// A deterministic map from contexts to combinatorial actions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    table: Vec<ActionSubset>,
}

impl Policy {
    pub fn new(table: Vec<ActionSubset>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::InvalidPolicyClass("policy table is empty".into()));
        }
        Ok(Self { table })
    }

    pub fn action(&self, x: Context) -> &ActionSubset {
        &self.table[x.0]
    }

    pub fn table(&self) -> &[ActionSubset] {
        &self.table
    }

    pub fn n_contexts(&self) -> usize {
        self.table.len()
    }
}

/// A finite, ordered policy class. Index order is the tie-breaking order.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyClass {
    policies: Vec<Policy>,
    k: usize,
    m: usize,
    n_contexts: usize,
    // inclusion[(x * |Π| + j) * K + y] = 1{y ∈ π_j(x)}
    inclusion: Vec<bool>,
}

impl PolicyClass {
    pub fn new(policies: Vec<Policy>, k: usize, m: usize) -> Result<Self> {
        if policies.is_empty() {
            return Err(Error::InvalidPolicyClass("class is empty".into()));
        }
        if m == 0 || m > k {
            return Err(Error::InvalidPolicyClass(format!("need 1 ≤ m ≤ K, got m = {m}, K = {k}")));
        }
        let n_contexts = policies[0].n_contexts();
        for (j, pi) in policies.iter().enumerate() {
            if pi.n_contexts() != n_contexts {
                return Err(Error::InvalidPolicyClass(format!(
                    "policy {j} covers {} contexts, expected {n_contexts}",
                    pi.n_contexts()
                )));
            }
            for (x, a) in pi.table().iter().enumerate() {
                if a.capacity() != k || a.size() != m {
                    return Err(Error::InvalidPolicyClass(format!(
                        "policy {j} at context {x}: subset has K = {}, m = {}, expected K = {k}, m = {m}",
                        a.capacity(),
                        a.size()
                    )));
                }
            }
        }
        let n = policies.len();
        let mut inclusion = vec![false; n_contexts * n * k];
        for x in 0..n_contexts {
            for (j, pi) in policies.iter().enumerate() {
                for &y in pi.table[x].members() {
                    inclusion[(x * n + j) * k + y] = true;
                }
            }
        }
        Ok(Self { policies, k, m, n_contexts, inclusion })
    }

    /// Number of policies `|Π|`.
    pub fn len(&self) -> usize {
        self.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.policies.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n_contexts(&self) -> usize {
        self.n_contexts
    }

    pub fn policies(&self) -> &[Policy] {
        &self.policies
    }

    pub fn policy(&self, j: usize) -> &Policy {
        &self.policies[j]
    }

    /// `π_j(x)`.
    pub fn action(&self, j: usize, x: Context) -> &ActionSubset {
        self.policies[j].action(x)
    }

    /// `1{y ∈ π_j(x)}`.
    #[inline]
    pub fn includes(&self, j: usize, x: Context, y: usize) -> bool {
        self.inclusion[(x.0 * self.policies.len() + j) * self.k + y]
    }

    pub(crate) fn check_context(&self, x: Context) {
        assert!(x.0 < self.n_contexts, "context {} out of range for a class over {} contexts", x.0, self.n_contexts);
    }
}

/// A point of the probability simplex over a policy class.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexWeights {
    weights: Vec<f64>,
}

impl SimplexWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidSimplex("no weights".into()));
        }
        if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w >= 0.0)) {
            return Err(Error::InvalidSimplex(format!("weight {i} = {w} is not a finite nonnegative number")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidSimplex(format!("weights sum to {total}")));
        }
        Ok(Self { weights })
    }

    /// Rescales nonnegative `weights` to sum to one.
    pub fn normalized(mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidSimplex(format!("cannot normalize weights {weights:?}")));
        }
        for w in &mut weights {
            *w /= total;
        }
        Self::new(weights)
    }

    pub fn delta(n: usize, at: usize) -> Self {
        assert!(at < n, "delta index {at} out of range for {n} weights");
        let mut weights = vec![0.0; n];
        weights[at] = 1.0;
        Self { weights }
    }

    pub fn uniform(n: usize) -> Self {
        assert!(n > 0, "uniform distribution over zero policies");
        Self { weights: vec![1.0 / n as f64; n] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn get(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn support_size(&self) -> usize {
        self.weights.iter().filter(|w| **w > 0.0).count()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub(crate) fn from_raw(weights: Vec<f64>) -> Self {
        Self { weights }
    }
}

/// Rewards revealed for exactly the members of a played subset.
#[derive(Debug, Clone, PartialEq)]
pub struct SemiBanditFeedback {
    pairs: Vec<(usize, f64)>,
}

impl SemiBanditFeedback {
    /// Reveal `r` on the members of `a`.
    pub fn observe(a: &ActionSubset, r: &RewardVector) -> Self {
        Self { pairs: a.members().iter().map(|&y| (y, r.get(y))).collect() }
    }

    pub fn new(a: &ActionSubset, pairs: Vec<(usize, f64)>) -> Result<Self> {
        if pairs.len() != a.size() || pairs.iter().zip(a.members()).any(|((y, _), m)| y != m) {
            return Err(Error::InvalidReward(format!(
                "feedback indices {:?} do not match played subset {:?}",
                pairs.iter().map(|p| p.0).collect::<Vec<_>>(),
                a.members()
            )));
        }
        if let Some((y, v)) = pairs.iter().find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            return Err(Error::InvalidReward(format!("observed r({y}) = {v} outside [0, 1]")));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[(usize, f64)] {
        &self.pairs
    }
}

/// `Q_p(y|x) = Σ_j p_j 1{y ∈ π_j(x)}`.
pub fn marginal_probability(p: &SimplexWeights, cls: &PolicyClass, x: Context, y: usize) -> f64 {
    assert!(y < cls.k(), "action {y} out of range for K = {}", cls.k());
    assert_eq!(p.len(), cls.len(), "weights and class size differ");
    cls.check_context(x);
    let mut q = 0.0;
    for (j, &w) in p.as_slice().iter().enumerate() {
        if cls.includes(j, x, y) {
            q += w;
        }
    }
    q
}

/// `Q_p(·|x)` for every action at once, accumulated in policy-index order.
pub fn marginals(p: &SimplexWeights, cls: &PolicyClass, x: Context) -> Vec<f64> {
    assert_eq!(p.len(), cls.len(), "weights and class size differ");
    cls.check_context(x);
    let mut q = vec![0.0; cls.k()];
    accumulate_marginals(p.as_slice(), cls, x, &mut q);
    q
}

pub(crate) fn accumulate_marginals(p: &[f64], cls: &PolicyClass, x: Context, out: &mut [f64]) {
    out.iter_mut().for_each(|v| *v = 0.0);
    for (j, &w) in p.iter().enumerate() {
        if w != 0.0 {
            for &y in cls.action(j, x).members() {
                out[y] += w;
            }
        }
    }
}

/// `(1 − γ) q + γ m / K`.
#[inline]
pub fn smooth(q: f64, gamma: f64, m: usize, k: usize) -> f64 {
    (1.0 - gamma) * q + gamma * m as f64 / k as f64
}

/// `Q^γ_p(y|x)`, the inclusion probability of `y` under the γ-mixture of `p`
/// with the uniform distribution over subsets.
pub fn smoothed_marginal(p: &SimplexWeights, cls: &PolicyClass, x: Context, y: usize, gamma: f64) -> f64 {
    assert!(gamma > 0.0 && gamma <= 1.0, "gamma must lie in (0, 1], got {gamma}");
    smooth(marginal_probability(p, cls, x, y), gamma, cls.m(), cls.k())
}

/// Uniform draw from the `C(K, m)` subsets via a partial Fisher-Yates shuffle.
pub fn sample_uniform_action<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> Result<ActionSubset> {
    if m == 0 || m > k {
        return Err(Error::InvalidParameter(format!("cannot draw {m} of {k} actions")));
    }
    let mut pool: Vec<usize> = (0..k).collect();
    for i in 0..m {
        let j = rng.gen_range(i..k);
        pool.swap(i, j);
    }
    pool.truncate(m);
    ActionSubset::new(pool, k)
}

/// Draw a policy index from `p` by inverse CDF.
pub fn sample_policy<R: Rng + ?Sized>(p: &SimplexWeights, rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (j, &w) in p.as_slice().iter().enumerate() {
        if w > 0.0 {
            acc += w;
            last_positive = j;
            if u < acc {
                return j;
            }
        }
    }
    last_positive
}

/// Which branch of the exploration mixture produced an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionSource {
    Uniform,
    Policy(usize),
}

/// With probability `γ` a uniform subset, otherwise `π(x)` for `π ∼ p`.
///
/// The inclusion probability of every action `y` equals
/// [`smoothed_marginal`]`(p, cls, x, y, γ)`.
pub fn sample_mixed_action<R: Rng + ?Sized>(
    p: &SimplexWeights,
    cls: &PolicyClass,
    x: Context,
    gamma: f64,
    rng: &mut R,
) -> (ActionSubset, ActionSource) {
    assert!((0.0..=1.0).contains(&gamma), "gamma must lie in [0, 1], got {gamma}");
    assert_eq!(p.len(), cls.len(), "weights and class size differ");
    cls.check_context(x);
    let explore: f64 = rng.gen();
    if explore < gamma {
        let a = sample_uniform_action(cls.k(), cls.m(), rng).expect("class guarantees 1 ≤ m ≤ K");
        (a, ActionSource::Uniform)
    } else {
        let j = sample_policy(p, rng);
        (cls.action(j, x).clone(), ActionSource::Policy(j))
    }
}

/// `r · π(x)`.
pub fn policy_value(pi: &Policy, x: Context, r: &RewardVector) -> f64 {
    pi.action(x).members().iter().map(|&y| r.get(y)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subset(m: &[usize], k: usize) -> ActionSubset {
        ActionSubset::new(m.iter().copied(), k).unwrap()
    }

    fn two_policy_class() -> PolicyClass {
        // one context, K = 3, m = 1: π₁ ↦ {0}, π₂ ↦ {1}
        let p1 = Policy::new(vec![subset(&[0], 3)]).unwrap();
        let p2 = Policy::new(vec![subset(&[1], 3)]).unwrap();
        PolicyClass::new(vec![p1, p2], 3, 1).unwrap()
    }

    #[test]
    fn subset_validation() {
        assert!(ActionSubset::new([0, 0], 3).is_err());
        assert!(ActionSubset::new([3], 3).is_err());
        assert!(ActionSubset::new([], 3).is_err());
        let a = subset(&[2, 0], 3);
        assert_eq!(a.members(), &[0, 2]);
        assert!(a.contains(2) && !a.contains(1));
    }

    #[test]
    fn reward_validation() {
        assert!(RewardVector::new(vec![0.5, 1.2], 2.0).is_err());
        assert!(RewardVector::new(vec![0.9, 0.9], 1.0).is_err());
        assert!(RewardVector::new(vec![1.0, 1.0], 2.0).is_ok());
        assert!(RewardVector::unbudgeted(vec![1.0, 1.0, 1.0]).is_ok());
        assert!(RewardVector::new(vec![f64::NAN], 1.0).is_err());
    }

    #[test]
    fn simplex_validation() {
        assert!(SimplexWeights::new(vec![0.5, 0.5 + 1e-10]).is_ok());
        assert!(SimplexWeights::new(vec![0.5, 0.6]).is_err());
        assert!(SimplexWeights::new(vec![-0.1, 1.1]).is_err());
        let p = SimplexWeights::normalized(vec![1.0, 3.0]).unwrap();
        assert_eq!(p.as_slice(), &[0.25, 0.75]);
    }

    #[test]
    fn class_rejects_mismatched_sizes() {
        let p1 = Policy::new(vec![subset(&[0], 3)]).unwrap();
        let p2 = Policy::new(vec![subset(&[0, 1], 3)]).unwrap();
        assert!(PolicyClass::new(vec![p1, p2], 3, 1).is_err());
        assert!(PolicyClass::new(vec![], 3, 1).is_err());
    }

    #[test]
    fn marginal_examples() {
        let cls = two_policy_class();
        let x = Context(0);
        assert_eq!(marginal_probability(&SimplexWeights::delta(2, 0), &cls, x, 0), 1.0);
        assert_eq!(marginal_probability(&SimplexWeights::uniform(2), &cls, x, 0), 0.5);

        let shared = Policy::new(vec![subset(&[0, 1], 4)]).unwrap();
        let other = Policy::new(vec![subset(&[0, 2], 4)]).unwrap();
        let cls2 = PolicyClass::new(vec![shared, other], 4, 2).unwrap();
        let p = SimplexWeights::new(vec![0.3, 0.7]).unwrap();
        assert_eq!(marginal_probability(&p, &cls2, x, 0), 1.0);
    }

    #[test]
    fn smoothed_examples() {
        // Q = 0, γ = 1/2, m = 1, K = 4
        let a = Policy::new(vec![subset(&[0], 4)]).unwrap();
        let cls = PolicyClass::new(vec![a], 4, 1).unwrap();
        let p = SimplexWeights::delta(1, 0);
        assert_eq!(smoothed_marginal(&p, &cls, Context(0), 3, 0.5), 0.125);
        // γ → 0 leaves Q unchanged
        assert!((smoothed_marginal(&p, &cls, Context(0), 0, 1e-15) - 1.0).abs() < 1e-14);
        // Q = 1, γ = 1/2, m = 2, K = 4
        let b = Policy::new(vec![subset(&[0, 1], 4)]).unwrap();
        let cls2 = PolicyClass::new(vec![b], 4, 2).unwrap();
        assert_eq!(smoothed_marginal(&p, &cls2, Context(0), 0, 0.5), 0.75);
    }

    #[test]
    #[should_panic]
    fn marginal_rejects_out_of_range_action() {
        let cls = two_policy_class();
        marginal_probability(&SimplexWeights::uniform(2), &cls, Context(0), 3);
    }

    #[test]
    fn uniform_sampling_degenerate_and_errors() {
        let mut rng = seeded_rng(1);
        for _ in 0..10 {
            assert_eq!(sample_uniform_action(5, 5, &mut rng).unwrap(), ActionSubset::full(5).unwrap());
        }
        assert!(sample_uniform_action(3, 4, &mut rng).is_err());
    }

    #[test]
    fn uniform_singletons_are_equiprobable() {
        let mut rng = seeded_rng(2);
        let n = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[sample_uniform_action(4, 1, &mut rng).unwrap().members()[0]] += 1;
        }
        let se = (0.25 * 0.75 / n as f64).sqrt();
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 4.0 * se, "{counts:?}");
        }
    }

    #[test]
    fn mixed_sampling_degenerate_cases() {
        let cls = two_policy_class();
        let mut rng = seeded_rng(3);
        let p = SimplexWeights::delta(2, 0);
        for _ in 0..50 {
            let (a, src) = sample_mixed_action(&p, &cls, Context(0), 0.0, &mut rng);
            assert_eq!(a.members(), &[0]);
            assert_eq!(src, ActionSource::Policy(0));
        }
        for _ in 0..50 {
            let (_, src) = sample_mixed_action(&p, &cls, Context(0), 1.0, &mut rng);
            assert_eq!(src, ActionSource::Uniform);
        }
    }

    #[test]
    fn policy_value_examples() {
        let pi = Policy::new(vec![subset(&[0, 2], 3)]).unwrap();
        let r = RewardVector::new(vec![0.4, 0.9, 0.1], 3.0).unwrap();
        assert!((policy_value(&pi, Context(0), &r) - 0.5).abs() < 1e-15);
        assert_eq!(policy_value(&pi, Context(0), &RewardVector::zeros(3)), 0.0);
        let ones = RewardVector::new(vec![1.0; 3], 3.0).unwrap();
        assert_eq!(policy_value(&pi, Context(0), &ones), 2.0);
    }

    #[test]
    fn subset_enumeration_counts() {
        assert_eq!(all_subsets(4, 2).len(), 6);
        assert_eq!(all_subsets(6, 3).len(), 20);
        assert_eq!(all_subsets(3, 3).len(), 1);
        assert!(all_subsets(2, 3).is_empty());
    }

    #[test]
    fn derived_streams_differ() {
        let mut a = derived_rng(7, 0);
        let mut b = derived_rng(7, 1);
        let xa: u64 = a.gen();
        let xb: u64 = b.gen();
        assert_ne!(xa, xb);
        let mut c = derived_rng(7, 1);
        assert_eq!(xb, c.gen::<u64>());
    }
}
