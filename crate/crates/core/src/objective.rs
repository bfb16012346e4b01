//! The smoothed log-barrier objective minimized in phase 1, its gradient, the
//! Frank-Wolfe solver, and exact population counterparts on finite-support
//! instances.
//!
//! For a record `z = (x, r, a)` with `a` drawn uniformly,
//!
//! ```text
//! f(p; z) = −(K/m) Σ_{y∈a} r(y) ln Q^γ_p(y|x)
//! ∂f/∂p_j = −(1−γ)(K/m) Σ_{y∈a} 1{y∈π_j(x)} r(y) / Q^γ_p(y|x)
//! ```
//!
//! and `F(p) = E[f(p; z)] = E_{(x,r)}[−Σ_y r(y) ln Q^γ_p(y|x)]`.

use std::io::Write;

use serde::Serialize;

use crate::domain::{
    accumulate_marginals, marginals, smooth, smoothed_marginal, ActionSubset, Context, PolicyClass, RewardVector,
    SemiBanditFeedback, SimplexWeights,
};
use crate::environments::Instance;
use crate::error::{Error, Result};
use crate::oracle::{ErmOracle, WeightedExample};

/// One phase-1 round: the context, the uniformly drawn subset and the rewards
/// revealed on it.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Record {
    pub x: Context,
    pub a: ActionSubset,
    pub observed: SemiBanditFeedback,
}

impl Phase1Record {
    pub fn new(x: Context, a: ActionSubset, observed: SemiBanditFeedback) -> Result<Self> {
        let pairs = observed.pairs();
        if pairs.len() != a.size() || pairs.iter().zip(a.members()).any(|((y, _), m)| y != m) {
            return Err(Error::InvalidReward("feedback does not cover the played subset".into()));
        }
        Ok(Self { x, a, observed })
    }

    /// Record the rewards of `r` revealed by playing `a`.
    pub fn observe(x: Context, a: ActionSubset, r: &RewardVector) -> Self {
        let observed = SemiBanditFeedback::observe(&a, r);
        Self { x, a, observed }
    }
}

fn check_gamma(gamma: f64) {
    assert!(gamma > 0.0 && gamma <= 0.5, "gamma must lie in (0, 1/2], got {gamma}");
}

/// `f(p; z)` for a single record.
pub fn stochastic_objective(p: &SimplexWeights, rec: &Phase1Record, cls: &PolicyClass, gamma: f64) -> f64 {
    check_gamma(gamma);
    let scale = cls.k() as f64 / cls.m() as f64;
    let mut total = 0.0;
    for &(y, r) in rec.observed.pairs() {
        if r != 0.0 {
            total -= r * smoothed_marginal(p, cls, rec.x, y, gamma).ln();
        }
    }
    scale * total
}

/// `F̂(p)`, the batch mean of [`stochastic_objective`].
pub fn empirical_objective(p: &SimplexWeights, batch: &[Phase1Record], cls: &PolicyClass, gamma: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let total: f64 = batch.iter().map(|rec| stochastic_objective(p, rec, cls, gamma)).sum();
    Ok(total / batch.len() as f64)
}

/// `∇F̂(p)`, the batch mean of the per-record gradients. Every coordinate is
/// nonpositive.
pub fn empirical_gradient(
    p: &SimplexWeights,
    batch: &[Phase1Record],
    cls: &PolicyClass,
    gamma: f64,
) -> Result<Vec<f64>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    check_gamma(gamma);
    let scale = (1.0 - gamma) * cls.k() as f64 / cls.m() as f64;
    let mut grad = vec![0.0; cls.len()];
    for rec in batch {
        for &(y, r) in rec.observed.pairs() {
            if r == 0.0 {
                continue;
            }
            let coef = scale * r / smoothed_marginal(p, cls, rec.x, y, gamma);
            for (j, g) in grad.iter_mut().enumerate() {
                if cls.includes(j, rec.x, y) {
                    *g -= coef;
                }
            }
        }
    }
    let n = batch.len() as f64;
    grad.iter_mut().for_each(|g| *g /= n);
    Ok(grad)
}

/// The reweighted dataset whose ERM solution is the Frank-Wolfe vertex at
/// `p`: one example per record with
/// `r̂_i(y) = (1/N)(1−γ)(K/m) 1{y∈a_i} r_i(y) / Q^γ_p(y|x_i)`.
pub fn phase1_erm_dataset(
    p: &SimplexWeights,
    batch: &[Phase1Record],
    cls: &PolicyClass,
    gamma: f64,
) -> Vec<WeightedExample> {
    check_gamma(gamma);
    let n = batch.len() as f64;
    let scale = (1.0 - gamma) * cls.k() as f64 / cls.m() as f64;
    batch
        .iter()
        .map(|rec| WeightedExample {
            x: rec.x,
            rhat: rec
                .observed
                .pairs()
                .iter()
                .map(|&(y, r)| (y, scale * r / smoothed_marginal(p, cls, rec.x, y, gamma) / n))
                .collect(),
        })
        .collect()
}

/// `(F(p), ∇F(p))` computed exactly from an instance's mean rewards.
pub fn exact_population_objective(
    p: &SimplexWeights,
    inst: &Instance,
    cls: &PolicyClass,
    gamma: f64,
) -> (f64, Vec<f64>) {
    check_gamma(gamma);
    let (k, m) = (cls.k(), cls.m());
    let mut value = 0.0;
    let mut grad = vec![0.0; cls.len()];
    for x in (0..inst.n_contexts()).map(Context) {
        let prob = inst.prob(x);
        if prob == 0.0 {
            continue;
        }
        let means = inst.mean_rewards(x);
        let smoothed: Vec<f64> = marginals(p, cls, x).into_iter().map(|q| smooth(q, gamma, m, k)).collect();
        for y in 0..k {
            if means[y] != 0.0 {
                value -= prob * means[y] * smoothed[y].ln();
            }
        }
        for (j, g) in grad.iter_mut().enumerate() {
            let inner: f64 = cls.action(j, x).members().iter().map(|&y| means[y] / smoothed[y]).sum();
            *g -= (1.0 - gamma) * prob * inner;
        }
    }
    (value, grad)
}

/// `sK³/(γ²m³)`, the L1-smoothness constant of `F̂` for `s`-sparse rewards.
pub fn smoothness_constant(s: f64, k: usize, m: usize, gamma: f64) -> f64 {
    s * (k as f64).powi(3) / (gamma * gamma * (m as f64).powi(3))
}

/// A log-barrier objective `−Σ_{x,y} W(x,y) ln Q^γ_p(y|x)` with nonnegative
/// weights aggregated per (context, action).
///
/// The phase-1 empirical objective, the single-label objective and the exact
/// population objective are all of this form, which is what lets a single
/// Frank-Wolfe loop serve all three.
#[derive(Debug, Clone)]
pub struct BarrierObjective {
    gamma: f64,
    k: usize,
    m: usize,
    // dense n_contexts × K weights
    weights: Vec<f64>,
    active: Vec<Context>,
}

impl BarrierObjective {
    fn from_weights(weights: Vec<f64>, n_contexts: usize, k: usize, m: usize, gamma: f64) -> Self {
        check_gamma(gamma);
        let active =
            (0..n_contexts).filter(|&x| weights[x * k..(x + 1) * k].iter().any(|w| *w > 0.0)).map(Context).collect();
        Self { gamma, k, m, weights, active }
    }

    /// `F̂` over a phase-1 batch: `W(x,y) = (K/m)/N · Σ_{i: x_i = x, y ∈ a_i} r_i(y)`.
    pub fn from_phase1(batch: &[Phase1Record], cls: &PolicyClass, gamma: f64) -> Result<Self> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let (k, m) = (cls.k(), cls.m());
        let mut weights = vec![0.0; cls.n_contexts() * k];
        for rec in batch {
            cls.check_context(rec.x);
            for &(y, r) in rec.observed.pairs() {
                weights[rec.x.0 * k + y] += r;
            }
        }
        let scale = k as f64 / m as f64 / batch.len() as f64;
        weights.iter_mut().for_each(|w| *w *= scale);
        Ok(Self::from_weights(weights, cls.n_contexts(), k, m, gamma))
    }

    /// The single-label objective `(1/|S|) Σ_{(x,y)∈S} −ln Q^γ_p(y|x)`.
    /// An empty `S` yields the zero objective.
    pub fn from_single_label(samples: &[(Context, usize)], cls: &PolicyClass, gamma: f64) -> Self {
        let k = cls.k();
        let mut weights = vec![0.0; cls.n_contexts() * k];
        if !samples.is_empty() {
            let w = 1.0 / samples.len() as f64;
            for &(x, y) in samples {
                cls.check_context(x);
                weights[x.0 * k + y] += w;
            }
        }
        Self::from_weights(weights, cls.n_contexts(), k, cls.m(), gamma)
    }

    /// The exact population objective `F`: `W(x,y) = P(x) · E[r(y) | x]`.
    pub fn from_instance(inst: &Instance, gamma: f64) -> Self {
        let k = inst.k();
        let mut weights = vec![0.0; inst.n_contexts() * k];
        for x in 0..inst.n_contexts() {
            let prob = inst.prob(Context(x));
            for (y, mu) in inst.mean_rewards(Context(x)).iter().enumerate() {
                weights[x * k + y] = prob * mu;
            }
        }
        Self::from_weights(weights, inst.n_contexts(), k, inst.m(), gamma)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// No positive weight anywhere: the objective is identically zero.
    pub fn is_trivial(&self) -> bool {
        self.active.is_empty()
    }

    fn smoothed_at(&self, p: &[f64], cls: &PolicyClass, x: Context, buf: &mut [f64]) {
        accumulate_marginals(p, cls, x, buf);
        for q in buf.iter_mut() {
            *q = smooth(*q, self.gamma, self.m, self.k);
        }
    }

    pub fn value(&self, p: &SimplexWeights, cls: &PolicyClass) -> f64 {
        let mut buf = vec![0.0; self.k];
        let mut total = 0.0;
        for &x in &self.active {
            self.smoothed_at(p.as_slice(), cls, x, &mut buf);
            total += self.context_value(x, &buf);
        }
        total
    }

    fn context_value(&self, x: Context, smoothed: &[f64]) -> f64 {
        let w = &self.weights[x.0 * self.k..(x.0 + 1) * self.k];
        let mut total = 0.0;
        for y in 0..self.k {
            if w[y] != 0.0 {
                total -= w[y] * smoothed[y].ln();
            }
        }
        total
    }

    /// ERM data whose scores are `−∇F(p)`: per active context,
    /// `r̂(y) = (1−γ) W(x,y) / Q^γ_p(y|x)`. Also returns `F(p)`.
    pub fn erm_dataset(&self, p: &SimplexWeights, cls: &PolicyClass) -> (Vec<WeightedExample>, f64) {
        let mut buf = vec![0.0; self.k];
        let mut value = 0.0;
        let mut data = Vec::with_capacity(self.active.len());
        for &x in &self.active {
            self.smoothed_at(p.as_slice(), cls, x, &mut buf);
            value += self.context_value(x, &buf);
            let w = &self.weights[x.0 * self.k..(x.0 + 1) * self.k];
            let rhat = (0..self.k).filter(|&y| w[y] != 0.0).map(|y| (y, (1.0 - self.gamma) * w[y] / buf[y])).collect();
            data.push(WeightedExample { x, rhat });
        }
        (data, value)
    }

    pub fn gradient(&self, p: &SimplexWeights, cls: &PolicyClass) -> Vec<f64> {
        let (data, _) = self.erm_dataset(p, cls);
        crate::oracle::erm_scores(cls, &data).into_iter().map(|s| -s).collect()
    }
}

/// One Frank-Wolfe iteration as recorded in the trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FwStep {
    pub iteration: usize,
    /// Objective at `p_t`.
    pub objective: f64,
    /// Duality-gap proxy `g_t · (p_t − q_t)`.
    pub gap: f64,
    /// Vertex selected by the oracle.
    pub vertex: usize,
}

#[derive(Debug, Clone)]
pub struct FwOutcome {
    /// `p_{T+1}`.
    pub p: SimplexWeights,
    pub trace: Vec<FwStep>,
}

/// Frank-Wolfe with `η_t = 2/(2+t)`, `t = 1..=iterations`, where each vertex
/// `q_t` comes from one ERM call on the reweighted data.
pub fn frank_wolfe_on(
    objective: &BarrierObjective,
    oracle: &mut ErmOracle<'_>,
    iterations: usize,
    p1: &SimplexWeights,
) -> Result<FwOutcome> {
    let cls = oracle.class();
    if iterations == 0 {
        return Err(Error::InvalidParameter("Frank-Wolfe needs at least one iteration".into()));
    }
    if p1.len() != cls.len() {
        return Err(Error::InvalidParameter(format!(
            "initial point has {} weights for {} policies",
            p1.len(),
            cls.len()
        )));
    }
    let mut p = p1.clone();
    let mut trace = Vec::with_capacity(iterations);
    for t in 1..=iterations {
        let (data, value) = objective.erm_dataset(&p, cls);
        let (q, scores) = oracle.call(&data);
        // scores = −g_t, so g_t·(p_t − q_t) = score_q − Σ_j p_j score_j
        let mixed: f64 = p.as_slice().iter().zip(&scores).map(|(w, s)| w * s).sum();
        trace.push(FwStep { iteration: t, objective: value, gap: scores[q] - mixed, vertex: q });
        let eta = 2.0 / (2.0 + t as f64);
        let mut next = p.into_vec();
        next.iter_mut().for_each(|w| *w *= 1.0 - eta);
        next[q] += eta;
        p = SimplexWeights::from_raw(next);
    }
    Ok(FwOutcome { p: SimplexWeights::new(p.into_vec())?, trace })
}

/// Frank-Wolfe on the empirical phase-1 objective of `batch`.
pub fn frank_wolfe(
    batch: &[Phase1Record],
    cls: &PolicyClass,
    gamma: f64,
    iterations: usize,
    p1: &SimplexWeights,
) -> Result<FwOutcome> {
    let objective = BarrierObjective::from_phase1(batch, cls, gamma)?;
    let mut oracle = ErmOracle::new(cls);
    frank_wolfe_on(&objective, &mut oracle, iterations, p1)
}

/// Long-horizon Frank-Wolfe on the exact population objective, started from
/// the uniform distribution.
pub fn population_minimizer(
    inst: &Instance,
    cls: &PolicyClass,
    gamma: f64,
    iterations: usize,
) -> Result<SimplexWeights> {
    let objective = BarrierObjective::from_instance(inst, gamma);
    let mut oracle = ErmOracle::new(cls);
    Ok(frank_wolfe_on(&objective, &mut oracle, iterations, &SimplexWeights::uniform(cls.len()))?.p)
}

/// Trace as CSV with header `iteration,objective,gap`.
pub fn write_fw_trace_csv<W: Write>(trace: &[FwStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["iteration", "objective", "gap"])?;
    for step in trace {
        w.write_record([step.iteration.to_string(), step.objective.to_string(), step.gap.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
