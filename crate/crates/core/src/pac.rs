//! The two-phase PAC learner.
//!
//! Phase 1 plays uniformly random subsets and runs Frank-Wolfe on the
//! empirical log-barrier objective to find a low-variance exploration
//! distribution `p̂`. Phase 2 explores with the γ-mixture of `p̂` and the
//! uniform distribution, importance-weights the observed rewards by
//! `Q^γ_p̂`, and returns the ERM policy.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{
    derived_rng, marginals, sample_mixed_action, sample_uniform_action, smooth, smoothed_marginal, ActionSubset,
    Context, PolicyClass, SeededRng, SimplexWeights,
};
use crate::environments::{check_compatible, exact_gap_to_best, Environment, Instance, InstanceStream, RewardLaw};
use crate::error::{Error, Result};
use crate::objective::{exact_population_objective, frank_wolfe_on, BarrierObjective, FwStep, Phase1Record};
use crate::oracle::{ErmOracle, WeightedExample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacConfig {
    pub n1: usize,
    pub n2: usize,
    /// Frank-Wolfe iterations `T`.
    #[serde(rename = "T")]
    pub iterations: usize,
    pub gamma: f64,
    pub seed: u64,
    /// Compute exact diagnostics (gap, `‖∇F(p̂)‖∞`, audits) when the instance
    /// is known.
    #[serde(default = "default_true")]
    pub diagnostics: bool,
}

fn default_true() -> bool {
    true
}

impl PacConfig {
    pub fn new(n1: usize, n2: usize, iterations: usize, gamma: f64, seed: u64) -> Result<Self> {
        let cfg = Self { n1, n2, iterations, gamma, seed, diagnostics: true };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 0.5) {
            return Err(Error::InvalidParameter(format!("gamma must lie in (0, 1/2], got {}", self.gamma)));
        }
        if self.n1 == 0 || self.n2 == 0 || self.iterations == 0 {
            return Err(Error::InvalidParameter("N1, N2 and T must be positive".into()));
        }
        Ok(())
    }

    /// Parameters with the asymptotic shape of the guarantee, scaled by a
    /// user constant `c`: `N1 = c·K⁹/m⁸·ln(|Π|/δ)`,
    /// `N2 = c·(K/(mε) + sm/ε²)·ln(|Π|/δ)`, `T = c·(K/m)⁵`, `γ = 1/2`.
    #[allow(clippy::too_many_arguments)]
    pub fn theorem_shaped(
        k: usize,
        m: usize,
        s: f64,
        eps: f64,
        delta: f64,
        n_policies: usize,
        c: f64,
        seed: u64,
    ) -> Result<Self> {
        let (kf, mf) = (k as f64, m as f64);
        let log_term = (n_policies as f64 / delta).ln().max(1.0);
        let n1 = (c * kf.powi(9) / mf.powi(8) * log_term).ceil() as usize;
        let n2 = (c * (kf / (mf * eps) + s * mf / (eps * eps)) * log_term).ceil() as usize;
        let iterations = (c * (kf / mf).powi(5)).ceil() as usize;
        Self::new(n1.max(1), n2.max(1), iterations.max(1), 0.5, seed)
    }

    /// Single-label shape: `N1 = c·K⁷·ln(|H|/δ)`, `N2 = c·(K/ε + 1/ε²)·ln(|H|/δ)`,
    /// `T = c·K⁴`, `γ = 1/2`.
    pub fn single_label_shaped(k: usize, eps: f64, delta: f64, n_hypotheses: usize, c: f64, seed: u64) -> Result<Self> {
        let kf = k as f64;
        let log_term = (n_hypotheses as f64 / delta).ln().max(1.0);
        let n1 = (c * kf.powi(7) * log_term).ceil() as usize;
        let n2 = (c * (kf / eps + 1.0 / (eps * eps)) * log_term).ceil() as usize;
        let iterations = (c * kf.powi(4)).ceil() as usize;
        Self::new(n1.max(1), n2.max(1), iterations.max(1), 0.5, seed)
    }
}

#[derive(Debug, Clone)]
pub struct Phase1Output {
    pub p_hat: SimplexWeights,
    pub records: Vec<Phase1Record>,
    pub trace: Vec<FwStep>,
    /// No positive reward was observed, so `p̂` is decided by tie-breaking.
    pub uninformative: bool,
}

fn next_round<E: Environment + ?Sized>(
    env: &mut E,
    needed: usize,
    got: usize,
) -> Result<(Context, crate::domain::RewardVector)> {
    env.next_round().ok_or(Error::EnvironmentExhausted { needed, got })
}

/// Consumes exactly `N1` rounds with uniform actions, then runs `T`
/// Frank-Wolfe iterations from the delta distribution on policy 0.
pub fn run_phase1<E: Environment + ?Sized>(
    env: &mut E,
    oracle: &mut ErmOracle<'_>,
    cfg: &PacConfig,
    rng: &mut SeededRng,
) -> Result<Phase1Output> {
    cfg.validate()?;
    let cls = oracle.class();
    let mut records = Vec::with_capacity(cfg.n1);
    for i in 0..cfg.n1 {
        let (x, r) = next_round(env, cfg.n1, i)?;
        let a = sample_uniform_action(cls.k(), cls.m(), rng)?;
        records.push(Phase1Record::observe(x, a, &r));
    }
    let objective = BarrierObjective::from_phase1(&records, cls, cfg.gamma)?;
    let fw = frank_wolfe_on(&objective, oracle, cfg.iterations, &SimplexWeights::delta(cls.len(), 0))?;
    Ok(Phase1Output { p_hat: fw.p, records, trace: fw.trace, uninformative: objective.is_trivial() })
}

/// Running statistics of the importance-weighted policy estimates
/// `R_i(π) = Σ_{y∈π(x_i)} r̂_i(y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub rounds: usize,
    pub mean: Vec<f64>,
    /// Unbiased sample variance per policy.
    pub variance: Vec<f64>,
    pub max_estimate: f64,
    /// Largest single-action importance weight `1/Q^γ` applied.
    pub max_weight: f64,
}

impl EstimatorSummary {
    fn new(n_policies: usize) -> Self {
        Self {
            rounds: 0,
            mean: vec![0.0; n_policies],
            variance: vec![0.0; n_policies],
            max_estimate: 0.0,
            max_weight: 0.0,
        }
    }

    // Welford; `variance` holds the running sum of squares until `finish`
    fn push(&mut self, estimates: &[f64]) {
        self.rounds += 1;
        let n = self.rounds as f64;
        for ((mean, m2), &v) in self.mean.iter_mut().zip(self.variance.iter_mut()).zip(estimates) {
            let delta = v - *mean;
            *mean += delta / n;
            *m2 += delta * (v - *mean);
            self.max_estimate = self.max_estimate.max(v);
        }
    }

    fn finish(mut self) -> Self {
        let denom = self.rounds.saturating_sub(1).max(1) as f64;
        self.variance.iter_mut().for_each(|m2| *m2 /= denom);
        self
    }

    pub fn max_variance(&self) -> f64 {
        self.variance.iter().copied().fold(0.0, f64::max)
    }
}

/// `Q^γ_p(·|x)` for every context, as a dense `n_contexts × K` table.
fn smoothed_table(p: &SimplexWeights, cls: &PolicyClass, gamma: f64) -> Vec<f64> {
    let mut table = Vec::with_capacity(cls.n_contexts() * cls.k());
    for x in 0..cls.n_contexts() {
        table.extend(marginals(p, cls, Context(x)).into_iter().map(|q| smooth(q, gamma, cls.m(), cls.k())));
    }
    table
}

fn collect_phase2<E: Environment + ?Sized>(
    env: &mut E,
    cls: &PolicyClass,
    p_hat: &SimplexWeights,
    gamma: f64,
    rounds: usize,
    binary_only: bool,
    rng: &mut SeededRng,
) -> Result<(Vec<WeightedExample>, EstimatorSummary)> {
    let k = cls.k();
    let table = smoothed_table(p_hat, cls, gamma);
    let mut data = Vec::with_capacity(rounds);
    let mut summary = EstimatorSummary::new(cls.len());
    let mut estimates = vec![0.0; cls.len()];
    let mut dense = vec![0.0; k];
    for i in 0..rounds {
        let (x, r) = next_round(env, rounds, i)?;
        let (a, _) = sample_mixed_action(p_hat, cls, x, gamma, rng);
        let qrow = &table[x.0 * k..(x.0 + 1) * k];
        let mut rhat = Vec::with_capacity(a.size());
        for &y in a.members() {
            let ry = r.get(y);
            if binary_only && ry != 0.0 && ry != 1.0 {
                return Err(Error::NonBinaryReward { value: ry });
            }
            let weight = 1.0 / qrow[y];
            summary.max_weight = summary.max_weight.max(weight);
            rhat.push((y, ry * weight));
        }
        dense.iter_mut().for_each(|v| *v = 0.0);
        for &(y, v) in &rhat {
            dense[y] = v;
        }
        for (j, est) in estimates.iter_mut().enumerate() {
            *est = cls.action(j, x).members().iter().map(|&y| dense[y]).sum();
        }
        summary.push(&estimates);
        data.push(WeightedExample { x, rhat });
    }
    Ok((data, summary.finish()))
}

/// The phase-2 importance-weighted example for one round:
/// `r̂(y) = 1{y∈a} r(y) / Q^γ_p(y|x)`. Per-policy estimates `R(π)` are its
/// ERM scores.
pub fn phase2_example(
    p: &SimplexWeights,
    cls: &PolicyClass,
    x: Context,
    a: &ActionSubset,
    observed: &[(usize, f64)],
    gamma: f64,
) -> WeightedExample {
    let rhat = observed
        .iter()
        .map(|&(y, r)| {
            assert!(a.contains(y), "reward observed for action {y} outside the played subset");
            (y, r / smoothed_marginal(p, cls, x, y, gamma))
        })
        .collect();
    WeightedExample { x, rhat }
}

#[derive(Debug, Clone)]
pub struct Phase2Output {
    pub out_policy: usize,
    pub summary: EstimatorSummary,
}

/// Consumes exactly `N2` rounds drawn from the γ-mixture of `p̂` and returns
/// the ERM policy on the importance-weighted data
/// `r̂_i(y) = 1{y∈a_i} r_i(y) / Q^γ_p̂(y|x_i)`.
pub fn run_phase2<E: Environment + ?Sized>(
    env: &mut E,
    oracle: &mut ErmOracle<'_>,
    p_hat: &SimplexWeights,
    cfg: &PacConfig,
    rng: &mut SeededRng,
) -> Result<Phase2Output> {
    cfg.validate()?;
    let (data, summary) = collect_phase2(env, oracle.class(), p_hat, cfg.gamma, cfg.n2, false, rng)?;
    let (out_policy, _) = oracle.call(&data);
    Ok(Phase2Output { out_policy, summary })
}

/// Empirical phase-2 estimator statistics over `draws` fresh rounds from
/// `inst`, without the final ERM call.
pub fn sample_estimator_summary(
    inst: &Instance,
    cls: &PolicyClass,
    p: &SimplexWeights,
    gamma: f64,
    draws: usize,
    rng: &mut SeededRng,
) -> Result<EstimatorSummary> {
    let mut env = InstanceStream::new(inst, derived_rng(rng.gen(), 1));
    Ok(collect_phase2(&mut env, cls, p, gamma, draws, false, rng)?.1)
}

/// `E_x[Σ_{y∈π(x)} E[r(y)|x] / Q^γ_p(y|x)]` for every policy.
pub fn reward_ratio_audit(inst: &Instance, cls: &PolicyClass, p: &SimplexWeights, gamma: f64) -> Vec<f64> {
    let k = cls.k();
    let table = smoothed_table(p, cls, gamma);
    (0..cls.len())
        .map(|j| {
            (0..inst.n_contexts())
                .map(Context)
                .map(|x| {
                    let means = inst.mean_rewards(x);
                    let inner: f64 = cls.action(j, x).members().iter().map(|&y| means[y] / table[x.0 * k + y]).sum();
                    inst.prob(x) * inner
                })
                .sum()
        })
        .collect()
}

/// Exact mean and variance of each phase-2 estimate `R(π)` under the
/// exploration law of `p`, using pairwise inclusion probabilities
/// `P(y, y' ∈ a | x) = (1−γ) Σ_j p_j 1{y,y'∈π_j(x)} + γ m(m−1)/(K(K−1))`.
pub fn exact_estimator_moments(inst: &Instance, cls: &PolicyClass, p: &SimplexWeights, gamma: f64) -> Vec<(f64, f64)> {
    let (k, m) = (cls.k(), cls.m());
    let table = smoothed_table(p, cls, gamma);
    let uniform_pair = if k > 1 { gamma * (m * (m - 1)) as f64 / (k * (k - 1)) as f64 } else { 0.0 };
    (0..cls.len())
        .map(|j| {
            let mut first = 0.0;
            let mut second = 0.0;
            for x in (0..inst.n_contexts()).map(Context) {
                let prob = inst.prob(x);
                let means = inst.mean_rewards(x);
                let bernoulli = matches!(inst.contexts()[x.0].law, RewardLaw::Bernoulli(_));
                let q = &table[x.0 * k..(x.0 + 1) * k];
                let members = cls.action(j, x).members();
                first += prob * members.iter().map(|&y| means[y]).sum::<f64>();
                for &y in members {
                    for &z in members {
                        let (moment, pair) = if y == z {
                            let sq = if bernoulli { means[y] } else { means[y] * means[y] };
                            (sq, q[y])
                        } else {
                            let together: f64 = p
                                .as_slice()
                                .iter()
                                .enumerate()
                                .filter(|&(i, _)| cls.includes(i, x, y) && cls.includes(i, x, z))
                                .map(|(_, w)| w)
                                .sum();
                            (means[y] * means[z], (1.0 - gamma) * together + uniform_pair)
                        };
                        second += prob * moment * pair / (q[y] * q[z]);
                    }
                }
            }
            (first, second - first * first)
        })
        .collect()
}

/// `‖∇F(p)‖∞` of the exact population objective.
pub fn exact_grad_inf_norm(inst: &Instance, cls: &PolicyClass, p: &SimplexWeights, gamma: f64) -> f64 {
    exact_population_objective(p, inst, cls, gamma).1.into_iter().fold(0.0, |acc, g| acc.max(g.abs()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PacReport {
    pub out_policy: usize,
    /// Exact suboptimality of the returned policy.
    pub gap: Option<f64>,
    /// Empirical phase-2 variance of `R_i(π)` per policy.
    pub variance_audit: Vec<f64>,
    /// Exact `E[Σ_{y∈π(x)} r(y)/Q^γ_p̂(y|x)]` per policy.
    pub reward_ratio_audit: Option<Vec<f64>>,
    /// Exact `‖∇F(p̂)‖∞`.
    pub grad_inf_norm: Option<f64>,
    pub samples_used: usize,
    pub erm_calls: usize,
    pub uninformative_phase1: bool,
    pub p_hat: Vec<f64>,
    pub phase2: EstimatorSummary,
}

impl PacReport {
    pub fn max_policy_variance(&self) -> f64 {
        self.phase2.max_variance()
    }
}

/// End-to-end run on a known instance. The environment and the learner use
/// independent streams of `cfg.seed`.
pub fn pac_comband(inst: &Instance, cls: &PolicyClass, cfg: &PacConfig) -> Result<PacReport> {
    cfg.validate()?;
    check_compatible(inst, cls)?;
    let mut rng = derived_rng(cfg.seed, 0);
    let mut env = InstanceStream::new(inst, derived_rng(cfg.seed, 1));
    let mut oracle = ErmOracle::new(cls);
    let phase1 = run_phase1(&mut env, &mut oracle, cfg, &mut rng)?;
    let phase2 = run_phase2(&mut env, &mut oracle, &phase1.p_hat, cfg, &mut rng)?;
    debug_assert_eq!(env.drawn(), cfg.n1 + cfg.n2);

    let (gap, grad, ratio_audit) = if cfg.diagnostics {
        (
            Some(exact_gap_to_best(inst, cls, cls.policy(phase2.out_policy))),
            Some(exact_grad_inf_norm(inst, cls, &phase1.p_hat, cfg.gamma)),
            Some(reward_ratio_audit(inst, cls, &phase1.p_hat, cfg.gamma)),
        )
    } else {
        (None, None, None)
    };
    Ok(PacReport {
        out_policy: phase2.out_policy,
        gap,
        variance_audit: phase2.summary.variance.clone(),
        reward_ratio_audit: ratio_audit,
        grad_inf_norm: grad,
        samples_used: cfg.n1 + cfg.n2,
        erm_calls: oracle.calls(),
        uninformative_phase1: phase1.uninformative,
        p_hat: phase1.p_hat.into_vec(),
        phase2: phase2.summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleLabelReport {
    pub out_policy: usize,
    pub gap: Option<f64>,
    /// `|S|`, the number of phase-1 rounds whose uniform guess was correct.
    pub matched: usize,
    pub samples_used: usize,
    pub erm_calls: usize,
    pub warnings: Vec<String>,
    pub p_hat: Vec<f64>,
}

/// The single-label variant: phase 1 keeps only the rounds where a uniform
/// guess hit the true label and runs Frank-Wolfe on
/// `(1/|S|) Σ_{(x,y)∈S} −ln Q^γ_p(y|x)`; phase 2 is unchanged.
pub fn pac_single_label<E: Environment + ?Sized>(
    env: &mut E,
    oracle: &mut ErmOracle<'_>,
    cfg: &PacConfig,
    rng: &mut SeededRng,
) -> Result<SingleLabelReport> {
    cfg.validate()?;
    let cls = oracle.class();
    if cls.m() != 1 {
        return Err(Error::InvalidParameter(format!("single-label learning needs m = 1, got m = {}", cls.m())));
    }
    let mut matched = Vec::new();
    for i in 0..cfg.n1 {
        let (x, r) = next_round(env, cfg.n1, i)?;
        let guess = sample_uniform_action(cls.k(), 1, rng)?.members()[0];
        match r.get(guess) {
            1.0 => matched.push((x, guess)),
            0.0 => {}
            v => return Err(Error::NonBinaryReward { value: v }),
        }
    }
    let mut warnings = Vec::new();
    if matched.is_empty() {
        warnings.push("no phase-1 guess matched a true label; exploration distribution is degenerate".to_string());
    }
    let objective = BarrierObjective::from_single_label(&matched, cls, cfg.gamma);
    let fw = frank_wolfe_on(&objective, oracle, cfg.iterations, &SimplexWeights::delta(cls.len(), 0))?;
    let (data, _) = collect_phase2(env, cls, &fw.p, cfg.gamma, cfg.n2, true, rng)?;
    let (out_policy, _) = oracle.call(&data);
    Ok(SingleLabelReport {
        out_policy,
        gap: None,
        matched: matched.len(),
        samples_used: cfg.n1 + cfg.n2,
        erm_calls: oracle.calls(),
        warnings,
        p_hat: fw.p.into_vec(),
    })
}

/// [`pac_single_label`] on a known instance, filling in the exact gap.
pub fn pac_single_label_on(inst: &Instance, cls: &PolicyClass, cfg: &PacConfig) -> Result<SingleLabelReport> {
    check_compatible(inst, cls)?;
    let mut rng = derived_rng(cfg.seed, 0);
    let mut env = InstanceStream::new(inst, derived_rng(cfg.seed, 1));
    let mut oracle = ErmOracle::new(cls);
    let mut report = pac_single_label(&mut env, &mut oracle, cfg, &mut rng)?;
    if cfg.diagnostics {
        report.gap = Some(exact_gap_to_best(inst, cls, cls.policy(report.out_policy)));
    }
    Ok(report)
}
