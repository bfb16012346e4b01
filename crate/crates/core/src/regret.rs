//! Adversarial regret minimization over a policy class: FTRL with a hybrid
//! negative-entropy and log-barrier regularizer, fed by importance-weighted
//! loss estimates, and a plain exponential-weights baseline.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::Serialize;

use crate::domain::{marginals, sample_policy, ActionSubset, Context, PolicyClass, SimplexWeights, SPARSITY_TOL};
use crate::environments::{sample_round, Instance};
use crate::error::{Error, Result};

pub const OUTER_ITERATIONS: usize = 200;
pub const INNER_ITERATIONS: usize = 100;

/// An oblivious loss sequence: per round, a context and losses `ℓ ∈ [−1, 0]^K`
/// with `Σ_y ℓ(y)² ≤ s`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSequence {
    k: usize,
    s: f64,
    rounds: Vec<(Context, Vec<f64>)>,
}

impl LossSequence {
    pub fn new(k: usize, s: f64, rounds: Vec<(Context, Vec<f64>)>) -> Result<Self> {
        if k == 0 || !(s > 0.0) {
            return Err(Error::InvalidParameter(format!("need K ≥ 1 and s > 0, got K = {k}, s = {s}")));
        }
        for (t, (_, losses)) in rounds.iter().enumerate() {
            if losses.len() != k {
                return Err(Error::InvalidReward(format!("round {t} has {} losses, expected {k}", losses.len())));
            }
            if let Some(v) = losses.iter().find(|v| !(-1.0..=0.0).contains(*v)) {
                return Err(Error::InvalidReward(format!("round {t}: loss {v} outside [-1, 0]")));
            }
            let sq: f64 = losses.iter().map(|v| v * v).sum();
            if sq > s + SPARSITY_TOL {
                return Err(Error::InvalidReward(format!("round {t}: squared norm {sq} exceeds s = {s}")));
            }
        }
        Ok(Self { k, s, rounds })
    }

    /// `T` i.i.d. rounds of `inst`, with `ℓ = −r`.
    pub fn from_instance<R: Rng + ?Sized>(inst: &Instance, rounds: usize, rng: &mut R) -> Result<Self> {
        let rounds = (0..rounds)
            .map(|_| {
                let (x, r) = sample_round(inst, rng);
                (x, r.values().iter().map(|v| -v).collect())
            })
            .collect();
        Self::new(inst.k(), inst.s(), rounds)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    pub fn rounds(&self) -> &[(Context, Vec<f64>)] {
        &self.rounds
    }

    /// CSV with header `x,l0,…,l{K−1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x".to_string()];
        header.extend((0..self.k).map(|y| format!("l{y}")));
        w.write_record(&header)?;
        for (x, losses) in &self.rounds {
            let mut row = vec![x.0.to_string()];
            row.extend(losses.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the CSV layout of [`LossSequence::write_csv`]; `K` is taken from
    /// the header.
    pub fn read_csv<R: Read>(input: R, s: f64) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let k = reader.headers()?.len().saturating_sub(1);
        let mut rounds = Vec::new();
        for record in reader.records() {
            let record = record?;
            let parse_err = |field: &str| Error::InvalidReward(format!("unparseable field {field:?}"));
            let x = record.get(0).unwrap_or("");
            let x: usize = x.trim().parse().map_err(|_| parse_err(x))?;
            let losses = record
                .iter()
                .skip(1)
                .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err(f)))
                .collect::<Result<Vec<_>>>()?;
            rounds.push((Context(x), losses));
        }
        Self::new(k, s, rounds)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>, s: f64) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?, s)
    }
}

/// `h(p) = (1/η)(ln p + 1) − 1/(ν p)`, the derivative of the per-coordinate
/// regularizer.
fn regularizer_slope(p: f64, eta: f64, nu: f64) -> f64 {
    (p.ln() + 1.0) / eta - 1.0 / (nu * p)
}

/// `C·p + (1/η) Σ p ln p − (1/ν) Σ ln p`.
pub fn ftrl_objective(c: &[f64], eta: f64, nu: f64, p: &[f64]) -> f64 {
    c.iter().zip(p).map(|(&ci, &pi)| ci * pi + pi * pi.ln() / eta - pi.ln() / nu).sum()
}

/// Max-norm violation of the stationarity conditions at `p`, minimized over
/// the multiplier, combined with the simplex constraint violation.
pub fn kkt_residual(c: &[f64], eta: f64, nu: f64, p: &[f64]) -> f64 {
    if p.iter().any(|&pi| !(pi > 0.0)) {
        return f64::INFINITY;
    }
    let (lo, hi) = c
        .iter()
        .zip(p)
        .map(|(&ci, &pi)| ci + regularizer_slope(pi, eta, nu))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let sum: f64 = p.iter().sum();
    ((hi - lo) / 2.0).max((sum - 1.0).abs())
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtrlSolution {
    pub p: SimplexWeights,
    pub lambda: f64,
    pub outer_iterations: usize,
}

/// Solves `(1/η)(u + 1) − e^{−u}/ν = v` for `u = ln p`. The left side is
/// increasing and concave in `u`, so Newton iterates approach the root
/// monotonically from the left after at most one step.
fn solve_log_coordinate(v: f64, eta: f64, nu: f64) -> Result<f64> {
    let g = |u: f64| (u + 1.0) / eta - (-u).exp() / nu - v;
    // g(ηv − 1) < 0 always; when v < 0 the barrier alone pins u ≈ −ln(−νv)
    let mut lo = eta * v - 1.0;
    let mut hi = f64::INFINITY;
    let mut u = if v < 0.0 { lo.max(-(-nu * v).ln()) } else { lo };
    for _ in 0..INNER_ITERATIONS {
        let gu = g(u);
        if gu == 0.0 {
            return Ok(u);
        }
        if gu < 0.0 {
            lo = lo.max(u);
        } else {
            hi = hi.min(u);
        }
        let slope = 1.0 / eta + (-u).exp() / nu;
        let mut next = u - gu / slope;
        if !(next > lo && next < hi) {
            next = if hi.is_finite() { 0.5 * (lo + hi) } else { lo + 1.0 };
        }
        if (next - u).abs() <= 4.0 * f64::EPSILON * u.abs().max(1.0) {
            return Ok(next);
        }
        u = next;
    }
    Err(Error::SolverNonConvergence { iterations: INNER_ITERATIONS, residual: g(u).abs() })
}

/// The unique interior minimizer of
/// `C·p + (1/η) Σ p ln p − (1/ν) Σ ln p` over the simplex.
///
/// Bisection on the multiplier `λ`, accelerated by Newton steps that stay
/// inside the bracket; each coordinate is recovered from `λ` by
/// [`solve_log_coordinate`].
///
/// # Panics
/// If `c` is empty or non-finite, or `eta`, `nu` are not positive.
pub fn ftrl_solve(c: &[f64], eta: f64, nu: f64) -> Result<FtrlSolution> {
    assert!(!c.is_empty(), "FTRL over an empty policy class");
    assert!(c.iter().all(|v| v.is_finite()), "non-finite cumulative loss");
    assert!(eta > 0.0 && nu > 0.0, "eta and nu must be positive");
    let n = c.len();
    if n == 1 {
        return Ok(FtrlSolution {
            p: SimplexWeights::uniform(1),
            lambda: -c[0] - regularizer_slope(1.0, eta, nu),
            outer_iterations: 0,
        });
    }
    let h_uniform = regularizer_slope(1.0 / n as f64, eta, nu);
    let (cmin, cmax) = c.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    // every p_i ≥ 1/n at λ_lo, every p_i ≤ 1/n at λ_hi
    let mut lo = -cmax - h_uniform;
    let mut hi = -cmin - h_uniform;
    let mut lambda = 0.5 * (lo + hi);
    let mut u = vec![0.0; n];
    for iteration in 1..=OUTER_ITERATIONS {
        for (ui, &ci) in u.iter_mut().zip(c) {
            *ui = solve_log_coordinate(-ci - lambda, eta, nu)?;
        }
        // Newton on ln Σ p_i(λ), which is close to linear in λ when the
        // entropy term dominates
        let umax = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let scaled: f64 = u.iter().map(|&ui| (ui - umax).exp()).sum();
        let log_total = umax + scaled.ln();
        let slope: f64 = -u.iter().map(|&ui| (ui - log_total).exp() / (1.0 / eta + (-ui).exp() / nu)).sum::<f64>();
        if log_total.abs() <= 2.0 * n as f64 * f64::EPSILON || hi - lo <= 4.0 * f64::EPSILON * lambda.abs().max(1.0) {
            return Ok(FtrlSolution {
                p: SimplexWeights::new(u.iter().map(|ui| ui.exp()).collect())?,
                lambda,
                outer_iterations: iteration,
            });
        }
        if log_total > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        let mut next = lambda - log_total / slope;
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        lambda = next;
    }
    let p: Vec<f64> = u.iter().map(|ui| ui.exp()).collect();
    Err(Error::SolverNonConvergence { iterations: OUTER_ITERATIONS, residual: kkt_residual(c, eta, nu, &p) })
}

/// Exponential weights `p ∝ exp(−η C)`, the minimizer of
/// `C·p + (1/η) Σ p ln p`.
pub fn entropy_weights(c: &[f64], eta: f64) -> SimplexWeights {
    assert!(!c.is_empty(), "exponential weights over an empty policy class");
    assert!(c.iter().all(|v| v.is_finite()), "non-finite cumulative loss");
    let cmin = c.iter().copied().fold(f64::INFINITY, f64::min);
    let weights: Vec<f64> = c.iter().map(|&ci| (-eta * (ci - cmin)).exp()).collect();
    let total: f64 = weights.iter().sum();
    SimplexWeights::from_raw(weights.into_iter().map(|w| w / total).collect())
}

/// `ĉ(i) = Σ_{y∈π_i(x)} ℓ(y) 1{y∈a} / Q(y)` with `Q(y) = Σ_i p(i) 1{y∈π_i(x)}`.
///
/// # Panics
/// If an observed action has `Q(y) = 0`, which cannot happen when `a` was
/// played by a policy drawn from `p`.
pub fn loss_estimate(
    p: &SimplexWeights,
    cls: &PolicyClass,
    x: Context,
    a: &ActionSubset,
    observed: &[(usize, f64)],
) -> Vec<f64> {
    let q = marginals(p, cls, x);
    let mut dense = vec![0.0; cls.k()];
    for &(y, loss) in observed {
        assert!(a.contains(y), "loss observed for action {y} outside the played subset");
        assert!(q[y] > 0.0, "observed action {y} has zero inclusion probability");
        dense[y] = loss / q[y];
    }
    (0..cls.len()).map(|j| cls.action(j, x).members().iter().map(|&y| dense[y]).sum()).collect()
}

/// `Σ_{y∈a} ℓ(y)`.
fn subset_loss(a: &ActionSubset, losses: &[f64]) -> f64 {
    a.members().iter().map(|&y| losses[y]).sum()
}

/// Cumulative state of the hybrid-regularized FTRL learner.
#[derive(Debug, Clone)]
pub struct FtrlState {
    pub cumulative_loss: Vec<f64>,
    pub p: SimplexWeights,
    pub eta: f64,
    pub nu: f64,
    pub round: usize,
}

impl FtrlState {
    pub fn new(n_policies: usize, eta: f64, nu: f64) -> Result<Self> {
        if n_policies == 0 {
            return Err(Error::InvalidPolicyClass("empty policy class".into()));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
        }
        if !(nu > 0.0 && nu <= 1.0 / 16.0) {
            return Err(Error::InvalidParameter(format!("nu must lie in (0, 1/16], got {nu}")));
        }
        Ok(Self { cumulative_loss: vec![0.0; n_policies], p: SimplexWeights::uniform(n_policies), eta, nu, round: 0 })
    }

    /// Adds `c_hat` and re-solves; returns `max_i p_{t+1}(i)/p_t(i)`.
    pub fn update(&mut self, c_hat: &[f64]) -> Result<f64> {
        for (c, v) in self.cumulative_loss.iter_mut().zip(c_hat) {
            *c += v;
        }
        let next = ftrl_solve(&self.cumulative_loss, self.eta, self.nu)?.p;
        let ratio = max_ratio(&self.p, &next);
        self.p = next;
        self.round += 1;
        Ok(ratio)
    }
}

fn max_ratio(prev: &SimplexWeights, next: &SimplexWeights) -> f64 {
    prev.as_slice().iter().zip(next.as_slice()).map(|(a, b)| b / a).fold(0.0, f64::max)
}

/// `η = √(ln|Π| / (m s T))`, or 1 when the class is a singleton.
pub fn default_eta(n_policies: usize, m: usize, s: f64, horizon: usize) -> f64 {
    tuned_eta(n_policies, m as f64 * s, horizon)
}

/// `η = √(ln|Π| / (m K T))`, the exponential-weights tuning without sparsity.
pub fn default_baseline_eta(n_policies: usize, m: usize, k: usize, horizon: usize) -> f64 {
    tuned_eta(n_policies, (m * k) as f64, horizon)
}

fn tuned_eta(n_policies: usize, scale: f64, horizon: usize) -> f64 {
    let log_n = (n_policies as f64).ln();
    if log_n <= 0.0 || horizon == 0 {
        return 1.0;
    }
    (log_n / (scale * horizon as f64)).sqrt()
}

pub const DEFAULT_NU: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegretStep {
    pub t: usize,
    pub loss: f64,
    pub regret: f64,
    /// `min_i p_t(i)` of the distribution played at round `t`.
    pub min_p: f64,
    /// `max_i p_{t+1}(i) / p_t(i)`.
    pub max_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct RegretRun {
    pub actions: Vec<ActionSubset>,
    pub policies: Vec<usize>,
    pub trace: Vec<RegretStep>,
    pub final_p: SimplexWeights,
}

impl RegretRun {
    pub fn terminal_regret(&self) -> f64 {
        self.trace.last().map_or(0.0, |s| s.regret)
    }

    pub fn max_ratio(&self) -> f64 {
        self.trace.iter().map(|s| s.max_ratio).fold(0.0, f64::max)
    }

    pub fn min_p(&self) -> f64 {
        self.trace.iter().map(|s| s.min_p).fold(1.0, f64::min)
    }
}

/// Learner loss minus the best fixed policy's loss, after each round.
/// Summation order matches the incremental trace, so the final values agree
/// exactly.
pub fn recompute_regret(seq: &LossSequence, cls: &PolicyClass, actions: &[ActionSubset]) -> Vec<f64> {
    let mut learner = 0.0;
    let mut policy = vec![0.0; cls.len()];
    actions
        .iter()
        .zip(seq.rounds())
        .map(|(a, (x, losses))| {
            learner += subset_loss(a, losses);
            for (j, total) in policy.iter_mut().enumerate() {
                *total += subset_loss(cls.action(j, *x), losses);
            }
            learner - policy.iter().copied().fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn run_ftrl<R, F>(seq: &LossSequence, cls: &PolicyClass, horizon: usize, rng: &mut R, mut step: F) -> Result<RegretRun>
where
    R: Rng + ?Sized,
    F: FnMut(&SimplexWeights, &[f64]) -> Result<SimplexWeights>,
{
    if seq.k() != cls.k() {
        return Err(Error::InvalidInstance(format!("loss sequence has K = {}, policy class K = {}", seq.k(), cls.k())));
    }
    if horizon > seq.len() {
        return Err(Error::EnvironmentExhausted { needed: horizon, got: seq.len() });
    }
    let mut p = SimplexWeights::uniform(cls.len());
    let mut learner = 0.0;
    let mut policy = vec![0.0; cls.len()];
    let mut run = RegretRun {
        actions: Vec::with_capacity(horizon),
        policies: Vec::with_capacity(horizon),
        trace: Vec::with_capacity(horizon),
        final_p: p.clone(),
    };
    for (t, (x, losses)) in seq.rounds()[..horizon].iter().enumerate() {
        cls.check_context(*x);
        let j = sample_policy(&p, rng);
        let a = cls.action(j, *x).clone();
        let observed: Vec<(usize, f64)> = a.members().iter().map(|&y| (y, losses[y])).collect();
        let c_hat = loss_estimate(&p, cls, *x, &a, &observed);
        let next = step(&p, &c_hat)?;

        let loss = subset_loss(&a, losses);
        learner += loss;
        for (i, total) in policy.iter_mut().enumerate() {
            *total += subset_loss(cls.action(i, *x), losses);
        }
        run.trace.push(RegretStep {
            t: t + 1,
            loss,
            regret: learner - policy.iter().copied().fold(f64::INFINITY, f64::min),
            min_p: p.as_slice().iter().copied().fold(1.0, f64::min),
            max_ratio: max_ratio(&p, &next),
        });
        run.actions.push(a);
        run.policies.push(j);
        p = next;
    }
    run.final_p = p;
    Ok(run)
}

/// EXP4 over combinatorial actions with the hybrid entropy + log-barrier
/// regularizer, on the first `horizon` rounds of `seq`.
pub fn exp4_comb_sparse<R: Rng + ?Sized>(
    seq: &LossSequence,
    cls: &PolicyClass,
    horizon: usize,
    eta: f64,
    nu: f64,
    rng: &mut R,
) -> Result<RegretRun> {
    let mut state = FtrlState::new(cls.len(), eta, nu)?;
    run_ftrl(seq, cls, horizon, rng, |_, c_hat| {
        state.update(c_hat)?;
        Ok(state.p.clone())
    })
}

/// The same loop with the barrier removed: exponential weights.
pub fn exp4_entropy_baseline<R: Rng + ?Sized>(
    seq: &LossSequence,
    cls: &PolicyClass,
    horizon: usize,
    eta: f64,
    rng: &mut R,
) -> Result<RegretRun> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!("eta must be positive, got {eta}")));
    }
    let mut cumulative = vec![0.0; cls.len()];
    run_ftrl(seq, cls, horizon, rng, |_, c_hat| {
        for (c, v) in cumulative.iter_mut().zip(c_hat) {
            *c += v;
        }
        Ok(entropy_weights(&cumulative, eta))
    })
}

/// Header `t,loss,regret,min_p,max_ratio`.
pub fn write_regret_trace_csv<W: Write>(trace: &[RegretStep], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for step in trace {
        w.serialize(step)?;
    }
    if trace.is_empty() {
        w.write_record(["t", "loss", "regret", "min_p", "max_ratio"])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{seeded_rng, Policy};
    use crate::environments::random_sparse_instance;

    fn subset(m: &[usize], k: usize) -> ActionSubset {
        ActionSubset::new(m.iter().copied(), k).unwrap()
    }

    #[test]
    fn solver_trivial_cases() {
        let sol = ftrl_solve(&[3.0], 0.5, DEFAULT_NU).unwrap();
        assert_eq!(sol.p.as_slice(), &[1.0]);
        let sol = ftrl_solve(&[2.0; 5], 0.5, DEFAULT_NU).unwrap();
        for &p in sol.p.as_slice() {
            assert!((p - 0.2).abs() < 1e-14);
        }
    }

    #[test]
    fn solver_two_policies_matches_golden_section() {
        let c = [0.0, 1.0];
        let (eta, nu) = (1.0, DEFAULT_NU);
        let f = |q: f64| ftrl_objective(&c, eta, nu, &[q, 1.0 - q]);
        let (mut a, mut b) = (1e-12, 1.0 - 1e-12);
        let ratio = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = b - ratio * (b - a);
            let x2 = a + ratio * (b - a);
            if f(x1) < f(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        let sol = ftrl_solve(&c, eta, nu).unwrap();
        assert!((sol.p.get(0) - 0.5 * (a + b)).abs() < 1e-6);
        assert!(sol.p.get(0) > 0.5);
    }

    #[test]
    fn solver_kkt_and_objective_sanity() {
        let mut rng = seeded_rng(5);
        for _ in 0..200 {
            let n = rng.gen_range(2..12);
            let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-500.0..0.0)).collect();
            let eta = 10f64.powf(rng.gen_range(-3.0..0.0));
            let sol = ftrl_solve(&c, eta, DEFAULT_NU).unwrap();
            assert!(kkt_residual(&c, eta, DEFAULT_NU, sol.p.as_slice()) <= 1e-8);
            let uniform = vec![1.0 / n as f64; n];
            assert!(
                ftrl_objective(&c, eta, DEFAULT_NU, sol.p.as_slice())
                    <= ftrl_objective(&c, eta, DEFAULT_NU, &uniform) + 1e-9
            );
        }
    }

    #[test]
    fn entropy_weights_match_multiplicative_updates() {
        let mut rng = seeded_rng(6);
        let eta = 0.3;
        let mut w = vec![1.0; 4];
        let mut c = vec![0.0; 4];
        for _ in 0..50 {
            let step: Vec<f64> = (0..4).map(|_| -rng.gen::<f64>()).collect();
            for i in 0..4 {
                w[i] *= (-eta * step[i]).exp();
                c[i] += step[i];
            }
        }
        let total: f64 = w.iter().sum();
        for (a, b) in entropy_weights(&c, eta).as_slice().iter().zip(&w) {
            assert!((a - b / total).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_estimate_trivial_cases() {
        let cls = PolicyClass::new(vec![Policy::new(vec![subset(&[0, 2], 3)]).unwrap()], 3, 2).unwrap();
        let p = SimplexWeights::uniform(1);
        let a = subset(&[0, 2], 3);
        assert_eq!(loss_estimate(&p, &cls, Context(0), &a, &[(0, -0.25), (2, -0.5)]), vec![-0.75]);
        assert_eq!(loss_estimate(&p, &cls, Context(0), &a, &[(0, 0.0), (2, 0.0)]), vec![0.0]);
    }

    #[test]
    fn loss_estimate_is_unbiased_by_enumeration() {
        let k = 4;
        let cls = PolicyClass::new(
            vec![
                Policy::new(vec![subset(&[0, 1], k)]).unwrap(),
                Policy::new(vec![subset(&[1, 2], k)]).unwrap(),
                Policy::new(vec![subset(&[2, 3], k)]).unwrap(),
            ],
            k,
            2,
        )
        .unwrap();
        let p = SimplexWeights::new(vec![0.2, 0.5, 0.3]).unwrap();
        let losses = [-0.1, -0.7, -0.4, -0.9];
        let mut expected = [0.0; 3];
        for j in 0..3 {
            let a = cls.action(j, Context(0));
            let observed: Vec<_> = a.members().iter().map(|&y| (y, losses[y])).collect();
            for (e, v) in expected.iter_mut().zip(loss_estimate(&p, &cls, Context(0), a, &observed)) {
                *e += p.get(j) * v;
            }
        }
        for (j, e) in expected.iter().enumerate() {
            let truth = subset_loss(cls.action(j, Context(0)), &losses);
            assert!((e - truth).abs() < 1e-12);
        }
    }

    fn toy_sequence(seed: u64, t: usize) -> (LossSequence, PolicyClass) {
        let mut rng = seeded_rng(seed);
        let (inst, cls) = random_sparse_instance(6, 2, 2.0, 3, 4, &mut rng).unwrap();
        (LossSequence::from_instance(&inst, t, &mut rng).unwrap(), cls)
    }

    #[test]
    fn singleton_class_has_zero_regret() {
        let mut rng = seeded_rng(7);
        let (inst, _) = random_sparse_instance(5, 2, 2.0, 2, 3, &mut rng).unwrap();
        let cls =
            PolicyClass::new(vec![Policy::new(vec![subset(&[0, 1], 5), subset(&[2, 3], 5)]).unwrap()], 5, 2).unwrap();
        let seq = LossSequence::from_instance(&inst, 200, &mut rng).unwrap();
        let run = exp4_comb_sparse(&seq, &cls, 200, 0.1, DEFAULT_NU, &mut rng).unwrap();
        assert!(run.trace.iter().all(|s| s.regret == 0.0));
        let run = exp4_entropy_baseline(&seq, &cls, 200, 0.1, &mut rng).unwrap();
        assert!(run.trace.iter().all(|s| s.regret == 0.0));
    }

    #[test]
    fn empty_horizon_gives_empty_traces() {
        let (seq, cls) = toy_sequence(8, 10);
        let run = exp4_comb_sparse(&seq, &cls, 0, 0.1, DEFAULT_NU, &mut seeded_rng(0)).unwrap();
        assert!(run.trace.is_empty() && run.actions.is_empty());
        assert!(exp4_comb_sparse(&seq, &cls, 11, 0.1, DEFAULT_NU, &mut seeded_rng(0)).is_err());
    }

    #[test]
    fn zero_losses_keep_baseline_uniform() {
        let (_, cls) = toy_sequence(9, 1);
        let seq = LossSequence::new(6, 1.0, vec![(Context(1), vec![0.0; 6]); 30]).unwrap();
        let run = exp4_entropy_baseline(&seq, &cls, 30, 0.5, &mut seeded_rng(1)).unwrap();
        assert_eq!(run.final_p, SimplexWeights::uniform(cls.len()));
    }

    #[test]
    fn regret_trace_is_reproducible_from_actions() {
        let (seq, cls) = toy_sequence(10, 500);
        let run = exp4_comb_sparse(&seq, &cls, 500, 0.2, DEFAULT_NU, &mut seeded_rng(2)).unwrap();
        let recomputed = recompute_regret(&seq, &cls, &run.actions);
        assert_eq!(recomputed.last().copied(), Some(run.terminal_regret()));
        assert!(run.min_p() > 0.0);
        assert!(run.max_ratio() <= 2.0 * (1.0 + 1e-6));
    }

    #[test]
    fn loss_sequence_validation_and_csv_roundtrip() {
        assert!(LossSequence::new(2, 1.0, vec![(Context(0), vec![0.5, 0.0])]).is_err());
        assert!(LossSequence::new(2, 1.0, vec![(Context(0), vec![-1.0, -1.0])]).is_err());
        let (seq, _) = toy_sequence(11, 20);
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        assert_eq!(LossSequence::read_csv(buf.as_slice(), seq.s()).unwrap(), seq);
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_regret_trace_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().trim(), "t,loss,regret,min_p,max_ratio");
        let (seq, cls) = toy_sequence(12, 5);
        let run = exp4_comb_sparse(&seq, &cls, 5, 0.2, DEFAULT_NU, &mut seeded_rng(3)).unwrap();
        let mut buf = Vec::new();
        write_regret_trace_csv(&run.trace, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,loss,regret,min_p,max_ratio\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
