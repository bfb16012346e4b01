//! Experiment configuration, seeded trial sweeps and tidy output.
//!
//! Trials run on a rayon pool. Each trial draws from its own stream of the
//! experiment seed and results are collected in trial order, so outputs do
//! not depend on the thread count.

use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{
    all_subsets, derived_rng, marginals, sample_uniform_action, smooth, ActionSubset, Context, Policy, PolicyClass,
    SeededRng,
};
use crate::environments::{
    best_policy, check_compatible, exact_gap_to_best, exact_policy_rewards, list_instance_to_rewards,
    load_policy_class, lower_bound_instance, random_list_instance, random_sparse_instance, sample_round, ContextLaw,
    Instance, LowerBoundSpec, RewardLaw,
};
use crate::error::{Error, Result};
use crate::objective::{exact_population_objective, population_minimizer};
use crate::pac::{exact_estimator_moments, pac_comband, pac_single_label_on, reward_ratio_audit, PacConfig};
use crate::regret::{
    default_baseline_eta, default_eta, exp4_comb_sparse, exp4_entropy_baseline, write_regret_trace_csv, LossSequence,
    RegretRun, DEFAULT_NU,
};

pub const REPORT_VERSION: u32 = 1;

/// Overrides the configured output directory when set.
pub const OUT_DIR_VAR: &str = "SEMIBANDIT_OUT";

/// Stream of the experiment seed used for instance generation; trial `i`
/// uses streams `2i + 1` (environment) and `2i + 2` (learner).
const GENERATOR_STREAM: u64 = 0;

fn trial_rngs(seed: u64, trial: usize) -> (SeededRng, SeededRng) {
    let base = 2 * trial as u64;
    (derived_rng(seed, base + 1), derived_rng(seed, base + 2))
}

fn trial_seed(seed: u64, trial: usize) -> u64 {
    trial_rngs(seed, trial).1.gen()
}

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] Error),
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Runtime(_) => 3,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "E_CONFIG",
            Self::Runtime(e) => error_code(e),
        }
    }
}

/// Stable machine-readable code for an algorithm or I/O error.
pub fn error_code(e: &Error) -> &'static str {
    match e {
        Error::Io(_) => "E_IO",
        Error::Json(_) => "E_JSON",
        Error::Csv(_) => "E_CSV",
        Error::UnsupportedVersion(_) => "E_VERSION",
        Error::EnvironmentExhausted { .. } => "E_EXHAUSTED",
        Error::SolverNonConvergence { .. } => "E_SOLVER",
        Error::NonBinaryReward { .. } => "E_NON_BINARY",
        Error::EmptyBatch => "E_EMPTY_BATCH",
        Error::ZeroInclusion { .. } => "E_ZERO_INCLUSION",
        Error::InvalidSubset(_)
        | Error::InvalidReward(_)
        | Error::InvalidSimplex(_)
        | Error::InvalidPolicyClass(_)
        | Error::InvalidInstance(_)
        | Error::InvalidParameter(_) => "E_INPUT",
    }
}

type ExpResult<T> = std::result::Result<T, ExperimentError>;

fn config_err(msg: impl fmt::Display) -> ExperimentError {
    ExperimentError::Config(msg.to_string())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Pac,
    PacSingleLabel,
    Regret,
    RegretBaseline,
    LowerBoundSanity,
    Diagnose,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Pac => "pac",
            Self::PacSingleLabel => "pac-single-label",
            Self::Regret => "regret",
            Self::RegretBaseline => "regret-baseline",
            Self::LowerBoundSanity => "lower-bound-sanity",
            Self::Diagnose => "diagnose",
        }
    }
}

/// A family of stochastic instances where only the sparsity varies.
///
/// Every context carries a fixed 0/1 reward vector with exactly `s` ones.
/// One policy plays a designated subset `A*_x`; the others play subsets
/// disjoint from it. The number of rewarded actions inside `A*_x` is drawn
/// so that the designed per-round gap between the best policy and every
/// other policy equals `gap` for all `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub k: usize,
    pub m: usize,
    pub n_contexts: usize,
    pub n_policies: usize,
    pub gap: f64,
    pub seed: u64,
}

impl SparseFamily {
    /// Expected number of rewarded actions inside `A*_x`.
    fn hits_in_best(&self, s: usize) -> f64 {
        let (k, m) = (self.k as f64, self.m as f64);
        (self.gap + m * s as f64 / (k - m)) / (1.0 + m / (k - m))
    }

    /// `(instance, class, index of the designed best policy)`.
    pub fn instance(&self, s: f64) -> Result<(Instance, PolicyClass, usize)> {
        let (k, m) = (self.k, self.m);
        if s.fract() != 0.0 || s < 1.0 || s > k as f64 {
            return Err(Error::InvalidParameter(format!("family sparsity must be an integer in [1, K], got {s}")));
        }
        if m == 0 || 2 * m > k || self.n_contexts == 0 || self.n_policies < 2 || !(self.gap > 0.0) {
            return Err(Error::InvalidParameter(format!("invalid sparse family {self:?}")));
        }
        let s_int = s as usize;
        let hits = self.hits_in_best(s_int);
        if hits > m.min(s_int) as f64 || s - hits > (k - m) as f64 {
            return Err(Error::InvalidParameter(format!("gap {} unreachable at s = {s}", self.gap)));
        }

        let mut class_rng = derived_rng(self.seed, 0);
        let best = class_rng.gen_range(0..self.n_policies);
        let mut tables = vec![Vec::with_capacity(self.n_contexts); self.n_policies];
        let mut favoured = Vec::with_capacity(self.n_contexts);
        for _ in 0..self.n_contexts {
            let star = sample_uniform_action(k, m, &mut class_rng)?;
            let rest: Vec<usize> = (0..k).filter(|y| !star.contains(*y)).collect();
            for (j, table) in tables.iter_mut().enumerate() {
                let a = if j == best {
                    star.clone()
                } else {
                    let pick = sample_uniform_action(rest.len(), m, &mut class_rng)?;
                    ActionSubset::new(pick.members().iter().map(|&i| rest[i]), k)?
                };
                table.push(a);
            }
            favoured.push((star, rest));
        }
        let policies = tables.into_iter().map(Policy::new).collect::<Result<Vec<_>>>()?;
        let cls = PolicyClass::new(policies, k, m)?;

        let mut reward_rng = derived_rng(self.seed, 1);
        let prob = 1.0 / self.n_contexts as f64;
        let mut contexts = Vec::with_capacity(self.n_contexts);
        for (star, rest) in &favoured {
            let inside = hits.floor() as usize + usize::from(reward_rng.gen::<f64>() < hits.fract());
            let mut r = vec![0.0; k];
            for i in sample_indices(&mut reward_rng, m, inside) {
                r[star.members()[i]] = 1.0;
            }
            for i in sample_indices(&mut reward_rng, rest.len(), s_int - inside) {
                r[rest[i]] = 1.0;
            }
            contexts.push(ContextLaw { prob, law: RewardLaw::Fixed(crate::domain::RewardVector::new(r, s)?) });
        }
        Ok((Instance::new(k, m, s, contexts)?, cls, best))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceSource {
    Files {
        instance: PathBuf,
        policies: PathBuf,
    },
    Random {
        #[serde(rename = "K")]
        k: usize,
        m: usize,
        s: f64,
        n_contexts: usize,
        n_policies: usize,
    },
    List {
        #[serde(rename = "K")]
        k: usize,
        m: usize,
        s: usize,
        n_contexts: usize,
        n_policies: usize,
    },
    SparseFamily {
        #[serde(rename = "K")]
        k: usize,
        m: usize,
        s: f64,
        n_contexts: usize,
        n_policies: usize,
        gap: f64,
    },
}

impl InstanceSource {
    /// Loads or generates the instance; generators draw from `seed`'s
    /// generator stream.
    pub fn materialize(&self, seed: u64) -> Result<(Instance, PolicyClass)> {
        let mut rng = derived_rng(seed, GENERATOR_STREAM);
        let (inst, cls) = match self {
            Self::Files { instance, policies } => (Instance::load(instance)?, load_policy_class(policies)?),
            Self::Random { k, m, s, n_contexts, n_policies } => {
                random_sparse_instance(*k, *m, *s, *n_contexts, *n_policies, &mut rng)?
            }
            Self::List { k, m, s, n_contexts, n_policies } => {
                random_list_problem(*k, *m, *s, *n_contexts, *n_policies, &mut rng)?
            }
            Self::SparseFamily { .. } => {
                let (inst, cls, _) = self.family(seed).expect("sparse family source").instance(self.sparsity())?;
                (inst, cls)
            }
        };
        check_compatible(&inst, &cls)?;
        Ok((inst, cls))
    }

    fn family(&self, seed: u64) -> Option<SparseFamily> {
        match *self {
            Self::SparseFamily { k, m, n_contexts, n_policies, gap, .. } => {
                Some(SparseFamily { k, m, n_contexts, n_policies, gap, seed })
            }
            _ => None,
        }
    }

    fn sparsity(&self) -> f64 {
        match self {
            Self::Random { s, .. } | Self::SparseFamily { s, .. } => *s,
            Self::List { s, .. } => *s as f64,
            Self::Files { .. } => f64::NAN,
        }
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let Self::Files { instance, policies } = self {
            *instance = base.join(&*instance);
            *policies = base.join(&*policies);
        }
    }
}

/// A list-classification instance together with a class of random
/// hypotheses and one hypothesis that always predicts true labels first.
pub fn random_list_problem<R: Rng + ?Sized>(
    k: usize,
    m: usize,
    s: usize,
    n_contexts: usize,
    n_policies: usize,
    rng: &mut R,
) -> Result<(Instance, PolicyClass)> {
    if n_policies == 0 || m == 0 || m > k {
        return Err(Error::InvalidParameter(format!("list problem needs 1 ≤ m ≤ K and policies (m = {m})")));
    }
    let lci = random_list_instance(k, m, s, n_contexts, rng)?;
    let inst = list_instance_to_rewards(&lci)?;
    let best_slot = rng.gen_range(0..n_policies);
    let mut policies = Vec::with_capacity(n_policies);
    for j in 0..n_policies {
        let table = if j == best_slot {
            lci.contexts
                .iter()
                .map(|(_, labels)| {
                    let mut members: Vec<usize> = labels.iter().copied().take(m).collect();
                    members.extend((0..k).filter(|y| !labels.contains(y)).take(m - members.len()));
                    ActionSubset::new(members, k)
                })
                .collect::<Result<Vec<_>>>()?
        } else {
            (0..n_contexts).map(|_| sample_uniform_action(k, m, rng)).collect::<Result<Vec<_>>>()?
        };
        policies.push(Policy::new(table)?);
    }
    Ok((inst, PolicyClass::new(policies, k, m)?))
}

/// Raw PAC parameters, or a preset with the guarantee's asymptotic shape
/// whose fields are individually overridable.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacParams {
    #[serde(rename = "N1")]
    pub n1: Option<usize>,
    #[serde(rename = "N2")]
    pub n2: Option<usize>,
    #[serde(rename = "T")]
    pub iterations: Option<usize>,
    pub gamma: Option<f64>,
    pub preset: Option<PacPreset>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PacPreset {
    pub c: f64,
    pub eps: f64,
    pub delta: f64,
}

impl PacParams {
    pub fn resolve(&self, kind: ExperimentKind, inst: &Instance, n_policies: usize, seed: u64) -> ExpResult<PacConfig> {
        let base = match self.preset {
            Some(p) if kind == ExperimentKind::PacSingleLabel => {
                Some(PacConfig::single_label_shaped(inst.k(), p.eps, p.delta, n_policies, p.c, seed)?)
            }
            Some(p) => {
                Some(PacConfig::theorem_shaped(inst.k(), inst.m(), inst.s(), p.eps, p.delta, n_policies, p.c, seed)?)
            }
            None => None,
        };
        let pick = |given: Option<usize>, preset: Option<usize>, name: &str| {
            given.or(preset).ok_or_else(|| config_err(format!("pac.{name} is required without a preset")))
        };
        let cfg = PacConfig {
            n1: pick(self.n1, base.map(|b| b.n1), "N1")?,
            n2: pick(self.n2, base.map(|b| b.n2), "N2")?,
            iterations: pick(self.iterations, base.map(|b| b.iterations), "T")?,
            gamma: self.gamma.unwrap_or(0.5),
            seed,
            diagnostics: true,
        };
        cfg.validate().map_err(|e| config_err(format!("pac: {e}")))?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegretParams {
    /// Horizon `T`; defaults to the loss file's length.
    #[serde(rename = "T")]
    pub horizon: Option<usize>,
    pub eta: Option<f64>,
    pub nu: Option<f64>,
    /// Sweep the sparsity of a `sparse-family` source over these values.
    pub s_values: Option<Vec<f64>>,
    /// Precomputed oblivious loss sequence; replaces instance sampling.
    pub losses: Option<PathBuf>,
    #[serde(default)]
    pub write_traces: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundGridPoint {
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub s: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LowerBoundParams {
    pub specs: Vec<LowerBoundGridPoint>,
    pub horizons: Vec<usize>,
    #[serde(default = "default_violation_horizon")]
    pub violation_horizon: usize,
}

fn default_violation_horizon() -> usize {
    1000
}

fn one() -> u32 {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "one")]
    pub version: u32,
    pub kind: ExperimentKind,
    #[serde(default)]
    pub instance: Option<InstanceSource>,
    #[serde(default)]
    pub pac: Option<PacParams>,
    #[serde(default)]
    pub regret: Option<RegretParams>,
    #[serde(default)]
    pub lower_bound: Option<LowerBoundParams>,
    /// Success threshold: PAC rows get `success = 1{gap ≤ eps}`.
    #[serde(default)]
    pub eps: Option<f64>,
    pub trials: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> ExpResult<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| config_err(format!("invalid config: {e}")))?;
        Ok(cfg)
    }

    /// Parses and validates a config file. Relative paths inside it are
    /// resolved against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> ExpResult<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(src) = cfg.instance.as_mut() {
            src.resolve_paths(base);
        }
        if let Some(losses) = cfg.regret.as_mut().and_then(|r| r.losses.as_mut()) {
            *losses = base.join(&*losses);
        }
        if cfg.output_dir.is_relative() {
            cfg.output_dir = base.join(&cfg.output_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> ExpResult<()> {
        if self.version != REPORT_VERSION {
            return Err(config_err(format!("unsupported config version {}", self.version)));
        }
        if self.trials == 0 {
            return Err(config_err("trials must be at least 1"));
        }
        let needs_instance = !matches!(self.kind, ExperimentKind::LowerBoundSanity);
        match &self.instance {
            None if needs_instance => return Err(config_err(format!("{} needs an instance", self.kind.name()))),
            Some(InstanceSource::Files { instance, policies }) => {
                for p in [instance, policies] {
                    if !p.is_file() {
                        return Err(config_err(format!("referenced file {} does not exist", p.display())));
                    }
                }
            }
            _ => {}
        }
        match self.kind {
            ExperimentKind::Pac | ExperimentKind::PacSingleLabel if self.pac.is_none() => {
                Err(config_err("pac experiments need a \"pac\" section"))
            }
            ExperimentKind::Regret | ExperimentKind::RegretBaseline => {
                let r =
                    self.regret.as_ref().ok_or_else(|| config_err("regret experiments need a \"regret\" section"))?;
                if let Some(p) = &r.losses {
                    if !p.is_file() {
                        return Err(config_err(format!("referenced file {} does not exist", p.display())));
                    }
                }
                if r.losses.is_none() && r.horizon.is_none() {
                    return Err(config_err("regret.T is required without a loss file"));
                }
                if r.s_values.is_some() && !matches!(self.instance, Some(InstanceSource::SparseFamily { .. })) {
                    return Err(config_err("regret.s_values needs a sparse-family instance"));
                }
                Ok(())
            }
            ExperimentKind::LowerBoundSanity => {
                let lb = self
                    .lower_bound
                    .as_ref()
                    .ok_or_else(|| config_err("lower-bound-sanity needs a \"lower_bound\" section"))?;
                if lb.specs.is_empty() || lb.horizons.is_empty() {
                    return Err(config_err("lower_bound.specs and lower_bound.horizons must be nonempty"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `SEMIBANDIT_OUT` if set, else `output_dir`.
    pub fn resolved_output_dir(&self) -> PathBuf {
        std::env::var_os(OUT_DIR_VAR).map(PathBuf::from).unwrap_or_else(|| self.output_dir.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    fn as_f64(&self) -> Option<f64> {
        match *self {
            Self::Int(v) => Some(v as f64),
            Self::Float(v) => Some(v),
            Self::Text(_) => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Self::Int(v) => v.to_string(),
            Self::Float(v) => v.to_string(),
            Self::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Self::Int(v as u64)
    }
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Self::Int(v)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Self::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Self::Text(v.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanSe {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    /// Sample mean and `sd/√n` with the unbiased sample deviation.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: f64::NAN, se: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self { n, mean, se }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Aggregate {
    pub group: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialError {
    pub trial: usize,
    pub code: &'static str,
    pub message: String,
}

/// Per-trial rows plus aggregates over the metric columns, grouped by the
/// `group_by` columns.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub kind: ExperimentKind,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
    pub group_by: Vec<String>,
    pub metrics: Vec<String>,
    pub aggregates: Vec<Aggregate>,
    pub errors: Vec<TrialError>,
    /// Kind-specific report (diagnostics, sweep tables).
    pub extra: serde_json::Value,
}

impl SweepResult {
    fn new(kind: ExperimentKind, columns: &[&str], group_by: &[&str], metrics: &[&str]) -> Self {
        let owned = |v: &[&str]| v.iter().map(|s| s.to_string()).collect();
        Self {
            kind,
            columns: owned(columns),
            rows: Vec::new(),
            group_by: owned(group_by),
            metrics: owned(metrics),
            aggregates: Vec::new(),
            errors: Vec::new(),
            extra: serde_json::Value::Null,
        }
    }

    fn column(&self, name: &str) -> usize {
        self.columns.iter().position(|c| c == name).expect("known column")
    }

    /// Aggregates derived from `rows`; groups appear in first-seen order.
    pub fn compute_aggregates(&self) -> Vec<Aggregate> {
        let keys: Vec<usize> = self.group_by.iter().map(|c| self.column(c)).collect();
        let mut groups: Vec<(String, Vec<&Vec<Cell>>)> = Vec::new();
        for row in &self.rows {
            let label = if keys.is_empty() {
                "all".to_string()
            } else {
                keys.iter().map(|&i| format!("{}={}", self.columns[i], row[i].render())).collect::<Vec<_>>().join(";")
            };
            match groups.iter_mut().find(|(g, _)| *g == label) {
                Some((_, rows)) => rows.push(row),
                None => groups.push((label, vec![row])),
            }
        }
        let mut out = Vec::new();
        for (label, rows) in &groups {
            for metric in &self.metrics {
                let i = self.column(metric);
                let values: Vec<f64> = rows.iter().filter_map(|r| r[i].as_f64()).collect();
                let stats = MeanSe::of(&values);
                out.push(Aggregate {
                    group: label.clone(),
                    metric: metric.clone(),
                    n: stats.n,
                    mean: stats.mean,
                    se: stats.se,
                });
            }
        }
        out
    }

    pub fn aggregate(&self, group: &str, metric: &str) -> Option<&Aggregate> {
        self.aggregates.iter().find(|a| a.group == group && a.metric == metric)
    }

    fn finish(mut self) -> Self {
        self.aggregates = self.compute_aggregates();
        self
    }

    fn push_outcome(&mut self, trial: usize, outcome: Result<Vec<Vec<Cell>>>) {
        match outcome {
            Ok(rows) => self.rows.extend(rows),
            Err(e) => self.errors.push(TrialError { trial, code: error_code(&e), message: e.to_string() }),
        }
    }

    pub fn trials_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    pub fn aggregates_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
        w.write_record(["group", "metric", "n", "mean", "se"])?;
        for a in &self.aggregates {
            w.serialize(a)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }

    /// Writes `<kind>_trials.csv`, `<kind>_aggregates.csv` and
    /// `<kind>_report.json` into `dir`, after checking that the aggregates
    /// still match the rows.
    pub fn write(&self, dir: &Path, config: &ExperimentConfig) -> Result<()> {
        let recomputed = self.compute_aggregates();
        let consistent = recomputed.len() == self.aggregates.len()
            && recomputed.iter().zip(&self.aggregates).all(|(a, b)| {
                a.group == b.group
                    && a.metric == b.metric
                    && a.n == b.n
                    && same_float(a.mean, b.mean)
                    && same_float(a.se, b.se)
            });
        if !consistent {
            return Err(Error::InvalidParameter("aggregates do not match trial rows".into()));
        }
        std::fs::create_dir_all(dir)?;
        let stem = self.kind.name();
        std::fs::write(dir.join(format!("{stem}_trials.csv")), self.trials_csv()?)?;
        std::fs::write(dir.join(format!("{stem}_aggregates.csv")), self.aggregates_csv()?)?;
        let report = serde_json::json!({
            "version": REPORT_VERSION,
            "kind": self.kind,
            "config": config,
            "aggregates": self.aggregates,
            "errors": self.errors,
            "extra": self.extra,
        });
        std::fs::write(dir.join(format!("{stem}_report.json")), serde_json::to_string_pretty(&report)?)?;
        Ok(())
    }
}

fn same_float(a: f64, b: f64) -> bool {
    a == b || (a.is_nan() && b.is_nan())
}

/// Runs every trial of `cfg` and writes the outputs. Trial-level failures
/// are recorded in [`SweepResult::errors`]; setup failures are returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> ExpResult<SweepResult> {
    cfg.validate()?;
    let result = match cfg.kind {
        ExperimentKind::Pac => run_pac(cfg)?,
        ExperimentKind::PacSingleLabel => run_pac_single_label(cfg)?,
        ExperimentKind::Regret | ExperimentKind::RegretBaseline => run_regret(cfg)?,
        ExperimentKind::LowerBoundSanity => run_lower_bound(cfg)?,
        ExperimentKind::Diagnose => run_diagnose(cfg)?,
    };
    result.write(&cfg.resolved_output_dir(), cfg)?;
    Ok(result)
}

fn instance_of(cfg: &ExperimentConfig) -> ExpResult<(Instance, PolicyClass)> {
    let src = cfg.instance.as_ref().ok_or_else(|| config_err("missing instance"))?;
    Ok(src.materialize(cfg.seed)?)
}

fn run_pac(cfg: &ExperimentConfig) -> ExpResult<SweepResult> {
    let (inst, cls) = instance_of(cfg)?;
    let params = cfg.pac.clone().unwrap_or_default();
    let base = params.resolve(cfg.kind, &inst, cls.len(), cfg.seed)?;
    let mut columns =
        vec!["seed", "N1", "N2", "T", "gamma", "gap", "grad_inf_norm", "max_policy_variance", "erm_calls"];
    let mut metrics = vec!["gap", "grad_inf_norm", "max_policy_variance"];
    if cfg.eps.is_some() {
        columns.push("success");
        metrics.push("success");
    }
    let mut result = SweepResult::new(cfg.kind, &columns, &[], &metrics);
    let outcomes: Vec<Result<Vec<Vec<Cell>>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = trial_seed(cfg.seed, trial);
            let run = PacConfig { seed, ..base };
            let report = pac_comband(&inst, &cls, &run)?;
            let gap = report.gap.unwrap_or(f64::NAN);
            let mut row: Vec<Cell> = vec![
                seed.into(),
                run.n1.into(),
                run.n2.into(),
                run.iterations.into(),
                run.gamma.into(),
                gap.into(),
                report.grad_inf_norm.unwrap_or(f64::NAN).into(),
                report.max_policy_variance().into(),
                report.erm_calls.into(),
            ];
            if let Some(eps) = cfg.eps {
                row.push(if gap <= eps { 1.0 } else { 0.0 }.into());
            }
            Ok(vec![row])
        })
        .collect();
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        result.push_outcome(trial, outcome);
    }
    Ok(result.finish())
}

fn run_pac_single_label(cfg: &ExperimentConfig) -> ExpResult<SweepResult> {
    let (inst, cls) = instance_of(cfg)?;
    let params = cfg.pac.clone().unwrap_or_default();
    let base = params.resolve(cfg.kind, &inst, cls.len(), cfg.seed)?;
    let mut result = SweepResult::new(
        cfg.kind,
        &["seed", "N1", "N2", "T", "gamma", "gap", "matched", "erm_calls", "warnings"],
        &[],
        &["gap", "matched"],
    );
    let outcomes: Vec<Result<Vec<Vec<Cell>>>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let seed = trial_seed(cfg.seed, trial);
            let run = PacConfig { seed, ..base };
            let report = pac_single_label_on(&inst, &cls, &run)?;
            Ok(vec![vec![
                seed.into(),
                run.n1.into(),
                run.n2.into(),
                run.iterations.into(),
                run.gamma.into(),
                report.gap.unwrap_or(f64::NAN).into(),
                report.matched.into(),
                report.erm_calls.into(),
                report.warnings.len().into(),
            ]])
        })
        .collect();
    for (trial, outcome) in outcomes.into_iter().enumerate() {
        result.push_outcome(trial, outcome);
    }
    Ok(result.finish())
}

/// Regret parameters with defaults filled in for a given problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResolvedRegret {
    pub horizon: usize,
    pub eta: f64,
    pub baseline_eta: f64,
    pub nu: f64,
}

impl ResolvedRegret {
    pub fn new(params: &RegretParams, k: usize, m: usize, s: f64, n_policies: usize, available: Option<usize>) -> Self {
        let horizon = params.horizon.or(available).unwrap_or(0);
        Self {
            horizon,
            eta: params.eta.unwrap_or_else(|| default_eta(n_policies, m, s, horizon)),
            baseline_eta: params.eta.unwrap_or_else(|| default_baseline_eta(n_policies, m, k, horizon)),
            nu: params.nu.unwrap_or(DEFAULT_NU),
        }
    }
}

fn regret_at(run: &RegretRun, t: usize) -> f64 {
    if t == 0 {
        0.0
    } else {
        run.trace[t - 1].regret
    }
}

fn run_regret(cfg: &ExperimentConfig) -> ExpResult<SweepResult> {
    let params = cfg.regret.clone().unwrap_or_default();
    let baseline = cfg.kind == ExperimentKind::RegretBaseline;
    let src = cfg.instance.as_ref().ok_or_else(|| config_err("missing instance"))?;
    let s_values = params.s_values.clone().unwrap_or_else(|| vec![src.sparsity()]);
    let mut result = SweepResult::new(
        cfg.kind,
        &[
            "s",
            "trial",
            "seed",
            "T",
            "eta",
            "nu",
            "terminal_regret",
            "regret_at_tenth",
            "average_regret",
            "max_ratio",
            "min_p",
        ],
        &["s"],
        &["terminal_regret", "regret_at_tenth", "average_regret", "max_ratio", "min_p"],
    );
    let out_dir = cfg.resolved_output_dir();
    for &s in &s_values {
        let (inst, cls) = match src.family(cfg.seed) {
            Some(family) => {
                let (inst, cls, _) = family.instance(s)?;
                (inst, cls)
            }
            None => src.materialize(cfg.seed)?,
        };
        let fixed_losses = match &params.losses {
            Some(path) => Some(LossSequence::load(path, inst.s())?),
            None => None,
        };
        let resolved = ResolvedRegret::new(
            &params,
            inst.k(),
            inst.m(),
            inst.s(),
            cls.len(),
            fixed_losses.as_ref().map(|l| l.len()),
        );
        let eta = if baseline { resolved.baseline_eta } else { resolved.eta };
        let outcomes: Vec<Result<Vec<Vec<Cell>>>> = (0..cfg.trials)
            .into_par_iter()
            .map(|trial| {
                let (mut env_rng, mut learner_rng) = trial_rngs(cfg.seed, trial);
                let seq = match &fixed_losses {
                    Some(seq) => seq.clone(),
                    None => LossSequence::from_instance(&inst, resolved.horizon, &mut env_rng)?,
                };
                let run = if baseline {
                    exp4_entropy_baseline(&seq, &cls, resolved.horizon, eta, &mut learner_rng)?
                } else {
                    exp4_comb_sparse(&seq, &cls, resolved.horizon, eta, resolved.nu, &mut learner_rng)?
                };
                if params.write_traces {
                    std::fs::create_dir_all(&out_dir)?;
                    let name = format!("{}_trace_s{}_trial{trial}.csv", cfg.kind.name(), s);
                    write_regret_trace_csv(&run.trace, std::fs::File::create(out_dir.join(name))?)?;
                }
                let t = resolved.horizon;
                Ok(vec![vec![
                    s.into(),
                    trial.into(),
                    cfg.seed.into(),
                    t.into(),
                    eta.into(),
                    if baseline { f64::NAN } else { resolved.nu }.into(),
                    run.terminal_regret().into(),
                    regret_at(&run, t / 10).into(),
                    (run.terminal_regret() / t.max(1) as f64).into(),
                    run.max_ratio().into(),
                    run.min_p().into(),
                ]])
            })
            .collect();
        for (trial, outcome) in outcomes.into_iter().enumerate() {
            result.push_outcome(trial, outcome);
        }
    }
    Ok(result.finish())
}

/// Per-seed outcomes of one sparsity level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityTrial {
    pub s: f64,
    pub trial: usize,
    pub sparse_terminal: f64,
    pub sparse_tenth: f64,
    pub baseline_terminal: f64,
    pub baseline_tenth: f64,
    pub sparse_max_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityRow {
    pub s: f64,
    pub eta: f64,
    pub baseline_eta: f64,
    /// Exact per-round gap of the generated instance.
    pub gap: f64,
    pub sparse: MeanSe,
    pub baseline: MeanSe,
    /// Mean regret of the sparse learner after `T/10` rounds.
    pub sparse_tenth: MeanSe,
}

impl SparsityRow {
    /// `(R_T/T) / (R_{T/10}/(T/10))` of the mean sparse regret.
    pub fn average_regret_ratio(&self) -> f64 {
        self.sparse.mean / (10.0 * self.sparse_tenth.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparsityTable {
    pub horizon: usize,
    pub rows: Vec<SparsityRow>,
    pub trials: Vec<SparsityTrial>,
}

/// Terminal regret of the sparse learner and the exponential-weights
/// baseline over `seeds` matched runs per sparsity level. Both learners see
/// the same loss sequence in each run.
pub fn sparsity_sweep(
    family: &SparseFamily,
    s_values: &[f64],
    params: &RegretParams,
    seeds: usize,
    seed: u64,
) -> Result<SparsityTable> {
    let horizon = params.horizon.ok_or_else(|| Error::InvalidParameter("sparsity sweep needs a horizon".into()))?;
    let mut table = SparsityTable { horizon, rows: Vec::new(), trials: Vec::new() };
    for &s in s_values {
        let (inst, cls, best) = family.instance(s)?;
        let resolved = ResolvedRegret::new(params, inst.k(), inst.m(), s, cls.len(), None);
        let gap = (0..cls.len())
            .filter(|&j| j != best)
            .map(|j| exact_gap_to_best(&inst, &cls, cls.policy(j)))
            .fold(f64::INFINITY, f64::min);
        let trials: Vec<SparsityTrial> = (0..seeds)
            .into_par_iter()
            .map(|trial| {
                let (mut env_rng, learner_rng) = trial_rngs(seed, trial);
                let seq = LossSequence::from_instance(&inst, horizon, &mut env_rng)?;
                let sparse =
                    exp4_comb_sparse(&seq, &cls, horizon, resolved.eta, resolved.nu, &mut learner_rng.clone())?;
                let base = exp4_entropy_baseline(&seq, &cls, horizon, resolved.baseline_eta, &mut learner_rng.clone())?;
                Ok(SparsityTrial {
                    s,
                    trial,
                    sparse_terminal: sparse.terminal_regret(),
                    sparse_tenth: regret_at(&sparse, horizon / 10),
                    baseline_terminal: base.terminal_regret(),
                    baseline_tenth: regret_at(&base, horizon / 10),
                    sparse_max_ratio: sparse.max_ratio(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let stat = |f: fn(&SparsityTrial) -> f64| MeanSe::of(&trials.iter().map(f).collect::<Vec<_>>());
        table.rows.push(SparsityRow {
            s,
            eta: resolved.eta,
            baseline_eta: resolved.baseline_eta,
            gap,
            sparse: stat(|t| t.sparse_terminal),
            baseline: stat(|t| t.baseline_terminal),
            sparse_tenth: stat(|t| t.sparse_tenth),
        });
        table.trials.extend(trials);
    }
    Ok(table)
}

/// Plays uniformly random subsets for `rounds` rounds and returns the `m`
/// actions with the highest empirical mean (ties to lower index).
pub fn identify_top_subset<R: Rng + ?Sized>(inst: &Instance, rounds: usize, rng: &mut R) -> Result<ActionSubset> {
    let (k, m) = (inst.k(), inst.m());
    let mut sums = vec![0.0; k];
    let mut counts = vec![0usize; k];
    for _ in 0..rounds {
        let a = sample_uniform_action(k, m, rng)?;
        let (_, r) = sample_round(inst, rng);
        for &y in a.members() {
            sums[y] += r.get(y);
            counts[y] += 1;
        }
    }
    let means: Vec<f64> = sums.iter().zip(&counts).map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| means[b].total_cmp(&means[a]).then(a.cmp(&b)));
    ActionSubset::new(order[..m].iter().copied(), k)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentificationPoint {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub success: MeanSe,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundPoint {
    pub spec: LowerBoundGridPoint,
    pub total_mean: f64,
    pub violation_horizon: usize,
    /// Fraction of seeds with at least one round where `‖r‖₁ > s`.
    pub violation_frequency: f64,
    /// `T·e^{−s/4}`.
    pub violation_bound: f64,
    pub curve: Vec<IdentificationPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundReport {
    pub points: Vec<LowerBoundPoint>,
}

/// For every grid point: the exact total mean, the empirical frequency of
/// sparsity violations over `violation_horizon` rounds, and the success
/// rate of [`identify_top_subset`] at each horizon. The good set of each
/// seed is drawn uniformly at random.
pub fn lower_bound_sanity(
    grid: &[LowerBoundGridPoint],
    horizons: &[usize],
    seeds: usize,
    violation_horizon: usize,
    seed: u64,
) -> Result<LowerBoundReport> {
    let mut points = Vec::with_capacity(grid.len());
    for (g, point) in grid.iter().enumerate() {
        let instance_for = |rng: &mut SeededRng| -> Result<Instance> {
            let good = sample_uniform_action(point.k, point.m, rng)?;
            lower_bound_instance(&LowerBoundSpec::new(point.k, point.m, point.s, point.eps, good)?)
        };
        let reference = instance_for(&mut derived_rng(seed, GENERATOR_STREAM))?;
        let total_mean: f64 = reference.mean_rewards(Context(0)).iter().sum();

        let stream = |trial: usize, h: usize| derived_rng(seed, ((g as u64) << 40) | ((h as u64) << 20) | trial as u64);
        let violations: Vec<bool> = (0..seeds)
            .into_par_iter()
            .map(|trial| {
                let mut rng = stream(trial, 0);
                let inst = instance_for(&mut rng)?;
                Ok((0..violation_horizon).any(|_| sample_round(&inst, &mut rng).1.l1() > point.s))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut curve = Vec::with_capacity(horizons.len());
        for (h, &horizon) in horizons.iter().enumerate() {
            let hits: Vec<f64> = (0..seeds)
                .into_par_iter()
                .map(|trial| {
                    let mut rng = stream(trial, h + 1);
                    let inst = instance_for(&mut rng)?;
                    let truth = ActionSubset::new(
                        (0..point.k).filter(|&y| inst.mean_rewards(Context(0))[y] > total_mean / point.k as f64),
                        point.k,
                    );
                    let guess = identify_top_subset(&inst, horizon, &mut rng)?;
                    Ok(match truth {
                        Ok(t) if t.size() == point.m => f64::from(u8::from(guess == t)),
                        // ε = 0: every subset is optimal
                        _ => 1.0,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            curve.push(IdentificationPoint { horizon, success: MeanSe::of(&hits) });
        }
        points.push(LowerBoundPoint {
            spec: *point,
            total_mean,
            violation_horizon,
            violation_frequency: violations.iter().filter(|v| **v).count() as f64 / seeds.max(1) as f64,
            violation_bound: violation_horizon as f64 * (-point.s / 4.0).exp(),
            curve,
        });
    }
    Ok(LowerBoundReport { points })
}

fn run_lower_bound(cfg: &ExperimentConfig) -> ExpResult<SweepResult> {
    let lb = cfg.lower_bound.clone().ok_or_else(|| config_err("missing lower_bound section"))?;
    let report = lower_bound_sanity(&lb.specs, &lb.horizons, cfg.trials, lb.violation_horizon, cfg.seed)?;
    let mut result = SweepResult::new(
        cfg.kind,
        &[
            "spec",
            "K",
            "m",
            "s",
            "eps",
            "T",
            "success_rate",
            "success_se",
            "total_mean",
            "violation_frequency",
            "violation_bound",
        ],
        &[],
        &[],
    );
    for (g, point) in report.points.iter().enumerate() {
        for c in &point.curve {
            result.rows.push(vec![
                g.into(),
                point.spec.k.into(),
                point.spec.m.into(),
                point.spec.s.into(),
                point.spec.eps.into(),
                c.horizon.into(),
                c.success.mean.into(),
                c.success.se.into(),
                point.total_mean.into(),
                point.violation_frequency.into(),
                point.violation_bound.into(),
            ]);
        }
    }
    result.extra = serde_json::to_value(&report).map_err(Error::from)?;
    Ok(result.finish())
}

/// Exact quantities of a known problem at the population minimizer `p*` of
/// the log-barrier objective.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnoseReport {
    pub version: u32,
    #[serde(rename = "K")]
    pub k: usize,
    pub m: usize,
    pub s: f64,
    pub gamma: f64,
    pub best_policy: usize,
    pub rewards: Vec<f64>,
    pub gaps: Vec<f64>,
    pub p_star: Vec<f64>,
    pub objective: f64,
    pub grad_inf_norm: f64,
    /// `Q^γ_{p*}(y|x)` per context.
    pub marginals: Vec<Vec<f64>>,
    pub reward_ratio_audit: Vec<f64>,
    pub estimator_variance: Vec<f64>,
}

pub fn diagnose(inst: &Instance, cls: &PolicyClass, gamma: f64, iterations: usize) -> Result<DiagnoseReport> {
    check_compatible(inst, cls)?;
    let rewards = exact_policy_rewards(inst, cls);
    let best = best_policy(inst, cls);
    let p = population_minimizer(inst, cls, gamma, iterations)?;
    let (objective, grad) = exact_population_objective(&p, inst, cls, gamma);
    let marginals = (0..inst.n_contexts())
        .map(|x| marginals(&p, cls, Context(x)).into_iter().map(|q| smooth(q, gamma, cls.m(), cls.k())).collect())
        .collect();
    Ok(DiagnoseReport {
        version: REPORT_VERSION,
        k: inst.k(),
        m: inst.m(),
        s: inst.s(),
        gamma,
        best_policy: best,
        gaps: rewards.iter().map(|r| rewards[best] - r).collect(),
        rewards,
        objective,
        grad_inf_norm: grad.iter().fold(0.0, |a, g| a.max(g.abs())),
        marginals,
        reward_ratio_audit: reward_ratio_audit(inst, cls, &p, gamma),
        estimator_variance: exact_estimator_moments(inst, cls, &p, gamma).into_iter().map(|(_, v)| v).collect(),
        p_star: p.into_vec(),
    })
}

pub const DIAGNOSE_ITERATIONS: usize = 2000;

fn run_diagnose(cfg: &ExperimentConfig) -> ExpResult<SweepResult> {
    let (inst, cls) = instance_of(cfg)?;
    let gamma = cfg.pac.as_ref().and_then(|p| p.gamma).unwrap_or(0.5);
    let report = diagnose(&inst, &cls, gamma, DIAGNOSE_ITERATIONS)?;
    let mut result = SweepResult::new(
        cfg.kind,
        &["policy", "reward", "gap", "p_star", "reward_ratio_audit", "estimator_variance"],
        &[],
        &[],
    );
    for j in 0..cls.len() {
        result.rows.push(vec![
            j.into(),
            report.rewards[j].into(),
            report.gaps[j].into(),
            report.p_star[j].into(),
            report.reward_ratio_audit[j].into(),
            report.estimator_variance[j].into(),
        ]);
    }
    result.extra = serde_json::to_value(&report).map_err(Error::from)?;
    Ok(result.finish())
}

/// Every size-`m` subset as a context-free policy, for single-context
/// instances such as the lower-bound family.
pub fn all_subsets_class(k: usize, m: usize) -> Result<PolicyClass> {
    let policies = all_subsets(k, m).into_iter().map(|a| Policy::new(vec![a])).collect::<Result<Vec<_>>>()?;
    PolicyClass::new(policies, k, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{save_policy_class, Sparsity};

    fn family(gap: f64) -> SparseFamily {
        SparseFamily { k: 32, m: 2, n_contexts: 64, n_policies: 8, gap, seed: 3 }
    }

    #[test]
    fn mean_se_basics() {
        let st = MeanSe::of(&[1.0, 2.0, 3.0]);
        assert_eq!(st.mean, 2.0);
        assert!((st.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(MeanSe::of(&[4.0]).se, 0.0);
    }

    #[test]
    fn sparse_family_is_matched_and_sparse() {
        for s in [1.0, 4.0, 16.0] {
            let (inst, cls, best) = family(0.5).instance(s).unwrap();
            assert_eq!(inst.sparsity(), Sparsity::Sure);
            for ctx in inst.contexts() {
                let total: f64 = ctx.law.means().iter().sum();
                assert_eq!(total, s);
            }
            assert_eq!(best_policy(&inst, &cls), best);
            let gaps: Vec<f64> =
                (0..8).filter(|&j| j != best).map(|j| exact_gap_to_best(&inst, &cls, cls.policy(j))).collect();
            let mean_gap = gaps.iter().sum::<f64>() / gaps.len() as f64;
            assert!((mean_gap - 0.5).abs() < 0.2, "s = {s}: {gaps:?}");
        }
        let (_, a, _) = family(0.5).instance(1.0).unwrap();
        let (_, b, _) = family(0.5).instance(16.0).unwrap();
        assert_eq!(a, b);
        assert!(family(0.5).instance(2.5).is_err());
        assert!(family(5.0).instance(4.0).is_err());
    }

    #[test]
    fn aggregates_group_in_first_seen_order() {
        let mut r = SweepResult::new(ExperimentKind::Regret, &["s", "v"], &["s"], &["v"]);
        r.rows = vec![vec![4.0.into(), 1.0.into()], vec![1.0.into(), 5.0.into()], vec![4.0.into(), 3.0.into()]];
        let r = r.finish();
        assert_eq!(r.aggregates.len(), 2);
        assert_eq!(r.aggregates[0].group, "s=4");
        assert_eq!(r.aggregates[0].mean, 2.0);
        assert_eq!(r.aggregate("s=1", "v").unwrap().n, 1);
    }

    #[test]
    fn singleton_class_pac_config_gives_zero_gap() {
        let dir = tempfile::tempdir().unwrap();
        let inst = Instance::deterministic(2, 2.0, vec![0.5, 0.2, 0.9, 0.1]).unwrap();
        let cls = all_subsets_class(4, 2).unwrap();
        let single = PolicyClass::new(vec![cls.policy(3).clone()], 4, 2).unwrap();
        inst.save(dir.path().join("inst.json")).unwrap();
        save_policy_class(&single, dir.path().join("pol.json")).unwrap();
        let text = r#"{"kind": "pac", "instance": {"type": "files", "instance": "inst.json", "policies": "pol.json"},
            "pac": {"N1": 20, "N2": 20, "T": 5}, "trials": 1, "seed": 4, "output_dir": "out"}"#;
        std::fs::write(dir.path().join("cfg.json"), text).unwrap();
        let cfg = ExperimentConfig::load(dir.path().join("cfg.json")).unwrap();
        let result = run_experiment(&cfg).unwrap();
        assert_eq!(result.rows.len(), 1);
        assert_eq!(result.rows[0][result.column("gap")], Cell::Float(0.0));
        assert!(dir.path().join("out/pac_trials.csv").is_file());
    }

    #[test]
    fn config_errors_are_classified() {
        let err = ExperimentConfig::from_json("{").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let cfg = ExperimentConfig::from_json(
            r#"{"kind": "pac", "instance": {"type": "random", "K": 4, "m": 2, "s": 2, "n_contexts": 2, "n_policies": 3},
            "trials": 0, "seed": 0, "output_dir": "x"}"#,
        )
        .unwrap();
        assert_eq!(cfg.validate().unwrap_err().code(), "E_CONFIG");
        let missing = ExperimentConfig::from_json(
            r#"{"kind": "diagnose", "instance": {"type": "files", "instance": "/nonexistent.json", "policies": "/nope.json"},
            "trials": 1, "seed": 0, "output_dir": "x"}"#,
        )
        .unwrap();
        assert!(matches!(missing.validate(), Err(ExperimentError::Config(_))));
        assert_eq!(ExperimentError::Runtime(Error::EmptyBatch).exit_code(), 3);
    }

    #[test]
    fn single_sparsity_value_gives_one_row() {
        let params = RegretParams { horizon: Some(200), ..Default::default() };
        let table = sparsity_sweep(&family(0.5), &[4.0], &params, 2, 1).unwrap();
        assert_eq!(table.rows.len(), 1);
        assert_eq!(table.trials.len(), 2);
    }

    #[test]
    fn lower_bound_zero_eps_is_chance_level() {
        let grid = [LowerBoundGridPoint { k: 12, m: 2, s: 4.0, eps: 0.0 }];
        let report = lower_bound_sanity(&grid, &[200], 10, 100, 5).unwrap();
        let point = &report.points[0];
        assert!((point.total_mean - 2.0).abs() < 1e-12);
        // every subset is optimal when all arms are identical
        assert_eq!(point.curve[0].success.mean, 1.0);
    }

    #[test]
    fn diagnose_reports_consistent_gaps() {
        let mut rng = derived_rng(8, 0);
        let (inst, cls) = random_sparse_instance(5, 2, 2.0, 3, 4, &mut rng).unwrap();
        let report = diagnose(&inst, &cls, 0.5, 200).unwrap();
        assert_eq!(report.gaps[report.best_policy], 0.0);
        for row in &report.marginals {
            let total: f64 = row.iter().sum();
            assert!((total - 2.0).abs() < 1e-9);
        }
    }
}
