//! ERM over a finite policy class and the linear-optimization oracle built
//! on top of it. Both break ties towards the lowest policy index.

use crate::domain::{Context, PolicyClass};
use crate::error::{Error, Result};

/// A context paired with nonnegative per-action reward estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedExample {
    pub x: Context,
    /// Sparse `(action, r̂(action))` entries; missing actions have `r̂ = 0`.
    pub rhat: Vec<(usize, f64)>,
}

impl WeightedExample {
    pub fn new(x: Context, rhat: Vec<(usize, f64)>) -> Result<Self> {
        if let Some((y, v)) = rhat.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("r̂({y}) = {v} must be finite and nonnegative")));
        }
        Ok(Self { x, rhat })
    }
}

/// `Σ_i Σ_{y∈π_j(x_i)} r̂_i(y)` for every policy `j`.
pub fn erm_scores(cls: &PolicyClass, data: &[WeightedExample]) -> Vec<f64> {
    let mut scores = vec![0.0; cls.len()];
    for ex in data {
        cls.check_context(ex.x);
        for (j, score) in scores.iter_mut().enumerate() {
            for &(y, v) in &ex.rhat {
                if cls.includes(j, ex.x, y) {
                    *score += v;
                }
            }
        }
    }
    scores
}

/// First index attaining the maximum.
pub fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

/// `ERM_Π(S)`: the lowest-index policy maximizing total estimated reward.
/// Empty data selects policy 0.
pub fn erm(cls: &PolicyClass, data: &[WeightedExample]) -> usize {
    argmax_lowest(&erm_scores(cls, data))
}

/// `LOO_Π(g) = argmin_{p∈Δ_Π} g · p`, returned as the vertex index (lowest
/// index among ties).
///
/// # Panics
/// If `g` is empty or contains NaN.
pub fn loo(g: &[f64]) -> usize {
    assert!(!g.is_empty(), "linear oracle over an empty simplex");
    assert!(g.iter().all(|v| !v.is_nan()), "NaN in linear objective");
    let mut best = 0;
    for (j, &v) in g.iter().enumerate().skip(1) {
        if v < g[best] {
            best = j;
        }
    }
    best
}

/// ERM with a call counter, so drivers can report their oracle complexity.
#[derive(Debug)]
pub struct ErmOracle<'a> {
    cls: &'a PolicyClass,
    calls: usize,
}

impl<'a> ErmOracle<'a> {
    pub fn new(cls: &'a PolicyClass) -> Self {
        Self { cls, calls: 0 }
    }

    pub fn class(&self) -> &'a PolicyClass {
        self.cls
    }

    /// Returns the selected index together with every policy's score.
    pub fn call(&mut self, data: &[WeightedExample]) -> (usize, Vec<f64>) {
        self.calls += 1;
        let scores = erm_scores(self.cls, data);
        (argmax_lowest(&scores), scores)
    }

    pub fn calls(&self) -> usize {
        self.calls
    }
}
