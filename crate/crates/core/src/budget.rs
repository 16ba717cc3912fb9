//! Privacy budgets and their accounting algebra.
//!
//! A [`PrivacyBudget`] is the triple `(ε, δ, α)` together with the `ℓp`
//! metric that defines the radius `α`. A mechanism satisfying the budget
//! guarantees that for any two inputs within distance `α` of each other, and
//! any measurable output set `S`,
//!
//! ```text
//! Pr[M(x_a) ∈ S] ≤ e^ε · Pr[M(x_b) ∈ S] + δ
//! ```
//!
//! The operations here combine budgets: sequential and parallel composition,
//! chaining to a larger radius, and post-processing. Results whose `δ`
//! reaches 1 are still returned but carry a `vacuous` flag, since they
//! guarantee nothing.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The `ℓp` norm selecting the input metric `d(x, y) = ‖x − y‖_p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Norm {
    L1,
    L2,
    Inf,
}

impl Norm {
    /// Norm of a vector.
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            Norm::L1 => v.iter().map(|x| x.abs()).sum(),
            Norm::L2 => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            Norm::Inf => v.iter().fold(0.0, |m, x| m.max(x.abs())),
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Norm::L1 => f.write_str("1"),
            Norm::L2 => f.write_str("2"),
            Norm::Inf => f.write_str("inf"),
        }
    }
}

impl std::str::FromStr for Norm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "1" | "l1" => Ok(Norm::L1),
            "2" | "l2" => Ok(Norm::L2),
            "inf" | "linf" | "∞" => Ok(Norm::Inf),
            other => Err(Error::InvalidBudget(format!(
                "unknown norm {other:?}, expected 1, 2 or inf"
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum NormRepr {
    Number(u8),
    Text(String),
}

impl Serialize for Norm {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Norm::L1 => NormRepr::Number(1),
            Norm::L2 => NormRepr::Number(2),
            Norm::Inf => NormRepr::Text("inf".to_owned()),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Norm {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match NormRepr::deserialize(d)? {
            NormRepr::Number(1) => Ok(Norm::L1),
            NormRepr::Number(2) => Ok(Norm::L2),
            NormRepr::Number(n) => Err(serde::de::Error::custom(format!("unknown norm {n}"))),
            NormRepr::Text(t) => t.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// `‖x − y‖_p`.
pub fn distance(x: &[f64], y: &[f64], p: Norm) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            actual: y.len(),
        });
    }
    let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(p.norm(&diff))
}

/// An `{(ε, δ), α}` inference-privacy budget over the `ℓp` metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BudgetRepr", into = "BudgetRepr")]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
    alpha: f64,
    p: Norm,
    vacuous: bool,
}

impl PrivacyBudget {
    /// Builds a budget, rejecting anything outside `ε > 0`, `0 ≤ δ < 1`,
    /// `α ≥ 0`.
    pub fn new(epsilon: f64, delta: f64, alpha: f64, p: Norm) -> Result<Self> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidBudget(format!(
                "epsilon must be positive and finite, got {epsilon}"
            )));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::InvalidBudget(format!(
                "delta must lie in [0, 1), got {delta}"
            )));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidBudget(format!(
                "alpha must be non-negative and finite, got {alpha}"
            )));
        }
        Ok(Self {
            epsilon,
            delta,
            alpha,
            p,
            vacuous: false,
        })
    }

    /// A pure `{ε, α}` budget (`δ = 0`).
    pub fn pure(epsilon: f64, alpha: f64, p: Norm) -> Result<Self> {
        Self::new(epsilon, 0.0, alpha, p)
    }

    // Results of accounting operations. δ may have grown past 1 here, in
    // which case the budget is kept but marked vacuous.
    fn derived(epsilon: f64, delta: f64, alpha: f64, p: Norm, inherited_vacuous: bool) -> Self {
        let vacuous = inherited_vacuous || !(delta < 1.0) || !epsilon.is_finite();
        Self {
            epsilon,
            delta,
            alpha,
            p,
            vacuous,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn p(&self) -> Norm {
        self.p
    }

    /// True when the budget no longer guarantees anything (`δ ≥ 1`).
    pub fn is_vacuous(&self) -> bool {
        self.vacuous
    }

    pub fn is_pure(&self) -> bool {
        self.delta == 0.0
    }

    /// Same budget at a different radius. Used by calibration sweeps.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.epsilon, self.delta, alpha, self.p)
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::new(epsilon, self.delta, self.alpha, self.p)
    }
}

impl fmt::Display for PrivacyBudget {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{{(ε={}, δ={}), α={}}} over ℓ{}",
            self.epsilon, self.delta, self.alpha, self.p
        )?;
        if self.vacuous {
            f.write_str(" [vacuous]")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum DeltaRepr {
    Finite(f64),
    Text(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BudgetRepr {
    epsilon: f64,
    delta: DeltaRepr,
    alpha: f64,
    p: Norm,
    #[serde(default)]
    vacuous: bool,
}

impl From<PrivacyBudget> for BudgetRepr {
    fn from(b: PrivacyBudget) -> Self {
        let delta = if b.delta.is_finite() {
            DeltaRepr::Finite(b.delta)
        } else {
            DeltaRepr::Text("inf".to_owned())
        };
        Self {
            epsilon: b.epsilon,
            delta,
            alpha: b.alpha,
            p: b.p,
            vacuous: b.vacuous,
        }
    }
}

impl TryFrom<BudgetRepr> for PrivacyBudget {
    type Error = Error;

    fn try_from(r: BudgetRepr) -> Result<Self> {
        let delta = match r.delta {
            DeltaRepr::Finite(d) => d,
            DeltaRepr::Text(t) if t == "inf" => f64::INFINITY,
            DeltaRepr::Text(t) => {
                return Err(Error::InvalidBudget(format!("bad delta {t:?}")));
            }
        };
        if delta >= 1.0 || r.vacuous {
            if !r.vacuous {
                return Err(Error::InvalidBudget(format!(
                    "delta {delta} ≥ 1 must be marked vacuous"
                )));
            }
            if !(r.epsilon > 0.0) || !(delta >= 0.0) || !(r.alpha >= 0.0) {
                return Err(Error::InvalidBudget("malformed vacuous budget".into()));
            }
            return Ok(Self::derived(r.epsilon, delta, r.alpha, r.p, true));
        }
        Self::new(r.epsilon, delta, r.alpha, r.p)
    }
}

/// A split of the coordinates `{0, …, n−1}` into disjoint blocks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    n: usize,
    blocks: Vec<Vec<usize>>,
}

impl Partition {
    pub fn new(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let mut seen = vec![false; n];
        let mut blocks = blocks;
        for block in &mut blocks {
            if block.is_empty() {
                return Err(Error::InvalidPartition("empty block".into()));
            }
            block.sort_unstable();
            for &i in block.iter() {
                if i >= n {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} out of range for dimension {n}"
                    )));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return Err(Error::InvalidPartition(format!(
                        "index {i} appears in more than one block"
                    )));
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!(
                "index {missing} is not covered"
            )));
        }
        Ok(Self { n, blocks })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }
}

fn shared_norm(budgets: &[PrivacyBudget]) -> Result<Norm> {
    let first = budgets.first().ok_or(Error::EmptyComposition)?;
    for b in &budgets[1..] {
        if b.p != first.p {
            return Err(Error::MixedNorms(first.p, b.p));
        }
    }
    Ok(first.p)
}

/// Sequential composition of independent mechanisms run on the same input:
/// `(Σ εᵢ, Σ δᵢ, min αᵢ)`.
pub fn compose_basic(budgets: &[PrivacyBudget]) -> Result<PrivacyBudget> {
    let p = shared_norm(budgets)?;
    let epsilon = budgets.iter().map(|b| b.epsilon).sum();
    let delta = budgets.iter().map(|b| b.delta).sum();
    let alpha = budgets.iter().map(|b| b.alpha).fold(f64::INFINITY, f64::min);
    let vacuous = budgets.iter().any(|b| b.vacuous);
    Ok(PrivacyBudget::derived(epsilon, delta, alpha, p, vacuous))
}

/// Composition of mechanisms each applied to one block of a partitioned
/// input.
///
/// Unlike parallel composition in differential privacy, the budgets add up:
/// two inputs within radius `α` may differ on every block at once.
pub fn compose_parallel(
    parts: &[(Vec<usize>, PrivacyBudget)],
    partition: &Partition,
) -> Result<PrivacyBudget> {
    if parts.len() != partition.blocks.len() {
        return Err(Error::InvalidPartition(format!(
            "{} budgets for {} blocks",
            parts.len(),
            partition.blocks.len()
        )));
    }
    let mut used = vec![false; partition.blocks.len()];
    for (indices, _) in parts {
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        let slot = partition
            .blocks
            .iter()
            .position(|b| *b == sorted)
            .ok_or_else(|| {
                Error::InvalidPartition(format!("index set {indices:?} is not a block"))
            })?;
        if std::mem::replace(&mut used[slot], true) {
            return Err(Error::InvalidPartition(format!(
                "block {sorted:?} assigned twice"
            )));
        }
    }
    let budgets: Vec<PrivacyBudget> = parts.iter().map(|(_, b)| *b).collect();
    compose_basic(&budgets)
}

/// Number of radius-`α` hops needed to cover distance `β`.
///
/// Exact multiples are not rounded up by representation error: `β = 0.3`,
/// `α = 0.1` gives 3.
pub fn hops(beta: f64, alpha: f64) -> u64 {
    if beta <= alpha {
        return 1;
    }
    ((beta / alpha - 1e-12).ceil() as u64).max(1)
}

/// `Σ_{i<h} e^{iε} = (e^{hε} − 1)/(e^ε − 1)`, returned as a natural log.
fn ln_chain_factor(epsilon: f64, h: u64) -> f64 {
    let hf = h as f64;
    if epsilon < 1e-12 {
        return hf.ln();
    }
    let he = hf * epsilon;
    if he <= 30.0 {
        (he.exp_m1() / epsilon.exp_m1()).ln()
    } else {
        he + (-(-he).exp()).ln_1p() - epsilon.exp_m1().ln()
    }
}

/// The multiplier `(e^{hε} − 1)/(e^ε − 1)` applied to `δ` when chaining.
pub fn chain_factor(epsilon: f64, h: u64) -> f64 {
    let hf = h as f64;
    if epsilon < 1e-12 {
        return hf;
    }
    if hf * epsilon <= 30.0 {
        (hf * epsilon).exp_m1() / epsilon.exp_m1()
    } else {
        ln_chain_factor(epsilon, h).exp()
    }
}

/// Extends a guarantee at radius `α` to radius `β` by walking `h = ⌈β/α⌉`
/// hops along a straight line: `(hε, (e^{hε} − 1)/(e^ε − 1)·δ, β)`.
///
/// The returned `δ` is never clamped. When it reaches 1 the budget is marked
/// vacuous instead.
pub fn chain(budget: &PrivacyBudget, beta: f64) -> Result<PrivacyBudget> {
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::InvalidBudget(format!(
            "target radius must be non-negative and finite, got {beta}"
        )));
    }
    if beta <= budget.alpha {
        return Ok(PrivacyBudget::derived(
            budget.epsilon,
            budget.delta,
            beta,
            budget.p,
            budget.vacuous,
        ));
    }
    if budget.alpha == 0.0 {
        return Err(Error::ChainZeroRadius { beta });
    }
    let h = hops(beta, budget.alpha);
    let epsilon = h as f64 * budget.epsilon;
    let delta = if budget.delta == 0.0 {
        0.0
    } else if h as f64 * budget.epsilon <= 30.0 {
        chain_factor(budget.epsilon, h) * budget.delta
    } else {
        (budget.delta.ln() + ln_chain_factor(budget.epsilon, h)).exp()
    };
    Ok(PrivacyBudget::derived(
        epsilon,
        delta,
        beta,
        budget.p,
        budget.vacuous,
    ))
}

/// Post-processing by any data-independent (possibly randomized) map costs
/// nothing. The budget comes back unchanged; the call marks the step in an
/// accounting pipeline.
pub fn post_process(budget: &PrivacyBudget) -> PrivacyBudget {
    *budget
}
