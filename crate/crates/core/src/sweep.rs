//! Utility–privacy sweeps: calibrate every mechanism along one budget axis
//! and measure noisy test accuracy.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{audit_analytic_gauss, Verdict};
use crate::budget::PrivacyBudget;
use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::lipschitz::model_lipschitz;
use crate::mechanisms::{gaussian_sigma, radius_ratio, Family, Mechanism, NoiseSpec};
use crate::model::LayeredModel;
use crate::rng::{derive_stream, purpose};
use crate::train::{mean_std, noisy_accuracies, EvalNoise, EVAL_REPEATS};

pub const CSV_HEADER: [&str; 12] = [
    "mechanism", "variable", "value", "epsilon", "delta", "alpha", "p", "scale", "warning", "mean_acc",
    "std_acc", "trials",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variable {
    Alpha,
    Epsilon,
}

impl std::fmt::Display for Variable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variable::Alpha => "alpha",
            Variable::Epsilon => "epsilon",
        })
    }
}

/// Budget fields held constant. The one named by `variable` is ignored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Fixed {
    pub epsilon: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub alpha: f64,
}

fn default_delta() -> f64 {
    1e-5
}

fn default_repeats() -> usize {
    EVAL_REPEATS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub variable: Variable,
    pub values: Vec<f64>,
    pub fixed: Fixed,
    pub mechanisms: Vec<Mechanism>,
    /// Model used by every mechanism without an entry in `models`.
    pub model: PathBuf,
    #[serde(default)]
    pub models: BTreeMap<Mechanism, PathBuf>,
    pub dataset: PathBuf,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub seed: u64,
}

impl SweepConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut cfg: SweepConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.model);
        resolve(&mut cfg.dataset);
        cfg.models.values_mut().for_each(resolve);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.values.is_empty() {
            return bad("values is empty".into());
        }
        if self.values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("values must be finite and non-negative".into());
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("values must be strictly increasing".into());
        }
        if self.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if self.mechanisms.is_empty() {
            return bad("no mechanisms".into());
        }
        Ok(())
    }

    pub fn model_path(&self, m: Mechanism) -> &Path {
        self.models.get(&m).unwrap_or(&self.model)
    }

    /// SHA-256 of the config's canonical JSON.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `(ε, α)` of the cell at `value`.
    fn cell(&self, value: f64) -> (f64, f64) {
        match self.variable {
            Variable::Alpha => (self.fixed.epsilon, value),
            Variable::Epsilon => (value, self.fixed.alpha),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mechanism: Mechanism,
    pub variable: Variable,
    pub value: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub alpha: f64,
    pub p: crate::budget::Norm,
    /// Calibrated noise scale; 0 for baselines, `None` for failed rows.
    pub scale: Option<f64>,
    /// Lipschitz bound used for calibration (1 for input placement).
    pub mu: f64,
    /// `;`-separated tags such as `baseline`, `classical-regime`,
    /// `audit=fail` or `failed: <reason>`.
    pub warning: String,
    pub mean_acc: Option<f64>,
    pub std_acc: Option<f64>,
    pub accuracies: Vec<f64>,
}

impl SweepRow {
    pub fn is_baseline(&self) -> bool {
        self.warning.split(';').any(|t| t == "baseline")
    }

    pub fn is_failed(&self) -> bool {
        self.warning.split(';').any(|t| t.starts_with("failed"))
    }

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        vec![
            self.mechanism.to_string(),
            self.variable.to_string(),
            self.value.to_string(),
            self.epsilon.to_string(),
            self.delta.to_string(),
            self.alpha.to_string(),
            self.p.to_string(),
            opt(self.scale),
            self.warning.clone(),
            opt(self.mean_acc),
            opt(self.std_acc),
            self.accuracies.len().to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    pub config: SweepConfig,
    pub lipschitz: BTreeMap<Mechanism, f64>,
    pub rows: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub manifest: Manifest,
}

struct Prepared {
    model: LayeredModel,
    mu: f64,
}

fn prepare(cfg: &SweepConfig, m: Mechanism) -> Result<Prepared> {
    let model = LayeredModel::load(cfg.model_path(m))?;
    let mu = match m {
        Mechanism::GaussInput => 1.0,
        _ => model_lipschitz(&model, m.norm())?.value,
    };
    Ok(Prepared { model, mu })
}

fn run_cell(
    cfg: &SweepConfig,
    m: Mechanism,
    prepared: &Prepared,
    dataset: &Dataset,
    value: f64,
    eval_seed: u64,
) -> SweepRow {
    let (epsilon, alpha) = cfg.cell(value);
    let delta = if m == Mechanism::LapOutput { 0.0 } else { cfg.fixed.delta };
    let mut row = SweepRow {
        mechanism: m,
        variable: cfg.variable,
        value,
        epsilon,
        delta,
        alpha,
        p: m.norm(),
        scale: None,
        mu: prepared.mu,
        warning: String::new(),
        mean_acc: None,
        std_acc: None,
        accuracies: Vec::new(),
    };
    let outcome = (|| -> Result<(Option<NoiseSpec>, Vec<f64>)> {
        let rows = dataset.split(Split::Test)?;
        if alpha == 0.0 {
            let acc = noisy_accuracies(&prepared.model, &rows, None, eval_seed, cfg.repeats)?;
            return Ok((None, acc));
        }
        let budget = PrivacyBudget::new(epsilon, delta, alpha, m.norm())?;
        let spec = m.calibrate(&budget, &prepared.model)?;
        let noise = EvalNoise::from(&spec);
        let acc = noisy_accuracies(&prepared.model, &rows, Some(&noise), eval_seed, cfg.repeats)?;
        Ok((Some(spec), acc))
    })();
    match outcome {
        Ok((spec, acc)) => {
            let mut tags = Vec::new();
            match &spec {
                None => {
                    row.scale = Some(0.0);
                    tags.push("baseline".to_string());
                }
                Some(spec) => {
                    row.scale = Some(spec.scale);
                    if let Some(w) = spec.warning {
                        tags.push(w.to_string());
                        match audit_analytic_gauss(spec, epsilon, delta) {
                            Ok(r) if r.verdict == Verdict::Pass => tags.push("audit=pass".into()),
                            Ok(_) => tags.push("audit=fail".into()),
                            Err(e) => tags.push(format!("audit error: {e}")),
                        }
                    }
                }
            }
            let (mean, std) = mean_std(&acc);
            row.mean_acc = Some(mean);
            row.std_acc = Some(std);
            row.accuracies = acc;
            row.warning = tags.join(";");
        }
        Err(e) => row.warning = format!("failed: {e}"),
    }
    row
}

/// Runs every (mechanism, value) cell.
///
/// Rows come out ordered by mechanism as listed, then by value. `α = 0`
/// cells are noiseless baselines. Lap-Output cells use the pure budget
/// `δ = 0`. A cell that cannot be calibrated becomes a failed row and the
/// sweep continues. All cells share one evaluation seed, so rows with equal
/// noise scale see identical noise.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let dataset = Dataset::read_csv(&cfg.dataset)?;
    let eval_seed = derive_stream(cfg.seed, 0, purpose::EVAL);
    let mut prepared = Vec::new();
    let mut lipschitz = BTreeMap::new();
    for &m in &cfg.mechanisms {
        let p = prepare(cfg, m)?;
        if p.model.input_dim() != dataset.dim() {
            return Err(Error::DimensionMismatch {
                expected: dataset.dim(),
                actual: p.model.input_dim(),
            });
        }
        lipschitz.insert(m, p.mu);
        prepared.push((m, p));
    }
    let cells: Vec<(usize, f64)> = (0..prepared.len())
        .flat_map(|i| cfg.values.iter().map(move |&v| (i, v)))
        .collect();
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(i, v)| {
            let (m, p) = &prepared[i];
            run_cell(cfg, *m, p, &dataset, v, eval_seed)
        })
        .collect();
    let warnings = rows
        .iter()
        .filter(|r| !r.warning.is_empty() && !r.is_baseline())
        .map(|r| format!("{} {}={}: {}", r.mechanism, r.variable, r.value, r.warning))
        .collect();
    let manifest = Manifest {
        config_hash: cfg.hash(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        lipschitz,
        rows: rows.len(),
        warnings,
    };
    Ok(SweepResult { rows, manifest })
}

pub fn write_csv(rows: &[SweepRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

/// Checks every calibrated row against the closed-form scale. Returns one
/// message per mismatch.
pub fn self_test(rows: &[SweepRow]) -> Vec<String> {
    let mut problems = Vec::new();
    for r in rows.iter().filter(|r| !r.is_baseline() && !r.is_failed()) {
        let Some(scale) = r.scale else { continue };
        let ratio = radius_ratio(r.alpha, r.epsilon);
        let expected = match r.mechanism.family() {
            Family::Laplace => r.mu * ratio,
            Family::Gaussian => gaussian_sigma(r.delta, r.mu, r.alpha, r.epsilon),
        };
        let independent = match r.mechanism.family() {
            Family::Laplace => r.mu * r.alpha / r.epsilon,
            Family::Gaussian => (2.0 * (1.25 / r.delta).ln()).sqrt() * r.mu * r.alpha / r.epsilon,
        };
        if scale != expected || (scale - independent).abs() > 1e-9 * independent {
            problems.push(format!(
                "{} {}={}: scale {scale}, expected {independent}",
                r.mechanism, r.variable, r.value
            ));
        }
    }
    problems
}
