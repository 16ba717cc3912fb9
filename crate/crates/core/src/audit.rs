//! Checking calibrated mechanisms against their claimed guarantee.
//!
//! For a pair of inputs `x_a, x_b` within radius `α`, the smallest `δ` that
//! makes `Pr[M(x_a) ∈ S] ≤ e^ε Pr[M(x_b) ∈ S] + δ` hold for every set `S` is
//!
//! ```text
//! δ(ε) = sup_S  Pr_a[S] − e^ε Pr_b[S]
//! ```
//!
//! and the supremum is attained by the likelihood-ratio set
//! `{y : ln f_a(y) − ln f_b(y) > ε}`. Three audits are provided:
//!
//! * [`audit_analytic_gauss`]: the closed form for shifted Gaussians.
//! * [`audit_additive_mc`]: Monte Carlo estimate of both probabilities of the
//!   likelihood-ratio set, with Clopper–Pearson bounds.
//! * [`audit_end_to_end`]: runs the full mechanism on both inputs and scans
//!   threshold sets of a scalar statistic. This can only under-estimate `δ`,
//!   so a `fail` is a real violation while a `pass` means none was found.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::budget::{distance, Norm, PrivacyBudget};
use crate::error::{Error, Result};
use crate::mechanisms::{release_with_noise, Family, NoiseSpec, Placement};
use crate::model::{argmax, LayeredModel};
use crate::rng::{purpose, NoiseGenerator, RandomSource};

/// One-sided confidence of every reported bound.
pub const CONFIDENCE: f64 = 0.99;
/// Below this many trials an audit is always inconclusive.
pub const MIN_TRIALS: usize = 10_000;
pub const DEFAULT_TRIALS: usize = 1_000_000;
pub const DEFAULT_BINS: usize = 100;

const CHUNK: usize = 1 << 16;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Exact `δ(ε)` between `N(0, σ²I)` and `N(Δ, σ²I)` with `‖Δ‖₂ = sensitivity`:
///
/// `Φ(s/2σ − εσ/s) − e^ε Φ(−s/2σ − εσ/s)`.
pub fn analytic_gauss_delta(sigma: f64, sensitivity: f64, epsilon: f64) -> Result<f64> {
    for (name, v) in [("sigma", sigma), ("sensitivity", sensitivity), ("epsilon", epsilon)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(Error::AuditPrecondition(format!("{name} must be positive, got {v}")));
        }
    }
    let a = sensitivity / (2.0 * sigma);
    let b = epsilon * sigma / sensitivity;
    let upper = std_normal_cdf(a - b);
    let lower = std_normal_cdf(-a - b);
    let lower = if lower == 0.0 {
        0.0
    } else {
        (epsilon + lower.ln()).exp()
    };
    Ok((upper - lower).max(0.0))
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> bool) -> f64 {
    // Invariant: f(lo) is false and f(hi) is true.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    hi
}

/// One-sided Clopper–Pearson upper bound on a binomial proportion at level
/// `1 − alpha` after `k` successes in `n` trials.
pub fn clopper_pearson_upper(k: u64, n: u64, alpha: f64) -> f64 {
    assert!(k <= n && n > 0);
    if k == n {
        return 1.0;
    }
    if k == 0 {
        return -(alpha.ln() / n as f64).exp_m1();
    }
    let (a, b) = ((k + 1) as f64, (n - k) as f64);
    // P(X ≤ k | p) = 1 − I_p(k+1, n−k) falls as p grows.
    bisect(0.0, 1.0, |p| 1.0 - beta_reg(a, b, p) <= alpha)
}

/// One-sided Clopper–Pearson lower bound, see [`clopper_pearson_upper`].
pub fn clopper_pearson_lower(k: u64, n: u64, alpha: f64) -> f64 {
    assert!(k <= n && n > 0);
    if k == 0 {
        return 0.0;
    }
    if k == n {
        return (alpha.ln() / n as f64).exp();
    }
    let (a, b) = (k as f64, (n - k + 1) as f64);
    // P(X ≥ k | p) = I_p(k, n−k+1) grows with p.
    1.0 - bisect(0.0, 1.0, |q| beta_reg(a, b, 1.0 - q) <= alpha)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AuditMethod {
    AnalyticGaussian,
    McLikelihoodRatio,
    EndToEndThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub epsilon_target: f64,
    pub delta_target: f64,
    pub delta_hat: f64,
    pub delta_upper_conf: f64,
    pub trials: usize,
    pub method: AuditMethod,
    pub verdict: Verdict,
    pub pair_description: String,
    /// Estimated probabilities of the rejection set under each input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_a: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_b: Option<f64>,
    /// Binomial standard error of `delta_hat` before flooring at zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std_error: Option<f64>,
}

fn verdict(delta_hat: f64, delta_upper: f64, target: f64, trials_ok: bool) -> Verdict {
    if !trials_ok {
        Verdict::Inconclusive
    } else if delta_upper <= target {
        Verdict::Pass
    } else if delta_hat > target {
        Verdict::Fail
    } else {
        Verdict::Inconclusive
    }
}

/// `μα` for output placement, `α` for input placement.
pub fn sensitivity(spec: &NoiseSpec) -> f64 {
    let alpha = spec.provenance.budget.alpha();
    match spec.placement {
        Placement::Output => spec.provenance.mu * alpha,
        Placement::Input => alpha,
    }
}

/// Exact audit of a Gaussian spec at its worst-case shift.
pub fn audit_analytic_gauss(spec: &NoiseSpec, epsilon: f64, delta_target: f64) -> Result<AuditReport> {
    if spec.family != Family::Gaussian {
        return Err(Error::AuditPrecondition("analytic audit needs Gaussian noise".into()));
    }
    let s = sensitivity(spec);
    let delta = analytic_gauss_delta(spec.scale, s, epsilon)?;
    Ok(AuditReport {
        epsilon_target: epsilon,
        delta_target,
        delta_hat: delta,
        delta_upper_conf: delta,
        trials: 0,
        method: AuditMethod::AnalyticGaussian,
        verdict: verdict(delta, delta, delta_target, true),
        pair_description: format!("shifted Gaussians, ‖Δ‖₂ = {s}"),
        p_a: None,
        p_b: None,
        std_error: None,
    })
}

/// A worst-case configuration for an additive mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum WorstCase {
    /// Two inputs exactly `α` apart along the first coordinate.
    InputPair { x_a: Vec<f64>, x_b: Vec<f64> },
    /// Output-space shift of length `μα` along the first coordinate; it has
    /// the largest norm any pair within radius `α` can produce.
    OutputShift(Vec<f64>),
}

/// For input placement `x_b = x_a + α e₁`; by coordinate symmetry of i.i.d.
/// noise (and spherical symmetry for Gaussians under `ℓ2`) every direction
/// gives the same privacy loss distribution. For output placement the shift
/// is `μα e₁` in a `dim`-dimensional output space.
pub fn worst_case_pair(
    budget: &PrivacyBudget,
    placement: Placement,
    x_a: &[f64],
    mu: f64,
    output_dim: usize,
) -> WorstCase {
    let alpha = budget.alpha();
    match placement {
        Placement::Input => {
            let mut x_b = x_a.to_vec();
            if let Some(first) = x_b.first_mut() {
                *first += alpha;
            }
            WorstCase::InputPair {
                x_a: x_a.to_vec(),
                x_b,
            }
        }
        Placement::Output => {
            let mut shift = vec![0.0; output_dim.max(1)];
            shift[0] = mu * alpha;
            WorstCase::OutputShift(shift)
        }
    }
}

/// `ln f(y) − ln f(y − shift)` restricted to the coordinates in `support`.
fn additive_log_ratio(family: Family, scale: f64, y: &[f64], shift: &[f64]) -> f64 {
    match family {
        Family::Gaussian => {
            y.iter()
                .zip(shift)
                .map(|(yi, si)| (yi - si).powi(2) - yi * yi)
                .sum::<f64>()
                / (2.0 * scale * scale)
        }
        Family::Laplace => {
            y.iter()
                .zip(shift)
                .map(|(yi, si)| (yi - si).abs() - yi.abs())
                .sum::<f64>()
                / scale
        }
    }
}

fn draw(g: &mut NoiseGenerator, family: Family, scale: f64, n: usize) -> Vec<f64> {
    match family {
        Family::Gaussian => g.gaussian_vec(scale, n),
        Family::Laplace => g.laplace_vec(scale, n),
    }
}

fn count_parallel(trials: usize, rng: &RandomSource, tag: u64, hit: impl Fn(&mut NoiseGenerator) -> bool + Sync) -> u64 {
    let chunks = trials.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let n = CHUNK.min(trials - c * CHUNK);
            let mut g = rng.substream(c as u64, tag).generator();
            (0..n).filter(|_| hit(&mut g)).count() as u64
        })
        .sum()
}

/// Monte Carlo audit of additive noise against a fixed output shift.
///
/// `trials` draws under each of the unshifted and shifted noise, from
/// independent streams, estimate `P_a` and `P_b` of the likelihood-ratio set
/// `{L > ε}`. `delta_hat = max(0, P̂_a − e^ε P̂_b)`; the upper bound combines
/// a one-sided 99% Clopper–Pearson upper bound on `P_a` with a 99% lower
/// bound on `P_b`. Only coordinates where the shift is nonzero
/// affect `L`, so only those are drawn.
pub fn audit_additive_mc(
    spec: &NoiseSpec,
    shift: &[f64],
    epsilon: f64,
    delta_target: f64,
    trials: usize,
    rng: &RandomSource,
) -> Result<AuditReport> {
    if shift.len() != spec.dim {
        return Err(Error::DimensionMismatch {
            expected: spec.dim,
            actual: shift.len(),
        });
    }
    if trials == 0 {
        return Err(Error::AuditPrecondition("at least one trial is required".into()));
    }
    let support: Vec<f64> = shift.iter().copied().filter(|s| *s != 0.0).collect();
    let (family, scale) = (spec.family, spec.scale);
    // Points exactly on the boundary L = ε contribute nothing to P_a − e^ε P_b;
    // the slack keeps rounding in L from counting them.
    let threshold = epsilon * (1.0 + 1e-12);

    let k_a = count_parallel(trials, rng, purpose::AUDIT_A, |g| {
        let y = draw(g, family, scale, support.len());
        additive_log_ratio(family, scale, &y, &support) > threshold
    });
    let k_b = count_parallel(trials, rng, purpose::AUDIT_B, |g| {
        let mut y = draw(g, family, scale, support.len());
        y.iter_mut().zip(&support).for_each(|(v, s)| *v += s);
        additive_log_ratio(family, scale, &y, &support) > threshold
    });

    let n = trials as u64;
    let level = 1.0 - CONFIDENCE;
    let e = epsilon.exp();
    let p_a = k_a as f64 / trials as f64;
    let p_b = k_b as f64 / trials as f64;
    let delta_hat = (p_a - e * p_b).max(0.0);
    let delta_upper = (clopper_pearson_upper(k_a, n, level) - e * clopper_pearson_lower(k_b, n, level)).max(0.0);
    let norm = match family {
        Family::Gaussian => Norm::L2,
        Family::Laplace => Norm::L1,
    };
    Ok(AuditReport {
        epsilon_target: epsilon,
        delta_target,
        delta_hat,
        delta_upper_conf: delta_upper.max(delta_hat),
        trials,
        method: AuditMethod::McLikelihoodRatio,
        verdict: verdict(delta_hat, delta_upper, delta_target, trials >= MIN_TRIALS),
        pair_description: format!(
            "additive {family:?} noise (scale {scale}) vs. shift of ℓ{norm} length {}",
            norm.norm(shift)
        ),
        p_a: Some(p_a),
        p_b: Some(p_b),
        std_error: Some(
            ((p_a * (1.0 - p_a) + e * e * p_b * (1.0 - p_b)) / trials as f64).sqrt(),
        ),
    })
}

/// The scalar an end-to-end audit thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// Log-likelihood ratio when the output density is known (output
    /// placement), first output coordinate otherwise.
    Auto,
    FirstCoordinate,
    /// The predicted class, i.e. the audit of `predict ∘ M`.
    PredictedClass,
}

/// Result of scanning threshold sets over two samples of a statistic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdScan {
    /// Max over sets of the lower confidence bound on `P_a − e^ε P_b`, floored at 0.
    pub delta_hat: f64,
    /// Max over sets of the upper confidence bound, floored at 0.
    pub delta_upper: f64,
    /// Max over sets of the plain point estimate, floored at 0.
    pub delta_point: f64,
    pub sets: usize,
}

/// Scans the sets `{s ≥ t}` and `{s < t}` for thresholds `t` at the pooled
/// `k/bins` quantiles. Bounds are Clopper–Pearson with a Bonferroni split of
/// `1 − CONFIDENCE` over all sets and both probabilities.
pub fn threshold_scan(stat_a: &[f64], stat_b: &[f64], epsilon: f64, bins: usize) -> ThresholdScan {
    let mut a = stat_a.to_vec();
    let mut b = stat_b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let bins = bins.max(2);
    let mut edges: Vec<f64> = (1..bins)
        .map(|k| pooled[(k * pooled.len() / bins).min(pooled.len() - 1)])
        .collect();
    edges.dedup();

    let (na, nb) = (a.len() as u64, b.len() as u64);
    let sets = 2 * edges.len();
    let level = (1.0 - CONFIDENCE) / (2.0 * sets.max(1) as f64);
    let e = epsilon.exp();
    let mut scan = ThresholdScan {
        delta_hat: 0.0,
        delta_upper: 0.0,
        delta_point: 0.0,
        sets,
    };
    for &t in &edges {
        let below_a = a.partition_point(|v| *v < t) as u64;
        let below_b = b.partition_point(|v| *v < t) as u64;
        for (ka, kb) in [(na - below_a, nb - below_b), (below_a, below_b)] {
            let point = ka as f64 / na as f64 - e * kb as f64 / nb as f64;
            let lower = clopper_pearson_lower(ka, na, level) - e * clopper_pearson_upper(kb, nb, level);
            let upper = clopper_pearson_upper(ka, na, level) - e * clopper_pearson_lower(kb, nb, level);
            scan.delta_point = scan.delta_point.max(point);
            scan.delta_hat = scan.delta_hat.max(lower);
            scan.delta_upper = scan.delta_upper.max(upper);
        }
    }
    scan
}

/// Everything an end-to-end audit needs besides the model and noise.
#[derive(Debug, Clone, PartialEq)]
pub struct EndToEndSetup {
    pub x_a: Vec<f64>,
    pub x_b: Vec<f64>,
    pub epsilon: f64,
    pub delta_target: f64,
    pub trials: usize,
    pub bins: usize,
    pub statistic: Statistic,
}

/// Runs the mechanism `trials` times on each of `x_a` and `x_b` and scans
/// threshold sets of a scalar statistic of the released output.
///
/// The budget checked is the spec's provenance budget: the pair must lie
/// within its radius.
pub fn audit_end_to_end(
    model: &LayeredModel,
    spec: &NoiseSpec,
    setup: &EndToEndSetup,
    rng: &RandomSource,
) -> Result<AuditReport> {
    let budget = spec.provenance.budget;
    let d = distance(&setup.x_a, &setup.x_b, budget.p())?;
    if d > budget.alpha() * (1.0 + 1e-12) {
        return Err(Error::AuditPrecondition(format!(
            "pair is {d} apart, beyond the radius {}",
            budget.alpha()
        )));
    }
    if setup.trials == 0 {
        return Err(Error::AuditPrecondition("at least one trial is required".into()));
    }
    let clean_a = model.forward(&setup.x_a)?;
    let clean_b = model.forward(&setup.x_b)?;
    let statistic = match setup.statistic {
        Statistic::Auto if spec.placement == Placement::Output => None,
        Statistic::Auto => Some(Statistic::FirstCoordinate),
        other => Some(other),
    };
    let stat = |y: &[f64]| -> f64 {
        match statistic {
            None => {
                let da: Vec<f64> = y.iter().zip(&clean_a).map(|(v, c)| v - c).collect();
                let shift: Vec<f64> = clean_b.iter().zip(&clean_a).map(|(b, a)| b - a).collect();
                additive_log_ratio(spec.family, spec.scale, &da, &shift)
            }
            Some(Statistic::PredictedClass) => argmax(y) as f64,
            Some(_) => y[0],
        }
    };
    let sample = |x: &[f64], tag: u64| -> Result<Vec<f64>> {
        let chunks = setup.trials.div_ceil(CHUNK);
        let parts = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let n = CHUNK.min(setup.trials - c * CHUNK);
                let mut g = rng.substream(c as u64, tag).generator();
                (0..n)
                    .map(|_| {
                        let z = draw(&mut g, spec.family, spec.scale, spec.dim);
                        Ok(stat(&release_with_noise(model, x, spec.placement, &z)?))
                    })
                    .collect::<Result<Vec<f64>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(parts.concat())
    };
    let stat_a = sample(&setup.x_a, purpose::AUDIT_A)?;
    let stat_b = sample(&setup.x_b, purpose::AUDIT_B)?;
    let scan = threshold_scan(&stat_a, &stat_b, setup.epsilon, setup.bins);
    let statistic_name = match statistic {
        None => "log-likelihood ratio",
        Some(Statistic::PredictedClass) => "predicted class",
        Some(_) => "first output coordinate",
    };
    Ok(AuditReport {
        epsilon_target: setup.epsilon,
        delta_target: setup.delta_target,
        delta_hat: scan.delta_hat,
        delta_upper_conf: scan.delta_upper.max(scan.delta_hat),
        trials: setup.trials,
        method: AuditMethod::EndToEndThreshold,
        verdict: verdict(
            scan.delta_hat,
            scan.delta_upper,
            setup.delta_target,
            setup.trials >= MIN_TRIALS,
        ),
        pair_description: format!(
            "x_a, x_b at ℓ{} distance {d}; {} threshold sets of the {statistic_name}",
            budget.p(),
            scan.sets
        ),
        p_a: None,
        p_b: None,
        std_error: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{calibrate_gauss_output, calibrate_laplace_output};

    fn gauss_spec(e: f64, d: f64, a: f64, mu: f64) -> NoiseSpec {
        calibrate_gauss_output(&PrivacyBudget::new(e, d, a, Norm::L2).unwrap(), mu, 1).unwrap()
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(std_normal_cdf(0.0), 0.5);
        let q = std_normal_cdf(1.959963984540054);
        assert!((q - 0.975).abs() < 2e-12, "{q}");
        let t = std_normal_cdf(-5.0);
        assert!((t - 2.866515718791933e-7).abs() < 1e-9 * t, "{t}");
    }

    #[test]
    fn calibrated_gaussian_is_conservative() {
        let spec = gauss_spec(1.0, 1e-5, 0.1, 1.0);
        let d = analytic_gauss_delta(spec.scale, 0.1, 1.0).unwrap();
        assert!(d < 1e-5, "{d}");
        assert!(d > 0.0);
        assert!(analytic_gauss_delta(spec.scale, 0.1, 20.0).unwrap() < 1e-12);
    }

    #[test]
    fn analytic_delta_decreases_in_sigma() {
        let mut last = f64::INFINITY;
        for k in 1..50 {
            let d = analytic_gauss_delta(0.05 * k as f64, 0.1, 0.5).unwrap();
            assert!(d <= last);
            last = d;
        }
        assert!(analytic_gauss_delta(0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn analytic_delta_against_quadrature() {
        // δ = ∫ (f_a − e^ε f_b)₊ along the shift direction.
        let (sigma, s, eps) = (0.7, 1.3, 0.4f64);
        let pdf = |x: f64, m: f64| (-(x - m).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt());
        let (lo, hi, n) = (-12.0, 12.0, 400_000);
        let h = (hi - lo) / n as f64;
        let quad: f64 = (0..n)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                (pdf(x, 0.0) - eps.exp() * pdf(x, s)).max(0.0) * h
            })
            .sum();
        let exact = analytic_gauss_delta(sigma, s, eps).unwrap();
        assert!((quad - exact).abs() < 1e-8, "{quad} vs {exact}");
    }

    #[test]
    fn clopper_pearson_known_values() {
        let n = 1_000_000;
        assert!((clopper_pearson_upper(0, n, 0.01) - (1.0 - 0.01f64.powf(1e-6))).abs() < 1e-15);
        // Poisson limits: upper 99% for 3 events is 10.045 / n.
        assert!((clopper_pearson_upper(3, n, 0.01) * n as f64 - 10.045).abs() < 0.01);
        assert!((clopper_pearson_lower(3, n, 0.01) * n as f64 - 0.4360).abs() < 0.001);
        // Symmetric case at n = 10, k = 5: exact 95% two-sided bounds.
        assert!((clopper_pearson_lower(5, 10, 0.025) - 0.187086).abs() < 1e-5);
        assert!((clopper_pearson_upper(5, 10, 0.025) - 0.812914).abs() < 1e-5);
        assert_eq!(clopper_pearson_lower(0, 10, 0.01), 0.0);
        assert_eq!(clopper_pearson_upper(10, 10, 0.01), 1.0);
    }

    #[test]
    fn worst_case_constructions() {
        let b = PrivacyBudget::new(1.0, 1e-5, 0.1, Norm::L2).unwrap();
        let WorstCase::InputPair { x_a, x_b } = worst_case_pair(&b, Placement::Input, &[0.5, 0.5, 0.5], 1.0, 0) else {
            panic!()
        };
        assert!((distance(&x_a, &x_b, Norm::L2).unwrap() - 0.1).abs() < 1e-15);
        let WorstCase::OutputShift(s) = worst_case_pair(&b, Placement::Output, &[], 3.0, 4) else {
            panic!()
        };
        assert!((Norm::L2.norm(&s) - 0.3).abs() < 1e-15);
        let z = PrivacyBudget::new(1.0, 1e-5, 0.0, Norm::L2).unwrap();
        let WorstCase::InputPair { x_a, x_b } = worst_case_pair(&z, Placement::Input, &[1.0, 2.0], 1.0, 0) else {
            panic!()
        };
        assert_eq!(x_a, x_b);
    }

    #[test]
    fn too_few_trials_is_inconclusive() {
        let spec = gauss_spec(1.0, 1e-5, 0.1, 1.0);
        let r = audit_additive_mc(&spec, &[0.1], 1.0, 1e-5, 1000, &RandomSource::new(1, 1)).unwrap();
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(r.delta_hat <= r.delta_upper_conf);
    }

    #[test]
    fn mc_detects_stricter_epsilon() {
        let spec = gauss_spec(1.0, 1e-5, 0.1, 1.0);
        let r = audit_additive_mc(&spec, &[0.1], 0.25, 1e-5, 200_000, &RandomSource::new(2, 2)).unwrap();
        assert!(analytic_gauss_delta(spec.scale, 0.1, 0.25).unwrap() > 1e-2);
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn laplace_never_exceeds_epsilon() {
        let spec = calibrate_laplace_output(&PrivacyBudget::pure(0.5, 0.2, Norm::L1).unwrap(), 2.0, 2).unwrap();
        let r = audit_additive_mc(&spec, &[0.4, 0.0], 0.5, 1e-4, 100_000, &RandomSource::new(3, 3)).unwrap();
        assert_eq!(r.p_a, Some(0.0));
        assert_eq!(r.delta_hat, 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn threshold_scan_identical_samples() {
        let mut g = RandomSource::new(4, 4).generator();
        let a = g.gaussian_vec(1.0, 50_000);
        let b = g.gaussian_vec(1.0, 50_000);
        let s = threshold_scan(&a, &b, 0.1, 50);
        assert_eq!(s.delta_hat, 0.0);
        assert!(s.delta_point < 0.01);
    }

    #[test]
    fn threshold_scan_monotone_in_epsilon() {
        let mut g = RandomSource::new(5, 5).generator();
        let a = g.gaussian_vec(1.0, 20_000);
        let b: Vec<f64> = g.gaussian_vec(1.0, 20_000).into_iter().map(|v| v + 1.0).collect();
        let mut last = f64::INFINITY;
        for k in 0..30 {
            let s = threshold_scan(&a, &b, 0.05 * k as f64, 40);
            assert!(s.delta_hat <= last);
            assert!(s.delta_hat <= s.delta_upper);
            last = s.delta_hat;
        }
    }
}
