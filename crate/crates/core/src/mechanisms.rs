//! The three additive inference-privacy mechanisms.
//!
//! | mechanism      | release              | noise                         | guarantee                 |
//! |----------------|----------------------|-------------------------------|---------------------------|
//! | `lap-output`   | `C(x) + Z`           | `Lap(μ₁ α / ε)` per output    | `{ε, α}` over `ℓ1`        |
//! | `gauss-output` | `C(x) + Z`           | `N(0, σ²)`, `σ = √(2 ln(1.25/δ)) α μ₂ / ε` | `{(ε, δ), α}` over `ℓ2` |
//! | `gauss-input`  | `C(x + Z)`           | `N(0, σ²)`, `σ = √(2 ln(1.25/δ)) α / ε`    | `{(ε, δ), α}` over `ℓ2` |
//!
//! Output noise needs the model's Lipschitz bound `μ` because moving the
//! input by `α` moves the output by at most `μα`. Input noise protects the
//! identity map, and the model is a post-processing step.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::budget::{Norm, PrivacyBudget};
use crate::error::{Error, Result};
use crate::lipschitz::model_lipschitz;
use crate::model::LayeredModel;
use crate::rng::RandomSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Laplace,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Input,
    Output,
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "input" => Ok(Placement::Input),
            "output" => Ok(Placement::Output),
            _ => Err(Error::InvalidConfig(format!(
                "unknown placement {s:?}, expected input or output"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mechanism {
    GaussInput,
    GaussOutput,
    LapOutput,
}

impl Mechanism {
    pub const ALL: [Mechanism; 3] = [
        Mechanism::GaussInput,
        Mechanism::GaussOutput,
        Mechanism::LapOutput,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mechanism::GaussInput => "gauss-input",
            Mechanism::GaussOutput => "gauss-output",
            Mechanism::LapOutput => "lap-output",
        }
    }

    pub fn placement(self) -> Placement {
        match self {
            Mechanism::GaussInput => Placement::Input,
            Mechanism::GaussOutput | Mechanism::LapOutput => Placement::Output,
        }
    }

    pub fn family(self) -> Family {
        match self {
            Mechanism::LapOutput => Family::Laplace,
            Mechanism::GaussInput | Mechanism::GaussOutput => Family::Gaussian,
        }
    }

    pub fn norm(self) -> Norm {
        match self {
            Mechanism::LapOutput => Norm::L1,
            Mechanism::GaussInput | Mechanism::GaussOutput => Norm::L2,
        }
    }

    /// Calibrates for `model`, bounding its Lipschitz constant when the
    /// noise goes on the output.
    pub fn calibrate(self, budget: &PrivacyBudget, model: &LayeredModel) -> Result<NoiseSpec> {
        match self {
            Mechanism::GaussInput => calibrate_gauss_input(budget, model.input_dim()),
            Mechanism::GaussOutput => {
                let mu = model_lipschitz(model, Norm::L2)?.value;
                calibrate_gauss_output(budget, mu, model.output_dim())
            }
            Mechanism::LapOutput => {
                let mu = model_lipschitz(model, Norm::L1)?.value;
                calibrate_laplace_output(budget, mu, model.output_dim())
            }
        }
    }
}

impl fmt::Display for Mechanism {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mechanism {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mechanism::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown mechanism {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CalibrationWarning {
    /// Gaussian calibration at `ε > 1`, where the `√(2 ln(1.25/δ))` constant
    /// is not known to suffice. Run the auditor before relying on it.
    ClassicalRegime,
}

impl fmt::Display for CalibrationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibrationWarning::ClassicalRegime => f.write_str("classical-regime"),
        }
    }
}

/// The inputs a calibration was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub mechanism: Mechanism,
    pub budget: PrivacyBudget,
    /// Lipschitz bound used; 1 for input placement.
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub family: Family,
    /// Laplace scale `b` or Gaussian standard deviation `σ`.
    pub scale: f64,
    pub dim: usize,
    pub placement: Placement,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<CalibrationWarning>,
}

impl NoiseSpec {
    /// Recomputes the calibration from the recorded provenance.
    pub fn recalibrate(&self) -> Result<NoiseSpec> {
        let p = &self.provenance;
        match p.mechanism {
            Mechanism::GaussInput => calibrate_gauss_input(&p.budget, self.dim),
            Mechanism::GaussOutput => calibrate_gauss_output(&p.budget, p.mu, self.dim),
            Mechanism::LapOutput => calibrate_laplace_output(&p.budget, p.mu, self.dim),
        }
    }

    /// The same spec with a different scale, keeping provenance. Only for
    /// audits of deliberately miscalibrated noise.
    pub fn with_scale(&self, scale: f64) -> NoiseSpec {
        NoiseSpec {
            scale,
            ..self.clone()
        }
    }
}

/// `α/ε` rounded up to 13 significant decimal digits.
///
/// Calibrated scales depend on `(α, ε)` only through this value, so budgets
/// with the same decimal ratio, like `(0.01, 0.1)` and `(0.1, 1)`, get
/// bit-identical noise even though `0.01/0.1` and `0.1/1` differ in the last
/// binary digit.
pub fn radius_ratio(alpha: f64, epsilon: f64) -> f64 {
    let r = alpha / epsilon;
    if r == 0.0 || !r.is_finite() {
        return r;
    }
    let text = format!("{r:.12e}");
    let snapped: f64 = text.parse().expect("formatted float parses");
    if snapped >= r {
        return snapped;
    }
    let (mantissa, exponent) = text.split_once('e').expect("exponent form");
    let digits: u64 = mantissa.replace('.', "").parse().expect("decimal mantissa");
    let exponent: i32 = exponent.parse().expect("decimal exponent");
    format!("{}e{}", digits + 1, exponent - 12)
        .parse()
        .expect("formatted float parses")
}

fn check_common(budget: &PrivacyBudget, mu: f64, dim: usize) -> Result<()> {
    if budget.is_vacuous() {
        return Err(Error::Calibration(format!("budget {budget} is vacuous")));
    }
    if budget.alpha() == 0.0 {
        return Err(Error::Calibration(
            "degenerate radius α = 0: refusing to release noiseless outputs as private".into(),
        ));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::Calibration(format!(
            "Lipschitz bound must be positive and finite, got {mu}"
        )));
    }
    if dim == 0 {
        return Err(Error::Calibration("noise dimension must be positive".into()));
    }
    Ok(())
}

fn expect_norm(budget: &PrivacyBudget, p: Norm, mechanism: Mechanism) -> Result<()> {
    if budget.p() != p {
        return Err(Error::Calibration(format!(
            "{mechanism} requires an ℓ{p} budget, got ℓ{}",
            budget.p()
        )));
    }
    Ok(())
}

/// `Lap(μ₁ α / ε)` on each of `dim` outputs. Pure budgets over `ℓ1` only.
pub fn calibrate_laplace_output(budget: &PrivacyBudget, mu1: f64, dim: usize) -> Result<NoiseSpec> {
    let mechanism = Mechanism::LapOutput;
    if !budget.is_pure() {
        return Err(Error::Calibration(format!(
            "{mechanism} gives pure guarantees only; got δ = {}",
            budget.delta()
        )));
    }
    expect_norm(budget, Norm::L1, mechanism)?;
    check_common(budget, mu1, dim)?;
    Ok(NoiseSpec {
        family: Family::Laplace,
        scale: mu1 * radius_ratio(budget.alpha(), budget.epsilon()),
        dim,
        placement: Placement::Output,
        provenance: Provenance {
            mechanism,
            budget: *budget,
            mu: mu1,
        },
        warning: None,
    })
}

/// `σ = √(2 ln(1.25/δ)) · μ · α/ε`.
pub fn gaussian_sigma(delta: f64, mu: f64, alpha: f64, epsilon: f64) -> f64 {
    (2.0 * (1.25 / delta).ln()).sqrt() * mu * radius_ratio(alpha, epsilon)
}

fn calibrate_gaussian(
    budget: &PrivacyBudget,
    mu: f64,
    dim: usize,
    mechanism: Mechanism,
) -> Result<NoiseSpec> {
    if budget.is_pure() {
        return Err(Error::Calibration(format!(
            "{mechanism} needs δ > 0; use lap-output for pure budgets"
        )));
    }
    expect_norm(budget, Norm::L2, mechanism)?;
    check_common(budget, mu, dim)?;
    let warning = (budget.epsilon() > 1.0).then_some(CalibrationWarning::ClassicalRegime);
    Ok(NoiseSpec {
        family: Family::Gaussian,
        scale: gaussian_sigma(budget.delta(), mu, budget.alpha(), budget.epsilon()),
        dim,
        placement: mechanism.placement(),
        provenance: Provenance {
            mechanism,
            budget: *budget,
            mu,
        },
        warning,
    })
}

/// Gaussian noise on `dim` outputs, sized by the `ℓ2` Lipschitz bound `mu2`.
pub fn calibrate_gauss_output(budget: &PrivacyBudget, mu2: f64, dim: usize) -> Result<NoiseSpec> {
    calibrate_gaussian(budget, mu2, dim, Mechanism::GaussOutput)
}

/// Gaussian noise on the `input_dim` inputs. Same `σ` as
/// [`calibrate_gauss_output`] with `μ = 1`.
pub fn calibrate_gauss_input(budget: &PrivacyBudget, input_dim: usize) -> Result<NoiseSpec> {
    calibrate_gaussian(budget, 1.0, input_dim, Mechanism::GaussInput)
}

/// One draw of the noise vector.
pub fn sample_noise(spec: &NoiseSpec, rng: &RandomSource) -> Vec<f64> {
    let mut g = rng.generator();
    match spec.family {
        Family::Laplace => g.laplace_vec(spec.scale, spec.dim),
        Family::Gaussian => g.gaussian_vec(spec.scale, spec.dim),
    }
}

/// One mechanism run with its parts kept apart.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismTrace {
    /// The noise vector drawn for this call.
    pub noise: Vec<f64>,
    /// What was released: `C(x) + noise` or `C(x + noise)`.
    pub released: Vec<f64>,
}

/// Runs the mechanism once: `C(x) + Z` or `C(x + Z)`.
pub fn apply_mechanism(
    model: &LayeredModel,
    x: &[f64],
    spec: &NoiseSpec,
    rng: &RandomSource,
) -> Result<Vec<f64>> {
    Ok(apply_mechanism_traced(model, x, spec, rng)?.released)
}

/// [`apply_mechanism`], also returning the noise that was drawn.
pub fn apply_mechanism_traced(
    model: &LayeredModel,
    x: &[f64],
    spec: &NoiseSpec,
    rng: &RandomSource,
) -> Result<MechanismTrace> {
    if x.len() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.input_dim(),
            actual: x.len(),
        });
    }
    let expected = match spec.placement {
        Placement::Input => model.input_dim(),
        Placement::Output => model.output_dim(),
    };
    if spec.dim != expected {
        return Err(Error::DimensionMismatch {
            expected,
            actual: spec.dim,
        });
    }
    let noise = sample_noise(spec, rng);
    let released = release_with_noise(model, x, spec.placement, &noise)?;
    Ok(MechanismTrace { noise, released })
}

/// `C(x) + noise` or `C(x + noise)` for an already drawn noise vector.
pub fn release_with_noise(
    model: &LayeredModel,
    x: &[f64],
    placement: Placement,
    noise: &[f64],
) -> Result<Vec<f64>> {
    match placement {
        Placement::Output => {
            let mut y = model.forward(x)?;
            if noise.len() != y.len() {
                return Err(Error::DimensionMismatch {
                    expected: y.len(),
                    actual: noise.len(),
                });
            }
            y.iter_mut().zip(noise).for_each(|(a, z)| *a += z);
            Ok(y)
        }
        Placement::Input => {
            if noise.len() != x.len() {
                return Err(Error::DimensionMismatch {
                    expected: x.len(),
                    actual: noise.len(),
                });
            }
            let noisy: Vec<f64> = x.iter().zip(noise).map(|(a, z)| a + z).collect();
            model.forward(&noisy)
        }
    }
}

/// `ln f(y) − ln f(y − shift)` for i.i.d. `Lap(b)` noise.
pub fn laplace_log_ratio(y: &[f64], shift: &[f64], b: f64) -> f64 {
    y.iter()
        .zip(shift)
        .map(|(yi, si)| (yi - si).abs() - yi.abs())
        .sum::<f64>()
        / b
}

/// Largest `|ln f(y) − ln f(y − shift)|` over a `side × side` grid of points
/// `y = s·shift + t·(±1, …)`, with `s ∈ [−1, 2]` and `t ∈ [−10b, 10b]`.
pub fn laplace_grid_sup_log_ratio(b: f64, shift: &[f64], side: usize) -> f64 {
    let signs: Vec<f64> = (0..shift.len())
        .map(|j| if j % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    let step = |k: usize, lo: f64, hi: f64| lo + (hi - lo) * k as f64 / (side - 1) as f64;
    let mut sup: f64 = 0.0;
    let mut y = vec![0.0; shift.len()];
    for i in 0..side {
        let s = step(i, -1.0, 2.0);
        for k in 0..side {
            let t = step(k, -10.0 * b, 10.0 * b);
            for ((yj, sj), gj) in y.iter_mut().zip(shift).zip(&signs) {
                *yj = s * sj + t * gj;
            }
            sup = sup.max(laplace_log_ratio(&y, shift, b).abs());
        }
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::model::{Activation, Layer};

    fn l1(e: f64, a: f64) -> PrivacyBudget {
        PrivacyBudget::pure(e, a, Norm::L1).unwrap()
    }

    fn l2(e: f64, d: f64, a: f64) -> PrivacyBudget {
        PrivacyBudget::new(e, d, a, Norm::L2).unwrap()
    }

    fn identity_model(n: usize) -> LayeredModel {
        let layer = Layer::new(Matrix::identity(n), vec![0.0; n], Activation::Identity).unwrap();
        LayeredModel::new(n, vec![layer]).unwrap()
    }

    #[test]
    fn laplace_examples() {
        let s = calibrate_laplace_output(&l1(2.0, 0.5), 3.0, 4).unwrap();
        assert_eq!(s.scale, 0.75);
        assert_eq!((s.family, s.placement, s.dim), (Family::Laplace, Placement::Output, 4));
        assert!(matches!(
            calibrate_laplace_output(&l1(1.0, 0.0), 5.0, 4),
            Err(Error::Calibration(_))
        ));
        assert_eq!(calibrate_laplace_output(&l1(1.0, 1.0), 1.0, 1).unwrap().scale, 1.0);
    }

    #[test]
    fn laplace_rejects_approximate_or_l2() {
        let approx = PrivacyBudget::new(1.0, 1e-5, 0.1, Norm::L1).unwrap();
        assert!(calibrate_laplace_output(&approx, 1.0, 2).is_err());
        assert!(calibrate_laplace_output(&PrivacyBudget::pure(1.0, 0.1, Norm::L2).unwrap(), 1.0, 2).is_err());
    }

    #[test]
    fn gaussian_examples() {
        let base = calibrate_gauss_output(&l2(1.0, 1e-5, 0.1), 1.0, 10).unwrap();
        assert!((base.scale - 0.48448052626053895).abs() < 1e-12);
        assert_eq!(base.warning, None);

        let doubled = calibrate_gauss_output(&l2(1.0, 1e-5, 0.2), 1.0, 10).unwrap();
        assert_eq!(doubled.scale, 2.0 * base.scale);

        let ratio = calibrate_gauss_output(&l2(2.0, 1e-5, 0.2), 1.0, 10).unwrap();
        assert_eq!(ratio.scale, base.scale);
        assert_eq!(ratio.warning, Some(CalibrationWarning::ClassicalRegime));

        let input = calibrate_gauss_input(&l2(1.0, 1e-5, 0.1), 7).unwrap();
        assert_eq!(input.scale, base.scale);
        assert_eq!((input.placement, input.dim), (Placement::Input, 7));
    }

    #[test]
    fn gaussian_errors() {
        assert!(calibrate_gauss_output(&PrivacyBudget::pure(1.0, 0.1, Norm::L2).unwrap(), 1.0, 1).is_err());
        assert!(calibrate_gauss_output(&PrivacyBudget::new(1.0, 1e-5, 0.1, Norm::L1).unwrap(), 1.0, 1).is_err());
        assert!(calibrate_gauss_input(&l2(1.0, 1e-5, 0.0), 3).is_err());
        assert!(calibrate_gauss_output(&l2(1.0, 1e-5, 0.1), 0.0, 3).is_err());
    }

    #[test]
    fn ratio_snapping() {
        assert_eq!(radius_ratio(0.01, 0.1), 0.1);
        assert_eq!(radius_ratio(0.1, 1.0), 0.1);
        assert_eq!(radius_ratio(0.02, 0.2), radius_ratio(0.1, 1.0));
        for &(a, e) in &[(0.3, 0.7), (1.0 / 3.0, 1.0), (0.123456789, 2.5), (5.0, 0.1)] {
            let r = radius_ratio(a, e);
            assert!(r >= a / e);
            assert!((r - a / e) / (a / e) < 1e-12);
        }
    }

    #[test]
    fn provenance_reproduces_scale() {
        let specs = [
            calibrate_laplace_output(&l1(0.7, 0.3), 2.5, 3).unwrap(),
            calibrate_gauss_output(&l2(3.0, 1e-6, 0.05), 4.2, 2).unwrap(),
            calibrate_gauss_input(&l2(0.2, 1e-3, 0.5), 9).unwrap(),
        ];
        for s in specs {
            assert_eq!(s.recalibrate().unwrap(), s);
            let back: NoiseSpec = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
            assert_eq!(back, s);
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = calibrate_gauss_input(&l2(1.0, 1e-5, 0.1), 5).unwrap();
        let rng = RandomSource::new(9, 1);
        assert_eq!(sample_noise(&spec, &rng), sample_noise(&spec, &rng));
        assert_ne!(sample_noise(&spec, &rng), sample_noise(&spec, &RandomSource::new(9, 2)));
        assert_eq!(sample_noise(&spec, &rng).len(), 5);
    }

    #[test]
    fn output_noise_is_additive() {
        let model = identity_model(3);
        let spec = calibrate_laplace_output(&l1(1.0, 0.5), 1.0, 3).unwrap();
        let rng = RandomSource::new(1, 1);
        let x = [0.3, -1.0, 2.0];
        let y = apply_mechanism(&model, &x, &spec, &rng).unwrap();
        let noise = sample_noise(&spec, &rng);
        for i in 0..3 {
            assert_eq!(y[i], x[i] + noise[i]);
        }
        assert_eq!(y, apply_mechanism(&model, &x, &spec, &rng).unwrap());
    }

    #[test]
    fn noise_does_not_depend_on_input() {
        let layer = Layer::new(
            Matrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![2.0, 2.0]]).unwrap(),
            vec![0.1, 0.0, -0.3],
            Activation::Relu,
        )
        .unwrap();
        let model = LayeredModel::new(2, vec![layer]).unwrap();
        let spec = calibrate_gauss_output(&l2(1.0, 1e-5, 0.1), 4.0, 3).unwrap();
        let rng = RandomSource::new(5, 5);
        let a = apply_mechanism_traced(&model, &[1.0, 2.0], &spec, &rng).unwrap();
        let b = apply_mechanism_traced(&model, &[-4.0, 0.25], &spec, &rng).unwrap();
        assert_eq!(a.noise, b.noise);
        let clean = model.forward(&[1.0, 2.0]).unwrap();
        for i in 0..3 {
            assert_eq!(a.released[i], clean[i] + a.noise[i]);
        }
    }

    #[test]
    fn dimension_checks() {
        let model = identity_model(3);
        let spec = calibrate_gauss_input(&l2(1.0, 1e-5, 0.1), 4).unwrap();
        let rng = RandomSource::new(1, 1);
        assert!(apply_mechanism(&model, &[0.0; 3], &spec, &rng).is_err());
        let spec = calibrate_gauss_input(&l2(1.0, 1e-5, 0.1), 3).unwrap();
        assert!(apply_mechanism(&model, &[0.0; 2], &spec, &rng).is_err());
    }

    #[test]
    fn laplace_density_ratio_bounded() {
        let spec = calibrate_laplace_output(&l1(0.8, 0.25), 2.0, 3).unwrap();
        let shift = [0.2, -0.2, 0.1];
        assert!(laplace_grid_sup_log_ratio(spec.scale, &shift, 100) <= 0.8 + 1e-9);
        let sup = laplace_grid_sup_log_ratio(spec.scale, &[0.5, 0.0, 0.0], 100);
        assert!((sup - 0.8).abs() < 1e-9, "{sup}");
    }

    #[test]
    fn mechanism_names() {
        for m in Mechanism::ALL {
            assert_eq!(m.name().parse::<Mechanism>().unwrap(), m);
        }
        assert_eq!(serde_json::to_string(&Mechanism::GaussInput).unwrap(), "\"gauss-input\"");
    }
}
