//! Certified global Lipschitz upper bounds for layered models.
//!
//! For `C = f_L ∘ … ∘ f_1` with `f_i(x) = σ_i(W_i x + b_i)`, the product of
//! the induced operator norms `‖W_i‖_p` and the activation constants bounds
//! `sup ‖C(x) − C(x')‖_p / ‖x − x'‖_p`. Biases cancel in the difference.
//!
//! For `ℓ1` the induced norm is exact (max column sum). For `ℓ2` the spectral
//! norm is only estimated by power iteration, and calibration must not rely
//! on an estimate that could sit below the truth, so every matrix also gets a
//! certified upper bound.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::budget::Norm;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::LayeredModel;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 5_000;
// The squared Gram matrix is raised to the 2^SQUARINGS-th power.
const SQUARINGS: u32 = 8;
const ROUNDING_SLACK: f64 = 1e-12;

/// `‖W‖_{1→1}`: the largest absolute column sum.
pub fn induced_l1_norm(w: &Matrix) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let mut sums = vec![0.0; w.cols()];
    for r in 0..w.rows() {
        for (s, v) in sums.iter_mut().zip(w.row(r)) {
            *s += v.abs();
        }
    }
    Ok(sums.into_iter().fold(0.0, f64::max))
}

/// `‖W‖_{∞→∞}`: the largest absolute row sum.
pub fn induced_linf_norm(w: &Matrix) -> Result<f64> {
    if w.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    Ok((0..w.rows())
        .map(|r| w.row(r).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max))
}

/// Largest-singular-value estimate together with certified upper bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralNorm {
    /// Power-iteration estimate; a lower bound up to rounding.
    pub estimate: f64,
    /// The smallest of the upper bounds below. Always `≥ σ_max(W)`.
    pub certified: f64,
    /// `√(‖W‖₁ ‖W‖_∞)`
    pub holder: f64,
    pub frobenius: f64,
    /// `‖(WᵀW)^m‖_F^{1/2m}` with `m = 2^8`, at most `rank^{1/4m}` above the truth.
    pub gram_power: f64,
    pub iterations: usize,
    /// False when the iteration cap was hit; `certified` is still valid.
    pub converged: bool,
}

fn gram(w: &Matrix) -> Matrix {
    // Work in the smaller of WᵀW and WWᵀ; both share the nonzero spectrum.
    if w.cols() <= w.rows() {
        w.transpose().matmul(w)
    } else {
        w.matmul(&w.transpose())
    }
}

/// Returns `ln ‖G^m‖_F` for `m = 2^SQUARINGS`, or `-inf` for a zero matrix.
fn ln_frobenius_of_power(g: &Matrix) -> f64 {
    let mut b = g.clone();
    let mut log_scale = 0.0;
    for _ in 0..SQUARINGS {
        let f = b.frobenius();
        if f == 0.0 {
            return f64::NEG_INFINITY;
        }
        b.as_mut_slice().iter_mut().for_each(|v| *v /= f);
        log_scale = 2.0 * (log_scale + f.ln());
        b = b.matmul(&b);
    }
    log_scale + b.frobenius().ln()
}

fn power_iteration(w: &Matrix, start: Vec<f64>) -> (f64, usize, bool) {
    let mut v = start;
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= norm);
    let mut lambda = 0.0;
    for it in 1..=POWER_MAX_ITERS {
        let next = w.mul_vec_transposed(&w.mul_vec(&v));
        let rayleigh: f64 = v.iter().zip(&next).map(|(a, b)| a * b).sum();
        let len = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if len == 0.0 {
            return (0.0, it, true);
        }
        let done = it > 1 && (rayleigh - lambda).abs() <= POWER_TOL * rayleigh.abs();
        lambda = rayleigh;
        if done {
            return (lambda.max(0.0).sqrt(), it, true);
        }
        v = next.into_iter().map(|x| x / len).collect();
    }
    (lambda.max(0.0).sqrt(), POWER_MAX_ITERS, false)
}

/// Spectral norm `‖W‖₂` by power iteration on `WᵀW`, plus a certified bound.
///
/// The iteration starts from the normalized all-ones vector. If that start
/// is (numerically) orthogonal to the top singular vector, the estimate lands
/// below the lower bound implied by the Gram-power computation and the
/// iteration is rerun from a fixed non-symmetric start.
pub fn spectral_norm_upper(w: &Matrix) -> Result<SpectralNorm> {
    if w.is_empty() {
        return Err(Error::EmptyMatrix);
    }
    let holder = (induced_l1_norm(w)? * induced_linf_norm(w)?).sqrt();
    let frobenius = w.frobenius();

    let g = gram(w);
    let m = f64::from(1u32 << SQUARINGS);
    let ln_power = ln_frobenius_of_power(&g);
    let gram_power = (ln_power / (2.0 * m)).exp() * (1.0 + ROUNDING_SLACK);
    let gram_lower = ((ln_power - 0.5 * (g.rows() as f64).ln()) / (2.0 * m)).exp()
        * (1.0 - ROUNDING_SLACK);

    let (mut estimate, mut iterations, mut converged) = power_iteration(w, vec![1.0; w.cols()]);
    if estimate < gram_lower * (1.0 - 1e-9) {
        let alt: Vec<f64> = (0..w.cols()).map(|i| ((i + 1) as f64).sin() + 1.5).collect();
        let (e2, it2, c2) = power_iteration(w, alt);
        iterations += it2;
        if e2 > estimate {
            estimate = e2;
            converged = c2;
        }
    }

    let certified = holder.min(frobenius).min(gram_power);
    Ok(SpectralNorm {
        estimate,
        certified,
        holder,
        frobenius,
        gram_power,
        iterations,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundMethod {
    Declared,
    LayerProductL1,
    LayerProductL2Certified,
}

/// A certified upper bound `μ_C` on the global `ℓp` Lipschitz constant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzBound {
    pub p: Norm,
    pub value: f64,
    pub method: BoundMethod,
    /// Per-layer factors (operator norm times activation constant); their
    /// product is `value`. Empty for declared bounds.
    pub per_layer: Vec<f64>,
}

/// Operator norm of one weight matrix as used in the layer product.
pub fn layer_norm(w: &Matrix, p: Norm) -> Result<f64> {
    match p {
        Norm::L1 => induced_l1_norm(w),
        Norm::L2 => Ok(spectral_norm_upper(w)?.certified),
        Norm::Inf => Err(Error::UnsupportedNorm(p)),
    }
}

/// Global Lipschitz bound of `model` under `ℓ1` or `ℓ2`.
///
/// A declared constant for `p` is returned unchanged; otherwise the bound is
/// the product of per-layer operator norms and activation constants.
pub fn model_lipschitz(model: &LayeredModel, p: Norm) -> Result<LipschitzBound> {
    let method = match p {
        Norm::L1 => BoundMethod::LayerProductL1,
        Norm::L2 => BoundMethod::LayerProductL2Certified,
        Norm::Inf => return Err(Error::UnsupportedNorm(p)),
    };
    if let Some(value) = model.declared_lipschitz(p) {
        return Ok(LipschitzBound {
            p,
            value,
            method: BoundMethod::Declared,
            per_layer: Vec::new(),
        });
    }
    let per_layer = model
        .layers()
        .par_iter()
        .map(|l| Ok(layer_norm(&l.weights, p)? * l.activation.lipschitz(p)))
        .collect::<Result<Vec<f64>>>()?;
    let value: f64 = per_layer.iter().product();
    if !(value.is_finite() && value > 0.0) {
        return Err(Error::InvalidModel(format!(
            "Lipschitz bound {value} is not positive and finite (constant or degenerate model)"
        )));
    }
    Ok(LipschitzBound {
        p,
        value,
        method,
        per_layer,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer};

    fn m(rows: &[Vec<f64>]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn l1_norm_examples() {
        assert_eq!(induced_l1_norm(&Matrix::identity(3)).unwrap(), 1.0);
        assert_eq!(induced_l1_norm(&m(&[vec![1.0, -2.0], vec![3.0, 4.0]])).unwrap(), 6.0);
        assert_eq!(induced_l1_norm(&Matrix::diag(&[3.0, 4.0])).unwrap(), 4.0);
        assert!(matches!(induced_l1_norm(&Matrix::zeros(0, 0)), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn spectral_examples() {
        let s = spectral_norm_upper(&Matrix::diag(&[3.0, 4.0])).unwrap();
        assert!((s.estimate - 4.0).abs() < 1e-9);
        assert!(s.certified >= 4.0);
        assert!(s.converged);
        for n in [1, 2, 5, 16] {
            let s = spectral_norm_upper(&Matrix::identity(n)).unwrap();
            assert!((s.estimate - 1.0).abs() < 1e-12);
            assert!(s.certified >= 1.0);
        }
        assert!(matches!(spectral_norm_upper(&Matrix::zeros(0, 3)), Err(Error::EmptyMatrix)));
    }

    #[test]
    fn spectral_start_orthogonal_to_top_vector() {
        // Singular vectors (1, -1)/√2 with σ = 3 and (1, 1)/√2 with σ = 1;
        // the all-ones start sees only the small one.
        let w = m(&[vec![2.0, -1.0], vec![-1.0, 2.0]]);
        let s = spectral_norm_upper(&w).unwrap();
        assert!((s.estimate - 3.0).abs() < 1e-8, "{s:?}");
        assert!(s.certified >= 3.0);
    }

    #[test]
    fn gram_power_is_tight() {
        let w = m(&[vec![1.0, 2.0, 0.5], vec![-0.3, 0.7, 1.1]]);
        let s = spectral_norm_upper(&w).unwrap();
        assert!(s.gram_power >= s.estimate);
        assert!(s.gram_power <= s.estimate * 2f64.powf(1.0 / 1024.0) * (1.0 + 1e-9));
    }

    #[test]
    fn zero_matrix() {
        let s = spectral_norm_upper(&Matrix::zeros(2, 3)).unwrap();
        assert_eq!(s.estimate, 0.0);
        assert_eq!(s.certified, 0.0);
    }

    fn model(layers: Vec<(Matrix, Activation)>) -> LayeredModel {
        let input = layers[0].0.cols();
        let layers = layers
            .into_iter()
            .map(|(w, a)| {
                let rows = w.rows();
                Layer::new(w, vec![0.5; rows], a).unwrap()
            })
            .collect();
        LayeredModel::new(input, layers).unwrap()
    }

    #[test]
    fn model_examples() {
        let one = model(vec![(Matrix::diag(&[3.0, 4.0]), Activation::Identity)]);
        let b = model_lipschitz(&one, Norm::L2).unwrap();
        assert!((b.value - 4.0).abs() < 1e-9 && b.value >= 4.0);
        assert_eq!(b.method, BoundMethod::LayerProductL2Certified);

        let two = model(vec![
            (Matrix::diag(&[2.0, 2.0]), Activation::Relu),
            (Matrix::diag(&[3.0, 3.0]), Activation::Identity),
        ]);
        let b = model_lipschitz(&two, Norm::L1).unwrap();
        assert_eq!(b.value, 6.0);
        assert_eq!(b.per_layer, vec![2.0, 3.0]);
        assert_eq!(b.method, BoundMethod::LayerProductL1);

        let declared = one.clone().with_declared_lipschitz(Norm::L2, 1.0).unwrap();
        let b = model_lipschitz(&declared, Norm::L2).unwrap();
        assert_eq!((b.value, b.method), (1.0, BoundMethod::Declared));
        // Declared only for ℓ2; ℓ1 is still computed.
        assert_eq!(model_lipschitz(&declared, Norm::L1).unwrap().value, 4.0);

        assert!(matches!(
            model_lipschitz(&one, Norm::Inf),
            Err(Error::UnsupportedNorm(Norm::Inf))
        ));
    }

    #[test]
    fn appending_a_layer_multiplies_the_bound() {
        let base = model(vec![(m(&[vec![1.0, -2.0], vec![3.0, 4.0]]), Activation::Relu)]);
        let extended = model(vec![
            (m(&[vec![1.0, -2.0], vec![3.0, 4.0]]), Activation::Relu),
            (Matrix::diag(&[2.5, -1.0]), Activation::Identity),
        ]);
        for p in [Norm::L1, Norm::L2] {
            let a = model_lipschitz(&base, p).unwrap().value;
            let b = model_lipschitz(&extended, p).unwrap().value;
            assert_eq!(b, a * layer_norm(&Matrix::diag(&[2.5, -1.0]), p).unwrap());
        }
    }
}
