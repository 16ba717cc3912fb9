use infpriv::lipschitz::{induced_l1_norm, model_lipschitz, spectral_norm_upper};
use infpriv::{Activation, Layer, LayeredModel, Matrix, Norm, RandomSource};
use proptest::prelude::*;

fn svd_max(w: &Matrix) -> f64 {
    nalgebra::DMatrix::from_row_slice(w.rows(), w.cols(), w.as_slice())
        .singular_values()
        .max()
}

fn matrix() -> impl Strategy<Value = Matrix> {
    (1usize..24, 1usize..24, any::<u64>()).prop_map(|(r, c, seed)| {
        let mut g = RandomSource::new(seed, 1).generator();
        Matrix::from_row_major(r, c, g.gaussian_vec(1.0, r * c)).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn spectral_estimate_matches_svd(w in matrix()) {
        let s = spectral_norm_upper(&w).unwrap();
        let exact = svd_max(&w);
        prop_assert!((s.estimate - exact).abs() <= 1e-6 * exact, "{} vs {}", s.estimate, exact);
        prop_assert!(s.certified >= exact * (1.0 - 1e-12));
    }

    #[test]
    fn l1_norm_is_attained_at_a_basis_vector(w in matrix()) {
        // ‖W‖₁ = max over the vertices ±e_j of the ℓ1 unit ball.
        let oracle = (0..w.cols())
            .map(|j| {
                let mut e = vec![0.0; w.cols()];
                e[j] = 1.0;
                w.mul_vec(&e).iter().map(|v| v.abs()).sum::<f64>()
            })
            .fold(0.0, f64::max);
        prop_assert!((induced_l1_norm(&w).unwrap() - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }
}

fn layer(w: Vec<Vec<f64>>, act: Activation) -> Layer {
    let rows = w.len();
    Layer::new(Matrix::from_rows(&w).unwrap(), vec![0.0; rows], act).unwrap()
}

#[test]
fn bound_is_product_of_layer_norms() {
    let a = layer(vec![vec![2.0, 0.0], vec![0.0, 1.0]], Activation::Relu);
    let b = layer(vec![vec![0.0, 3.0]], Activation::Identity);
    let model = LayeredModel::new(2, vec![a, b]).unwrap();
    let l2 = model_lipschitz(&model, Norm::L2).unwrap();
    assert!((l2.value - 6.0).abs() < 1e-9, "{}", l2.value);
    assert_eq!(l2.per_layer.len(), 2);
    // The product is loose here: the only path with gain 3 has gain 1 first.
    let probe = |x: f64| model.forward(&[0.0, x]).unwrap()[0];
    assert!((probe(1.0) - probe(0.0)).abs() <= l2.value);
}

#[test]
fn declared_constants_pass_through() {
    let a = layer(vec![vec![5.0]], Activation::Identity);
    let model = LayeredModel::new(1, vec![a]).unwrap().with_declared_lipschitz(Norm::L2, 1.0).unwrap();
    assert_eq!(model_lipschitz(&model, Norm::L2).unwrap().value, 1.0);
    assert_eq!(model_lipschitz(&model, Norm::L1).unwrap().value, 5.0);
    assert!(model_lipschitz(&model, Norm::Inf).is_err());
}

#[test]
fn random_networks_respect_their_bound() {
    let mut g = RandomSource::new(17, 0).generator();
    for _ in 0..10 {
        let dims = [8usize, 16, 12, 3];
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, d)| {
                let w = Matrix::from_row_major(d[1], d[0], g.gaussian_vec(0.5, d[0] * d[1])).unwrap();
                let act = if i == 2 { Activation::Identity } else { Activation::Relu };
                Layer::new(w, g.gaussian_vec(0.3, d[1]), act).unwrap()
            })
            .collect();
        let model = LayeredModel::new(8, layers).unwrap();
        for p in [Norm::L1, Norm::L2] {
            let mu = model_lipschitz(&model, p).unwrap().value;
            for _ in 0..500 {
                let x = g.gaussian_vec(1.0, 8);
                let y = g.gaussian_vec(1.0, 8);
                let din = infpriv::distance(&x, &y, p).unwrap();
                let dout = infpriv::distance(&model.forward(&x).unwrap(), &model.forward(&y).unwrap(), p).unwrap();
                assert!(dout <= mu * din * (1.0 + 1e-12));
            }
        }
    }
}
