use infpriv::audit::{
    analytic_gauss_delta, audit_additive_mc, audit_end_to_end, worst_case_pair, EndToEndSetup, Statistic, WorstCase,
};
use infpriv::mechanisms::{calibrate_gauss_input, calibrate_gauss_output};
use infpriv::{Activation, Layer, LayeredModel, Matrix, Norm, Placement, PrivacyBudget, RandomSource, Verdict};

const TRIALS: usize = 200_000;

fn l2(e: f64, d: f64, a: f64) -> PrivacyBudget {
    PrivacyBudget::new(e, d, a, Norm::L2).unwrap()
}

fn identity(dim: usize) -> LayeredModel {
    let w = Matrix::identity(dim);
    LayeredModel::new(dim, vec![Layer::new(w, vec![0.0; dim], Activation::Identity).unwrap()]).unwrap()
}

fn setup(x_a: Vec<f64>, x_b: Vec<f64>, epsilon: f64, statistic: Statistic) -> EndToEndSetup {
    EndToEndSetup {
        x_a,
        x_b,
        epsilon,
        delta_target: 1e-5,
        trials: TRIALS,
        bins: 200,
        statistic,
    }
}

#[test]
fn monte_carlo_tracks_the_exact_delta() {
    for (i, (sigma, s, eps)) in [(0.5, 0.6, 0.3), (1.0, 0.8, 1.0), (0.2, 0.1, 0.5)].into_iter().enumerate() {
        let spec = calibrate_gauss_output(&l2(1.0, 1e-5, 0.1), 1.0, 1).unwrap().with_scale(sigma);
        let r = audit_additive_mc(&spec, &[s], eps, 1e-5, TRIALS, &RandomSource::new(1, i as u64)).unwrap();
        let exact = analytic_gauss_delta(sigma, s, eps).unwrap();
        let se = r.std_error.unwrap().max(1e-9);
        assert!((r.delta_hat - exact).abs() <= 4.0 * se, "{} vs {exact} (se {se})", r.delta_hat);
        assert!(r.delta_hat <= r.delta_upper_conf);
    }
}

#[test]
fn calibrated_input_noise_passes_end_to_end() {
    let model = identity(3);
    let spec = calibrate_gauss_input(&l2(1.0, 1e-5, 0.1), 3).unwrap();
    let WorstCase::InputPair { x_a, x_b } =
        worst_case_pair(&spec.provenance.budget, Placement::Input, &[0.2, -0.1, 0.4], 1.0, 0)
    else {
        unreachable!()
    };
    let r = audit_end_to_end(&model, &spec, &setup(x_a, x_b, 1.0, Statistic::Auto), &RandomSource::new(2, 0)).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
}

#[test]
fn halved_input_noise_fails_end_to_end() {
    let model = identity(1);
    let spec = calibrate_gauss_input(&l2(1.0, 1e-5, 0.1), 1).unwrap();
    let broken = spec.with_scale(spec.scale / 2.0);
    let mut s = setup(vec![0.0], vec![0.1], 1.0, Statistic::Auto);
    s.trials = 1_000_000;
    let r = audit_end_to_end(&model, &broken, &s, &RandomSource::new(3, 0)).unwrap();
    assert_eq!(r.verdict, Verdict::Fail, "{r:?}");
    // The threshold family only lower-bounds the optimum.
    assert!(r.delta_hat <= analytic_gauss_delta(broken.scale, 0.1, 1.0).unwrap());
}

#[test]
fn identical_inputs_show_no_leak() {
    let model = identity(2);
    let spec = calibrate_gauss_input(&l2(0.5, 1e-5, 0.1), 2).unwrap().with_scale(0.01);
    for eps in [0.01, 0.5, 3.0] {
        let r = audit_end_to_end(&model, &spec, &setup(vec![1.0, 1.0], vec![1.0, 1.0], eps, Statistic::Auto), &RandomSource::new(4, 0))
            .unwrap();
        assert_eq!(r.delta_hat, 0.0);
    }
}

#[test]
fn pair_outside_the_radius_is_rejected() {
    let spec = calibrate_gauss_input(&l2(1.0, 1e-5, 0.1), 1).unwrap();
    let r = audit_end_to_end(&identity(1), &spec, &setup(vec![0.0], vec![0.2], 1.0, Statistic::Auto), &RandomSource::new(5, 0));
    assert!(r.is_err());
}

#[test]
fn delta_hat_is_non_increasing_in_epsilon() {
    let spec = calibrate_gauss_input(&l2(1.0, 1e-5, 0.1), 1).unwrap();
    let broken = spec.with_scale(spec.scale / 3.0);
    let mut last = f64::INFINITY;
    for eps in [0.1, 0.3, 0.6, 1.0, 1.5, 2.5] {
        // Same seed, so every ε scans the same samples.
        let r = audit_end_to_end(&identity(1), &broken, &setup(vec![0.0], vec![0.1], eps, Statistic::Auto), &RandomSource::new(6, 0))
            .unwrap();
        assert!(r.delta_hat <= last);
        last = r.delta_hat;
    }
}

#[test]
fn predicting_a_class_does_not_increase_the_leak() {
    let w = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.5]]).unwrap();
    let model = LayeredModel::new(2, vec![Layer::new(w, vec![0.0, 0.0], Activation::Identity).unwrap()]).unwrap();
    let spec = calibrate_gauss_output(&l2(1.0, 1e-5, 0.2), 1.5, 2).unwrap();
    let broken = spec.with_scale(spec.scale / 4.0);
    let (x_a, x_b) = (vec![0.0, 0.0], vec![0.2, 0.0]);
    let rng = RandomSource::new(7, 0);
    let raw = audit_end_to_end(&model, &broken, &setup(x_a.clone(), x_b.clone(), 0.5, Statistic::Auto), &rng).unwrap();
    let post = audit_end_to_end(&model, &broken, &setup(x_a, x_b, 0.5, Statistic::PredictedClass), &rng).unwrap();
    let se = (1.0 + 0.5f64.exp()) * 0.5 / (TRIALS as f64).sqrt();
    assert!(raw.delta_hat > 0.0);
    assert!(post.delta_hat <= raw.delta_hat + 3.0 * se, "{} vs {}", post.delta_hat, raw.delta_hat);
}
