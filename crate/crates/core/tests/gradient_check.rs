use fedskew::data::gen_synthetic;
use fedskew::model::{class_conditional_grad, init_params, loss_and_grad, mean_loss};
use fedskew::LabeledDataset;
use proptest::prelude::*;

fn max_rel_error(params: &fedskew::ModelParams, data: &LabeledDataset) -> f64 {
    const EPS: f64 = 1e-5;
    let analytic = loss_and_grad(params, data).unwrap().1.flatten();
    let flat = params.flatten();
    let mut worst: f64 = 0.0;
    for j in 0..flat.len() {
        let mut w = flat.clone();
        w[j] += EPS;
        let lp = mean_loss(&params.unflatten(&w).unwrap(), data).unwrap();
        w[j] -= 2.0 * EPS;
        let lm = mean_loss(&params.unflatten(&w).unwrap(), data).unwrap();
        let numeric = (lp - lm) / (2.0 * EPS);
        let denom = analytic[j].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[j] - numeric).abs() / denom);
    }
    worst
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn analytic_gradient_matches_central_differences(
        seed in any::<u64>(),
        hidden in prop::collection::vec(1usize..6, 0..3),
        scale in 0.2f64..1.5,
    ) {
        let data = gen_synthetic(3, 4, 2, 1.5, seed).unwrap();
        let mut dims = vec![4];
        dims.extend(hidden);
        dims.push(3);
        let params = init_params(&dims, seed, scale).unwrap();
        prop_assert!(max_rel_error(&params, &data) < 1e-5);
    }
}

#[test]
fn full_gradient_is_the_prior_weighted_mix_of_class_gradients() {
    let data = gen_synthetic(3, 2, 7, 1.0, 4).unwrap();
    let params = init_params(&[2, 5, 3], 4, 1.0).unwrap();
    let full = loss_and_grad(&params, &data).unwrap().1.flatten();
    let p = data.distribution().unwrap();
    let mut mix = vec![0.0; full.len()];
    for (i, pi) in p.probs().iter().enumerate() {
        for (m, g) in mix.iter_mut().zip(class_conditional_grad(&params, &data, i).unwrap().flatten()) {
            *m += pi * g;
        }
    }
    for (a, b) in full.iter().zip(&mix) {
        assert!((a - b).abs() < 1e-12);
    }
}
