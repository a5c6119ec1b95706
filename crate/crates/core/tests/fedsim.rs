use gradleak::attack::ObservationKind;
use gradleak::fedsim::{compute_update, fed_round, FedConfig};
use gradleak::harness::make_synthetic;
use gradleak::netzoo::{build_model, epoch_batches, param_gradient, sgd_update, stack_batch, ModelSpec};
use gradleak::{Error, Tensor};

#[test]
fn multi_step_delta_matches_sequential_sgd() {
    let data = make_synthetic(3, 6, &[1, 5, 5], 3, false).unwrap();
    let model = build_model(ModelSpec::lenet_zhu(&[1, 5, 5], 3, 2), 8).unwrap();
    let fc = FedConfig { n: 6, epochs: 2, batch_size: 2, lr: 0.05, seed: 21 };
    let obs = compute_update(&model, data.samples(), &fc, true).unwrap();
    assert_eq!(obs.kind, ObservationKind::ParamDelta);
    assert_eq!(fc.local_steps(), 6);

    let mut params = model.params().to_vec();
    for batch in epoch_batches(6, 2, 2, 21) {
        let picked: Vec<_> = batch.iter().map(|&i| data.samples()[i].clone()).collect();
        let (images, labels) = stack_batch(&picked).unwrap();
        let (_, g) = param_gradient(&model.with_params(params.clone()).unwrap(), &images, &labels).unwrap();
        params = sgd_update(&params, &g, fc.lr).unwrap();
    }
    for ((delta, after), before) in obs.payload.iter().zip(&params).zip(model.params()) {
        let expected = after.zip_map(before, |a, b| a - b).unwrap();
        assert!(delta.max_abs_diff(&expected) < 1e-15);
    }
}

#[test]
fn server_round_sums_raw_gradients() {
    let data = make_synthetic(1, 4, &[1, 1, 2], 2, false).unwrap();
    let model = build_model(ModelSpec::mlp_classifier(&[1, 1, 2], &[], 2), 0).unwrap();
    let fc = FedConfig::single_step(2, 0.1);
    let a = compute_update(&model, &data.samples()[..2], &fc, true).unwrap();
    let b = compute_update(&model, &data.samples()[2..], &fc, true).unwrap();
    let next = fed_round(model.params(), &[a.clone(), b.clone()], 0.5).unwrap();
    for (i, p) in next.iter().enumerate() {
        let expected = model.params()[i]
            .zip_map(&a.payload[i].zip_map(&b.payload[i], |u, v| u + v).unwrap(), |t, g| t - 0.5 * g)
            .unwrap();
        assert!(p.max_abs_diff(&expected) < 1e-15);
    }
    let doubled = fed_round(model.params(), std::slice::from_ref(&a), 1.0).unwrap();
    let twice = fed_round(model.params(), &[a.clone(), a.clone()], 0.5).unwrap();
    assert!(doubled.iter().zip(&twice).all(|(u, v)| u.max_abs_diff(v) < 1e-15));
    let delta = compute_update(&model, &data.samples()[..2], &fc, false).unwrap();
    let averaged = fed_round(model.params(), &[delta.clone(), delta.scaled(3.0)], 0.5).unwrap();
    for (i, p) in averaged.iter().enumerate() {
        let expected = model.params()[i].zip_map(&delta.payload[i], |t, d| t + 2.0 * d).unwrap();
        assert!(p.max_abs_diff(&expected) < 1e-15);
    }
    assert!(matches!(fed_round(model.params(), &[a, delta], 0.5), Err(Error::MixedUpdateKinds)));
}

#[test]
fn local_data_size_must_match_n() {
    let data = make_synthetic(1, 3, &[1, 2, 2], 2, false).unwrap();
    let model = build_model(ModelSpec::mlp_classifier(&[1, 2, 2], &[3], 2), 0).unwrap();
    let fc = FedConfig::single_step(2, 0.1);
    assert!(compute_update(&model, data.samples(), &fc, true).is_err());
    let bad = FedConfig { n: 0, epochs: 0, batch_size: 0, lr: -1.0, seed: 0 };
    assert!(matches!(bad.validate(), Err(Error::FedConfig(_))));
    assert!(Tensor::new(vec![2], vec![1.0]).is_err());
}
