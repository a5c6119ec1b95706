use gradleak::analytic::{reconstruct_biased_fc, recover_label, AnalyticError, FcGradient};
use gradleak::fedsim::compute_update;
use gradleak::fedsim::FedConfig;
use gradleak::harness::make_synthetic;
use gradleak::netzoo::{build_model, ModelSpec};
use gradleak::{Error, Tensor};
use proptest::prelude::*;

/// Gradient of a single biased layer for input `x` and output derivative `d`.
fn outer(d: &[f64], x: &[f64]) -> FcGradient {
    let a: Vec<f64> = d.iter().flat_map(|di| x.iter().map(move |xj| di * xj)).collect();
    FcGradient::new(Tensor::new(vec![d.len(), x.len()], a).unwrap(), Some(Tensor::from_vec(d.to_vec()))).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn single_layer_recovery_is_exact(
        x in prop::collection::vec(0.0f64..1.0, 1..40),
        d in prop::collection::vec(-1.0f64..1.0, 1..12),
    ) {
        prop_assume!(d.iter().any(|v| v.abs() > 1e-3));
        let recovered = reconstruct_biased_fc(&outer(&d, &x)).unwrap();
        prop_assert!(recovered.max_abs_diff(&Tensor::from_vec(x)) < 1e-12);
    }

    #[test]
    fn label_is_invariant_to_positive_scaling(
        probs in prop::collection::vec(0.01f64..1.0, 2..10),
        pick in 0usize..10,
        scale in 1e-6f64..1e6,
    ) {
        let total: f64 = probs.iter().sum();
        let label = pick % probs.len();
        let db: Vec<f64> = probs.iter().enumerate().map(|(i, p)| p / total - f64::from(u8::from(i == label))).collect();
        let x = [0.2, 0.9, 0.4];
        let g = outer(&db, &x);
        let scaled = FcGradient::new(g.dl_da.map(|v| v * scale), g.dl_db.as_ref().map(|b| b.map(|v| v * scale))).unwrap();
        prop_assert_eq!(recover_label(&g).unwrap(), label);
        prop_assert_eq!(recover_label(&scaled).unwrap(), label);
    }
}

#[test]
fn averaged_gradients_are_rejected() {
    let data = make_synthetic(1, 2, &[1, 4, 4], 3, true).unwrap();
    let model = build_model(ModelSpec::mlp_classifier(&[1, 4, 4], &[], 3), 0).unwrap();
    let obs = compute_update(&model, data.samples(), &FedConfig::single_step(2, 0.1), true).unwrap();
    let g = FcGradient::new(obs.payload[0].clone(), Some(obs.payload[1].clone())).unwrap();
    assert!(matches!(
        reconstruct_biased_fc(&g),
        Err(Error::Analytic(AnalyticError::InconsistentRows { .. }))
    ));
}

#[test]
fn documented_label_examples() {
    let x = [1.0, 2.0];
    assert_eq!(recover_label(&outer(&[0.2, -0.5, 0.3], &x)).unwrap(), 1);
    assert!(matches!(
        recover_label(&outer(&[-0.1, -0.2, 0.3], &x)),
        Err(Error::Analytic(AnalyticError::Ambiguous { negatives: 2 }))
    ));
    assert!(matches!(
        reconstruct_biased_fc(&outer(&[0.0, 0.0], &x)),
        Err(Error::Analytic(AnalyticError::AllBiasGradientsZero))
    ));
}
