use gradleak::attack::{
    gradient_objective, lbfgs, lbfgs_minimize, psnr, run_attack, total_variation, AttackConfig, GradObservation,
    ObjectiveKind, OptimizerKind,
};
use gradleak::fedsim::{compute_update, FedConfig};
use gradleak::harness::make_synthetic;
use gradleak::netzoo::{build_model, ModelSpec, Sample};
use gradleak::{Error, Graph, Tensor};

fn setup(n: usize) -> (gradleak::netzoo::Model, Vec<Sample>, GradObservation) {
    let data = make_synthetic(11, n, &[1, 6, 6], 4, true).unwrap();
    let model = build_model(ModelSpec::lenet_zhu(&[1, 6, 6], 4, 3), 2).unwrap();
    let obs = compute_update(&model, data.samples(), &FedConfig::single_step(n, 1e-3), true).unwrap();
    (model, data.samples().to_vec(), obs)
}

fn truth_batch(samples: &[Sample]) -> Tensor {
    Tensor::stack(&samples.iter().map(|s| s.image.clone()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn euclidean_objective_vanishes_at_the_truth() {
    let (model, samples, obs) = setup(1);
    let cfg = AttackConfig { objective: ObjectiveKind::Euclidean, tv_weight: 0.0, ..AttackConfig::default() };
    assert!(gradient_objective(&truth_batch(&samples), &obs, &model, &cfg).unwrap().abs() < 1e-24);
}

#[test]
fn cosine_objective_at_the_truth_is_the_tv_term() {
    let (model, samples, obs) = setup(2);
    let x = truth_batch(&samples);
    let cfg = AttackConfig { tv_weight: 0.3, ..AttackConfig::default() };
    let graph = Graph::new();
    let tv = total_variation(graph.constant(x.clone())).unwrap().item().unwrap();
    let value = gradient_objective(&x, &obs, &model, &cfg).unwrap();
    assert!((value - 0.3 * tv).abs() < 1e-12, "{value} vs {}", 0.3 * tv);
}

#[test]
fn total_variation_of_a_step_image() {
    // one vertical edge of height 0.5 across four rows
    let mut data = vec![0.0; 16];
    for r in 0..4 {
        data[r * 4 + 2] = 0.5;
        data[r * 4 + 3] = 0.5;
    }
    let graph = Graph::new();
    let x = graph.constant(Tensor::new(vec![1, 1, 4, 4], data).unwrap());
    assert!((total_variation(x).unwrap().item().unwrap() - 2.0).abs() < 1e-15);
}

#[test]
fn psnr_of_uniform_error() {
    let a = Tensor::full(&[3, 4, 4], 0.5);
    let b = Tensor::full(&[3, 4, 4], 0.6);
    // MSE 0.01 -> 20 dB
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn smooth_model_attack_recovers_the_image() {
    let (model, samples, obs) = setup(1);
    let cfg = AttackConfig { max_iter: 400, tv_weight: 1e-4, ..AttackConfig::default() };
    let report = run_attack(&obs, &model, &cfg, Some(&samples)).unwrap();
    assert!(report.best_psnr().unwrap() > 15.0, "{:?}", report.psnr_values());
    assert_eq!(report.trace.len(), 401);
    assert!(report.trace.last().unwrap() < &report.trace[0]);
}

#[test]
fn restarts_pick_the_lowest_objective() {
    let (model, samples, obs) = setup(1);
    let cfg = AttackConfig { max_iter: 30, restarts: 3, seed: 5, ..AttackConfig::default() };
    let report = run_attack(&obs, &model, &cfg, Some(&samples)).unwrap();
    let best = report.restart_objectives.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(report.restart_objectives[report.best_restart], best);
    assert_eq!(report.final_objective(), best);
    let again = run_attack(&obs, &model, &cfg, Some(&samples)).unwrap();
    assert_eq!(report.images, again.images);
}

#[test]
fn lbfgs_baseline_runs_within_its_evaluation_budget() {
    let (model, samples, obs) = setup(1);
    let cfg = AttackConfig { max_iter: 60, ..AttackConfig::euclidean_lbfgs() };
    let report = lbfgs_minimize(&obs, &model, &cfg, Some(&samples)).unwrap();
    assert_eq!(report.config.optimizer, OptimizerKind::Lbfgs);
    assert!(report.trace.len() <= 60);
    assert!(report.final_objective() <= report.trace[0]);
}

#[test]
fn lbfgs_solves_a_box_constrained_quadratic() {
    // minimum of sum (x - c)^2 over [0, 1]^3 with c outside the box on two axes
    let c = [1.5, 0.25, -0.5];
    let f = |x: &[f64], _: bool| -> gradleak::Result<(f64, Vec<f64>)> {
        let v = x.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum();
        Ok((v, x.iter().zip(&c).map(|(a, b)| 2.0 * (a - b)).collect()))
    };
    let out = lbfgs(&f, &[0.5; 3], &[0.0; 3], &[1.0; 3], 10, 100, 1.0).unwrap();
    for (x, e) in out.x.iter().zip([1.0, 0.25, 0.0]) {
        assert!((x - e).abs() < 1e-9);
    }
}

#[test]
fn invalid_configuration_is_rejected_before_running() {
    let (model, _, obs) = setup(1);
    let cfg = AttackConfig { restarts: 0, step_size: -1.0, ..AttackConfig::default() };
    assert!(cfg.problems().len() >= 2);
    assert!(matches!(run_attack(&obs, &model, &cfg, None), Err(Error::AttackConfig(_))));
}

#[test]
fn zero_target_gradient_is_reported() {
    let (model, _, obs) = setup(1);
    let zero = obs.scaled(0.0);
    let cfg = AttackConfig::default();
    assert!(matches!(run_attack(&zero, &model, &cfg, None), Err(Error::ZeroGradient)));
}

#[test]
fn attack_config_json_round_trip() {
    let cfg = AttackConfig { max_iter: 8000, restarts: 2, ..AttackConfig::euclidean_lbfgs() };
    let text = serde_json::to_string(&cfg).unwrap();
    assert_eq!(serde_json::from_str::<AttackConfig>(&text).unwrap(), cfg);
    assert!(serde_json::from_str::<AttackConfig>(r#"{"max_iters": 3}"#).is_err());
}
