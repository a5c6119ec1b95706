use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gradleak::analytic::{chain_gradients, head_gradient, reconstruct_biased_fc, reconstruct_fc_chain, recover_label};
use gradleak::attack::{psnr, AttackConfig, GradientMatch, ObjectiveKind};
use gradleak::autodiff::{fd_check, FdReport, Padding};
use gradleak::fedsim::compute_update;
use gradleak::harness::{load_dataset, make_synthetic, run_experiment, run_sweep, save_image_grid, ExperimentConfig, ExperimentOutcome};
use gradleak::netzoo::{build_model, loss_var, param_gradient, train_steps, ArchKind, LayerSpec, Model, ModelSpec};
use gradleak::{Error, Graph, Result, Tensor};

/// Gradient inversion experiments on small image classifiers.
#[derive(Debug, Parser)]
#[command(name = "gradleak", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reconstruct the configured images from their shared updates.
    Attack(Common),
    /// Run the attack once per protocol in the configuration's sweep.
    Fedsim(Common),
    /// Closed-form input and label recovery from single-image gradients.
    Analytic(Common),
    /// Finite-difference checks of first- and second-order gradients.
    Gradcheck(Common),
    /// Compare cosine + signed Adam against Euclidean + L-BFGS.
    Bench(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (JSON). Defaults to the built-in desk preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Run with this single seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

impl Common {
    fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Attack(c) => attack(c),
        Command::Fedsim(c) => fedsim(c),
        Command::Analytic(c) => analytic(c),
        Command::Gradcheck(c) => gradcheck(c),
        Command::Bench(c) => bench(c),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() {
                2
            } else if e.is_numerical() {
                3
            } else {
                1
            })
        }
    }
}

fn print_summary(outcome: &ExperimentOutcome) {
    let a = outcome.aggregate;
    let name = outcome.rows.first().map_or("experiment", |r| r.experiment.as_str());
    println!("{name}: {} runs, mean PSNR {:.2} dB, std {:.2} dB", a.count, a.mean, a.std);
    if let Some(dir) = &outcome.output_dir {
        println!("  results in {}", dir.display());
    }
}

fn attack(c: &Common) -> Result<ExitCode> {
    let cfg = c.experiment()?;
    let outcome = run_experiment(&cfg, c.jobs)?;
    print!("{}", outcome.csv());
    Ok(ExitCode::SUCCESS)
}

fn fedsim(c: &Common) -> Result<ExitCode> {
    let cfg = c.experiment()?;
    for outcome in run_sweep(&cfg, c.jobs)? {
        print_summary(&outcome);
    }
    Ok(ExitCode::SUCCESS)
}

fn bench(c: &Common) -> Result<ExitCode> {
    let cfg = c.experiment()?;
    let a = &cfg.attack;
    let baseline = AttackConfig {
        max_iter: a.max_iter,
        tv_weight: a.tv_weight,
        restarts: a.restarts,
        seed: a.seed,
        box_lo: a.box_lo.clone(),
        box_hi: a.box_hi.clone(),
        ..AttackConfig::euclidean_lbfgs()
    };
    let variant = |suffix: &str, attack: AttackConfig| ExperimentConfig {
        name: format!("{}_{suffix}", cfg.name),
        attack,
        output_dir: cfg.output_dir.as_ref().map(|d| d.join(suffix)),
        ..cfg.clone()
    };
    let proposed = run_experiment(&variant("proposed", cfg.attack.clone()), c.jobs)?;
    let base = run_experiment(&variant("baseline", baseline), c.jobs)?;
    print_summary(&proposed);
    print_summary(&base);
    println!("difference (proposed - baseline): {:.2} dB", proposed.aggregate.mean - base.aggregate.mean);
    Ok(ExitCode::SUCCESS)
}

fn analytic(c: &Common) -> Result<ExitCode> {
    let cfg = c.experiment()?;
    let data = load_dataset(&cfg.dataset)?;
    let shape = data.image_shape().ok_or(Error::EmptyDataset)?.to_vec();
    let spec = cfg.model.build_spec(&shape, data.num_classes());
    let fully_connected = spec.kind == ArchKind::Mlp;
    for &seed in &cfg.seeds {
        let mut model = build_model(spec.clone(), seed)?;
        if cfg.training.trained && cfg.training.steps > 0 {
            let t = &cfg.training;
            model = train_steps(&model, &data, t.steps, t.lr, t.batch_size, seed)?;
        }
        for index in cfg.images.start..cfg.images.start + cfg.images.count {
            let sample = data.get(index).ok_or_else(|| Error::Config(vec![format!("images: index {index} out of range")]))?;
            let x = batch(&sample.image)?;
            let (_, grads) = param_gradient(&model, &x, &[sample.label])?;
            let head = head_gradient(&model, &grads)?;
            let label = recover_label(&head)?;
            let recovered = reconstruct_biased_fc(&head)?;
            let truth = head_input(&model, &x)?;
            let err = recovered.max_abs_diff(&truth.reshape(recovered.shape())?);
            print!("seed {seed} image {index}: label {} recovered {label}, head input max error {err:.2e}", sample.label);
            if fully_connected {
                let input = reconstruct_fc_chain(&model, &chain_gradients(&model, &grads)?)?;
                print!(", input PSNR {:.2} dB", psnr(&input, &sample.image)?);
                if let Some(dir) = &cfg.output_dir {
                    if matches!(shape.first(), Some(1 | 3)) && shape.len() == 3 {
                        std::fs::create_dir_all(dir).map_err(|e| Error::Config(vec![format!("out: {e}")]))?;
                        let path = dir.join(format!("analytic_seed{seed}_image{index}.{}", if shape[0] == 1 { "pgm" } else { "ppm" }));
                        save_image_grid(&[sample.image.clone(), input], path)?;
                    }
                }
            }
            println!();
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn batch(image: &Tensor) -> Result<Tensor> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    image.clone().reshape(&shape)
}

fn head_input(model: &Model, x: &Tensor) -> Result<Tensor> {
    let graph = Graph::new();
    let params = model.param_leaves(&graph);
    Ok(model.spec().forward(&params, graph.constant(x.clone()))?.head_input.value())
}

const FIRST_ORDER_TOL: f64 = 1e-5;
const SECOND_ORDER_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-6;

fn gradcheck(c: &Common) -> Result<ExitCode> {
    let seed = c.seed.unwrap_or(0);
    let mut ok = true;
    let mut show = |name: &str, r: &FdReport, tol: f64| {
        let pass = r.passes(tol);
        ok &= pass;
        println!(
            "{name:<32} {} max rel error {:.2e} over {} coordinates ({} kinks skipped)",
            if pass { "ok  " } else { "FAIL" },
            r.max_rel_error,
            r.checked,
            r.kinks.len()
        );
    };
    let zoo = [
        ("mlp", ModelSpec::mlp_classifier(&[1, 6, 6], &[16, 12], 5)),
        ("lenet_zhu", ModelSpec::lenet_zhu(&[3, 8, 8], 6, 3)),
        ("convnet", ModelSpec::convnet(&[3, 8, 8], 4, 2)),
        ("translation_invariant", ModelSpec::translation_invariant(&[2, 6, 6], 5, 2, Padding::Circular)),
    ];
    for (name, spec) in zoo {
        let data = make_synthetic(seed, 1, &spec.input_shape, spec.num_classes, false)?;
        let model = build_model(spec, seed)?;
        let sample = &data.samples()[0];
        let x = batch(&sample.image)?;
        let labels = [sample.label];
        let by_input = fd_check(|g, xv| loss_var(&model, &model.param_leaves(g), xv, &labels), &x, FD_STEP)?;
        show(&format!("{name} d/dx"), &by_input, FIRST_ORDER_TOL);
        let by_params = fd_check(
            |g, flat| loss_var(&model, &model.split_flat(flat)?, g.constant(x.clone()), &labels),
            &model.flatten(),
            FD_STEP,
        )?;
        show(&format!("{name} d/dtheta"), &by_params, FIRST_ORDER_TOL);
    }
    for (name, spec) in [("mlp", ModelSpec::mlp_classifier(&[1, 4, 4], &[6], 3)), ("two-conv", two_conv_net())] {
        let data = make_synthetic(seed, 2, &[1, 4, 4], 3, false)?;
        let model = build_model(spec, seed)?;
        let obs = compute_update(&model, &data.samples()[..1], &gradleak::fedsim::FedConfig::single_step(1, 1e-4), true)?;
        let point = batch(&data.samples()[1].image)?;
        for objective in [ObjectiveKind::Cosine, ObjectiveKind::Euclidean] {
            let problem = GradientMatch::new(&model, &obs, objective, 0.01)?;
            let r = fd_check(|g, xv| problem.build(g, xv), &point, FD_STEP)?;
            show(&format!("{name} {objective:?} objective"), &r, SECOND_ORDER_TOL);
        }
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
}

fn two_conv_net() -> ModelSpec {
    let conv = |c| LayerSpec::Conv { out_channels: c, kernel: 3, stride: 1, pad: 1, padding: Padding::Zero, bias: true, skip: false };
    ModelSpec {
        kind: ArchKind::Custom,
        input_shape: vec![1, 4, 4],
        num_classes: 3,
        width: 2,
        layers: vec![
            conv(2),
            LayerSpec::Sigmoid,
            conv(2),
            LayerSpec::Sigmoid,
            LayerSpec::Flatten,
            LayerSpec::Linear { out_features: 3, bias: true },
        ],
    }
}
