use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::metrics::matched_psnr;
use super::objective::GradientMatch;
use super::optim::{lbfgs, signed_adam, Minimized};
use super::{AttackConfig, GradObservation, OptimizerKind};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::netzoo::{gaussian_tensor, Model, Sample};

/// Outcome of an attack over all restarts.
#[derive(Debug, Clone)]
pub struct ReconstructionReport {
    /// Best candidate batch, `[N, ..input_shape]`, slot `i` carrying `labels[i]`.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub best_restart: usize,
    /// Final objective of each restart, by restart index.
    pub restart_objectives: Vec<f64>,
    /// Objective trace of the best restart.
    pub trace: Vec<f64>,
    /// Label-matched PSNR per ground-truth image, when truth was supplied.
    pub psnr: Option<Vec<Option<f64>>>,
    /// Early terminations, one line per affected restart.
    pub notes: Vec<String>,
    pub wall_clock_secs: f64,
    pub config: AttackConfig,
}

impl ReconstructionReport {
    pub fn final_objective(&self) -> f64 {
        self.restart_objectives[self.best_restart]
    }

    /// Candidate image in slot `i`.
    pub fn image(&self, i: usize) -> Result<Tensor> {
        self.images.index_outer(i)
    }

    pub fn psnr_values(&self) -> Vec<f64> {
        self.psnr.iter().flatten().flatten().copied().collect()
    }

    pub fn mean_psnr(&self) -> Option<f64> {
        let v = self.psnr_values();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn best_psnr(&self) -> Option<f64> {
        self.psnr_values().into_iter().reduce(f64::max)
    }
}

/// Reconstructs the observed batch with the optimizer selected in `cfg`.
///
/// Every restart starts from a standard Gaussian draw (stream `r` of a
/// generator seeded with `cfg.seed`) projected onto the box. The reported
/// candidate is the restart with the lowest final objective.
pub fn run_attack(
    obs: &GradObservation,
    model: &Model,
    cfg: &AttackConfig,
    truth: Option<&[Sample]>,
) -> Result<ReconstructionReport> {
    run_with(obs, model, cfg, cfg.optimizer, truth)
}

/// [`run_attack`] forced to use L-BFGS.
pub fn lbfgs_minimize(
    obs: &GradObservation,
    model: &Model,
    cfg: &AttackConfig,
    truth: Option<&[Sample]>,
) -> Result<ReconstructionReport> {
    run_with(obs, model, cfg, OptimizerKind::Lbfgs, truth)
}

fn run_with(
    obs: &GradObservation,
    model: &Model,
    cfg: &AttackConfig,
    optimizer: OptimizerKind,
    truth: Option<&[Sample]>,
) -> Result<ReconstructionReport> {
    cfg.validate()?;
    let start = Instant::now();
    let problem = GradientMatch::from_config(model, obs, cfg)?;
    let shape = problem.input_shape().to_vec();
    let (lo, hi) = cfg.bounds(&shape)?;
    let mut runs: Vec<Minimized> = Vec::with_capacity(cfg.restarts);
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let x0 = gaussian_tensor(&shape, &mut rng);
        let run = match optimizer {
            OptimizerKind::SignedAdam => signed_adam(&problem, x0.data(), &lo, &hi, cfg)?,
            OptimizerKind::Lbfgs => {
                lbfgs(&problem, x0.data(), &lo, &hi, cfg.lbfgs_memory, cfg.max_iter.max(1), cfg.step_size)?
            }
        };
        runs.push(run);
    }
    let restart_objectives: Vec<f64> = runs.iter().map(|r| r.value).collect();
    let best_restart = restart_objectives
        .iter()
        .enumerate()
        .fold(0, |best, (i, v)| if *v < restart_objectives[best] { i } else { best });
    let notes = runs
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.note.as_ref().map(|n| format!("restart {i}: {n}")))
        .collect();
    let best = runs.swap_remove(best_restart);
    let images = Tensor::new(shape.clone(), best.x)?;
    let psnr = match truth {
        Some(samples) => {
            let slots = (0..shape[0]).map(|i| images.index_outer(i)).collect::<Result<Vec<_>>>()?;
            let truth_images: Vec<Tensor> = samples.iter().map(|s| s.image.clone()).collect();
            let truth_labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
            if truth_images.iter().any(|t| t.shape() != &shape[1..]) {
                return Err(Error::ShapeMismatch {
                    op: "truth",
                    lhs: truth_images[0].shape().to_vec(),
                    rhs: shape[1..].to_vec(),
                });
            }
            Some(matched_psnr(&slots, &obs.labels, &truth_images, &truth_labels)?)
        }
        None => None,
    };
    Ok(ReconstructionReport {
        images,
        labels: obs.labels.clone(),
        best_restart,
        restart_objectives,
        trace: best.trace,
        psnr,
        notes,
        wall_clock_secs: start.elapsed().as_secs_f64(),
        config: AttackConfig { optimizer, ..cfg.clone() },
    })
}
