//! Optimization-based reconstruction of inputs from observed gradients or
//! FedAvg parameter deltas.

mod metrics;
mod objective;
mod optim;
mod run;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::fedsim::FedConfig;
use crate::netzoo::Model;

pub use metrics::{matched_psnr, mse, psnr, PSNR_CAP};
pub use objective::{gradient_objective, total_variation, GradientMatch};
pub use optim::{lbfgs, signed_adam, Minimized, Problem};
pub use run::{lbfgs_minimize, run_attack, ReconstructionReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationKind {
    RawGradient,
    ParamDelta,
}

/// What the attacker sees about one user.
#[derive(Debug, Clone, PartialEq)]
pub struct GradObservation {
    pub kind: ObservationKind,
    /// One tensor per model parameter.
    pub payload: Vec<Tensor>,
    /// Labels of the user's images (recovered analytically or known).
    pub labels: Vec<usize>,
    /// Local training setup, present for parameter deltas.
    pub fed: Option<FedConfig>,
}

impl GradObservation {
    pub fn raw(payload: Vec<Tensor>, labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::MetadataMismatch("observation without labels".into()));
        }
        Ok(Self { kind: ObservationKind::RawGradient, payload, labels, fed: None })
    }

    pub fn param_delta(payload: Vec<Tensor>, labels: Vec<usize>, fed: FedConfig) -> Result<Self> {
        fed.validate()?;
        if labels.len() != fed.n {
            return Err(Error::MetadataMismatch(format!("{} labels for n = {}", labels.len(), fed.n)));
        }
        Ok(Self { kind: ObservationKind::ParamDelta, payload, labels, fed: Some(fed) })
    }

    /// Same observation with every payload entry multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.payload = self.payload.iter().map(|t| t.map(|v| v * factor)).collect();
        out
    }

    /// Checks the observation against a model.
    pub fn check(&self, model: &Model) -> Result<()> {
        let params = model.params();
        if self.payload.len() != params.len() {
            return Err(Error::MetadataMismatch(format!(
                "{} payload tensors for {} parameters",
                self.payload.len(),
                params.len()
            )));
        }
        for (i, (a, b)) in self.payload.iter().zip(params).enumerate() {
            if a.shape() != b.shape() {
                return Err(Error::MetadataMismatch(format!(
                    "payload {i} has shape {:?}, parameter has {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        let classes = model.spec().num_classes;
        if let Some(&label) = self.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        match (self.kind, &self.fed) {
            (ObservationKind::ParamDelta, None) => {
                Err(Error::MetadataMismatch("parameter delta without local training metadata".into()))
            }
            (ObservationKind::ParamDelta, Some(fed)) => {
                fed.validate()?;
                if fed.n != self.labels.len() {
                    return Err(Error::MetadataMismatch(format!("{} labels for n = {}", self.labels.len(), fed.n)));
                }
                Ok(())
            }
            (ObservationKind::RawGradient, _) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveKind {
    /// `1 - cos(g(x), g*) + alpha TV(x)`.
    Cosine,
    /// `|g(x) - g*|^2 + alpha TV(x)`.
    Euclidean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SignedAdam,
    Lbfgs,
}

/// Attack hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub objective: ObjectiveKind,
    /// Total-variation weight.
    pub tv_weight: f64,
    pub optimizer: OptimizerKind,
    /// Iterations of signed Adam, or objective evaluations of L-BFGS.
    pub max_iter: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub seed: u64,
    /// Lower pixel bound, one entry or one per channel.
    pub box_lo: Vec<f64>,
    /// Upper pixel bound, one entry or one per channel.
    pub box_hi: Vec<f64>,
    /// Fractions of `max_iter` after which the step size decays.
    pub decay_fractions: Vec<f64>,
    pub decay_factor: f64,
    pub lbfgs_memory: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveKind::Cosine,
            tv_weight: 0.01,
            optimizer: OptimizerKind::SignedAdam,
            max_iter: 2000,
            step_size: 0.1,
            restarts: 1,
            seed: 0,
            box_lo: vec![0.0],
            box_hi: vec![1.0],
            decay_fractions: vec![3.0 / 8.0, 5.0 / 8.0, 7.0 / 8.0],
            decay_factor: 0.1,
            lbfgs_memory: 10,
        }
    }
}

impl AttackConfig {
    /// The usual baseline pairing: Euclidean matching solved by L-BFGS.
    pub fn euclidean_lbfgs() -> Self {
        Self { objective: ObjectiveKind::Euclidean, optimizer: OptimizerKind::Lbfgs, step_size: 1.0, ..Self::default() }
    }

    /// All violated constraints, one message each.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if !(self.tv_weight >= 0.0 && self.tv_weight.is_finite()) {
            out.push(format!("tv_weight must be a finite value >= 0, got {}", self.tv_weight));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            out.push(format!("step_size must be positive, got {}", self.step_size));
        }
        if self.restarts == 0 {
            out.push("restarts must be at least 1".into());
        }
        if self.box_lo.is_empty() || self.box_lo.len() != self.box_hi.len() {
            out.push("box_lo and box_hi must be nonempty and of equal length".into());
        } else if self.box_lo.iter().zip(&self.box_hi).any(|(l, h)| !(l < h)) {
            out.push("box_lo must be below box_hi in every channel".into());
        }
        let fr = &self.decay_fractions;
        if fr.iter().any(|f| !(*f > 0.0 && *f < 1.0)) || fr.windows(2).any(|w| w[0] >= w[1]) {
            out.push("decay_fractions must be strictly increasing within (0, 1)".into());
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            out.push(format!("decay_factor must lie in (0, 1], got {}", self.decay_factor));
        }
        if self.lbfgs_memory == 0 {
            out.push("lbfgs_memory must be at least 1".into());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::AttackConfig(problems.join("; ")))
        }
    }

    /// Iterations after which the step size is multiplied by `decay_factor`.
    pub fn milestones(&self) -> Vec<usize> {
        self.decay_fractions.iter().map(|f| (f * self.max_iter as f64).floor() as usize).collect()
    }

    /// Step size used by the zero-based iteration `t`.
    pub fn step_size_at(&self, t: usize) -> f64 {
        let passed = self.milestones().iter().filter(|&&m| t >= m).count();
        self.step_size * self.decay_factor.powi(passed as i32)
    }

    /// Per-coordinate bounds for a batch of `[C, ...]` images.
    pub(crate) fn bounds(&self, batch_shape: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
        let channels = if batch_shape.len() >= 3 { batch_shape[1] } else { 1 };
        let per = |v: &[f64]| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; channels]),
                n if n == channels => Ok(v.to_vec()),
                n => Err(Error::AttackConfig(format!("{n} box entries for {channels} channels"))),
            }
        };
        let (lo, hi) = (per(&self.box_lo)?, per(&self.box_hi)?);
        let total: usize = batch_shape.iter().product();
        let inner = if batch_shape.len() >= 3 { batch_shape[2..].iter().product() } else { total / batch_shape[0] };
        let channel_of = |k: usize| if batch_shape.len() >= 3 { (k / inner) % channels } else { 0 };
        Ok(((0..total).map(|k| lo[channel_of(k)]).collect(), (0..total).map(|k| hi[channel_of(k)]).collect()))
    }
}
