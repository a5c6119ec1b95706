use std::rc::Rc;

use super::optim::Problem;
use super::{AttackConfig, GradObservation, ObjectiveKind, ObservationKind};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::netzoo::{loss_var, Model};

/// Norms below this make the cosine objective undefined.
const ZERO_NORM: f64 = 1e-20;

/// Anisotropic total variation over the last two axes: the sum of absolute
/// forward differences along rows and columns, without wrap-around. Axes of
/// length one contribute nothing.
pub fn total_variation<'g>(x: Var<'g>) -> Result<Var<'g>> {
    let shape = x.shape();
    let w = shape[shape.len() - 1];
    let h = if shape.len() >= 2 { shape[shape.len() - 2] } else { 1 };
    let planes = x.len() / (h * w);
    let mut total: Option<Var<'g>> = None;
    let mut add = |pairs: Vec<(usize, usize)>| -> Result<()> {
        let n = pairs.len();
        let hi: Rc<[usize]> = pairs.iter().map(|p| p.0).collect();
        let lo: Rc<[usize]> = pairs.iter().map(|p| p.1).collect();
        let d = x.gather(hi, &[n])?.sub(x.gather(lo, &[n])?)?.abs()?.sum()?;
        total = Some(match total {
            Some(t) => t.add(d)?,
            None => d,
        });
        Ok(())
    };
    if w >= 2 {
        let pairs = (0..planes)
            .flat_map(|p| (0..h).flat_map(move |i| (0..w - 1).map(move |j| p * h * w + i * w + j)))
            .map(|k| (k + 1, k))
            .collect();
        add(pairs)?;
    }
    if h >= 2 {
        let pairs = (0..planes)
            .flat_map(|p| (0..h - 1).flat_map(move |i| (0..w).map(move |j| p * h * w + i * w + j)))
            .map(|k| (k + w, k))
            .collect();
        add(pairs)?;
    }
    match total {
        Some(t) => Ok(t),
        None => x.sum()?.scale(0.0),
    }
}

/// Gradient-matching objective for one observation, as a differentiable
/// function of the candidate batch.
#[derive(Debug, Clone)]
pub struct GradientMatch<'a> {
    model: &'a Model,
    obs: &'a GradObservation,
    objective: ObjectiveKind,
    tv_weight: f64,
    /// `g*`: the raw gradient, or `-delta / tau` for parameter deltas.
    target: Vec<Tensor>,
    target_norm: f64,
    batches: Vec<Vec<usize>>,
    input_shape: Vec<usize>,
}

impl<'a> GradientMatch<'a> {
    pub fn new(model: &'a Model, obs: &'a GradObservation, objective: ObjectiveKind, tv_weight: f64) -> Result<Self> {
        obs.check(model)?;
        let (target, batches) = match (obs.kind, &obs.fed) {
            (ObservationKind::ParamDelta, Some(fed)) => {
                let scale = -1.0 / fed.lr;
                (obs.payload.iter().map(|t| t.map(|v| v * scale)).collect(), fed.local_batches())
            }
            _ => (obs.payload.clone(), Vec::new()),
        };
        let target_norm = target.iter().map(|t| t.dot(t)).sum::<f64>().sqrt();
        if objective == ObjectiveKind::Cosine && target_norm < ZERO_NORM {
            return Err(Error::ZeroGradient);
        }
        let mut input_shape = vec![obs.labels.len()];
        input_shape.extend_from_slice(&model.spec().input_shape);
        Ok(Self { model, obs, objective, tv_weight, target, target_norm, batches, input_shape })
    }

    pub fn from_config(model: &'a Model, obs: &'a GradObservation, cfg: &AttackConfig) -> Result<Self> {
        Self::new(model, obs, cfg.objective, cfg.tv_weight)
    }

    /// Shape of the candidate batch, `[N, ..input_shape]`.
    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// The candidate's parameter gradient, or the summed gradients of the
    /// simulated local SGD steps for parameter deltas.
    fn candidate_gradient<'g>(&self, graph: &'g Graph, x: Var<'g>) -> Result<Vec<Var<'g>>> {
        let params = self.model.param_leaves(graph);
        let Some(fed) = self.obs.fed.filter(|_| self.obs.kind == ObservationKind::ParamDelta) else {
            let loss = loss_var(self.model, &params, x, &self.obs.labels)?;
            return graph.gradient(loss, &params);
        };
        let mut theta = params;
        let mut sum: Option<Vec<Var<'g>>> = None;
        for (step, batch) in self.batches.iter().enumerate() {
            let labels: Vec<usize> = batch.iter().map(|&i| self.obs.labels[i]).collect();
            let loss = loss_var(self.model, &theta, x.select_outer(batch)?, &labels)?;
            let g = graph.gradient(loss, &theta)?;
            if step + 1 < self.batches.len() {
                theta = theta.iter().zip(&g).map(|(t, gi)| t.sub(gi.scale(fed.lr)?)).collect::<Result<_>>()?;
            }
            sum = Some(match sum {
                Some(s) => s.iter().zip(&g).map(|(a, b)| a.add(*b)).collect::<Result<_>>()?,
                None => g,
            });
        }
        sum.ok_or_else(|| Error::MetadataMismatch("no local steps".into()))
    }

    /// Traces the objective at candidate `x` into `graph`.
    pub fn build<'g>(&self, graph: &'g Graph, x: Var<'g>) -> Result<Var<'g>> {
        if x.shape() != self.input_shape {
            return Err(Error::MetadataMismatch(format!(
                "candidate has shape {:?}, observation needs {:?}",
                x.shape(),
                self.input_shape
            )));
        }
        let g = self.candidate_gradient(graph, x)?;
        let mut terms = Vec::with_capacity(g.len());
        let data = match self.objective {
            ObjectiveKind::Cosine => {
                let mut sq = Vec::with_capacity(g.len());
                for (gp, tp) in g.iter().zip(&self.target) {
                    terms.push(gp.dot(graph.constant(tp.clone()))?);
                    sq.push(gp.dot(*gp)?);
                }
                let norm = sum_all(sq)?.sqrt()?;
                if norm.item()? < ZERO_NORM {
                    return Err(Error::ZeroGradient);
                }
                let cos = sum_all(terms)?.mul(norm.recip()?)?;
                cos.affine(-1.0 / self.target_norm, 1.0)?
            }
            ObjectiveKind::Euclidean => {
                for (gp, tp) in g.iter().zip(&self.target) {
                    let d = gp.sub(graph.constant(tp.clone()))?;
                    terms.push(d.dot(d)?);
                }
                sum_all(terms)?
            }
        };
        if self.tv_weight > 0.0 {
            data.add(total_variation(x)?.scale(self.tv_weight)?)
        } else {
            Ok(data)
        }
    }

    pub fn value(&self, x: &Tensor) -> Result<f64> {
        let graph = Graph::new();
        let x = graph.leaf(x.clone());
        self.build(&graph, x)?.item()
    }

    /// Objective value and its gradient w.r.t. the candidate.
    pub fn value_and_grad(&self, x: &Tensor) -> Result<(f64, Tensor)> {
        let graph = Graph::new();
        let x = graph.leaf(x.clone());
        let obj = self.build(&graph, x)?;
        let g = graph.gradient(obj, &[x])?;
        Ok((obj.item()?, g[0].value()))
    }
}

impl Problem for GradientMatch<'_> {
    fn eval(&self, x: &[f64], grad: bool) -> Result<(f64, Vec<f64>)> {
        let x = Tensor::new(self.input_shape.clone(), x.to_vec())?;
        if grad {
            let (v, g) = self.value_and_grad(&x)?;
            Ok((v, g.into_data()))
        } else {
            Ok((self.value(&x)?, Vec::new()))
        }
    }
}

fn sum_all<'g>(terms: Vec<Var<'g>>) -> Result<Var<'g>> {
    let mut it = terms.into_iter();
    let first = it.next().ok_or_else(|| Error::InvalidArgument("empty sum".into()))?;
    it.try_fold(first, |acc, t| acc.add(t))
}

/// Objective value at candidate `x` (shape `[N, ..input_shape]`).
pub fn gradient_objective(x: &Tensor, obs: &GradObservation, model: &Model, cfg: &AttackConfig) -> Result<f64> {
    GradientMatch::from_config(model, obs, cfg)?.value(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd_check;

    fn tv_of(x: Tensor) -> f64 {
        let graph = Graph::new();
        total_variation(graph.leaf(x)).unwrap().item().unwrap()
    }

    #[test]
    fn tv_small_cases() {
        assert_eq!(tv_of(Tensor::full(&[3, 5, 5], 0.4)), 0.0);
        assert_eq!(tv_of(Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap()), 1.0);
        assert_eq!(tv_of(Tensor::new(vec![1, 1, 1], vec![0.7]).unwrap()), 0.0);
    }

    #[test]
    fn tv_matches_double_loop() {
        let v: Vec<f64> = (0..32).map(|k| ((k * 7 % 11) as f64 * 0.13).cos()).collect();
        let x = Tensor::new(vec![2, 4, 4], v.clone()).unwrap();
        let mut expected = 0.0;
        for c in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let at = |i: usize, j: usize| v[c * 16 + i * 4 + j];
                    if i + 1 < 4 {
                        expected += (at(i + 1, j) - at(i, j)).abs();
                    }
                    if j + 1 < 4 {
                        expected += (at(i, j + 1) - at(i, j)).abs();
                    }
                }
            }
        }
        assert!((tv_of(x) - expected).abs() < 1e-12);
    }

    #[test]
    fn tv_gradient_matches_fd_away_from_kinks() {
        let v: Vec<f64> = (0..9).map(|k| (k * k) as f64 * 0.1).collect();
        let x = Tensor::new(vec![1, 3, 3], v).unwrap();
        let report = fd_check(|_, x| total_variation(x), &x, 1e-6).unwrap();
        assert!(report.passes(1e-6), "{report:?}");
    }
}
