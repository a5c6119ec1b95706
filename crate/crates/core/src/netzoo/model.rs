use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use super::spec::{ModelSpec, ParamInfo, ParamRole};
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitScheme {
    /// `U(-b, b)` with `b = sqrt(6 / fan_in)`, i.e. variance `2 / fan_in`.
    KaimingUniform,
    /// `N(0, 2 / fan_in)`.
    KaimingNormal,
}

impl std::str::FromStr for InitScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kaiming_uniform" => Ok(Self::KaimingUniform),
            "kaiming_normal" => Ok(Self::KaimingNormal),
            other => Err(Error::UnknownScheme(other.to_string())),
        }
    }
}

/// An architecture together with its parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    infos: Vec<ParamInfo>,
    params: Vec<Tensor>,
}

/// Validates `spec` and initializes it with Kaiming-uniform weights.
pub fn build_model(spec: ModelSpec, seed: u64) -> Result<Model> {
    spec.validate()?;
    let infos = spec.param_infos()?;
    let params = infos.iter().map(|i| Tensor::zeros(&i.shape)).collect();
    let model = Model { spec, infos, params };
    init_params(&model, InitScheme::KaimingUniform, seed)
}

/// Re-initializes every parameter: weights by `scheme` (fan-in), biases and
/// norm shifts to zero, norm scales to one.
pub fn init_params(model: &Model, scheme: InitScheme, seed: u64) -> Result<Model> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(model.infos.len());
    for info in &model.infos {
        let mut t = Tensor::zeros(&info.shape);
        match info.role {
            ParamRole::Weight { fan_in } => {
                let fan_in = fan_in as f64;
                match scheme {
                    InitScheme::KaimingUniform => {
                        let bound = (6.0 / fan_in).sqrt();
                        let dist = Uniform::new_inclusive(-bound, bound)
                            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                        t.data_mut().iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                    }
                    InitScheme::KaimingNormal => {
                        let dist = Normal::new(0.0, (2.0 / fan_in).sqrt())
                            .map_err(|e| Error::InvalidArgument(e.to_string()))?;
                        t.data_mut().iter_mut().for_each(|v| *v = dist.sample(&mut rng));
                    }
                }
            }
            ParamRole::NormScale => t.data_mut().fill(1.0),
            ParamRole::Bias | ParamRole::NormShift => {}
        }
        params.push(t);
    }
    model.with_params(params)
}

impl Model {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn param_infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Same architecture, new parameters (shapes must match).
    pub fn with_params(&self, params: Vec<Tensor>) -> Result<Model> {
        check_param_shapes(&self.infos, &params)?;
        Ok(Model { spec: self.spec.clone(), infos: self.infos.clone(), params })
    }

    pub fn flatten(&self) -> Tensor {
        Tensor::from_vec(self.params.iter().flat_map(|p| p.data().iter().copied()).collect())
    }

    pub fn unflatten(&self, flat: &Tensor) -> Result<Model> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch {
                op: "unflatten",
                lhs: vec![flat.len()],
                rhs: vec![self.num_params()],
            });
        }
        let mut offset = 0;
        let mut params = Vec::with_capacity(self.infos.len());
        for info in &self.infos {
            let len: usize = info.shape.iter().product();
            params.push(Tensor::new(info.shape.clone(), flat.data()[offset..offset + len].to_vec())?);
            offset += len;
        }
        self.with_params(params)
    }

    /// Records every parameter as a leaf of `graph`.
    pub fn param_leaves<'g>(&self, graph: &'g Graph) -> Vec<Var<'g>> {
        self.params.iter().map(|p| graph.leaf(p.clone())).collect()
    }

    /// Splits a flat parameter vector living in a graph into parameter-shaped
    /// pieces.
    pub fn split_flat<'g>(&self, flat: Var<'g>) -> Result<Vec<Var<'g>>> {
        if flat.len() != self.num_params() {
            return Err(Error::ShapeMismatch { op: "split_flat", lhs: flat.shape(), rhs: vec![self.num_params()] });
        }
        let mut offset = 0;
        self.infos
            .iter()
            .map(|info| {
                let len: usize = info.shape.iter().product();
                let index: std::rc::Rc<[usize]> = (offset..offset + len).collect();
                offset += len;
                flat.gather(index, &info.shape)
            })
            .collect()
    }

    /// Logits for a batch, traced in `graph` with the given parameter nodes.
    pub fn logits<'g>(&self, params: &[Var<'g>], x: Var<'g>) -> Result<Var<'g>> {
        Ok(self.spec.forward(params, x)?.logits)
    }

    /// Logits computed outside any caller-visible graph.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        let graph = Graph::new();
        let params = self.param_leaves(&graph);
        let x = graph.leaf(images.clone());
        Ok(self.logits(&params, x)?.value())
    }

    /// Copy with every parameter replaced by `f(index, old)`.
    pub fn map_params(&self, mut f: impl FnMut(usize, &Tensor) -> Tensor) -> Result<Model> {
        let params = self.params.iter().enumerate().map(|(i, p)| f(i, p)).collect();
        self.with_params(params)
    }
}

fn check_param_shapes(infos: &[ParamInfo], params: &[Tensor]) -> Result<()> {
    if infos.len() != params.len() {
        return Err(Error::Spec(format!("expected {} parameter tensors, got {}", infos.len(), params.len())));
    }
    for (info, p) in infos.iter().zip(params) {
        if info.shape != p.shape() {
            return Err(Error::ShapeMismatch { op: "params", lhs: info.shape.clone(), rhs: p.shape().to_vec() });
        }
    }
    Ok(())
}

/// Standard-normal tensor from a seeded generator.
pub fn gaussian_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut().iter_mut().for_each(|v| *v = rng.sample(rand_distr::StandardNormal));
    t
}
