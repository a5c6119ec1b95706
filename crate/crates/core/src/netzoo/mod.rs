//! Small classifiers used by the experiments: declarative specs, seeded
//! initialization and plain SGD training.

mod data;
mod model;
mod spec;
mod train;

pub use data::{stack_batch, Dataset, Sample};
pub use model::{build_model, gaussian_tensor, init_params, InitScheme, Model};
pub use spec::{ArchKind, FcLayer, FcSlot, Forward, LayerSpec, ModelSpec, ParamInfo, ParamRole, BN_EPS};
pub use train::{epoch_batches, forward_loss, loss_var, param_gradient, sgd_update, train_steps};
