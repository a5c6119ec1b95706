//! Datasets, image files, experiment configuration and orchestration.

mod cifar;
mod config;
mod experiment;
mod imageio;
mod synthetic;

pub use cifar::{load_cifar10, load_cifar10_first, parse_cifar10, RECORD_BYTES};
pub use imageio::{load_pnm, parse_pnm, quantize, render_grid, save_image_grid, save_image_grid_with_columns, Pnm, SEPARATOR};
pub use synthetic::make_synthetic;
pub use config::{
    DatasetConfig, ExperimentConfig, ImageSelection, ModelConfig, ProtocolConfig, TrainingConfig, DATA_ENV,
    DEFAULT_CIFAR_FILE,
};
pub use experiment::{
    aggregate, load_dataset, run_experiment, run_sweep, select_groups, Aggregate, ExperimentOutcome, ReportRow, CSV_HEADER,
};
