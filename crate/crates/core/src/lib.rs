//! Reconstruction of federated training inputs from shared gradients.
//!
//! The crate is organised bottom-up:
//!
//! - [`autodiff`]: reverse-mode differentiation whose backward pass can be
//!   differentiated again.
//! - [`netzoo`]: declarative small classifiers, initialization and SGD.
//! - [`analytic`]: closed-form recovery of fully-connected inputs and labels.
//! - [`attack`]: gradient-matching objectives, signed Adam, L-BFGS, PSNR.
//! - [`fedsim`]: federated SGD / FedAvg update simulation and label flipping.
//! - [`harness`]: datasets, image files, configuration and experiment runs.

pub mod analytic;
pub mod attack;
pub mod autodiff;
pub mod error;
pub mod fedsim;
pub mod harness;
pub mod netzoo;

pub use autodiff::{Graph, Tensor, Var};
pub use error::{Error, Result};
