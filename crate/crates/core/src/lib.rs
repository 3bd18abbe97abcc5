//! Occlusion-robust person re-identification.

pub mod attention;
pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod dem1;
pub mod dem2;
pub mod ensemble;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod image;
pub mod losses;
pub mod masking;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod pipeline;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use graph::{Binding, Graph, Var};
pub use tensor::{ParamId, ParamSet, Tensor};
