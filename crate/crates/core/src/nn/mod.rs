//! Reverse-mode compute core, layers, and the model zoo.

pub mod checkpoint;
pub mod graph;
pub mod kernels;
pub mod layers;
pub mod models;
pub mod params;
pub mod spec;


pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{Gradients, Graph, Var};
pub use models::{forward_with, Branch, ForwardOutput, Network};
pub use params::ParameterSet;
pub use spec::{ModelKind, ModelSpec};
