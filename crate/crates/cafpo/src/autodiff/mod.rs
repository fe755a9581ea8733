//! Minimal reverse-mode differentiation engine.
//!
//! A [`Graph`] is a static record of primitive tensor operations built once
//! and replayed: `forward` binds named inputs and caches every intermediate,
//! `backward` walks the record in reverse and accumulates gradients for
//! parameters and inputs. Parameters live outside the graph in a
//! [`ParamStore`] so one set of weights can be shared by many graphs (for
//! example a rollout graph and a batched update graph).
//!
//! Everything is `f64` and single-threaded; independent graphs may run in
//! parallel workers.

mod adam;
mod container;
mod graph;
mod lstm;
mod tensor;

pub use adam::{Adam, AdamConfig};
pub use container::{load_params, read_params, save_params, write_params};
pub use graph::{GradStore, Graph, NodeId};
pub use lstm::{recurrent_forward, LstmCell};
pub use tensor::{DiffError, Param, ParamId, ParamStore, Tensor};

/// Negative-side slope used by every LeakyReLU in the crate.
pub const LEAKY_RELU_SLOPE: f64 = 0.01;
