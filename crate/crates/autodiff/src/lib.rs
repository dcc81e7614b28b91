//! A small dense tensor engine with reverse-mode automatic differentiation.
//!
//! The op set is exactly what a residual convolutional enhancer needs:
//! strided same-ceil `conv2d`, `batch_norm`, `dense`, `relu`, broadcasting
//! `add`, `global_avg_pool`, `flatten`/reshape helpers and `mse_loss`.
//! Everything is generic over [`Real`], so the same model code runs in
//! `f32` for training and in `f64` for finite-difference checks.
//!
//! ```
//! use noisecond_autodiff::{Graph, ParamStore, Tensor};
//!
//! let mut store = ParamStore::<f64>::new();
//! let w = store.push("w", Tensor::new(vec![1, 2], vec![0.5, -1.0]).unwrap());
//! let grads = {
//!     let mut g = Graph::new(&store);
//!     let x = g.input(Tensor::new(vec![1, 2], vec![2.0, 3.0]).unwrap());
//!     let wv = g.param(w);
//!     let y = g.dense(x, wv, None).unwrap();
//!     let loss = g.sum(y);
//!     g.backward(loss).unwrap()
//! };
//! store.accumulate(grads.params());
//! assert_eq!(store.get(w).grad.as_ref().unwrap().data(), &[2.0, 3.0]);
//! ```

pub mod conv;
mod error;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod linalg;
mod optim;
mod params;
mod real;
mod tensor;

pub use error::{AutodiffError, Result};
pub use graph::{broadcast_shape, BatchNormConfig, Gradients, Graph, Mode, Var};
pub use layers::{BatchNormLayer, Conv2dLayer, DenseLayer};
pub use optim::sgd_step;
pub use params::{BufferId, BufferStore, Init, ParamId, ParamStore, Parameter};
pub use real::Real;
pub use tensor::Tensor;
