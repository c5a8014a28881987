//! Dual-branch RGB-D salient instance segmentation built from scratch:
//! tensor primitives, layers with hand-written backward passes, the
//! kernel/mask branch network, bipartite matching, training losses, mask AP
//! evaluation and dataset quality analytics.

pub mod analytics;
pub mod error;
pub mod eval;
pub mod flops;
pub mod gradcheck;
pub mod io;
pub mod loss;
pub mod matching;
pub mod net;
pub mod nn;
pub mod params;
pub mod scalar;
pub mod suite;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use gradcheck::{grad_check, grad_check_module, GradCheckOptions, GradCheckReport};
pub use loss::{LossBreakdown, LossWeights};
pub use matching::{hungarian, Assignment, CostMatrix};
pub use net::{CalibNet, InstancePrediction, PipelineConfig};
pub use params::{Gradients, Init, Parameterized};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;

pub type CalibNet64 = CalibNet<f64>;
pub type CalibNet32 = CalibNet<f32>;
