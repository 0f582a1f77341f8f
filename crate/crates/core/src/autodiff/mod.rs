//! Reverse-mode automatic differentiation over the op set the model needs.

pub mod gradcheck;
pub mod graph;
pub mod kernels;
pub mod params;

pub use gradcheck::{grad_check, CoordCheck, GradCheckOptions, GradCheckReport};
pub use graph::{GradFault, Gradients, Graph, OpKind, Var, BCE_EPS};
pub use kernels::{concat_channels, conv2d, dense, downsample_avg, upsample_nearest, Padding};
pub use params::{Parameter, ParameterSet};
