//! Minimal differentiable numeric engine: tensors, layer kernels, Adam and
//! finite-difference gradient checking.

mod adam;
mod gradcheck;
mod layers;
mod tensor;

pub use adam::{adam_step, Adam, AdamConfig};
pub use gradcheck::{grad_check, rel_err, GradCheckReport};
pub use layers::{
    avgpool1d_backward, avgpool1d_forward, batchnorm1d_backward, batchnorm1d_forward, conv1d_backward,
    conv1d_forward, linear_backward, linear_forward, relu_backward, relu_forward, BatchNorm1d, BatchNormCache,
    BatchNormState, Conv1d, ConvGrads, Linear, LinearGrads, Mode, Parameter,
};
pub use tensor::{Scalar, Tensor};
pub(crate) use tensor::{gemm, Mat};
