//! Layer forward/backward pairs. Each op takes its inputs by reference and
//! returns fresh tensors; the model wires them together explicitly.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod loss;
mod pool;

use serde::{Deserialize, Serialize};

pub use activation::{dropout, dropout_backward, relu, relu_backward};
pub use batchnorm::{batch_norm2d, batch_norm2d_backward, BatchNormCache, BatchNormGrads, RunningStats};
pub use conv::{conv2d, conv2d_backward, Conv2dGrads};
pub use dense::{dense, dense_backward, DenseGrads};
pub use loss::softmax_cross_entropy;
pub use pool::{max_pool2, max_pool2_backward};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}
