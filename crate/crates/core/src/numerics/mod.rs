//! Dense linear algebra, activations, initialization, Adam, gradient clipping
//! and the finite-difference gradient oracle.

mod activation;
mod gradcheck;
mod init;
mod optim;
mod params;
pub mod snapshot;
mod tensor;

pub use activation::{order_free_sum, relu, sigmoid, softmax, softmax_unchecked};
pub use gradcheck::{compare_grads, finite_diff_grad, rel_err, TensorCheck, GRADCHECK_TOL};
pub use init::gaussian_init;
pub use optim::{adam_step, clip_by_global_norm, global_norm, AdamConfig};
pub use params::{Grads, Param, ParamId, ParamStore, Values};
pub use tensor::{add_outer, dot, matvec, matvec_add, matvec_t_add, Tensor};
