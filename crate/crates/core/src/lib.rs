//! Remote surrogate-model inference toolkit.

pub mod bench;
pub mod exec;
pub mod feasibility;
pub mod kernels;
pub mod model;
pub mod net;
pub mod tensor;
pub mod timing;
pub mod weights;
