//! Dense tensors, reverse-mode gradients, Adam, and numerical verification.

mod check;
mod graph;
mod optim;
mod params;
mod tensor;

pub use check::{gradcheck, gradcheck_in, GradCheckReport, LossGraph};
pub use graph::{grad_eval, Graph, Perturbation, Real, Var};
pub use optim::{adam_step, cosine_sim, curve_csv, warmup_lr, AdamConfig, AdamState, Cosine, LossRecord};
pub use params::{Grads, Param, ParamSet};
pub use tensor::Tensor;
