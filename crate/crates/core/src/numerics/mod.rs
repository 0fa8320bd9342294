//! Dense tensors, reverse-mode tape, layer primitives, AdamW, and the
//! finite-difference gradient oracle.

pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod params;
pub mod select;
pub mod tape;
pub mod tensor;

pub use gradcheck::{compare_with_stencil, grad_check, relative_error, GradCheckReport, Stencil};
pub use layers::{
    attention, attention_weights, layer_norm, linear, multi_head_attention, transformer_block,
    LayerNormParams, LinearParams, MultiHeadParams, TransformerBlockParams,
};
pub use loss::bce_loss;
pub use optim::{adamw_step, AdamW, AdamWConfig, AdamWState};
pub use params::{ParamId, ParamStore, Parameter};
pub use select::{gumbel_noise, gumbel_softmax, knn_indices, top_k_select};
pub use tape::{Grads, RowGroups, Tape, Var};
pub use tensor::Tensor;
