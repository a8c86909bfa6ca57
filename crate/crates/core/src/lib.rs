//! Guided attention-LSTM image captioning.
//!
//! A soft-attention encoder-decoder and its Review Net extension, each with
//! a guiding network whose max-pooled output is added to every decoder
//! input and trained with an extra ranking loss over frequent words.
//! Gradients come from a taped forward pass with hand-written backward rules.
//!
//! The core is generic over the scalar type; training and checks use `f64`.

pub mod cli;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod guiding;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod objective;
pub mod review;
pub mod trainer;

pub use error::{Error, Result};

pub type Model = model::CaptionModel<f64>;
pub type ModelF32 = model::CaptionModel<f32>;
pub type Params = numerics::ParamStore<f64>;
pub type ParamsF32 = numerics::ParamStore<f32>;
pub type Record = corpus::CaptionRecord<f64>;
pub type Annotations = corpus::AnnotationSet<f64>;
pub type Losses = objective::LossBreakdown<f64>;
