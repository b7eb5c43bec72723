//! A small decoder-only transformer over mixed embedding/symbol tokens.

pub mod adam;
pub mod checkpoint;
pub mod config;
mod gemm;
pub mod model;
pub mod params;
pub mod tokens;

pub use adam::{adam_step, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use config::ModelConfig;
pub use model::{final_logits, forward, lcl_loss, loss_and_grad, sequence_losses, softmax, Gradients, HeadMask};
pub use params::Params;
pub use tokens::{Target, Token, TokenSeq};
