//! Self-contained MLP: tangent-forward Jacobians, reverse-mode gradients
//! through value and tangent channels, Kaiming init, Adam and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod mlp;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use checkpoint::{load_checkpoint, save_checkpoint, save_sidecar, AnyMlp};
pub use mlp::{assemble_input, Activation, Dense, ForwardBundle, Gradients, Mlp, MlpConfig, Tape};
