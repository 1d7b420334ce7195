//! The full decoder: token embedding, `L` blocks of pre-normalized
//! attention and feed-forward layers with residual connections, a final
//! normalization and the output head.

mod attention;
mod checkpoint;
mod config;
mod forward;
mod params;
mod stream;
mod train;

pub use attention::{causal_softmax_attention, causal_softmax_tape};
pub use checkpoint::{
    decode_checkpoint, decode_header, encode_checkpoint, encode_checkpoint_with, load_checkpoint, read_header,
    save_checkpoint, Checkpoint, CheckpointHeader, MAGIC, VERSION,
};
pub use config::{Ablation, Attention, DecayGating, ModelConfig, Positional, DEFAULT_FIXED_GAMMA, SOS};
pub use forward::{
    check_sequence, embed, embed_tape, forward, forward_tape, hidden_states, ForwardVars, LayerVars, ModelVars,
};
pub use params::{LayerParams, ModelParams};
pub use stream::StreamState;
pub use train::{
    batch_indices, example_grad, masked_nll_loss, nll_loss, train, train_step, AdamState, Example, ExampleGrad,
    StepStats, TrainConfig,
};
