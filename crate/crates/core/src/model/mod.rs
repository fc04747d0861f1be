//! The ChordMixer network.

mod analysis;
mod checkpoint;
mod net;

pub use analysis::{
    depth_of, matrix_rank, mlp_param_count, param_count_formula, rank_certificates, receptive_field, RankReport,
    ReceptiveField, MAX_RANK_ELEMENTS,
};
pub use checkpoint::{Checkpoint, TrainState, CHECKPOINT_MAGIC};
pub use net::{
    ActivationTrace, BatchOutput, ChordMixerNet, HeadKind, Input, InputKind, MixMlp, NetConfig,
};
