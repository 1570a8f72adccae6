//! Neural architectures: Transformer and Conformer encoders, the unit
//! decoder, contrastive pretraining, CTC recognition and the S2UT assembly.

mod config;
mod decoder;
mod encoder;
mod layers;
mod s2ut;
mod seq2seq;
mod speech;

pub use config::{BlockKind, ModelConfig};
pub use decoder::{DecoderScorer, TokenDecoder};
pub use encoder::{Adaptor, Block, EncoderOut, SpeechEncoder, SpeechEncoderOut, TokenEncoder, ADAPTOR_KERNEL};
pub use layers::{
    sinusoidal_positions, Activation, ConformerBlock, DecoderLayer, EncoderLayer, FeedForward, LayerNorm, Linear,
    Mode, MultiHeadAttention, LN_EPS,
};
pub use s2ut::{
    assemble_s2ut, aux_multitask_heads, joint_loss, load_prefix, AuxHead, AuxHeadConfig, S2utConfig, S2utModel,
    S2utOut,
};
pub use seq2seq::{decode, seq2seq_forward, EncoderDecoder, Seq2SeqModel};
pub use speech::{w2v_contrastive_loss, ContrastiveCfg, CtcModel, W2vModel, CTC_BLANK};

/// Replaces every parameter with N(0, 0.3) draws so finite differences see
/// gradients well above round-off.
#[cfg(test)]
pub(crate) fn randomize(store: &mut crate::tensor::ParamStore, seed: u64) {
    let mut r = crate::tensor::RngStream::new(seed);
    for id in store.ids().collect::<Vec<_>>() {
        store.tensor_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.3 * r.normal());
    }
}
