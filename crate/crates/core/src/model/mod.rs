//! Sequence-to-set generator: bidirectional GRU encoder, additive attention,
//! GRU decoder fed with a coverage vector of already-emitted labels, and a
//! soft cross-entropy loss that tolerates label order.

mod attention;
mod coverage;
mod encoder;
mod loss;
mod seq2seq;

pub use attention::{attend, Attention, AttentionStep};
pub use coverage::{coverage_vector, Coverage};
pub use encoder::{encode, EncodedSource, Encoder, EncoderTrace};
pub use loss::{sequence_loss, soft_target, LossMode, LOG_CLAMP};
pub use seq2seq::{DecoderState, Generation, Seq2Seq, StepOutput};

use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::tensor::Tensor;

/// Shape and switches of a seq2seq model.
///
/// Herb classes are `0..herb_vocab_size`; the output layer has one extra
/// class for end-of-sequence, and the decoder input embedding one more row
/// for the begin-of-sequence marker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub source_vocab_size: usize,
    pub herb_vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub max_decode_len: usize,
    pub coverage_enabled: bool,
    pub soft_loss_enabled: bool,
}

impl ModelConfig {
    pub const DEFAULT_EMBED_DIM: usize = 100;
    pub const DEFAULT_HIDDEN_DIM: usize = 300;
    pub const DEFAULT_MAX_DECODE_LEN: usize = 20;

    pub fn new(source_vocab_size: usize, herb_vocab_size: usize) -> Self {
        Self {
            source_vocab_size,
            herb_vocab_size,
            embed_dim: Self::DEFAULT_EMBED_DIM,
            hidden_dim: Self::DEFAULT_HIDDEN_DIM,
            max_decode_len: Self::DEFAULT_MAX_DECODE_LEN,
            coverage_enabled: true,
            soft_loss_enabled: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("source_vocab_size", self.source_vocab_size),
            ("herb_vocab_size", self.herb_vocab_size),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_decode_len", self.max_decode_len),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn eos(&self) -> usize {
        self.herb_vocab_size
    }

    pub fn bos(&self) -> usize {
        self.herb_vocab_size + 1
    }
}

/// `(name, tensor)` pairs of a sub-module, renamed under `prefix`.
pub(crate) fn prefixed<'a>(prefix: &str, p: &'a impl Parameters) -> Vec<(String, &'a Tensor)> {
    p.named_params().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}

pub(crate) fn prefixed_mut<'a>(
    prefix: &str,
    p: &'a mut impl Parameters,
) -> Vec<(String, &'a mut Tensor)> {
    p.named_params_mut().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)).collect()
}
