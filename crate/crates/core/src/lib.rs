pub mod backend;
pub mod channel;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod model;
pub mod nn;
pub mod pipeline;

pub use backend::{Backend, Code, GaussianModel};
pub use channel::{CorpusConfig, LabeledUtterance, SpoofLabel, Subset};
pub use dsp::{Spectrogram, StftConfig, Waveform};
pub use error::{Error, Result};
pub use eval::TrialSet;
pub use model::{ModelConfig, ModelParams, TrainConfig, TrainMode};
pub use nn::Tensor;
pub use pipeline::{Command, ModeSelection, Pipeline, PipelineConfig, Report};

/// SplitMix64 mix of a base seed and a stream key, used to give every
/// utterance, device instance and training run an independent generator.
pub fn derive_seed(base: u64, key: u64) -> u64 {
    let mut z = base ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a hash of a string key (utterance ids).
pub fn hash_key(key: &str) -> u64 {
    key.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3)
    })
}
