//! Light-CNN with Max-Feature-Map activations and four classification
//! heads: spoofing, environment, playback device and recording device.

mod arch;
mod train;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use arch::{
    backward, build_lcnn, forward, Architecture, ForwardCache, ForwardOutput, ModelConfig,
    ModelParams, HEAD_NAMES, HEAD_SIZES,
};
pub use train::{train, EpochLog, Sample, TrainConfig, TrainOutcome};

use crate::backend::Code;
use crate::channel::{LabeledUtterance, SpoofLabel};
use crate::error::{Error, Result};
use crate::nn::{checkpoint, softmax_cross_entropy, Scalar, Tensor};

/// Class indices for the four heads; genuine maps to the last index of
/// each replay-noise head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Targets(pub [usize; 4]);

pub fn labels_to_targets(u: &LabeledUtterance) -> Result<Targets> {
    u.validate()?;
    let s = match u.spoof {
        SpoofLabel::Genuine => 0,
        SpoofLabel::Spoofed => 1,
    };
    Ok(Targets([
        s,
        usize::from(u.env_label),
        usize::from(u.playback_label),
        usize::from(u.recorder_label),
    ]))
}

/// Which head losses contribute to training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    Multitask,
    /// Spoofing head only.
    Baseline,
}

impl TrainMode {
    pub fn loss_weights(self) -> [f64; 4] {
        match self {
            TrainMode::Multitask => [1.0; 4],
            TrainMode::Baseline => [1.0, 0.0, 0.0, 0.0],
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Multitask => "multitask",
            TrainMode::Baseline => "baseline",
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multitask" => Ok(TrainMode::Multitask),
            "baseline" => Ok(TrainMode::Baseline),
            other => Err(Error::invalid(format!(
                "mode `{other}` is not multitask or baseline"
            ))),
        }
    }
}

/// Weighted sum of the four cross-entropy terms and the gradient of that
/// sum with respect to each head's logits.
pub fn multitask_loss<T: Scalar>(
    logits: &[Tensor<T>; 4],
    targets: &Targets,
    weights: [f64; 4],
) -> Result<(T, [Tensor<T>; 4])> {
    let mut total = T::zero();
    let mut grads = Vec::with_capacity(4);
    for h in 0..4 {
        let (loss, mut grad) = softmax_cross_entropy(&logits[h], targets.0[h])?;
        let w = T::from_f64_lossy(weights[h]);
        total += w * loss;
        grad.scale(w);
        grads.push(grad);
    }
    Ok((total, grads.try_into().expect("four heads")))
}

/// Inference-mode FC7 affine output.
pub fn extract_code<T: Scalar>(params: &ModelParams<T>, input: &Tensor<T>) -> Result<Code> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (out, _) = forward(params, input, false, &mut rng)?;
    Ok(Code(out.code.data().iter().map(|v| v.as_f64()).collect()))
}

const META_NAME: &str = "meta.config";

pub fn save_checkpoint(params: &ModelParams<f32>, path: impl AsRef<Path>) -> Result<()> {
    let c = params.config;
    let meta = [c.input_frames, c.input_bins, c.width_divisor, c.fc_units]
        .map(|v| v as f32)
        .to_vec();
    let mut items = vec![(META_NAME.to_string(), Tensor::new(vec![4], meta)?)];
    items.extend(params.names.iter().cloned().zip(params.tensors.iter().cloned()));
    checkpoint::write(path, &items)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams<f32>> {
    let path = path.as_ref();
    let malformed = |reason: String| Error::Malformed {
        kind: "checkpoint",
        path: path.to_path_buf(),
        reason,
    };
    let mut items = checkpoint::read(path)?.into_iter();
    let meta = match items.next() {
        Some((name, t)) if name == META_NAME && t.len() == 4 => t,
        _ => return Err(malformed(format!("first record is not {META_NAME}"))),
    };
    let m: Vec<usize> = meta.data().iter().map(|&v| v as usize).collect();
    let config = ModelConfig {
        input_frames: m[0],
        input_bins: m[1],
        width_divisor: m[2],
        fc_units: m[3],
    };
    let arch = Architecture::new(config)?;
    let rest: Vec<_> = items.collect();
    if rest.len() != arch.param_shapes.len() {
        return Err(malformed(format!(
            "{} parameter records, architecture has {}",
            rest.len(),
            arch.param_shapes.len()
        )));
    }
    let mut names = Vec::with_capacity(rest.len());
    let mut tensors = Vec::with_capacity(rest.len());
    for ((name, t), (want_name, want_shape)) in rest.into_iter().zip(&arch.param_shapes) {
        if &name != want_name || t.shape() != want_shape.as_slice() {
            return Err(malformed(format!(
                "record {name} {:?} where {want_name} {want_shape:?} was expected",
                t.shape()
            )));
        }
        names.push(name);
        tensors.push(t);
    }
    Ok(ModelParams {
        config,
        names,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Subset;

    fn utt(spoof: SpoofLabel, e: u8, p: u8, r: u8) -> LabeledUtterance {
        LabeledUtterance {
            id: "x".into(),
            path: "wav/x.wav".into(),
            subset: Subset::Train,
            spoof,
            env_label: e,
            playback_label: p,
            recorder_label: r,
        }
    }

    #[test]
    fn target_mapping() {
        let g = labels_to_targets(&utt(SpoofLabel::Genuine, 4, 8, 7)).unwrap();
        assert_eq!(g, Targets([0, 4, 8, 7]));
        let s = labels_to_targets(&utt(SpoofLabel::Spoofed, 3, 2, 5)).unwrap();
        assert_eq!(s, Targets([1, 3, 2, 5]));
        assert!(labels_to_targets(&utt(SpoofLabel::Spoofed, 4, 2, 5)).is_err());
    }

    #[test]
    fn uniform_and_saturated_loss() {
        let zeros = HEAD_SIZES.map(|n| Tensor::<f64>::zeros(&[n]));
        let t = Targets([0, 4, 8, 7]);
        let (l, _) = multitask_loss(&zeros, &t, TrainMode::Multitask.loss_weights()).unwrap();
        let expect = 2f64.ln() + 5f64.ln() + 9f64.ln() + 8f64.ln();
        assert!((l - expect).abs() < 1e-12);
        let (b, g) = multitask_loss(&zeros, &t, TrainMode::Baseline.loss_weights()).unwrap();
        assert!((b - 2f64.ln()).abs() < 1e-12);
        assert!(g[1..].iter().all(|g| g.data().iter().all(|&v| v == 0.0)));

        let peaked = HEAD_SIZES.map(|n| Tensor::<f64>::from_fn(&[n], |i| if i == 0 { 50.0 } else { 0.0 }));
        let (l, _) = multitask_loss(&peaked, &Targets([0; 4]), [1.0; 4]).unwrap();
        assert!(l < 1e-6);
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("baseline".parse::<TrainMode>().unwrap(), TrainMode::Baseline);
        let err = "banana".parse::<TrainMode>().unwrap_err().to_string();
        assert!(err.contains("banana"));
    }
}
