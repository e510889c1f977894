use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::arch::{backward, build_lcnn, forward, ModelConfig, ModelParams};
use super::{multitask_loss, Targets, TrainMode};
use crate::backend::{Backend, Code};
use crate::channel::SpoofLabel;
use crate::derive_seed;
use crate::error::{Error, Result};
use crate::eval::{compute_eer, TrialSet};
use crate::nn::{adam_step, AdamState, Tensor};

const INIT_STREAM: u64 = 0x1417;
const SHUFFLE_STREAM: u64 = 0x5f0f;
const DROPOUT_STREAM: u64 = 0xd209;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Stop after this many epochs without a dev EER improvement.
    pub patience: usize,
    pub seed: u64,
    pub model: ModelConfig,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            learning_rate: 1e-3,
            epochs: 20,
            patience: 5,
            seed: 0,
            model: ModelConfig::full(),
            mode: TrainMode::Multitask,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 || self.patience == 0 {
            return Err(Error::invalid(
                "batch_size, epochs and patience must all be at least 1",
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// A fixed-size network input with its head targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub input: Tensor<f32>,
    pub targets: Targets,
}

impl Sample {
    pub fn spoof(&self) -> SpoofLabel {
        if self.targets.0[0] == 0 {
            SpoofLabel::Genuine
        } else {
            SpoofLabel::Spoofed
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss over the epoch.
    pub loss: f64,
    /// Dev accuracy of the S, E, P and R heads.
    pub acc: [f64; 4],
    /// Dev EER (%) of the Gaussian back-end fitted on training codes.
    pub dev_eer: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} acc_S={:.4} acc_E={:.4} acc_P={:.4} acc_R={:.4}",
            self.epoch, self.loss, self.acc[0], self.acc[1], self.acc[2], self.acc[3]
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest dev EER.
    pub params: ModelParams<f32>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

fn check_subset(samples: &[Sample], name: &str) -> Result<()> {
    let genuine = samples.iter().filter(|s| s.spoof() == SpoofLabel::Genuine).count();
    if genuine < 2 || samples.len() - genuine < 2 {
        return Err(Error::invalid(format!(
            "{name} subset needs at least two utterances of each class \
             ({genuine} genuine, {} spoofed)",
            samples.len() - genuine
        )));
    }
    Ok(())
}

fn argmax(t: &Tensor<f32>) -> usize {
    t.data()
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

struct Evaluation {
    codes: Vec<Code>,
    acc: [f64; 4],
}

fn evaluate(params: &ModelParams<f32>, samples: &[Sample]) -> Result<Evaluation> {
    let per_sample: Vec<(Code, [bool; 4])> = samples
        .par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let (out, _) = forward(params, &s.input, false, &mut rng)?;
            let hits = std::array::from_fn(|h| argmax(&out.logits[h]) == s.targets.0[h]);
            let code = Code(out.code.data().iter().map(|&v| f64::from(v)).collect());
            Ok((code, hits))
        })
        .collect::<Result<_>>()?;
    let n = samples.len() as f64;
    let acc = std::array::from_fn(|h| per_sample.iter().filter(|(_, hit)| hit[h]).count() as f64 / n);
    Ok(Evaluation {
        codes: per_sample.into_iter().map(|(c, _)| c).collect(),
        acc,
    })
}

/// Fits the back-end on `train` codes and returns the EER on `dev`.
fn backend_eer(
    train: &[Sample],
    train_codes: &[Code],
    dev: &[Sample],
    dev_codes: &[Code],
) -> Result<f64> {
    let split = |label| -> Vec<Code> {
        train
            .iter()
            .zip(train_codes)
            .filter(|(s, _)| s.spoof() == label)
            .map(|(_, c)| c.clone())
            .collect()
    };
    let backend = Backend::fit(&split(SpoofLabel::Genuine), &split(SpoofLabel::Spoofed))?;
    let scores = dev_codes
        .iter()
        .map(|c| backend.score(c))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<SpoofLabel> = dev.iter().map(Sample::spoof).collect();
    compute_eer(&TrialSet::from_scores(&scores, &labels))
}

/// Mini-batch Adam training with a seeded shuffle per epoch. After each
/// epoch the dev set is scored through a back-end fitted on training
/// codes; training stops early once the dev EER has not improved for
/// `patience` epochs. `on_epoch` sees every epoch record as it completes.
pub fn train(
    train_set: &[Sample],
    dev_set: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_subset(train_set, "train")?;
    check_subset(dev_set, "dev")?;
    let weights = cfg.mode.loss_weights();
    let mut params: ModelParams<f32> = build_lcnn(cfg.model, derive_seed(cfg.seed, INIT_STREAM))?;
    let mut adam = AdamState::new(&params.tensors, cfg.learning_rate);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut logs = Vec::new();
    let mut best: Option<(f64, usize, ModelParams<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        let epoch_seed = derive_seed(cfg.seed, epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(epoch_seed, SHUFFLE_STREAM)));

        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let dropout_seed = derive_seed(epoch_seed, DROPOUT_STREAM);
            let per_sample: Vec<(f32, Vec<Tensor<f32>>)> = batch
                .par_iter()
                .enumerate()
                .map(|(k, &i)| {
                    let s = &train_set[i];
                    let position = (b * cfg.batch_size + k) as u64;
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(dropout_seed, position));
                    let (out, cache) = forward(&params, &s.input, true, &mut rng)?;
                    let (loss, head_grads) = multitask_loss(&out.logits, &s.targets, weights)?;
                    Ok((loss, backward(&params, cache, &head_grads)?))
                })
                .collect::<Result<_>>()?;

            let mut grads: Vec<Tensor<f32>> =
                params.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect();
            let mut batch_loss = 0.0;
            for (loss, g) in &per_sample {
                batch_loss += f64::from(*loss);
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add_assign(gi)?;
                }
            }
            if !batch_loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            let inv = 1.0 / batch.len() as f32;
            grads.iter_mut().for_each(|g| g.scale(inv));
            adam_step(&mut params.tensors, &grads, &mut adam)?;
            loss_sum += batch_loss;
        }

        let train_eval = evaluate(&params, train_set)?;
        let dev_eval = evaluate(&params, dev_set)?;
        let dev_eer = backend_eer(train_set, &train_eval.codes, dev_set, &dev_eval.codes)?;
        let log = EpochLog {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            acc: dev_eval.acc,
            dev_eer,
        };
        on_epoch(&log);
        logs.push(log);

        let improved = best.as_ref().map_or(true, |(eer, _, _)| dev_eer < *eer);
        if improved {
            best = Some((dev_eer, epoch, params.clone()));
        } else if epoch - best.as_ref().map_or(0, |b| b.1) >= cfg.patience {
            break;
        }
    }
    let (_, best_epoch, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        epochs: logs,
        best_epoch,
    })
}
