use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{
    conv2d, conv2d_backward, dropout, fully_connected, fully_connected_backward, maxpool2d,
    mfm_halves, mfm_thirds, DropoutMask, Padding, Routing, Scalar, Tensor,
};

/// Output sizes of the spoofing, environment, playback and recorder heads.
pub const HEAD_SIZES: [usize; 4] = [2, 5, 9, 8];
pub const HEAD_NAMES: [&str; 4] = ["fc_s", "fc_e", "fc_p", "fc_r"];

const INPUT_DROPOUT: f64 = 0.2;
const FC_DROPOUT: f64 = 0.7;

/// Input geometry and width scaling of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_frames: usize,
    pub input_bins: usize,
    /// Every convolution's output channel count is divided by this.
    pub width_divisor: usize,
    /// Affine units in FC6 and FC7; the code has this many dimensions.
    pub fc_units: usize,
}

impl ModelConfig {
    /// The published network: 400 x 257 input, full widths, 2 x 64 FC layers.
    pub fn full() -> Self {
        ModelConfig {
            input_frames: 400,
            input_bins: 257,
            width_divisor: 1,
            fc_units: 128,
        }
    }

    /// 100 x 129 input with a quarter of the channels.
    pub fn reduced() -> Self {
        ModelConfig {
            input_frames: 100,
            input_bins: 129,
            width_divisor: 4,
            fc_units: 128,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stage {
    Dropout(u32),
    Conv { layer: usize, kernel: usize },
    Mfm2,
    Mfm3,
    Pool { window: (usize, usize) },
    Flatten,
    Fc { layer: usize },
}

/// (name, kernel, output channels at full width)
const CONVS: [(&str, usize, usize); 9] = [
    ("conv1", 5, 32),
    ("conv2a", 1, 32),
    ("conv2b", 3, 48),
    ("conv3a", 1, 48),
    ("conv3b", 3, 64),
    ("conv4a", 1, 64),
    ("conv4b", 3, 32),
    ("conv5a", 1, 32),
    ("conv5b", 3, 32),
];

fn trunk_stages() -> Vec<Stage> {
    use Stage::*;
    let conv = |layer: usize| Conv {
        layer,
        kernel: CONVS[layer].1,
    };
    vec![
        Dropout(0),
        conv(0),
        Mfm2,
        Pool { window: (2, 2) },
        conv(1),
        Mfm2,
        conv(2),
        Mfm2,
        Pool { window: (2, 2) },
        conv(3),
        Mfm3,
        conv(4),
        Mfm2,
        Pool { window: (2, 1) },
        conv(5),
        Mfm2,
        conv(6),
        Mfm2,
        Pool { window: (2, 1) },
        conv(7),
        Mfm2,
        conv(8),
        Mfm2,
        Pool { window: (2, 2) },
        Flatten,
        Dropout(1),
        Fc { layer: 0 },
        Mfm2,
        Fc { layer: 1 },
    ]
}

/// Layer list plus the shapes flowing between layers.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub config: ModelConfig,
    pub(crate) stages: Vec<Stage>,
    /// Shape after each stage of the trunk.
    pub trace: Vec<Vec<usize>>,
    /// (name, shape) of every parameter tensor in storage order.
    pub param_shapes: Vec<(String, Vec<usize>)>,
}

impl Architecture {
    pub fn new(config: ModelConfig) -> Result<Self> {
        if config.width_divisor == 0 || config.fc_units == 0 || config.fc_units % 2 != 0 {
            return Err(Error::invalid(format!("bad model config {config:?}")));
        }
        let stages = trunk_stages();
        let mut shape = vec![config.input_frames, config.input_bins, 1];
        let mut trace = Vec::with_capacity(stages.len());
        let mut param_shapes = Vec::new();
        let mut fc_in = 0;
        for stage in &stages {
            shape = match *stage {
                Stage::Dropout(_) => shape,
                Stage::Conv { layer, kernel } => {
                    let (name, _, full) = CONVS[layer];
                    let out = full / config.width_divisor;
                    if out == 0 || full % config.width_divisor != 0 {
                        return Err(Error::invalid(format!(
                            "width divisor {} does not divide {name}",
                            config.width_divisor
                        )));
                    }
                    param_shapes.push((format!("{name}.weight"), vec![kernel, kernel, shape[2], out]));
                    param_shapes.push((format!("{name}.bias"), vec![out]));
                    vec![shape[0], shape[1], out]
                }
                Stage::Mfm2 => {
                    let mut s = shape.clone();
                    let c = s.last_mut().unwrap();
                    if *c % 2 != 0 {
                        return Err(Error::shape("architecture", "odd channel count before MFM"));
                    }
                    *c /= 2;
                    s
                }
                Stage::Mfm3 => {
                    let mut s = shape.clone();
                    let c = s.last_mut().unwrap();
                    if *c % 3 != 0 {
                        return Err(Error::shape("architecture", "MFM 2/3 needs 3k channels"));
                    }
                    *c = *c / 3 * 2;
                    s
                }
                Stage::Pool { window } => {
                    if window.0 > shape[0] || window.1 > shape[1] {
                        return Err(Error::shape(
                            "architecture",
                            format!("pool window {window:?} exceeds feature map {shape:?}"),
                        ));
                    }
                    vec![
                        (shape[0] - window.0) / window.0 + 1,
                        (shape[1] - window.1) / window.1 + 1,
                        shape[2],
                    ]
                }
                Stage::Flatten => vec![shape.iter().product()],
                Stage::Fc { layer } => {
                    let name = ["fc6", "fc7"][layer];
                    if layer == 0 {
                        fc_in = shape[0];
                    }
                    param_shapes.push((format!("{name}.weight"), vec![shape[0], config.fc_units]));
                    param_shapes.push((format!("{name}.bias"), vec![config.fc_units]));
                    vec![config.fc_units]
                }
            };
            trace.push(shape.clone());
        }
        debug_assert!(fc_in > 0);
        for (name, &size) in HEAD_NAMES.iter().zip(&HEAD_SIZES) {
            param_shapes.push((format!("{name}.weight"), vec![config.fc_units / 2, size]));
            param_shapes.push((format!("{name}.bias"), vec![size]));
        }
        Ok(Architecture {
            config,
            stages,
            trace,
            param_shapes,
        })
    }

    pub fn code_dim(&self) -> usize {
        self.config.fc_units
    }

    pub(crate) fn conv_index(&self, layer: usize) -> usize {
        2 * layer
    }

    pub(crate) fn fc_index(&self, layer: usize) -> usize {
        2 * (CONVS.len() + layer)
    }

    pub(crate) fn head_index(&self, head: usize) -> usize {
        2 * (CONVS.len() + 2 + head)
    }
}

/// Named parameter tensors of one network instance.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T = f32> {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn head_sizes(&self) -> [usize; 4] {
        let mut out = [0; 4];
        for (o, name) in out.iter_mut().zip(HEAD_NAMES) {
            *o = self
                .get(&format!("{name}.bias"))
                .map_or(0, |b| b.len());
        }
        out
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Fan-in scaled uniform weights, `U(-b, b)` with `b = sqrt(3 / fan_in)`
/// (unit gain, since MFM keeps the second moment of its input), and zero
/// biases. Head weights use a twentieth of that bound.
pub fn build_lcnn<T: Scalar>(config: ModelConfig, seed: u64) -> Result<ModelParams<T>> {
    let arch = Architecture::new(config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let head_start = arch.head_index(0);
    let mut names = Vec::new();
    let mut tensors = Vec::new();
    for (i, (name, shape)) in arch.param_shapes.iter().enumerate() {
        let t = if name.ends_with(".bias") {
            Tensor::zeros(shape)
        } else {
            let fan_in: usize = shape[..shape.len() - 1].iter().product();
            let mut bound = (3.0 / fan_in as f64).sqrt();
            if i >= head_start {
                bound *= 0.05;
            }
            Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.gen_range(-bound..bound)))
        };
        names.push(name.clone());
        tensors.push(t);
    }
    Ok(ModelParams {
        config,
        names,
        tensors,
    })
}

enum Record<T> {
    Dropout(Option<DropoutMask<T>>),
    Input(Tensor<T>),
    Routing(Routing<T>),
    Flatten(Vec<usize>),
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache<T> {
    records: Vec<Record<T>>,
    head_input: Tensor<T>,
    head_routing: Routing<T>,
    /// Shape after every trunk stage.
    pub shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Smallest decision margin of any max-type op in this pass.
    pub fn min_gap(&self) -> T {
        self.records
            .iter()
            .filter_map(|r| match r {
                Record::Routing(r) => Some(r.min_gap),
                _ => None,
            })
            .fold(self.head_routing.min_gap, T::min)
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// Spoofing, environment, playback and recorder logits.
    pub logits: [Tensor<T>; 4],
    /// FC7 affine output, before its MFM.
    pub code: Tensor<T>,
}

pub(crate) fn check_input<T: Scalar>(config: &ModelConfig, input: &Tensor<T>) -> Result<()> {
    let expected = [config.input_frames, config.input_bins, 1];
    if input.shape() != expected {
        return Err(Error::shape(
            "forward",
            format!("input {:?}, model expects {expected:?}", input.shape()),
        ));
    }
    Ok(())
}

pub fn forward<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    input: &Tensor<T>,
    training: bool,
    rng: &mut R,
) -> Result<(ForwardOutput<T>, ForwardCache<T>)> {
    let arch = Architecture::new(params.config)?;
    check_input(&params.config, input)?;
    let p = &params.tensors;
    let mut x = input.clone();
    let mut records = Vec::with_capacity(arch.stages.len());
    let mut shapes = Vec::with_capacity(arch.stages.len());
    for stage in &arch.stages {
        let (next, rec) = match *stage {
            Stage::Dropout(which) => {
                let rate = if which == 0 { INPUT_DROPOUT } else { FC_DROPOUT };
                let (y, mask) = dropout(&x, rate, training, rng)?;
                (y, Record::Dropout(mask))
            }
            Stage::Conv { layer, .. } => {
                let i = arch.conv_index(layer);
                let y = conv2d(&x, &p[i], &p[i + 1], (1, 1), Padding::Same)?;
                (y, Record::Input(x))
            }
            Stage::Mfm2 => {
                let (y, r) = mfm_halves(&x)?;
                (y, Record::Routing(r))
            }
            Stage::Mfm3 => {
                let (y, r) = mfm_thirds(&x)?;
                (y, Record::Routing(r))
            }
            Stage::Pool { window } => {
                let (y, r) = maxpool2d(&x, window, window)?;
                (y, Record::Routing(r))
            }
            Stage::Flatten => {
                let shape = x.shape().to_vec();
                let n = x.len();
                (x.reshape(&[n])?, Record::Flatten(shape))
            }
            Stage::Fc { layer } => {
                let i = arch.fc_index(layer);
                let y = fully_connected(&x, &p[i], &p[i + 1])?;
                (y, Record::Input(x))
            }
        };
        shapes.push(next.shape().to_vec());
        records.push(rec);
        x = next;
    }
    debug_assert_eq!(shapes, arch.trace);
    let code = x;
    let (head_input, head_routing) = mfm_halves(&code)?;
    let mut logits = Vec::with_capacity(4);
    for h in 0..4 {
        let i = arch.head_index(h);
        logits.push(fully_connected(&head_input, &p[i], &p[i + 1])?);
    }
    let logits: [Tensor<T>; 4] = logits.try_into().expect("four heads");
    Ok((
        ForwardOutput { logits, code },
        ForwardCache {
            records,
            head_input,
            head_routing,
            shapes,
        },
    ))
}

/// Parameter gradients given the loss gradients w.r.t. the four head logits.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    cache: ForwardCache<T>,
    head_grads: &[Tensor<T>; 4],
) -> Result<Vec<Tensor<T>>> {
    let arch = Architecture::new(params.config)?;
    let p = &params.tensors;
    let mut grads: Vec<Tensor<T>> = p.iter().map(|t| Tensor::zeros(t.shape())).collect();

    let mut g_head_in = Tensor::zeros(cache.head_input.shape());
    for (h, g) in head_grads.iter().enumerate() {
        let i = arch.head_index(h);
        let fc = fully_connected_backward(&cache.head_input, &p[i], g)?;
        grads[i] = fc.weights;
        grads[i + 1] = fc.bias;
        g_head_in.add_assign(&fc.input)?;
    }
    let mut g = cache.head_routing.backward(&g_head_in)?;

    let first_conv = arch
        .stages
        .iter()
        .position(|s| matches!(s, Stage::Conv { .. }))
        .expect("network has convolutions");
    for (s, (stage, rec)) in arch.stages.iter().zip(cache.records).enumerate().rev() {
        g = match (*stage, rec) {
            (Stage::Dropout(_), Record::Dropout(mask)) => match mask {
                Some(m) => m.backward(&g)?,
                None => g,
            },
            (Stage::Conv { layer, .. }, Record::Input(x)) => {
                let i = arch.conv_index(layer);
                let need_input = s > first_conv;
                let cg = conv2d_backward(&x, &p[i], (1, 1), Padding::Same, &g, need_input)?;
                grads[i] = cg.weights;
                grads[i + 1] = cg.bias;
                match cg.input {
                    Some(gi) => gi,
                    // Nothing upstream of the first convolution has parameters.
                    None => break,
                }
            }
            (Stage::Mfm2 | Stage::Mfm3 | Stage::Pool { .. }, Record::Routing(r)) => r.backward(&g)?,
            (Stage::Flatten, Record::Flatten(shape)) => g.reshape(&shape)?,
            (Stage::Fc { layer }, Record::Input(x)) => {
                let i = arch.fc_index(layer);
                let fc = fully_connected_backward(&x, &p[i], &g)?;
                grads[i] = fc.weights;
                grads[i + 1] = fc.bias;
                fc.input
            }
            _ => unreachable!("cache records follow the stage list"),
        };
    }
    Ok(grads)
}
