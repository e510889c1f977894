//! Layer primitives with explicit backward passes.
//!
//! Feature maps are `[H, W, C]` (channels last); convolution kernels are
//! `[kh, kw, Cin, Cout]`. Max-type ops (pooling and both MFM variants) record
//! a [`Routing`] during the forward pass that the backward pass replays.

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that `out = ceil(in / stride)`.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    sh: usize,
    sw: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

fn same_extent(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

impl ConvGeometry {
    fn new<T: Scalar>(
        input: &Tensor<T>,
        weights: &Tensor<T>,
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        input.expect_rank(3, "conv2d input")?;
        weights.expect_rank(4, "conv2d weights")?;
        let (h, w, cin) = (input.shape()[0], input.shape()[1], input.shape()[2]);
        let (kh, kw, wcin, cout) = (
            weights.shape()[0],
            weights.shape()[1],
            weights.shape()[2],
            weights.shape()[3],
        );
        if wcin != cin {
            return Err(Error::shape(
                "conv2d",
                format!("input has {cin} channels, kernel expects {wcin}"),
            ));
        }
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 || kh == 0 || kw == 0 || h == 0 || w == 0 {
            return Err(Error::shape("conv2d", "zero-sized stride, kernel or input"));
        }
        let (oh, ow, pad_top, pad_left) = match padding {
            Padding::Same => {
                let (oh, pt) = same_extent(h, kh, sh);
                let (ow, pl) = same_extent(w, kw, sw);
                if kh > h + 2 * pt + 1 || kw > w + 2 * pl + 1 {
                    return Err(Error::shape("conv2d", "kernel larger than padded input"));
                }
                (oh, ow, pt, pl)
            }
            Padding::Valid => {
                if kh > h || kw > w {
                    return Err(Error::shape("conv2d", "kernel larger than input"));
                }
                ((h - kh) / sh + 1, (w - kw) / sw + 1, 0, 0)
            }
        };
        Ok(ConvGeometry {
            h,
            w,
            cin,
            kh,
            kw,
            cout,
            sh,
            sw,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    /// Input coordinate hit by output `o` and kernel offset `k`, if inside.
    #[inline]
    fn src(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        let pos = (o * stride + k).checked_sub(pad)?;
        (pos < extent).then_some(pos)
    }
}

/// 2-D cross-correlation.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor<T>> {
    let g = ConvGeometry::new(input, weights, stride, padding)?;
    if bias.shape() != [g.cout] {
        return Err(Error::shape(
            "conv2d bias",
            format!("expected [{}], got {:?}", g.cout, bias.shape()),
        ));
    }
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![T::zero(); g.oh * g.ow * g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let o = &mut out[(oy * g.ow + ox) * g.cout..][..g.cout];
            o.copy_from_slice(bias.data());
            for ky in 0..g.kh {
                let Some(iy) = ConvGeometry::src(oy, ky, g.sh, g.pad_top, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = ConvGeometry::src(ox, kx, g.sw, g.pad_left, g.w) else {
                        continue;
                    };
                    let px = &x[(iy * g.w + ix) * g.cin..][..g.cin];
                    let krow = &wt[(ky * g.kw + kx) * g.cin * g.cout..][..g.cin * g.cout];
                    for (ci, &xv) in px.iter().enumerate() {
                        if xv == T::zero() {
                            continue;
                        }
                        let wrow = &krow[ci * g.cout..][..g.cout];
                        for (acc, &wv) in o.iter_mut().zip(wrow) {
                            *acc += xv * wv;
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![g.oh, g.ow, g.cout], out)
}

#[derive(Debug, Clone)]
pub struct Conv2dGrads<T> {
    /// `None` when the caller did not ask for the input gradient.
    pub input: Option<Tensor<T>>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: (usize, usize),
    padding: Padding,
    grad_out: &Tensor<T>,
    need_input_grad: bool,
) -> Result<Conv2dGrads<T>> {
    let g = ConvGeometry::new(input, weights, stride, padding)?;
    if grad_out.shape() != [g.oh, g.ow, g.cout] {
        return Err(Error::shape(
            "conv2d backward",
            format!(
                "grad shape {:?}, expected {:?}",
                grad_out.shape(),
                [g.oh, g.ow, g.cout]
            ),
        ));
    }
    let x = input.data();
    let wt = weights.data();
    let go = grad_out.data();
    let mut gx = if need_input_grad {
        vec![T::zero(); x.len()]
    } else {
        Vec::new()
    };
    let mut gw = vec![T::zero(); wt.len()];
    let mut gb = vec![T::zero(); g.cout];
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let gpx = &go[(oy * g.ow + ox) * g.cout..][..g.cout];
            for (b, &v) in gb.iter_mut().zip(gpx) {
                *b += v;
            }
            for ky in 0..g.kh {
                let Some(iy) = ConvGeometry::src(oy, ky, g.sh, g.pad_top, g.h) else {
                    continue;
                };
                for kx in 0..g.kw {
                    let Some(ix) = ConvGeometry::src(ox, kx, g.sw, g.pad_left, g.w) else {
                        continue;
                    };
                    let base_in = (iy * g.w + ix) * g.cin;
                    let base_k = (ky * g.kw + kx) * g.cin * g.cout;
                    for ci in 0..g.cin {
                        let xv = x[base_in + ci];
                        let wrow = &wt[base_k + ci * g.cout..][..g.cout];
                        let gwrow = &mut gw[base_k + ci * g.cout..][..g.cout];
                        if need_input_grad {
                            let mut acc = T::zero();
                            for ((gwv, &wv), &gv) in gwrow.iter_mut().zip(wrow).zip(gpx) {
                                *gwv += xv * gv;
                                acc += wv * gv;
                            }
                            gx[base_in + ci] += acc;
                        } else if xv != T::zero() {
                            for (gwv, &gv) in gwrow.iter_mut().zip(gpx) {
                                *gwv += xv * gv;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Conv2dGrads {
        input: need_input_grad
            .then(|| Tensor::new(input.shape().to_vec(), gx))
            .transpose()?,
        weights: Tensor::new(weights.shape().to_vec(), gw)?,
        bias: Tensor::new(vec![g.cout], gb)?,
    })
}

/// Output-to-input index map recorded by max-type ops.
#[derive(Debug, Clone)]
pub struct Routing<T> {
    input_shape: Vec<usize>,
    sources: Vec<usize>,
    /// Smallest gap between a selected value and the nearest competitor.
    /// Finite-difference checks are only meaningful when this is well above
    /// the perturbation size.
    pub min_gap: T,
}

impl<T: Scalar> Routing<T> {
    pub fn sources(&self) -> &[usize] {
        &self.sources
    }

    /// Scatter-adds `grad_out` back onto the selected input cells.
    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.len() != self.sources.len() {
            return Err(Error::shape(
                "routing backward",
                format!("{} grads for {} outputs", grad_out.len(), self.sources.len()),
            ));
        }
        let mut gx = Tensor::zeros(&self.input_shape);
        let data = gx.data_mut();
        for (&src, &g) in self.sources.iter().zip(grad_out.data()) {
            data[src] += g;
        }
        Ok(gx)
    }
}

/// Floor-mode max pooling; trailing incomplete windows are dropped.
/// Ties route to the first maximum in row-major window order.
pub fn maxpool2d<T: Scalar>(
    input: &Tensor<T>,
    window: (usize, usize),
    stride: (usize, usize),
) -> Result<(Tensor<T>, Routing<T>)> {
    input.expect_rank(3, "maxpool2d")?;
    let (h, w, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (ph, pw) = window;
    let (sh, sw) = stride;
    if ph == 0 || pw == 0 || sh == 0 || sw == 0 {
        return Err(Error::shape("maxpool2d", "zero window or stride"));
    }
    if ph > h || pw > w {
        return Err(Error::shape(
            "maxpool2d",
            format!("window {ph}x{pw} exceeds input {h}x{w}"),
        ));
    }
    let oh = (h - ph) / sh + 1;
    let ow = (w - pw) / sw + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut sources = Vec::with_capacity(oh * ow * c);
    let mut min_gap = T::infinity();
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best_idx = usize::MAX;
                let mut best = T::neg_infinity();
                let mut second = T::neg_infinity();
                for dy in 0..ph {
                    for dx in 0..pw {
                        let idx = ((oy * sh + dy) * w + ox * sw + dx) * c + ch;
                        let v = x[idx];
                        if best_idx == usize::MAX || v > best {
                            second = best;
                            best = v;
                            best_idx = idx;
                        } else if v > second {
                            second = v;
                        }
                    }
                }
                if ph * pw > 1 {
                    min_gap = min_gap.min(best - second);
                }
                out.push(best);
                sources.push(best_idx);
            }
        }
    }
    Ok((
        Tensor::new(vec![oh, ow, c], out)?,
        Routing {
            input_shape: input.shape().to_vec(),
            sources,
            min_gap,
        },
    ))
}

fn split_channels<T: Scalar>(
    input: &Tensor<T>,
    groups: usize,
    op: &'static str,
) -> Result<(usize, usize)> {
    let c = *input
        .shape()
        .last()
        .ok_or_else(|| Error::shape(op, "scalar input"))?;
    if c == 0 || c % groups != 0 {
        return Err(Error::shape(
            op,
            format!("channel count {c} is not divisible by {groups}"),
        ));
    }
    Ok((input.len() / c, c / groups))
}

/// Max-Feature-Map over two channel halves: `out[c] = max(in[c], in[c + k])`.
pub fn mfm_halves<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Routing<T>)> {
    let (positions, k) = split_channels(input, 2, "mfm_halves")?;
    let x = input.data();
    let mut out = Vec::with_capacity(positions * k);
    let mut sources = Vec::with_capacity(positions * k);
    let mut min_gap = T::infinity();
    for p in 0..positions {
        let base = p * 2 * k;
        for ch in 0..k {
            let (a, b) = (x[base + ch], x[base + ch + k]);
            min_gap = min_gap.min((a - b).abs());
            if b > a {
                out.push(b);
                sources.push(base + ch + k);
            } else {
                out.push(a);
                sources.push(base + ch);
            }
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = k;
    Ok((
        Tensor::new(shape, out)?,
        Routing {
            input_shape: input.shape().to_vec(),
            sources,
            min_gap,
        },
    ))
}

/// Max-Feature-Map over three channel groups. The first `k` output channels
/// hold the elementwise maximum of the groups, the next `k` the median.
pub fn mfm_thirds<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Routing<T>)> {
    let (positions, k) = split_channels(input, 3, "mfm_thirds")?;
    let x = input.data();
    let mut out = vec![T::zero(); positions * 2 * k];
    let mut sources = vec![0; positions * 2 * k];
    let mut min_gap = T::infinity();
    for p in 0..positions {
        let base = p * 3 * k;
        let obase = p * 2 * k;
        for ch in 0..k {
            let mut idx = [base + ch, base + ch + k, base + ch + 2 * k];
            // Stable descending sort keeps the earlier group first on ties.
            idx.sort_by(|&a, &b| x[b].partial_cmp(&x[a]).unwrap_or(std::cmp::Ordering::Equal));
            min_gap = min_gap
                .min(x[idx[0]] - x[idx[1]])
                .min(x[idx[1]] - x[idx[2]]);
            out[obase + ch] = x[idx[0]];
            sources[obase + ch] = idx[0];
            out[obase + k + ch] = x[idx[1]];
            sources[obase + k + ch] = idx[1];
        }
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = 2 * k;
    Ok((
        Tensor::new(shape, out)?,
        Routing {
            input_shape: input.shape().to_vec(),
            sources,
            min_gap,
        },
    ))
}

/// Affine map `out[j] = sum_i x[i] * W[i, j] + b[j]` with `W: [n, m]`.
pub fn fully_connected<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    weights.expect_rank(2, "fully_connected weights")?;
    let (n, m) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n || bias.shape() != [m] {
        return Err(Error::shape(
            "fully_connected",
            format!(
                "input {:?}, weights {:?}, bias {:?}",
                input.shape(),
                weights.shape(),
                bias.shape()
            ),
        ));
    }
    let mut out = bias.data().to_vec();
    for (&xv, wrow) in input.data().iter().zip(weights.data().chunks_exact(m)) {
        if xv == T::zero() {
            continue;
        }
        for (o, &w) in out.iter_mut().zip(wrow) {
            *o += xv * w;
        }
    }
    Tensor::new(vec![m], out)
}

#[derive(Debug, Clone)]
pub struct FcGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn fully_connected_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<FcGrads<T>> {
    weights.expect_rank(2, "fully_connected weights")?;
    let (n, m) = (weights.shape()[0], weights.shape()[1]);
    if input.len() != n || grad_out.len() != m {
        return Err(Error::shape(
            "fully_connected backward",
            format!(
                "input {:?}, weights {:?}, grad {:?}",
                input.shape(),
                weights.shape(),
                grad_out.shape()
            ),
        ));
    }
    let g = grad_out.data();
    let mut gx = Vec::with_capacity(n);
    let mut gw = vec![T::zero(); n * m];
    for ((&xv, wrow), gwrow) in input
        .data()
        .iter()
        .zip(weights.data().chunks_exact(m))
        .zip(gw.chunks_exact_mut(m))
    {
        let mut acc = T::zero();
        for ((gwv, &wv), &gv) in gwrow.iter_mut().zip(wrow).zip(g) {
            *gwv = xv * gv;
            acc += wv * gv;
        }
        gx.push(acc);
    }
    Ok(FcGrads {
        input: Tensor::new(input.shape().to_vec(), gx)?,
        weights: Tensor::new(vec![n, m], gw)?,
        bias: Tensor::new(vec![m], g.to_vec())?,
    })
}

/// Per-element multiplier applied by a training-mode dropout pass.
#[derive(Debug, Clone)]
pub struct DropoutMask<T> {
    scale: Vec<T>,
}

impl<T: Scalar> DropoutMask<T> {
    pub fn backward(&self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.len() != self.scale.len() {
            return Err(Error::shape("dropout backward", "mask length mismatch"));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(&self.scale)
            .map(|(&g, &s)| g * s)
            .collect();
        Tensor::new(grad_out.shape().to_vec(), data)
    }
}

/// Inverted dropout. Returns no mask when the pass is an identity
/// (inference, or `rate == 0`).
pub fn dropout<T: Scalar, R: Rng + ?Sized>(
    input: &Tensor<T>,
    rate: f64,
    training: bool,
    rng: &mut R,
) -> Result<(Tensor<T>, Option<DropoutMask<T>>)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::invalid(format!("dropout rate {rate} not in [0, 1)")));
    }
    if !training || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
    let scale: Vec<T> = (0..input.len())
        .map(|_| {
            if rng.gen::<f64>() < rate {
                T::zero()
            } else {
                keep
            }
        })
        .collect();
    let data = input
        .data()
        .iter()
        .zip(&scale)
        .map(|(&x, &s)| x * s)
        .collect();
    Ok((
        Tensor::new(input.shape().to_vec(), data)?,
        Some(DropoutMask { scale }),
    ))
}

/// Numerically stable `-ln softmax(logits)[target]` and its gradient
/// `softmax(logits) - onehot(target)`.
pub fn softmax_cross_entropy<T: Scalar>(
    logits: &Tensor<T>,
    target: usize,
) -> Result<(T, Tensor<T>)> {
    let z = logits.data();
    if target >= z.len() {
        return Err(Error::invalid(format!(
            "target {target} out of range for {} classes",
            z.len()
        )));
    }
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    let loss = sum.ln() - (z[target] - max);
    let mut grad: Vec<T> = exps.into_iter().map(|e| e / sum).collect();
    grad[target] -= T::one();
    Ok((loss, Tensor::new(logits.shape().to_vec(), grad)?))
}
