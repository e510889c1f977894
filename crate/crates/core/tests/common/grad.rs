//! Randomized finite-difference checks shared by the gradient tests and
//! the acceptance gate. Each case returns the max relative error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use replaynet_core::model::{backward, build_lcnn, forward, multitask_loss, ModelConfig, Targets, HEAD_SIZES};
use replaynet_core::nn::gradcheck::grad_check;
use replaynet_core::nn::{
    conv2d, conv2d_backward, fully_connected, fully_connected_backward, maxpool2d, mfm_halves,
    mfm_thirds, softmax_cross_entropy, Padding, Routing, Tensor,
};

use super::uniform;

/// Cases per op.
pub const CASES: usize = 20;
/// Max-type ops are only checked when every decision margin exceeds this.
pub const TIE_MARGIN: f64 = 2e-4;

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn split<'a>(p: &'a [f64], sizes: &[usize]) -> Vec<&'a [f64]> {
    let mut out = Vec::new();
    let mut rest = p;
    for &n in sizes {
        let (head, tail) = rest.split_at(n);
        out.push(head);
        rest = tail;
    }
    out
}

fn like(t: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::new(t.shape().to_vec(), data.to_vec()).unwrap()
}

pub fn conv2d_case(rng: &mut ChaCha8Rng) -> f64 {
    let h = rng.gen_range(3..=8);
    let w = rng.gen_range(3..=8);
    let cin = rng.gen_range(1..=3);
    let cout = rng.gen_range(1..=4);
    let k = [1, 3, 5][rng.gen_range(0..3)].min(h.min(w));
    let stride = (rng.gen_range(1..=2), rng.gen_range(1..=2));
    let padding = if rng.gen() { Padding::Same } else { Padding::Valid };
    let x = uniform(&[h, w, cin], rng);
    let wt = uniform(&[k, k, cin, cout], rng);
    let b = uniform(&[cout], rng);
    let y = conv2d(&x, &wt, &b, stride, padding).unwrap();
    let r = uniform(y.shape(), rng);
    let g = conv2d_backward(&x, &wt, stride, padding, &r, true).unwrap();
    let analytic: Vec<f64> = [g.input.unwrap().data(), g.weights.data(), g.bias.data()].concat();
    let p: Vec<f64> = [x.data(), wt.data(), b.data()].concat();
    let sizes = [x.len(), wt.len(), b.len()];
    grad_check(
        |p| {
            let s = split(p, &sizes);
            dot(&conv2d(&like(&x, s[0]), &like(&wt, s[1]), &like(&b, s[2]), stride, padding).unwrap(), &r)
        },
        &p,
        &analytic,
    )
}

/// The 7 x 6 x 2 input, 3 x 3 x 2 x 4 kernel case.
pub fn conv2d_fixed_case(rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(&[7, 6, 2], rng);
    let wt = uniform(&[3, 3, 2, 4], rng);
    let b = uniform(&[4], rng);
    let y = conv2d(&x, &wt, &b, (1, 1), Padding::Same).unwrap();
    let r = uniform(y.shape(), rng);
    let g = conv2d_backward(&x, &wt, (1, 1), Padding::Same, &r, true).unwrap();
    let analytic: Vec<f64> = [g.input.unwrap().data(), g.weights.data(), g.bias.data()].concat();
    let p: Vec<f64> = [x.data(), wt.data(), b.data()].concat();
    let sizes = [x.len(), wt.len(), b.len()];
    grad_check(
        |p| {
            let s = split(p, &sizes);
            dot(&conv2d(&like(&x, s[0]), &like(&wt, s[1]), &like(&b, s[2]), (1, 1), Padding::Same).unwrap(), &r)
        },
        &p,
        &analytic,
    )
}

pub fn fc_case_sized(n: usize, m: usize, rng: &mut ChaCha8Rng) -> f64 {
    let x = uniform(&[n], rng);
    let wt = uniform(&[n, m], rng);
    let b = uniform(&[m], rng);
    let r = uniform(&[m], rng);
    let g = fully_connected_backward(&x, &wt, &r).unwrap();
    let analytic: Vec<f64> = [g.input.data(), g.weights.data(), g.bias.data()].concat();
    let p: Vec<f64> = [x.data(), wt.data(), b.data()].concat();
    let sizes = [n, n * m, m];
    grad_check(
        |p| {
            let s = split(p, &sizes);
            dot(&fully_connected(&like(&x, s[0]), &like(&wt, s[1]), &like(&b, s[2])).unwrap(), &r)
        },
        &p,
        &analytic,
    )
}

pub fn fc_case(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=20);
    let m = rng.gen_range(1..=13);
    fc_case_sized(n, m, rng)
}

pub fn softmax_ce_case(rng: &mut ChaCha8Rng) -> f64 {
    let c = rng.gen_range(2..=10);
    let z = Tensor::<f64>::from_fn(&[c], |_| rng.gen_range(-4.0..4.0));
    let target = rng.gen_range(0..c);
    let (_, g) = softmax_cross_entropy(&z, target).unwrap();
    grad_check(
        |p| softmax_cross_entropy(&like(&z, p), target).unwrap().0,
        z.data(),
        g.data(),
    )
}

/// Draws inputs until the op's decision margins clear [`TIE_MARGIN`], then
/// checks the input gradient of `sum(r * op(x))`.
fn routed_case(
    rng: &mut ChaCha8Rng,
    mut shape: impl FnMut(&mut ChaCha8Rng) -> Vec<usize>,
    op: impl Fn(&Tensor<f64>) -> (Tensor<f64>, Routing<f64>),
) -> f64 {
    loop {
        let x = uniform(&shape(rng), rng);
        let (y, routing) = op(&x);
        if routing.min_gap <= TIE_MARGIN {
            continue;
        }
        let r = uniform(y.shape(), rng);
        let g = routing.backward(&r).unwrap();
        return grad_check(|p| dot(&op(&like(&x, p)).0, &r), x.data(), g.data());
    }
}

pub fn maxpool_case(rng: &mut ChaCha8Rng) -> f64 {
    let window = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    let stride = (rng.gen_range(1..=3), rng.gen_range(1..=3));
    routed_case(
        rng,
        |rng| vec![rng.gen_range(3..=8), rng.gen_range(3..=8), rng.gen_range(1..=3)],
        move |x| maxpool2d(x, window, stride).unwrap(),
    )
}

pub fn mfm_halves_case(rng: &mut ChaCha8Rng) -> f64 {
    routed_case(
        rng,
        |rng| vec![rng.gen_range(1..=5), rng.gen_range(1..=5), 2 * rng.gen_range(1..=4)],
        |x| mfm_halves(x).unwrap(),
    )
}

pub fn mfm_thirds_case(rng: &mut ChaCha8Rng) -> f64 {
    routed_case(
        rng,
        |rng| vec![rng.gen_range(1..=5), rng.gen_range(1..=5), 3 * rng.gen_range(1..=3)],
        |x| mfm_thirds(x).unwrap(),
    )
}

/// 32 x 17 input, quarter widths, 16 FC units: the smallest input that
/// survives five poolings.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_frames: 32,
        input_bins: 17,
        width_divisor: 4,
        fc_units: 16,
    }
}

/// Total multitask loss gradient of the tiny network w.r.t. every
/// parameter, with a fixed dropout mask. Returns (error, attempts).
pub fn tiny_model_case(seed: u64) -> (f64, usize) {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for attempt in 1.. {
        let params = build_lcnn::<f64>(cfg, rng.gen()).unwrap();
        let x = uniform(&[cfg.input_frames, cfg.input_bins, 1], &mut rng);
        let targets = Targets(HEAD_SIZES.map(|n| rng.gen_range(0..n)));
        let dropout_seed: u64 = rng.gen();
        let loss_at = |p: &replaynet_core::model::ModelParams<f64>| {
            let mut drng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let (out, cache) = forward(p, &x, true, &mut drng).unwrap();
            let (loss, grads) = multitask_loss(&out.logits, &targets, [1.0; 4]).unwrap();
            (loss, grads, out, cache)
        };
        let (_, head_grads, _, cache) = loss_at(&params);
        if cache.min_gap() <= TIE_MARGIN {
            continue;
        }
        let analytic: Vec<f64> = backward(&params, cache, &head_grads)
            .unwrap()
            .iter()
            .flat_map(|t| t.data().to_vec())
            .collect();
        let flat: Vec<f64> = params.tensors.iter().flat_map(|t| t.data().to_vec()).collect();
        let sizes: Vec<usize> = params.tensors.iter().map(Tensor::len).collect();
        let err = grad_check(
            |p| {
                let mut probe = params.clone();
                for (t, chunk) in probe.tensors.iter_mut().zip(split(p, &sizes)) {
                    t.data_mut().copy_from_slice(chunk);
                }
                loss_at(&probe).0
            },
            &flat,
            &analytic,
        );
        return (err, attempt);
    }
    unreachable!()
}
