//! Slow reference implementations used as test oracles.

use std::f64::consts::PI;

/// O(n m) full linear convolution.
pub fn direct_convolution(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len() + h.len() - 1];
    for (i, &xi) in x.iter().enumerate() {
        for (j, &hj) in h.iter().enumerate() {
            y[i + j] += xi * hj;
        }
    }
    y
}

/// EER (%) by counting accepted spoofed and rejected genuine trials at every
/// score and at +inf, then interpolating at the first point where the
/// false-acceptance rate no longer exceeds the false-rejection rate.
pub fn brute_force_eer(genuine: &[f64], spoofed: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = genuine.iter().chain(spoofed).copied().collect();
    thresholds.push(f64::INFINITY);
    thresholds.sort_by(f64::total_cmp);
    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let far = spoofed.iter().filter(|&&s| s >= t).count() as f64 / spoofed.len() as f64;
            let frr = genuine.iter().filter(|&&s| s < t).count() as f64 / genuine.len() as f64;
            (far, frr)
        })
        .collect();
    for k in 0..rates.len() {
        let (far, frr) = rates[k];
        if far <= frr {
            if k == 0 || far == frr {
                return 100.0 * far;
            }
            let (pfar, pfrr) = rates[k - 1];
            // Solve for the crossing of the two linear segments.
            let t = (pfar - pfrr) / ((pfar - pfrr) - (far - frr));
            return 100.0 * (pfar + t * (far - pfar));
        }
    }
    unreachable!("FAR = 0 and FRR = 1 at +inf")
}

/// Log of the product of per-dimension normal densities, evaluated in the
/// linear domain. Only usable where the product does not underflow.
pub fn density_product_log(code: &[f64], mean: &[f64], std: &[f64]) -> f64 {
    code.iter()
        .zip(mean.iter().zip(std))
        .map(|(&c, (&m, &s))| (-(c - m).powi(2) / (2.0 * s * s)).exp() / (s * (2.0 * PI).sqrt()))
        .product::<f64>()
        .ln()
}
