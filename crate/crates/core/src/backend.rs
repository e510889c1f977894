//! Two-Gaussian log-likelihood-ratio back-end over network codes.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::{checkpoint, Tensor};

pub const STD_FLOOR: f64 = 1e-6;

/// Fixed-size embedding taken from the network's last hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Code(pub Vec<f64>);

impl Code {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianModel {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GaussianModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Per-dimension sample mean and population (1/N) standard deviation,
/// floored at [`STD_FLOOR`].
pub fn fit_gaussian(codes: &[Code]) -> Result<GaussianModel> {
    if codes.len() < 2 {
        return Err(Error::invalid(format!(
            "fitting a Gaussian needs at least 2 codes, got {}",
            codes.len()
        )));
    }
    let dim = codes[0].dim();
    if let Some(bad) = codes.iter().position(|c| c.dim() != dim) {
        return Err(Error::shape(
            "fit_gaussian",
            format!("code {bad} has dim {}, expected {dim}", codes[bad].dim()),
        ));
    }
    let n = codes.len() as f64;
    let mut mean = vec![0.0; dim];
    for c in codes {
        for (m, v) in mean.iter_mut().zip(&c.0) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for c in codes {
        for ((s, v), m) in var.iter_mut().zip(&c.0).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
    Ok(GaussianModel { mean, std })
}

pub fn log_prob(g: &GaussianModel, code: &Code) -> Result<f64> {
    if code.dim() != g.dim() {
        return Err(Error::shape(
            "log_prob",
            format!("code dim {} vs model dim {}", code.dim(), g.dim()),
        ));
    }
    let half_ln_2pi = 0.5 * (2.0 * PI).ln();
    Ok(code
        .0
        .iter()
        .zip(g.mean.iter().zip(&g.std))
        .map(|(&c, (&mu, &sigma))| {
            let z = (c - mu) / sigma;
            -sigma.ln() - half_ln_2pi - 0.5 * z * z
        })
        .sum())
}

/// `log p(code | genuine) - log p(code | spoofed)`; higher means more genuine.
pub fn llr_score(code: &Code, genuine: &GaussianModel, spoofed: &GaussianModel) -> Result<f64> {
    Ok(log_prob(genuine, code)? - log_prob(spoofed, code)?)
}

/// The fitted pair of class models.
#[derive(Debug, Clone, PartialEq)]
pub struct Backend {
    pub genuine: GaussianModel,
    pub spoofed: GaussianModel,
}

impl Backend {
    pub fn fit(genuine: &[Code], spoofed: &[Code]) -> Result<Self> {
        let backend = Backend {
            genuine: fit_gaussian(genuine)?,
            spoofed: fit_gaussian(spoofed)?,
        };
        if backend.genuine.dim() != backend.spoofed.dim() {
            return Err(Error::shape("backend", "class models differ in dimension"));
        }
        Ok(backend)
    }

    pub fn score(&self, code: &Code) -> Result<f64> {
        llr_score(code, &self.genuine, &self.spoofed)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let vec = |v: &[f64]| Tensor::new(vec![v.len()], v.iter().map(|&x| x as f32).collect());
        let items = vec![
            ("genuine.mean".to_string(), vec(&self.genuine.mean)?),
            ("genuine.std".to_string(), vec(&self.genuine.std)?),
            ("spoofed.mean".to_string(), vec(&self.spoofed.mean)?),
            ("spoofed.std".to_string(), vec(&self.spoofed.std)?),
        ];
        checkpoint::write(path, &items)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let items = checkpoint::read(path)?;
        let get = |name: &str| {
            items
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>())
                .ok_or_else(|| Error::Malformed {
                    kind: "backend",
                    path: path.to_path_buf(),
                    reason: format!("missing record {name}"),
                })
        };
        Ok(Backend {
            genuine: GaussianModel {
                mean: get("genuine.mean")?,
                std: get("genuine.std")?,
            },
            spoofed: GaussianModel {
                mean: get("spoofed.mean")?,
                std: get("spoofed.std")?,
            },
        })
    }
}

/// `<utterance_id> <score>` lines with six decimals.
pub fn format_scores(scores: &[(String, f64)]) -> String {
    let mut out = String::new();
    for (id, s) in scores {
        writeln!(out, "{id} {s:.6}").unwrap();
    }
    out
}

pub fn write_scores(path: impl AsRef<Path>, scores: &[(String, f64)]) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_scores(scores)).map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let malformed = |reason: &str| Error::Malformed {
                kind: "score",
                path: path.to_path_buf(),
                reason: format!("line {}: {reason}", i + 1),
            };
            let mut parts = line.split_whitespace();
            let (Some(id), Some(score), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(malformed("expected `<id> <score>`"));
            };
            let score: f64 = score.parse().map_err(|_| malformed("score is not a number"))?;
            if !score.is_finite() {
                return Err(malformed("score is not finite"));
            }
            Ok((id.to_string(), score))
        })
        .collect()
}
