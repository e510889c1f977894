//! Equal error rate, DET operating points and code export.
//!
//! Convention: a trial is accepted as genuine when `score >= threshold`.
//! FAR is the fraction of spoofed trials accepted, FRR the fraction of
//! genuine trials rejected.

use std::fmt::Write as _;
use std::path::Path;

use crate::backend::Code;
use crate::channel::SpoofLabel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub id: String,
    pub score: f64,
    pub label: SpoofLabel,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialSet {
    pub trials: Vec<Trial>,
}

impl TrialSet {
    pub fn from_scores(scores: &[f64], labels: &[SpoofLabel]) -> Self {
        TrialSet {
            trials: scores
                .iter()
                .zip(labels)
                .enumerate()
                .map(|(i, (&score, &label))| Trial {
                    id: i.to_string(),
                    score,
                    label,
                })
                .collect(),
        }
    }

    pub fn count(&self, label: SpoofLabel) -> usize {
        self.trials.iter().filter(|t| t.label == label).count()
    }

    fn validate(&self) -> Result<()> {
        if self.count(SpoofLabel::Genuine) == 0 || self.count(SpoofLabel::Spoofed) == 0 {
            return Err(Error::invalid(
                "EER needs at least one genuine and one spoofed trial",
            ));
        }
        if let Some(t) = self.trials.iter().find(|t| !t.score.is_finite()) {
            return Err(Error::invalid(format!("trial {} has a non-finite score", t.id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub far: f64,
    pub frr: f64,
}

/// Operating points at every distinct score, ascending, followed by the
/// reject-everything point at `+inf`.
pub fn det_points(set: &TrialSet) -> Result<Vec<DetPoint>> {
    set.validate()?;
    let mut sorted: Vec<(f64, SpoofLabel)> =
        set.trials.iter().map(|t| (t.score, t.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n_gen = set.count(SpoofLabel::Genuine) as f64;
    let n_spf = set.count(SpoofLabel::Spoofed) as f64;

    let mut points = Vec::new();
    // Counts of trials strictly below the current threshold.
    let (mut gen_below, mut spf_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        points.push(DetPoint {
            threshold,
            far: (n_spf - spf_below as f64) / n_spf,
            frr: gen_below as f64 / n_gen,
        });
        while i < sorted.len() && sorted[i].0 == threshold {
            match sorted[i].1 {
                SpoofLabel::Genuine => gen_below += 1,
                SpoofLabel::Spoofed => spf_below += 1,
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        far: 0.0,
        frr: 1.0,
    });
    Ok(points)
}

/// EER in percent, linearly interpolated between the two sweep points
/// that bracket the FAR = FRR crossing.
pub fn compute_eer(set: &TrialSet) -> Result<f64> {
    let points = det_points(set)?;
    eer_from_points(&points)
}

fn eer_from_points(points: &[DetPoint]) -> Result<f64> {
    let mut prev: Option<&DetPoint> = None;
    for p in points {
        let d = p.far - p.frr;
        if d <= 0.0 {
            let eer = match prev {
                Some(q) if d < 0.0 => {
                    let dq = q.far - q.frr;
                    let t = dq / (dq - d);
                    q.far + t * (p.far - q.far)
                }
                _ => p.far,
            };
            return Ok(100.0 * eer);
        }
        prev = Some(p);
    }
    unreachable!("the +inf point always has FAR - FRR = -1")
}

pub fn format_det_csv(points: &[DetPoint]) -> String {
    let mut out = String::from("threshold,far,frr\n");
    for p in points {
        writeln!(out, "{},{:.6},{:.6}", p.threshold, p.far, p.frr).unwrap();
    }
    out
}

/// The `eer_pct=<f> n_genuine=<n> n_spoofed=<n>` report line.
pub fn report_line(set: &TrialSet) -> Result<String> {
    Ok(format!(
        "eer_pct={:.4} n_genuine={} n_spoofed={}",
        compute_eer(set)?,
        set.count(SpoofLabel::Genuine),
        set.count(SpoofLabel::Spoofed)
    ))
}

/// Writes `id,label_spoof,c0..c{d-1}` rows for external visualization.
pub fn export_codes(rows: &[(String, SpoofLabel, Code)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let Some(first) = rows.first() else {
        return Err(Error::invalid("no codes to export"));
    };
    let dim = first.2.dim();
    let mut out = String::from("id,label_spoof");
    for d in 0..dim {
        write!(out, ",c{d}").unwrap();
    }
    out.push('\n');
    for (id, label, code) in rows {
        if code.dim() != dim {
            return Err(Error::shape("export_codes", format!("code {id} has dim {}", code.dim())));
        }
        out.push_str(id);
        out.push(',');
        out.push_str(label.as_str());
        for v in &code.0 {
            write!(out, ",{v:.9e}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parses a file written by [`export_codes`].
pub fn read_codes(path: impl AsRef<Path>) -> Result<Vec<(String, SpoofLabel, Code)>> {
    let path = path.as_ref();
    let malformed = |reason: String| Error::Malformed {
        kind: "codes",
        path: path.to_path_buf(),
        reason,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| malformed(e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if header.len() < 3 || &header[0] != "id" || &header[1] != "label_spoof" {
        return Err(malformed("header must start with id,label_spoof,c0".into()));
    }
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| malformed(e.to_string()))?;
            let row = |reason: String| malformed(format!("row {}: {reason}", i + 2));
            let label: SpoofLabel = rec[1].parse().map_err(row)?;
            let values = rec
                .iter()
                .skip(2)
                .map(|v| v.parse::<f64>().map_err(|e| row(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            Ok((rec[0].to_string(), label, Code(values)))
        })
        .collect()
}
