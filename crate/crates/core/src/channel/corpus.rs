//! Labeled synthetic corpus generation and the manifest CSV.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::ir::{make_ir, IrKind};
use super::source::synth_source;
use super::{make_genuine, make_spoofed};
use crate::derive_seed;
use crate::dsp::write_wav;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const CHANNELS_FILE: &str = "channels.csv";
pub const MANIFEST_HEADER: [&str; 7] = [
    "id",
    "path",
    "subset",
    "spoof",
    "env_label",
    "playback_label",
    "recorder_label",
];
const CHANNELS_HEADER: [&str; 5] = [
    "id",
    "internal_seed",
    "playback_seed",
    "environment_seed",
    "recorder_seed",
];

/// Evaluation-subset device instances are drawn at or above this seed;
/// train and dev instances stay below `CorpusConfig::seen_instances`.
pub const UNSEEN_INSTANCE_BASE: u64 = 1 << 32;

/// Genuine-node index of each noise head.
pub const GENUINE_ENV: u8 = 4;
pub const GENUINE_PLAYBACK: u8 = 8;
pub const GENUINE_RECORDER: u8 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subset {
    Train,
    Dev,
    Eval,
}

impl Subset {
    pub const ALL: [Subset; 3] = [Subset::Train, Subset::Dev, Subset::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Train => "train",
            Subset::Dev => "dev",
            Subset::Eval => "eval",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subset {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Subset::Train),
            "dev" => Ok(Subset::Dev),
            "eval" => Ok(Subset::Eval),
            _ => Err(format!("unknown subset `{s}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpoofLabel {
    Genuine,
    Spoofed,
}

impl SpoofLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            SpoofLabel::Genuine => "genuine",
            SpoofLabel::Spoofed => "spoofed",
        }
    }
}

impl fmt::Display for SpoofLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpoofLabel {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "genuine" => Ok(SpoofLabel::Genuine),
            "spoofed" => Ok(SpoofLabel::Spoofed),
            _ => Err(format!("unknown spoof label `{s}`")),
        }
    }
}

/// One manifest row. In every noise task the last index is the genuine node.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledUtterance {
    pub id: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub subset: Subset,
    pub spoof: SpoofLabel,
    pub env_label: u8,
    pub playback_label: u8,
    pub recorder_label: u8,
}

impl LabeledUtterance {
    pub fn validate(&self) -> Result<()> {
        let genuine_nodes = (self.env_label, self.playback_label, self.recorder_label)
            == (GENUINE_ENV, GENUINE_PLAYBACK, GENUINE_RECORDER);
        let ok = match self.spoof {
            SpoofLabel::Genuine => genuine_nodes,
            SpoofLabel::Spoofed => {
                self.env_label < GENUINE_ENV
                    && self.playback_label < GENUINE_PLAYBACK
                    && self.recorder_label < GENUINE_RECORDER
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Label {
                id: self.id.clone(),
                reason: format!(
                    "{} row has labels env={} playback={} recorder={}",
                    self.spoof, self.env_label, self.playback_label, self.recorder_label
                ),
            })
        }
    }
}

/// Device instance seeds behind one utterance (sidecar to the manifest).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChannelRecord {
    pub id: String,
    pub internal_seed: u64,
    pub replay_seeds: Option<[u64; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_train_genuine: usize,
    pub n_train_spoofed: usize,
    pub n_dev_genuine: usize,
    pub n_dev_spoofed: usize,
    pub n_eval_genuine: usize,
    pub n_eval_spoofed: usize,
    pub min_duration_s: f64,
    pub max_duration_s: f64,
    /// Device instances per class shared by train and dev.
    pub seen_instances: u64,
    /// Device instances per class reserved for eval.
    pub unseen_instances: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            n_train_genuine: 140,
            n_train_spoofed: 160,
            n_dev_genuine: 50,
            n_dev_spoofed: 50,
            n_eval_genuine: 60,
            n_eval_spoofed: 540,
            min_duration_s: 1.5,
            max_duration_s: 3.0,
            seen_instances: 3,
            unseen_instances: 3,
        }
    }
}

impl CorpusConfig {
    pub fn counts(&self, subset: Subset) -> (usize, usize) {
        match subset {
            Subset::Train => (self.n_train_genuine, self.n_train_spoofed),
            Subset::Dev => (self.n_dev_genuine, self.n_dev_spoofed),
            Subset::Eval => (self.n_eval_genuine, self.n_eval_spoofed),
        }
    }

    pub fn total(&self) -> usize {
        Subset::ALL
            .iter()
            .map(|&s| {
                let (g, p) = self.counts(s);
                g + p
            })
            .sum()
    }

    fn validate(&self) -> Result<()> {
        for s in Subset::ALL {
            let (g, p) = self.counts(s);
            if g == 0 || p == 0 {
                return Err(Error::invalid(format!(
                    "{s} subset needs at least one genuine and one spoofed utterance"
                )));
            }
        }
        if !(1.0..=10.0).contains(&self.min_duration_s)
            || !(self.min_duration_s..=10.0).contains(&self.max_duration_s)
        {
            return Err(Error::invalid(format!(
                "durations [{}, {}] must lie in [1, 10] s",
                self.min_duration_s, self.max_duration_s
            )));
        }
        if self.seen_instances == 0 || self.unseen_instances == 0 {
            return Err(Error::invalid("instance pools must be non-empty"));
        }
        Ok(())
    }
}

struct Plan {
    index: usize,
    subset: Subset,
    spoof: SpoofLabel,
    id: String,
}

fn plan(cfg: &CorpusConfig) -> Vec<Plan> {
    let mut rows = Vec::with_capacity(cfg.total());
    for subset in Subset::ALL {
        let (g, p) = cfg.counts(subset);
        let labels = std::iter::repeat(SpoofLabel::Genuine)
            .take(g)
            .chain(std::iter::repeat(SpoofLabel::Spoofed).take(p));
        for (i, spoof) in labels.enumerate() {
            rows.push(Plan {
                index: rows.len(),
                subset,
                spoof,
                id: format!("{subset}_{i:05}"),
            });
        }
    }
    rows
}

fn generate(
    cfg: &CorpusConfig,
    seed: u64,
    p: &Plan,
    wav_dir: &Path,
) -> Result<(LabeledUtterance, ChannelRecord)> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, p.index as u64));
    let duration = rng.gen_range(cfg.min_duration_s..=cfg.max_duration_s);
    let source = synth_source(rng.gen(), duration)?;
    let internal_seed: u64 = rng.gen();
    let genuine = make_genuine(&source, &make_ir(IrKind::InternalNoise, 0, internal_seed)?)?;
    let rel = PathBuf::from("wav").join(format!("{}.wav", p.id));
    let (wave, labels, replay_seeds) = match p.spoof {
        SpoofLabel::Genuine => (
            genuine,
            (GENUINE_ENV, GENUINE_PLAYBACK, GENUINE_RECORDER),
            None,
        ),
        SpoofLabel::Spoofed => {
            let env = rng.gen_range(0..IrKind::Environment.class_count());
            let playback = rng.gen_range(0..IrKind::Playback.class_count());
            let recorder = rng.gen_range(0..IrKind::Recorder.class_count());
            let mut instance = || match p.subset {
                Subset::Eval => UNSEEN_INSTANCE_BASE + rng.gen_range(0..cfg.unseen_instances),
                _ => rng.gen_range(0..cfg.seen_instances),
            };
            let seeds = [instance(), instance(), instance()];
            let wave = make_spoofed(
                &genuine,
                &make_ir(IrKind::Playback, playback, seeds[0])?,
                &make_ir(IrKind::Environment, env, seeds[1])?,
                &make_ir(IrKind::Recorder, recorder, seeds[2])?,
            )?;
            (wave, (env as u8, playback as u8, recorder as u8), Some(seeds))
        }
    };
    write_wav(wav_dir.join(format!("{}.wav", p.id)), &wave)?;
    let utt = LabeledUtterance {
        id: p.id.clone(),
        path: rel,
        subset: p.subset,
        spoof: p.spoof,
        env_label: labels.0,
        playback_label: labels.1,
        recorder_label: labels.2,
    };
    utt.validate()?;
    Ok((
        utt,
        ChannelRecord {
            id: p.id.clone(),
            internal_seed,
            replay_seeds,
        },
    ))
}

/// Synthesizes every utterance into `out_dir/wav/` and writes
/// `manifest.csv` plus the `channels.csv` sidecar. Output depends only on
/// `(cfg, seed)`, never on scheduling.
pub fn build_corpus(cfg: &CorpusConfig, seed: u64, out_dir: &Path) -> Result<Vec<LabeledUtterance>> {
    cfg.validate()?;
    let wav_dir = out_dir.join("wav");
    fs::create_dir_all(&wav_dir).map_err(|e| Error::io(&wav_dir, e))?;
    let rows = plan(cfg)
        .par_iter()
        .map(|p| generate(cfg, seed, p, &wav_dir))
        .collect::<Result<Vec<_>>>()?;
    let (manifest, channels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    write_manifest(out_dir.join(MANIFEST_FILE), &manifest)?;
    write_channels(&out_dir.join(CHANNELS_FILE), &channels)?;
    Ok(manifest)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Malformed {
            kind: "csv",
            path: path.to_path_buf(),
            reason: e.to_string(),
        }
    }
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[LabeledUtterance]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv_writer(path)?;
    let err = |e| csv_error(path, e);
    w.write_record(MANIFEST_HEADER).map_err(err)?;
    for u in rows {
        let path_str = u.path.to_string_lossy().replace('\\', "/");
        w.write_record([
            u.id.as_str(),
            path_str.as_str(),
            u.subset.as_str(),
            u.spoof.as_str(),
            &u.env_label.to_string(),
            &u.playback_label.to_string(),
            &u.recorder_label.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_channels(path: &Path, rows: &[ChannelRecord]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(CHANNELS_HEADER).map_err(|e| csv_error(path, e))?;
    for r in rows {
        let seed = |i: usize| r.replay_seeds.map(|s| s[i].to_string()).unwrap_or_default();
        w.write_record([
            r.id.clone(),
            r.internal_seed.to_string(),
            seed(0),
            seed(1),
            seed(2),
        ])
        .map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_rows(path: &Path, header: &[&str]) -> Result<Vec<csv::StringRecord>> {
    let mut r = csv::ReaderBuilder::new()
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let found = r.headers().map_err(|e| csv_error(path, e))?.clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(Error::Malformed {
            kind: "csv",
            path: path.to_path_buf(),
            reason: format!("header is `{}`", found.iter().collect::<Vec<_>>().join(",")),
        });
    }
    r.records()
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| csv_error(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<LabeledUtterance>> {
    let path = path.as_ref();
    let malformed = |line: usize, reason: String| Error::Malformed {
        kind: "manifest",
        path: path.to_path_buf(),
        reason: format!("row {line}: {reason}"),
    };
    csv_rows(path, &MANIFEST_HEADER)?
        .iter()
        .enumerate()
        .map(|(i, rec)| {
            let label = |k: usize| {
                rec[k]
                    .parse::<u8>()
                    .map_err(|e| malformed(i + 2, format!("{}: {e}", MANIFEST_HEADER[k])))
            };
            let utt = LabeledUtterance {
                id: rec[0].to_string(),
                path: PathBuf::from(&rec[1]),
                subset: rec[2].parse().map_err(|e| malformed(i + 2, e))?,
                spoof: rec[3].parse().map_err(|e| malformed(i + 2, e))?,
                env_label: label(4)?,
                playback_label: label(5)?,
                recorder_label: label(6)?,
            };
            utt.validate()?;
            Ok(utt)
        })
        .collect()
}

pub fn read_channels(path: impl AsRef<Path>) -> Result<Vec<ChannelRecord>> {
    let path = path.as_ref();
    let parse = |s: &str| {
        s.parse::<u64>().map_err(|e| Error::Malformed {
            kind: "channels",
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    };
    csv_rows(path, &CHANNELS_HEADER)?
        .iter()
        .map(|rec| {
            let replay_seeds = if rec[2].is_empty() {
                None
            } else {
                Some([parse(&rec[2])?, parse(&rec[3])?, parse(&rec[4])?])
            };
            Ok(ChannelRecord {
                id: rec[0].to_string(),
                internal_seed: parse(&rec[1])?,
                replay_seeds,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn label_invariant() {
        assert!(utt(SpoofLabel::Genuine, 4, 8, 7).validate().is_ok());
        assert!(utt(SpoofLabel::Spoofed, 3, 2, 5).validate().is_ok());
        assert!(utt(SpoofLabel::Spoofed, 4, 2, 5).validate().is_err());
        assert!(utt(SpoofLabel::Genuine, 4, 8, 6).validate().is_err());
    }

    #[test]
    fn zero_counts_rejected() {
        let cfg = CorpusConfig {
            n_dev_genuine: 0,
            ..CorpusConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        assert!(build_corpus(&cfg, 1, dir.path()).is_err());
    }

    #[test]
    fn manifest_round_trip_uses_lf() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![
            utt(SpoofLabel::Genuine, 4, 8, 7),
            utt(SpoofLabel::Spoofed, 0, 7, 6),
        ];
        write_manifest(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("id,path,subset,spoof,env_label,playback_label,recorder_label\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_manifest(&path).unwrap(), rows);
    }
}
