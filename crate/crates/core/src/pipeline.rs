//! Configuration file and stage runners for the end-to-end pipeline.
//!
//! Every artifact lives under the configured root:
//!
//! ```text
//! <root>/corpus/manifest.csv, channels.csv, wav/<id>.wav
//! <root>/features/<id>.spec
//! <root>/checkpoints/<run>.lcnn, <run>.log, <run>.dev, <run>.backend
//! <root>/codes/<run>.csv
//! <root>/scores/<run>_dev.txt, <run>_eval.txt
//! <root>/reports/report.txt, <run>_det.csv
//! ```
//!
//! A run is one training seed of one mode, named `<mode>_run<k>`.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::fs::{self, File};
use std::io::Write as _;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::backend::{read_scores, write_scores, Backend, Code};
use crate::channel::{build_corpus, read_manifest, CorpusConfig, LabeledUtterance, SpoofLabel, Subset, MANIFEST_FILE};
use crate::dsp::{fix_length, mean_normalize, read_features, read_wav, stft, write_features, StftConfig};
use crate::error::{Error, Result};
use crate::eval::{compute_eer, det_points, export_codes, format_det_csv, read_codes, report_line, TrialSet};
use crate::model::{
    extract_code, labels_to_targets, load_checkpoint, save_checkpoint, train, EpochLog, ModelConfig,
    Sample, TrainConfig, TrainMode,
};
use crate::nn::Tensor;
use crate::{derive_seed, hash_key};

/// Which training modes a pipeline run covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeSelection {
    Multitask,
    Baseline,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<TrainMode> {
        match self {
            ModeSelection::Multitask => vec![TrainMode::Multitask],
            ModeSelection::Baseline => vec![TrainMode::Baseline],
            ModeSelection::Both => vec![TrainMode::Multitask, TrainMode::Baseline],
        }
    }
}

impl fmt::Display for ModeSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModeSelection::Multitask => "multitask",
            ModeSelection::Baseline => "baseline",
            ModeSelection::Both => "both",
        })
    }
}

impl FromStr for ModeSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "multitask" => Ok(ModeSelection::Multitask),
            "baseline" => Ok(ModeSelection::Baseline),
            "both" => Ok(ModeSelection::Both),
            other => Err(format!("mode `{other}` is not one of multitask, baseline, both")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Artifact root. Relative roots are resolved against the config file's directory.
    pub root: PathBuf,
    pub seed: u64,
    /// Training seeds per mode.
    pub runs: usize,
    pub mode: ModeSelection,
    /// 100 x 129 inputs and quarter-width channels.
    pub reduced: bool,
    pub corpus: CorpusConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub patience: usize,
    pub corpus_dir: PathBuf,
    pub features_dir: PathBuf,
    pub checkpoints_dir: PathBuf,
    pub codes_dir: PathBuf,
    pub scores_dir: PathBuf,
    pub reports_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        PipelineConfig {
            root: PathBuf::from("artifacts"),
            seed: 1,
            runs: 1,
            mode: ModeSelection::Multitask,
            reduced: false,
            corpus: CorpusConfig::default(),
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            epochs: train.epochs,
            patience: train.patience,
            corpus_dir: "corpus".into(),
            features_dir: "features".into(),
            checkpoints_dir: "checkpoints".into(),
            codes_dir: "codes".into(),
            scores_dir: "scores".into(),
            reports_dir: "reports".into(),
        }
    }
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String>
where
    T::Err: fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))
}

fn artifact_dir(key: &str, value: &str) -> std::result::Result<PathBuf, String> {
    let p = PathBuf::from(value);
    if value.is_empty() || !p.components().all(|c| matches!(c, Component::Normal(_))) {
        return Err(format!(
            "`{key}` must be a relative path inside the artifact root, got `{value}`"
        ));
    }
    Ok(p)
}

impl PipelineConfig {
    /// Flat `key = value` lines; `#` starts a comment. Keys not listed in
    /// [`PipelineConfig::echo`] are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = PipelineConfig::default();
        let mut seen = HashMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| Error::Config {
                line: line_no,
                reason,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(prev) = seen.insert(key.to_string(), line_no) {
                return Err(err(format!("duplicate key `{key}` (first set on line {prev})")));
            }
            cfg.set(key, value).map_err(err)?;
        }
        cfg.validate().map_err(Error::InvalidArgument)?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        let c = &mut self.corpus;
        match key {
            "root" => self.root = PathBuf::from(value),
            "seed" => self.seed = parse_value(key, value)?,
            "runs" => self.runs = parse_value(key, value)?,
            "mode" => self.mode = value.parse()?,
            "reduced" => self.reduced = parse_value(key, value)?,
            "n_train_genuine" => c.n_train_genuine = parse_value(key, value)?,
            "n_train_spoofed" => c.n_train_spoofed = parse_value(key, value)?,
            "n_dev_genuine" => c.n_dev_genuine = parse_value(key, value)?,
            "n_dev_spoofed" => c.n_dev_spoofed = parse_value(key, value)?,
            "n_eval_genuine" => c.n_eval_genuine = parse_value(key, value)?,
            "n_eval_spoofed" => c.n_eval_spoofed = parse_value(key, value)?,
            "min_duration_s" => c.min_duration_s = parse_value(key, value)?,
            "max_duration_s" => c.max_duration_s = parse_value(key, value)?,
            "seen_instances" => c.seen_instances = parse_value(key, value)?,
            "unseen_instances" => c.unseen_instances = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "learning_rate" => self.learning_rate = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "patience" => self.patience = parse_value(key, value)?,
            "corpus_dir" => self.corpus_dir = artifact_dir(key, value)?,
            "features_dir" => self.features_dir = artifact_dir(key, value)?,
            "checkpoints_dir" => self.checkpoints_dir = artifact_dir(key, value)?,
            "codes_dir" => self.codes_dir = artifact_dir(key, value)?,
            "scores_dir" => self.scores_dir = artifact_dir(key, value)?,
            "reports_dir" => self.reports_dir = artifact_dir(key, value)?,
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.runs == 0 {
            return Err("runs must be at least 1".into());
        }
        if self.root.as_os_str().is_empty() {
            return Err("root must not be empty".into());
        }
        self.train_config(TrainMode::Multitask, 0)
            .validate()
            .map_err(|e| e.to_string())
    }

    /// Reads a config file; a relative `root` is taken relative to the file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text)?;
        if cfg.root.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            cfg.root = base.join(&cfg.root);
        }
        Ok(cfg)
    }

    /// Every key with its effective value, in the order accepted by `parse`.
    pub fn echo(&self) -> String {
        let c = &self.corpus;
        let d = |p: &Path| p.display().to_string();
        let entries: Vec<(&str, String)> = vec![
            ("root", d(&self.root)),
            ("seed", self.seed.to_string()),
            ("runs", self.runs.to_string()),
            ("mode", self.mode.to_string()),
            ("reduced", self.reduced.to_string()),
            ("n_train_genuine", c.n_train_genuine.to_string()),
            ("n_train_spoofed", c.n_train_spoofed.to_string()),
            ("n_dev_genuine", c.n_dev_genuine.to_string()),
            ("n_dev_spoofed", c.n_dev_spoofed.to_string()),
            ("n_eval_genuine", c.n_eval_genuine.to_string()),
            ("n_eval_spoofed", c.n_eval_spoofed.to_string()),
            ("min_duration_s", c.min_duration_s.to_string()),
            ("max_duration_s", c.max_duration_s.to_string()),
            ("seen_instances", c.seen_instances.to_string()),
            ("unseen_instances", c.unseen_instances.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("epochs", self.epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("corpus_dir", d(&self.corpus_dir)),
            ("features_dir", d(&self.features_dir)),
            ("checkpoints_dir", d(&self.checkpoints_dir)),
            ("codes_dir", d(&self.codes_dir)),
            ("scores_dir", d(&self.scores_dir)),
            ("reports_dir", d(&self.reports_dir)),
        ];
        entries
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn model_config(&self) -> ModelConfig {
        if self.reduced {
            ModelConfig::reduced()
        } else {
            ModelConfig::full()
        }
    }

    pub fn stft_config(&self) -> StftConfig {
        if self.reduced {
            StftConfig::reduced()
        } else {
            StftConfig::default()
        }
    }

    pub fn train_config(&self, mode: TrainMode, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            patience: self.patience,
            seed,
            model: self.model_config(),
            mode,
        }
    }
}

pub fn parse_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    PipelineConfig::load(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Synth,
    Featurize,
    Train,
    Codes,
    Backend,
    Score,
    Eval,
    All,
}

impl Command {
    pub const STAGES: [Command; 7] = [
        Command::Synth,
        Command::Featurize,
        Command::Train,
        Command::Codes,
        Command::Backend,
        Command::Score,
        Command::Eval,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Featurize => "featurize",
            Command::Train => "train",
            Command::Codes => "codes",
            Command::Backend => "backend",
            Command::Score => "score",
            Command::Eval => "eval",
            Command::All => "all",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Command {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Command::STAGES
            .into_iter()
            .chain([Command::All])
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown command `{s}`")))
    }
}

/// One training seed of one mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Run {
    pub name: String,
    pub mode: TrainMode,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: Run,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub eval_eer: f64,
    pub n_genuine: usize,
    pub n_spoofed: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub runs: Vec<RunSummary>,
    pub text: String,
}

impl Report {
    pub fn mean_eval_eer(&self, mode: TrainMode) -> Option<f64> {
        let eers: Vec<f64> = self
            .runs
            .iter()
            .filter(|r| r.run.mode == mode)
            .map(|r| r.eval_eer)
            .collect();
        (!eers.is_empty()).then(|| eers.iter().sum::<f64>() / eers.len() as f64)
    }
}

const TRAIN_STREAM: u64 = 0x7a17;

pub struct Pipeline {
    cfg: PipelineConfig,
    progress: Box<dyn FnMut(&str) + Send + Sync>,
}

impl fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Pipeline").field("cfg", &self.cfg).finish_non_exhaustive()
    }
}

fn require(stage: &'static str, path: PathBuf) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(Error::MissingDependency { stage, path })
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn in_stage<T>(stage: Command, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ (Error::MissingDependency { .. } | Error::Stage { .. }) => e,
        other => Error::Stage {
            stage: stage.as_str(),
            source: Box::new(other),
        },
    })
}

fn field<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.split_whitespace()
        .find_map(|tok| tok.strip_prefix(key)?.strip_prefix('='))
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Self {
        Pipeline {
            cfg,
            progress: Box::new(|_| {}),
        }
    }

    /// Receives one line per completed step (utterance batches, epochs, runs).
    pub fn with_progress(mut self, f: impl FnMut(&str) + Send + Sync + 'static) -> Self {
        self.progress = Box::new(f);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn runs(&self) -> Vec<Run> {
        let base = derive_seed(self.cfg.seed, TRAIN_STREAM);
        self.cfg
            .mode
            .modes()
            .into_iter()
            .flat_map(|mode| {
                (1..=self.cfg.runs).map(move |k| Run {
                    name: format!("{mode}_run{k}"),
                    mode,
                    seed: derive_seed(base, k as u64),
                })
            })
            .collect()
    }

    fn dir(&self, sub: &Path) -> PathBuf {
        self.cfg.root.join(sub)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.dir(&self.cfg.corpus_dir).join(MANIFEST_FILE)
    }

    pub fn feature_path(&self, id: &str) -> PathBuf {
        self.dir(&self.cfg.features_dir).join(format!("{id}.spec"))
    }

    pub fn checkpoint_path(&self, run: &str) -> PathBuf {
        self.dir(&self.cfg.checkpoints_dir).join(format!("{run}.lcnn"))
    }

    pub fn train_log_path(&self, run: &str) -> PathBuf {
        self.dir(&self.cfg.checkpoints_dir).join(format!("{run}.log"))
    }

    pub fn dev_log_path(&self, run: &str) -> PathBuf {
        self.dir(&self.cfg.checkpoints_dir).join(format!("{run}.dev"))
    }

    pub fn backend_path(&self, run: &str) -> PathBuf {
        self.dir(&self.cfg.checkpoints_dir).join(format!("{run}.backend"))
    }

    pub fn codes_path(&self, run: &str) -> PathBuf {
        self.dir(&self.cfg.codes_dir).join(format!("{run}.csv"))
    }

    pub fn scores_path(&self, run: &str, subset: Subset) -> PathBuf {
        self.dir(&self.cfg.scores_dir).join(format!("{run}_{subset}.txt"))
    }

    pub fn report_path(&self) -> PathBuf {
        self.dir(&self.cfg.reports_dir).join("report.txt")
    }

    pub fn run(&mut self, command: Command) -> Result<()> {
        match command {
            Command::All => {
                for stage in Command::STAGES {
                    self.run(stage)?;
                }
                Ok(())
            }
            Command::Synth => in_stage(command, self.synth()),
            Command::Featurize => in_stage(command, self.featurize()),
            Command::Train => in_stage(command, self.train()),
            Command::Codes => in_stage(command, self.codes()),
            Command::Backend => in_stage(command, self.backend()),
            Command::Score => in_stage(command, self.score()),
            Command::Eval => in_stage(command, self.evaluate()).map(|_| ()),
        }
    }

    fn manifest(&self, stage: &'static str) -> Result<Vec<LabeledUtterance>> {
        read_manifest(require(stage, self.manifest_path())?)
    }

    pub fn synth(&mut self) -> Result<()> {
        let out = self.dir(&self.cfg.corpus_dir);
        let rows = build_corpus(&self.cfg.corpus, self.cfg.seed, &out)?;
        (self.progress)(&format!("synth: {} utterances in {}", rows.len(), out.display()));
        Ok(())
    }

    pub fn featurize(&mut self) -> Result<()> {
        let rows = self.manifest("featurize")?;
        let corpus = self.dir(&self.cfg.corpus_dir);
        create_dir(&self.dir(&self.cfg.features_dir))?;
        let stft_cfg = self.cfg.stft_config();
        let frames = self.cfg.model_config().input_frames;
        rows.par_iter().try_for_each(|u| {
            let wave = read_wav(require("featurize", corpus.join(&u.path))?)?;
            let spec = stft(&wave, &stft_cfg)?;
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.cfg.seed, hash_key(&u.id)));
            let fixed = fix_length(&spec, frames, &mut rng)?;
            write_features(self.feature_path(&u.id), &mean_normalize(&fixed))
        })?;
        (self.progress)(&format!(
            "featurize: {} x {} inputs for {} utterances",
            frames,
            stft_cfg.bins(),
            rows.len()
        ));
        Ok(())
    }

    fn load_input(&self, stage: &'static str, id: &str) -> Result<Tensor<f32>> {
        let spec = read_features(require(stage, self.feature_path(id))?)?;
        let model = self.cfg.model_config();
        if (spec.frames, spec.bins) != (model.input_frames, model.input_bins) {
            return Err(Error::shape(
                "features",
                format!(
                    "{id} is {} x {}, the model takes {} x {}; re-run featurize with the same --reduced setting",
                    spec.frames, spec.bins, model.input_frames, model.input_bins
                ),
            ));
        }
        Tensor::new(
            vec![spec.frames, spec.bins, 1],
            spec.values.iter().map(|&v| v as f32).collect(),
        )
    }

    fn samples(&self, stage: &'static str, rows: &[LabeledUtterance], subset: Subset) -> Result<Vec<Sample>> {
        rows.par_iter()
            .filter(|u| u.subset == subset)
            .map(|u| {
                Ok(Sample {
                    id: u.id.clone(),
                    input: self.load_input(stage, &u.id)?,
                    targets: labels_to_targets(u)?,
                })
            })
            .collect()
    }

    pub fn train(&mut self) -> Result<()> {
        let rows = self.manifest("train")?;
        let train_set = self.samples("train", &rows, Subset::Train)?;
        let dev_set = self.samples("train", &rows, Subset::Dev)?;
        create_dir(&self.dir(&self.cfg.checkpoints_dir))?;
        for run in self.runs() {
            let log_path = self.train_log_path(&run.name);
            let dev_path = self.dev_log_path(&run.name);
            let mut log = File::create(&log_path).map_err(|e| Error::io(&log_path, e))?;
            let mut dev = File::create(&dev_path).map_err(|e| Error::io(&dev_path, e))?;
            let mut write_err = None;
            let progress = &mut self.progress;
            let outcome = train(
                &train_set,
                &dev_set,
                &self.cfg.train_config(run.mode, run.seed),
                |e| {
                    let r = writeln!(log, "{e}")
                        .map_err(|err| Error::io(&log_path, err))
                        .and_then(|_| {
                            writeln!(dev, "epoch={} dev_eer_pct={:.4}", e.epoch, e.dev_eer)
                                .map_err(|err| Error::io(&dev_path, err))
                        });
                    if let Err(err) = r {
                        write_err.get_or_insert(err);
                    }
                    progress(&format!("train {}: {e} dev_eer_pct={:.4}", run.name, e.dev_eer));
                },
            )?;
            if let Some(err) = write_err {
                return Err(err);
            }
            writeln!(dev, "best_epoch={}", outcome.best_epoch).map_err(|e| Error::io(&dev_path, e))?;
            save_checkpoint(&outcome.params, self.checkpoint_path(&run.name))?;
        }
        Ok(())
    }

    pub fn codes(&mut self) -> Result<()> {
        let rows = self.manifest("codes")?;
        create_dir(&self.dir(&self.cfg.codes_dir))?;
        for run in self.runs() {
            let params = load_checkpoint(require("codes", self.checkpoint_path(&run.name))?)?;
            let codes = rows
                .par_iter()
                .map(|u| {
                    let x = self.load_input("codes", &u.id)?;
                    Ok((u.id.clone(), u.spoof, extract_code(&params, &x)?))
                })
                .collect::<Result<Vec<_>>>()?;
            export_codes(&codes, self.codes_path(&run.name))?;
            (self.progress)(&format!("codes {}: {} codes", run.name, codes.len()));
        }
        Ok(())
    }

    fn subset_codes(
        &self,
        stage: &'static str,
        run: &Run,
        rows: &[LabeledUtterance],
    ) -> Result<HashMap<String, (Subset, SpoofLabel, Code)>> {
        let subsets: HashMap<&str, Subset> = rows.iter().map(|u| (u.id.as_str(), u.subset)).collect();
        let path = require(stage, self.codes_path(&run.name))?;
        read_codes(&path)?
            .into_iter()
            .map(|(id, label, code)| {
                let subset = *subsets.get(id.as_str()).ok_or_else(|| Error::Malformed {
                    kind: "codes",
                    path: path.clone(),
                    reason: format!("utterance {id} is not in the manifest"),
                })?;
                Ok((id, (subset, label, code)))
            })
            .collect()
    }

    pub fn backend(&mut self) -> Result<()> {
        let rows = self.manifest("backend")?;
        for run in self.runs() {
            let codes = self.subset_codes("backend", &run, &rows)?;
            let pick = |label: SpoofLabel| -> Vec<Code> {
                rows.iter()
                    .filter(|u| u.subset == Subset::Train && u.spoof == label)
                    .filter_map(|u| codes.get(&u.id).map(|c| c.2.clone()))
                    .collect()
            };
            let backend = Backend::fit(&pick(SpoofLabel::Genuine), &pick(SpoofLabel::Spoofed))?;
            backend.save(self.backend_path(&run.name))?;
            (self.progress)(&format!("backend {}: fitted on train codes", run.name));
        }
        Ok(())
    }

    pub fn score(&mut self) -> Result<()> {
        let rows = self.manifest("score")?;
        create_dir(&self.dir(&self.cfg.scores_dir))?;
        for run in self.runs() {
            let backend = Backend::load(require("score", self.backend_path(&run.name))?)?;
            let codes = self.subset_codes("score", &run, &rows)?;
            for subset in [Subset::Dev, Subset::Eval] {
                let scores = rows
                    .iter()
                    .filter(|u| u.subset == subset)
                    .map(|u| {
                        let (_, _, code) = codes.get(&u.id).ok_or_else(|| Error::MissingDependency {
                            stage: "score",
                            path: self.codes_path(&run.name).join(&u.id),
                        })?;
                        Ok((u.id.clone(), backend.score(code)?))
                    })
                    .collect::<Result<Vec<_>>>()?;
                write_scores(self.scores_path(&run.name, subset), &scores)?;
            }
            (self.progress)(&format!("score {}: dev and eval scored", run.name));
        }
        Ok(())
    }

    fn read_training_record(&self, run: &Run) -> Result<(Vec<EpochLog>, usize)> {
        let log_path = require("eval", self.train_log_path(&run.name))?;
        let dev_path = require("eval", self.dev_log_path(&run.name))?;
        let read = |p: &Path| fs::read_to_string(p).map_err(|e| Error::io(p, e));
        let (log_text, dev_text) = (read(&log_path)?, read(&dev_path)?);
        let malformed = |path: &Path, line: &str| Error::Malformed {
            kind: "training log",
            path: path.to_path_buf(),
            reason: format!("cannot parse `{line}`"),
        };
        let num = |line: &str, key: &str, path: &Path| -> Result<f64> {
            field(line, key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| malformed(path, line))
        };
        let dev_lines: Vec<&str> = dev_text.lines().filter(|l| l.starts_with("epoch=")).collect();
        let epochs = log_text
            .lines()
            .zip(&dev_lines)
            .map(|(line, dev)| {
                Ok(EpochLog {
                    epoch: num(line, "epoch", &log_path)? as usize,
                    loss: num(line, "loss", &log_path)?,
                    acc: [
                        num(line, "acc_S", &log_path)?,
                        num(line, "acc_E", &log_path)?,
                        num(line, "acc_P", &log_path)?,
                        num(line, "acc_R", &log_path)?,
                    ],
                    dev_eer: num(dev, "dev_eer_pct", &dev_path)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let best = dev_text
            .lines()
            .find_map(|l| field(l, "best_epoch"))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| malformed(&dev_path, "best_epoch"))?;
        Ok((epochs, best))
    }

    /// Scores the eval subset of every run, writes the DET curves and the
    /// report, and returns the report.
    pub fn evaluate(&mut self) -> Result<Report> {
        let rows = self.manifest("eval")?;
        let labels: HashMap<&str, (Subset, SpoofLabel)> =
            rows.iter().map(|u| (u.id.as_str(), (u.subset, u.spoof))).collect();
        let mut trial_sets = Vec::new();
        for run in self.runs() {
            let path = require("eval", self.scores_path(&run.name, Subset::Eval))?;
            let trials = read_scores(&path)?
                .into_iter()
                .map(|(id, score)| match labels.get(id.as_str()) {
                    Some(&(Subset::Eval, label)) => Ok(crate::eval::Trial { id, score, label }),
                    _ => Err(Error::Malformed {
                        kind: "score",
                        path: path.clone(),
                        reason: format!("{id} is not an eval utterance of the manifest"),
                    }),
                })
                .collect::<Result<Vec<_>>>()?;
            trial_sets.push((run, TrialSet { trials }));
        }

        create_dir(&self.dir(&self.cfg.reports_dir))?;
        let mut text = String::new();
        text.push_str("[config]\n");
        text.push_str(&self.cfg.echo());
        text.push_str("\n[corpus]\n");
        for subset in Subset::ALL {
            let count = |label| rows.iter().filter(|u| u.subset == subset && u.spoof == label).count();
            writeln!(
                text,
                "{subset} genuine={} spoofed={}",
                count(SpoofLabel::Genuine),
                count(SpoofLabel::Spoofed)
            )
            .unwrap();
        }

        let mut runs = Vec::new();
        for (run, set) in trial_sets {
            let (epochs, best_epoch) = self.read_training_record(&run)?;
            let det_path = self.dir(&self.cfg.reports_dir).join(format!("{}_det.csv", run.name));
            fs::write(&det_path, format_det_csv(&det_points(&set)?)).map_err(|e| Error::io(&det_path, e))?;
            writeln!(text, "\n[run {}]", run.name).unwrap();
            for e in &epochs {
                writeln!(text, "{e} dev_eer_pct={:.4}", e.dev_eer).unwrap();
            }
            let final_loss = epochs.last().map_or(f64::NAN, |e| e.loss);
            writeln!(text, "final_train_loss={final_loss:.6}").unwrap();
            writeln!(text, "best_epoch={best_epoch}").unwrap();
            writeln!(text, "eval {}", report_line(&set)?).unwrap();
            runs.push(RunSummary {
                eval_eer: compute_eer(&set)?,
                n_genuine: set.count(SpoofLabel::Genuine),
                n_spoofed: set.count(SpoofLabel::Spoofed),
                run,
                epochs,
                best_epoch,
            });
        }

        let mut report = Report { runs, text };
        report.text.push_str("\n[summary]\n");
        for mode in self.cfg.mode.modes() {
            let eers: Vec<String> = report
                .runs
                .iter()
                .filter(|r| r.run.mode == mode)
                .map(|r| format!("{:.4}", r.eval_eer))
                .collect();
            writeln!(
                report.text,
                "mode={mode} runs={} eval_eer_pct=[{}] mean_eval_eer_pct={:.4}",
                eers.len(),
                eers.join(","),
                report.mean_eval_eer(mode).unwrap_or(f64::NAN)
            )
            .unwrap();
        }
        if let (Some(m), Some(b)) = (
            report.mean_eval_eer(TrainMode::Multitask),
            report.mean_eval_eer(TrainMode::Baseline),
        ) {
            let gain = if b > 0.0 { 100.0 * (b - m) / b } else { 0.0 };
            writeln!(report.text, "relative_gain_pct={gain:.2}").unwrap();
        }
        let path = self.report_path();
        fs::write(&path, &report.text).map_err(|e| Error::io(&path, e))?;
        (self.progress)(&format!("eval: report written to {}", path.display()));
        Ok(report)
    }
}
