//! Run configuration: a sectioned `key = value` file, command-line
//! overrides, and the resolved snapshot written next to every run.

use std::fs;
use std::path::{Path, PathBuf};

use lrlstm::model::Variant;
use lrlstm::regularizers::{EnabledSet, RegKind, RegularizerConfig};
use lrlstm::training::{Objective, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SNAPSHOT_FILE: &str = "config.snapshot.toml";
pub const SEED_FILE: &str = "seed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection {
            seed: 1,
            out: PathBuf::from("runs/default"),
            threads: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: String,
    pub hidden: usize,
    pub embed_dim: usize,
    /// Trained model read by `eval` and the analysis commands.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            variant: "bilstm".into(),
            hidden: 100,
            embed_dim: 300,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Mr,
    Sst,
    Tsv,
    Templated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub source: DataSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mr_pos: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mr_neg: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sst_dir: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub valid: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    /// Label count for `tsv` data.
    pub classes: usize,
    /// Train/valid/test ratios for sources without official splits.
    pub split: [f64; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            source: DataSource::Templated,
            mr_pos: None,
            mr_neg: None,
            sst_dir: None,
            train: None,
            valid: None,
            test: None,
            classes: 2,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mpqa: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negators: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub intensifiers: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub adagrad_lr: f64,
    pub embed_lr: f64,
    pub batch_size: usize,
    pub max_batches: usize,
    pub dropout: f64,
    pub eval_every: usize,
    /// 0 disables clipping.
    pub clip: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            adagrad_lr: t.adagrad_lr,
            embed_lr: t.embed_lr,
            batch_size: t.batch_size,
            max_batches: t.max_batches,
            dropout: t.dropout_p,
            eval_every: t.eval_every,
            clip: t.clip.unwrap_or(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegularizerSection {
    pub alpha: f64,
    pub margin: f64,
    pub beta: f64,
    pub disable: Vec<String>,
}

impl Default for RegularizerSection {
    fn default() -> Self {
        let r = RegularizerConfig::default();
        RegularizerSection {
            alpha: r.alpha,
            margin: r.margin,
            beta: r.beta,
            disable: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Points on the negation curve.
    pub grid: usize,
    /// Longest base phrase for phrase pairs; 0 means up to the sentence end.
    pub window: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection { grid: 101, window: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub data: DataSection,
    pub resources: ResourceSection,
    pub train: TrainSection,
    pub regularizers: RegularizerSection,
    pub analysis: AnalysisSection,
}

/// Command-line values that override the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub model: Option<String>,
    pub disable: Vec<String>,
    pub margin: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub checkpoint: Option<PathBuf>,
}

impl RunConfig {
    /// Reads `path`; relative paths inside it are taken from its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    pub fn parse(text: &str, source_name: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("{source_name}: {e}")))
    }

    fn rebase(&mut self, base: &Path) {
        let join = |p: &mut Option<PathBuf>| {
            if let Some(path) = p {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
            }
        };
        join(&mut self.model.checkpoint);
        join(&mut self.data.mr_pos);
        join(&mut self.data.mr_neg);
        join(&mut self.data.sst_dir);
        join(&mut self.data.train);
        join(&mut self.data.valid);
        join(&mut self.data.test);
        join(&mut self.resources.lexicon);
        join(&mut self.resources.mpqa);
        join(&mut self.resources.negators);
        join(&mut self.resources.intensifiers);
        join(&mut self.resources.embeddings);
        if self.run.out.is_relative() {
            self.run.out = base.join(&self.run.out);
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.run.seed = v;
        }
        if let Some(v) = &o.model {
            self.model.variant = v.clone();
        }
        if !o.disable.is_empty() {
            self.regularizers.disable = o.disable.clone();
        }
        if let Some(v) = o.margin {
            self.regularizers.margin = v;
        }
        if let Some(v) = o.alpha {
            self.regularizers.alpha = v;
        }
        if let Some(v) = o.beta {
            self.regularizers.beta = v;
        }
        if let Some(v) = &o.out {
            self.run.out = v.clone();
        }
        if let Some(v) = o.threads {
            self.run.threads = v;
        }
        if let Some(v) = &o.checkpoint {
            self.model.checkpoint = Some(v.clone());
        }
    }

    pub fn variant(&self) -> Result<Variant, CliError> {
        self.model
            .variant
            .parse()
            .map_err(|_| CliError::Usage(format!("model.variant: unknown variant `{}` (lstm | bilstm)", self.model.variant)))
    }

    pub fn enabled(&self) -> Result<EnabledSet, CliError> {
        let mut set = EnabledSet::ALL;
        for name in &self.regularizers.disable {
            let kind = RegKind::parse(name)
                .map_err(|_| CliError::Usage(format!("regularizers.disable: unknown regularizer `{name}` (nsr | sr | nr | ir)")))?;
            set = set.without(kind);
        }
        Ok(set)
    }

    pub fn regularizer_config(&self) -> Result<RegularizerConfig, CliError> {
        let r = RegularizerConfig {
            alpha: self.regularizers.alpha,
            margin: self.regularizers.margin,
            beta: self.regularizers.beta,
            enabled: self.enabled()?,
        };
        r.validate().map_err(|e| CliError::Usage(format!("[regularizers] {e}")))?;
        Ok(r)
    }

    pub fn train_config(&self) -> Result<TrainConfig, CliError> {
        let t = &self.train;
        let cfg = TrainConfig {
            adagrad_lr: t.adagrad_lr,
            embed_lr: t.embed_lr,
            batch_size: t.batch_size,
            max_batches: t.max_batches,
            dropout_p: t.dropout,
            eval_every: t.eval_every,
            seed: self.run.seed,
            clip: (t.clip > 0.0).then_some(t.clip),
            threads: self.run.threads,
            split: self.data.split,
            regularizers: self.regularizer_config()?,
            objective: Objective::Regularized,
        };
        cfg.validate().map_err(|e| CliError::Usage(format!("[train] {e}")))?;
        Ok(cfg)
    }

    /// Checks the values every command relies on and that each path the
    /// selected data source and resources name exists.
    pub fn check(&self, needs_checkpoint: bool) -> Result<(), CliError> {
        self.variant()?;
        self.train_config()?;
        if self.model.hidden == 0 || self.model.embed_dim == 0 {
            return Err(CliError::Usage("model.hidden and model.embed_dim must be >= 1".into()));
        }
        let required: Vec<(&str, &Option<PathBuf>)> = match self.data.source {
            DataSource::Mr => vec![("data.mr_pos", &self.data.mr_pos), ("data.mr_neg", &self.data.mr_neg)],
            DataSource::Sst => vec![("data.sst_dir", &self.data.sst_dir)],
            DataSource::Tsv => vec![("data.train", &self.data.train), ("data.valid", &self.data.valid), ("data.test", &self.data.test)],
            DataSource::Templated => vec![],
        };
        for (key, value) in required {
            match value {
                None => return Err(CliError::Usage(format!("{key} is required for data.source = {:?}", self.data.source))),
                Some(p) => must_exist(key, p)?,
            }
        }
        if self.data.source == DataSource::Sst {
            let dir = self.data.sst_dir.as_deref().unwrap_or(Path::new(""));
            for f in ["train.txt", "dev.txt", "test.txt"] {
                must_exist("data.sst_dir", &dir.join(f))?;
            }
        }
        if self.data.source == DataSource::Tsv && !(2..=5).contains(&self.data.classes) {
            return Err(CliError::Usage(format!("data.classes must be between 2 and 5, got {}", self.data.classes)));
        }
        let r = &self.resources;
        for (key, value) in [
            ("resources.lexicon", &r.lexicon),
            ("resources.mpqa", &r.mpqa),
            ("resources.negators", &r.negators),
            ("resources.intensifiers", &r.intensifiers),
            ("resources.embeddings", &r.embeddings),
        ] {
            if let Some(p) = value {
                must_exist(key, p)?;
            }
        }
        if r.negators.is_some() != r.intensifiers.is_some() {
            return Err(CliError::Usage("resources.negators and resources.intensifiers must be given together".into()));
        }
        if needs_checkpoint {
            match &self.model.checkpoint {
                None => return Err(CliError::Usage("a checkpoint is required (--checkpoint or model.checkpoint)".into())),
                Some(p) => must_exist("model.checkpoint", p)?,
            }
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Writes the snapshot and the seed into the output directory.
    pub fn write_snapshot(&self) -> Result<(), CliError> {
        let out = &self.run.out;
        fs::create_dir_all(out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
        write_file(&out.join(SNAPSHOT_FILE), &self.to_toml())?;
        write_file(&out.join(SEED_FILE), &format!("{}\n", self.run.seed))
    }
}

fn must_exist(key: &str, path: &Path) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{key}: no such file or directory: {}", path.display())))
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}
