//! Mini-batch trainer: AdaGrad on dense parameters, plain SGD on touched
//! embedding rows, inverted dropout on the sentence representation,
//! periodic validation and best-model selection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::analysis::evaluate;
use crate::corpus::{Dataset, Sentence};
use crate::error::{Error, Result};
use crate::model::{dropout_mask, ModelParams};
use crate::numeric::{stream_rng, BlockGrad, Gradients, ParamBlock};
use crate::regularizers::{baseline_loss, total_loss, BatchLoss, RegularizerConfig};

pub const ADAGRAD_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Objective {
    /// Cross-entropy, regularizers and L2.
    #[default]
    Regularized,
    /// Cross-entropy and L2 only, through the plain baseline path.
    Baseline,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub adagrad_lr: f64,
    pub embed_lr: f64,
    pub batch_size: usize,
    pub max_batches: usize,
    pub dropout_p: f64,
    pub eval_every: usize,
    pub seed: u64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip: Option<f64>,
    /// Worker threads for per-sentence passes; 0 picks the machine default.
    pub threads: usize,
    pub split: [f64; 3],
    pub regularizers: RegularizerConfig,
    pub objective: Objective,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adagrad_lr: 0.1,
            embed_lr: 0.2,
            batch_size: 25,
            max_batches: 3000,
            dropout_p: 0.5,
            eval_every: 100,
            seed: 1,
            clip: Some(5.0),
            threads: 0,
            split: [0.8, 0.1, 0.1],
            regularizers: RegularizerConfig::default(),
            objective: Objective::Regularized,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [("adagrad_lr", self.adagrad_lr), ("embed_lr", self.embed_lr)];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout_p)));
        }
        if let Some(c) = self.clip {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::Config(format!("clip must be > 0, got {c}")));
            }
        }
        if self.split.iter().any(|&r| !(r > 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {:?} must be positive and sum to 1", self.split)));
        }
        self.regularizers.validate()
    }
}

/// Squared-gradient accumulators for every dense block.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub accumulators: Vec<Option<Vec<f64>>>,
}

impl OptimizerState {
    pub fn new(model: &ModelParams) -> Self {
        OptimizerState {
            accumulators: model
                .store
                .iter()
                .map(|(id, b)| (id != model.handles.embed).then(|| vec![0.0; b.data.len()]))
                .collect(),
        }
    }
}

/// `G += g²; θ −= lr · g / (√G + ε)`.
pub fn adagrad_step(param: &mut [f64], grad: &[f64], acc: &mut [f64], lr: f64) -> Result<()> {
    if param.len() != grad.len() || param.len() != acc.len() {
        return Err(Error::Dimension(format!(
            "adagrad on {} params, {} grads, {} accumulators",
            param.len(),
            grad.len(),
            acc.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gradient at entry {i}")));
    }
    for ((w, &g), a) in param.iter_mut().zip(grad).zip(acc.iter_mut()) {
        if g == 0.0 {
            continue;
        }
        *a += g * g;
        *w -= lr * g / (a.sqrt() + ADAGRAD_EPS);
    }
    Ok(())
}

/// Sparse SGD: only rows carrying a gradient move.
pub fn sgd_embedding_step(block: &mut ParamBlock, rows: &BTreeMap<usize, Vec<f64>>, lr: f64) {
    for (&r, g) in rows {
        for (w, g) in block.row_mut(r).iter_mut().zip(g) {
            *w -= lr * g;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub batch: usize,
    /// Mean per-sentence training loss since the previous record.
    pub train_loss: Option<f64>,
    pub valid_accuracy: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EvalRecord>,
    /// Index into `records` of the best validation accuracy (earliest on ties).
    pub best: usize,
}

impl TrainLog {
    pub fn best_record(&self) -> Option<&EvalRecord> {
        self.records.get(self.best)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("batch,loss,valid_acc\n");
        for r in &self.records {
            let loss = r.train_loss.map(|l| l.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{}", r.batch, loss, r.valid_accuracy);
        }
        out
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters at the best validation record.
    pub best: ModelParams,
    /// Parameters after the last successful update.
    pub last: ModelParams,
    pub log: TrainLog,
    pub optimizer: OptimizerState,
    /// Set when a numeric failure stopped training early.
    pub aborted: Option<Error>,
}

/// Clips, then applies AdaGrad to dense blocks and SGD to embedding rows.
/// Nothing is modified unless every gradient is finite.
pub fn apply_update(model: &mut ModelParams, state: &mut OptimizerState, grads: &mut Gradients, config: &TrainConfig) -> Result<()> {
    if !grads.all_finite() {
        return Err(Error::Numeric("non-finite gradient in batch".into()));
    }
    if let Some(max) = config.clip {
        let norm = grads.norm();
        if norm > max {
            grads.scale(max / norm);
        }
    }
    let embed = model.handles.embed;
    for (id, g) in grads.iter() {
        let block = model.store.get_mut(id);
        match g {
            BlockGrad::Rows(rows) if id == embed => sgd_embedding_step(block, rows, config.embed_lr),
            BlockGrad::Dense(v) if id == embed => {
                for (w, g) in block.data.iter_mut().zip(v) {
                    *w -= config.embed_lr * g;
                }
            }
            BlockGrad::Dense(v) => {
                let acc = state.accumulators[id.index()]
                    .as_mut()
                    .ok_or_else(|| Error::Numeric(format!("no accumulator for block {}", block.name)))?;
                adagrad_step(&mut block.data, v, acc, config.adagrad_lr)?;
            }
            BlockGrad::Rows(rows) => {
                let acc = state.accumulators[id.index()]
                    .as_mut()
                    .ok_or_else(|| Error::Numeric(format!("no accumulator for block {}", block.name)))?;
                let cols = block.cols;
                for (&r, g) in rows {
                    adagrad_step(block.row_mut(r), g, &mut acc[r * cols..(r + 1) * cols], config.adagrad_lr)?;
                }
            }
        }
    }
    Ok(())
}

/// Loss and gradient of one batch under the configured objective.
pub fn batch_objective(batch: &[&Sentence], model: &ModelParams, config: &TrainConfig, masks: &[Option<Vec<f64>>]) -> Result<BatchLoss> {
    match config.objective {
        Objective::Regularized => total_loss(batch, model, &config.regularizers, masks),
        Objective::Baseline => baseline_loss(batch, model, config.regularizers.beta, masks),
    }
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))
}

struct BatchDrawer {
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    seed: u64,
}

impl BatchDrawer {
    fn new(n: usize, seed: u64) -> Self {
        let mut d = BatchDrawer {
            order: (0..n).collect(),
            cursor: 0,
            epoch: 0,
            seed,
        };
        d.shuffle();
        d
    }

    fn shuffle(&mut self) {
        let mut rng = stream_rng(self.seed, &format!("train/shuffle/{}", self.epoch));
        self.order.sort_unstable();
        self.order.shuffle(&mut rng);
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.cursor == self.order.len() {
                    self.epoch += 1;
                    self.cursor = 0;
                    self.shuffle();
                }
                self.cursor += 1;
                self.order[self.cursor - 1]
            })
            .collect()
    }
}

/// Trains `model` on `train`, validating on `valid`. Sentences must be
/// annotated with roles. A numeric failure stops training and is reported
/// in `aborted`, with the last good parameters kept.
pub fn train(train: &Dataset, valid: &Dataset, mut model: ModelParams, config: &TrainConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Input("training and validation sets must be nonempty".into()));
    }
    if train.scheme.classes() != model.dims.classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model has {}",
            train.scheme.classes(),
            model.dims.classes
        )));
    }
    let pool = thread_pool(config.threads)?;
    let mut state = OptimizerState::new(&model);
    let mut drawer = BatchDrawer::new(train.len(), config.seed);
    let mut log = TrainLog::default();
    let mut best: Option<ModelParams> = None;
    let mut since_eval = (0.0, 0usize);
    let mut aborted = None;
    let mut completed = 0;
    let rep = model.representation_dim();

    let record = |model: &ModelParams, batch: usize, since: &mut (f64, usize), log: &mut TrainLog, best: &mut Option<ModelParams>| -> Result<()> {
        let acc = pool.install(|| evaluate(model, valid))?;
        let train_loss = (since.1 > 0).then(|| since.0 / since.1 as f64);
        *since = (0.0, 0);
        log::info!(
            "batch {batch}: loss {} valid acc {acc:.4}",
            train_loss.map_or("-".to_string(), |l| format!("{l:.4}"))
        );
        log.records.push(EvalRecord {
            batch,
            train_loss,
            valid_accuracy: acc,
        });
        let improved = log.records.len() == 1 || acc > log.records[log.best].valid_accuracy;
        if improved {
            log.best = log.records.len() - 1;
            *best = Some(model.clone());
        }
        Ok(())
    };

    for b in 1..=config.max_batches {
        let idx = drawer.next(config.batch_size);
        let batch: Vec<&Sentence> = idx.iter().map(|&i| &train.sentences[i]).collect();
        let mut rng = stream_rng(config.seed, &format!("train/dropout/{b}"));
        let masks: Vec<Option<Vec<f64>>> = batch
            .iter()
            .map(|_| (config.dropout_p > 0.0).then(|| dropout_mask(&mut rng, rep, config.dropout_p)))
            .collect();
        let step = pool
            .install(|| batch_objective(&batch, &model, config, &masks))
            .and_then(|mut out| {
                apply_update(&mut model, &mut state, &mut out.grads, config)?;
                Ok(out.loss)
            });
        match step {
            Ok(loss) => {
                since_eval.0 += loss;
                since_eval.1 += batch.len();
                completed = b;
            }
            Err(e @ Error::Numeric(_)) => {
                log::warn!("batch {b}: {e}; stopping with the last good parameters");
                aborted = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
        if b % config.eval_every == 0 {
            record(&model, b, &mut since_eval, &mut log, &mut best)?;
        }
    }
    if log.records.last().map(|r| r.batch) != Some(completed) {
        record(&model, completed, &mut since_eval, &mut log, &mut best)?;
    }
    Ok(TrainOutcome {
        best: best.expect("at least one evaluation record"),
        last: model,
        log,
        optimizer: state,
        aborted,
    })
}
