//! Accuracy evaluation, regularizer ablations, negation curves and
//! intensity transition counts. Every result can be written as CSV.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::{argmax, floor_renormalize, softmax};
use crate::regularizers::{EnabledSet, RegKind};
use crate::resources::{classify_tokens, Lexicon, TokenRole};
use crate::training::{train, TrainConfig, TrainLog};

/// Fraction of sentences whose argmax prediction matches the gold label.
pub fn evaluate(model: &ModelParams, dataset: &Dataset) -> Result<f64> {
    if dataset.scheme.classes() != model.dims.classes {
        return Err(Error::Config(format!(
            "dataset `{}` has {} classes but the model predicts {}",
            dataset.name,
            dataset.scheme.classes(),
            model.dims.classes
        )));
    }
    if dataset.is_empty() {
        return Err(Error::Input(format!("dataset `{}` is empty", dataset.name)));
    }
    let hits = dataset
        .sentences
        .par_iter()
        .map(|s| Ok(usize::from(argmax(&model.predict(&s.tokens)?) == s.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / dataset.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSpec {
    pub configs: Vec<EnabledSet>,
}

impl AblationSpec {
    pub fn new(configs: Vec<EnabledSet>) -> Result<Self> {
        if !configs.contains(&EnabledSet::ALL) {
            return Err(Error::Config("an ablation must include the all-enabled configuration".into()));
        }
        Ok(AblationSpec { configs })
    }

    /// All enabled, then each regularizer removed in turn.
    pub fn leave_one_out() -> Self {
        let mut configs = vec![EnabledSet::ALL];
        configs.extend(RegKind::ALL.iter().map(|&k| EnabledSet::ALL.without(k)));
        AblationSpec { configs }
    }
}

fn disabled_label(set: EnabledSet) -> String {
    let off = set.disabled();
    if off.is_empty() {
        "none".into()
    } else {
        off.iter().map(|k| k.name()).collect::<Vec<_>>().join("+")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyRow {
    pub config_id: String,
    pub dataset: String,
    pub accuracy: f64,
}

pub const ACCURACY_CSV_HEADER: &str = "config_id,dataset,accuracy";

pub fn accuracy_csv(rows: &[AccuracyRow]) -> String {
    let mut out = format!("{ACCURACY_CSV_HEADER}\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.config_id, r.dataset, r.accuracy);
    }
    out
}

/// Result of one ablation configuration.
#[derive(Debug)]
pub struct AblationRun {
    pub enabled: EnabledSet,
    pub log: TrainLog,
    pub best: ModelParams,
}

/// Trains one model per configuration from the same initial parameters and
/// seed, then scores the best checkpoint of each on every evaluation set.
pub fn run_ablation(
    spec: &AblationSpec,
    initial: &ModelParams,
    train_set: &Dataset,
    valid: &Dataset,
    eval_sets: &[&Dataset],
    config: &TrainConfig,
) -> Result<(Vec<AccuracyRow>, Vec<AblationRun>)> {
    if spec.configs.is_empty() {
        return Err(Error::Config("empty ablation specification".into()));
    }
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for &enabled in &spec.configs {
        let mut cfg = config.clone();
        cfg.regularizers.enabled = enabled;
        let label = disabled_label(enabled);
        log::info!("ablation: disabled = {label}");
        let outcome = train(train_set, valid, initial.clone(), &cfg)?;
        if let Some(e) = outcome.aborted {
            return Err(e);
        }
        for ds in eval_sets {
            rows.push(AccuracyRow {
                config_id: label.clone(),
                dataset: ds.name.clone(),
                accuracy: evaluate(&outcome.best, ds)?,
            });
        }
        runs.push(AblationRun {
            enabled,
            log: outcome.log,
            best: outcome.best,
        });
    }
    Ok((rows, runs))
}

/// Points of `x ↦ softmax(T · p(x))` on a uniform grid over `[0, 1]`, with
/// `p(x) = (1 − x)·e_0 + x·e_{C−1}` (for two classes, `[1 − x, x]`).
#[derive(Clone, Debug, PartialEq)]
pub struct NegationCurve {
    pub classes: usize,
    pub points: Vec<(f64, Vec<f64>)>,
}

impl NegationCurve {
    /// Two classes give `x,y`; wider schemes emit the whole distribution
    /// with `p0..p{C-1}` columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.classes == 2 {
            out.push_str("x,y\n");
            for (x, p) in &self.points {
                let _ = writeln!(out, "{x},{}", p[1]);
            }
        } else {
            let cols: Vec<String> = (0..self.classes).map(|c| format!("p{c}")).collect();
            let _ = writeln!(out, "x,{}", cols.join(","));
            for (x, p) in &self.points {
                let vals: Vec<String> = p.iter().map(f64::to_string).collect();
                let _ = writeln!(out, "{x},{}", vals.join(","));
            }
        }
        out
    }
}

/// `transform` is `C × C`, row-major.
pub fn negation_curve(transform: &[f64], classes: usize, grid_size: usize) -> Result<NegationCurve> {
    if classes < 2 || transform.len() != classes * classes {
        return Err(Error::Dimension(format!(
            "transformation of {} values for {classes} classes",
            transform.len()
        )));
    }
    if grid_size < 2 {
        return Err(Error::Config(format!("grid size must be >= 2, got {grid_size}")));
    }
    let points = (0..grid_size)
        .map(|k| {
            let x = k as f64 / (grid_size - 1) as f64;
            let mut p = vec![0.0; classes];
            p[0] += 1.0 - x;
            p[classes - 1] += x;
            let z: Vec<f64> = transform
                .chunks(classes)
                .map(|row| row.iter().zip(&p).map(|(a, b)| a * b).sum())
                .collect();
            Ok((x, softmax(&z)?))
        })
        .collect::<Result<_>>()?;
    Ok(NegationCurve { classes, points })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModifierSet {
    Negators,
    Intensifiers,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhrasePair {
    pub sentence_id: usize,
    pub position: usize,
    pub modifier: String,
    pub base: Vec<String>,
    pub modified: Vec<String>,
    pub base_dist: Vec<f64>,
    pub modified_dist: Vec<f64>,
}

impl PhrasePair {
    pub fn base_label(&self) -> usize {
        argmax(&self.base_dist)
    }

    pub fn modified_label(&self) -> usize {
        argmax(&self.modified_dist)
    }
}

pub const PAIRS_CSV_HEADER: &str = "sentence_id,position,modifier,base,modified";

/// Two-class pairs are scored by the positive probability, others by
/// argmax label.
pub fn pairs_csv(pairs: &[PhrasePair]) -> String {
    let mut out = format!("{PAIRS_CSV_HEADER}\n");
    for p in pairs {
        let (b, m) = if p.base_dist.len() == 2 {
            (p.base_dist[1].to_string(), p.modified_dist[1].to_string())
        } else {
            (p.base_label().to_string(), p.modified_label().to_string())
        };
        let _ = writeln!(out, "{},{},{},{b},{m}", p.sentence_id, p.position, p.modifier);
    }
    out
}

/// One pair per modifier occurrence: the base phrase runs from just after
/// the modifier to the sentence end (or `window` tokens), and the modified
/// phrase prepends the modifier. Occurrences with an empty base are skipped.
pub fn extract_phrase_pairs(model: &ModelParams, dataset: &Dataset, set: ModifierSet, window: Option<usize>) -> Result<Vec<PhrasePair>> {
    let no_lexicon = Lexicon::default();
    let mut spans = Vec::new();
    for (sid, s) in dataset.sentences.iter().enumerate() {
        let roles = classify_tokens(&s.tokens, &no_lexicon, &model.lists);
        for (t, role) in roles.iter().enumerate() {
            let entry = match (set, *role) {
                (ModifierSet::Negators, TokenRole::Negator(i)) => &model.lists.negators()[i],
                (ModifierSet::Intensifiers, TokenRole::Intensifier(i)) => &model.lists.intensifiers()[i],
                _ => continue,
            };
            let start = t + entry.split_whitespace().count();
            let end = window.map_or(s.tokens.len(), |w| (start + w).min(s.tokens.len()));
            if start >= end {
                continue;
            }
            let base = s.tokens[start..end].to_vec();
            let mut modified = s.tokens[t..start].to_vec();
            modified.extend_from_slice(&base);
            spans.push((sid, t, entry.clone(), base, modified));
        }
    }
    spans
        .into_par_iter()
        .map(|(sentence_id, position, modifier, base, modified)| {
            Ok(PhrasePair {
                base_dist: model.predict(&base)?,
                modified_dist: model.predict(&modified)?,
                sentence_id,
                position,
                modifier,
                base,
                modified,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TransitionMatrix {
    pub word: String,
    /// `counts[i][j]`: pairs with base label `i` and modified label `j`.
    pub counts: Vec<Vec<usize>>,
}

impl TransitionMatrix {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn write_csv_rows(&self, out: &mut String) {
        for (i, row) in self.counts.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let _ = writeln!(out, "{},{i},{j},{c}", self.word);
            }
        }
    }
}

pub const MATRIX_CSV_HEADER: &str = "word,i,j,count";

pub fn matrices_csv(matrices: &[TransitionMatrix]) -> String {
    let mut out = format!("{MATRIX_CSV_HEADER}\n");
    for m in matrices {
        m.write_csv_rows(&mut out);
    }
    out
}

/// Counts base → modified label transitions over the pairs for `word`.
pub fn intensity_transitions(pairs: &[PhrasePair], word: &str, classes: usize) -> TransitionMatrix {
    let mut counts = vec![vec![0; classes]; classes];
    for p in pairs.iter().filter(|p| p.modifier == word) {
        counts[p.base_label()][p.modified_label()] += 1;
    }
    TransitionMatrix {
        word: word.to_string(),
        counts,
    }
}

/// Sanity view of a transformation: the mapped distribution of each
/// one-hot input, floored like every other distribution.
pub fn transform_columns(transform: &[f64], classes: usize) -> Result<Vec<Vec<f64>>> {
    (0..classes)
        .map(|j| {
            let z: Vec<f64> = (0..classes).map(|i| transform[i * classes + j]).collect();
            Ok(floor_renormalize(&softmax(&z)?))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sigmoid(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn zero_transform_collapses() {
        let curve = negation_curve(&[0.0; 4], 2, 5).unwrap();
        assert_eq!(curve.points.len(), 5);
        assert!(curve.points.iter().all(|(_, p)| (p[1] - 0.5).abs() < 1e-15));
    }

    #[test]
    fn diagonal_transform_is_logistic() {
        let k = 5.0;
        let curve = negation_curve(&[k, 0.0, 0.0, k], 2, 3).unwrap();
        for (x, p) in &curve.points {
            assert!((p[1] - sigmoid(k * (2.0 * x - 1.0))).abs() < 1e-12, "x = {x}");
        }
        assert!(curve.to_csv().starts_with("x,y\n"));
    }

    #[test]
    fn curve_is_continuous_in_t() {
        let t = [0.3, -1.2, 2.0, 0.7];
        let d = 1e-6;
        let bumped: Vec<f64> = t.iter().map(|v| v + d).collect();
        let a = negation_curve(&t, 2, 11).unwrap();
        let b = negation_curve(&bumped, 2, 11).unwrap();
        for ((_, p), (_, q)) in a.points.iter().zip(&b.points) {
            // |∂y/∂T_ij| ≤ 1/4 per entry, four entries.
            assert!((p[1] - q[1]).abs() <= d + 1e-12);
        }
    }

    #[test]
    fn wide_curve_flags_full_distributions() {
        let curve = negation_curve(&[0.0; 9], 3, 2).unwrap();
        assert!(curve.to_csv().starts_with("x,p0,p1,p2\n"));
        assert!(negation_curve(&[0.0; 4], 2, 1).is_err());
        assert!(negation_curve(&[0.0; 5], 2, 4).is_err());
    }

    fn pair(modifier: &str, base: [f64; 3], modified: [f64; 3]) -> PhrasePair {
        PhrasePair {
            sentence_id: 0,
            position: 0,
            modifier: modifier.into(),
            base: vec![],
            modified: vec![],
            base_dist: base.to_vec(),
            modified_dist: modified.to_vec(),
        }
    }

    #[test]
    fn transition_counts() {
        let empty = intensity_transitions(&[], "very", 3);
        assert_eq!(empty.total(), 0);
        let pairs = [
            pair("very", [0.1, 0.2, 0.7], [0.1, 0.1, 0.8]),
            pair("very", [0.2, 0.6, 0.2], [0.1, 0.2, 0.7]),
            pair("very", [0.2, 0.6, 0.2], [0.1, 0.2, 0.7]),
            pair("quite", [0.9, 0.05, 0.05], [0.9, 0.05, 0.05]),
        ];
        let m = intensity_transitions(&pairs, "very", 3);
        assert_eq!(m.counts, vec![vec![0, 0, 0], vec![0, 0, 2], vec![0, 0, 1]]);
        assert_eq!(m.total(), 3);
        let mut csv = String::new();
        m.write_csv_rows(&mut csv);
        assert!(csv.contains("very,1,2,2\n"));
    }

    #[test]
    fn ablation_spec_requires_baseline() {
        assert!(AblationSpec::new(vec![EnabledSet::NONE]).is_err());
        let loo = AblationSpec::leave_one_out();
        assert_eq!(loo.configs.len(), 5);
        assert_eq!(disabled_label(loo.configs[3]), "nr");
        assert_eq!(disabled_label(EnabledSet::NONE), "nsr+sr+nr+ir");
    }
}
