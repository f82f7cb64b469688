//! Linguistic regularizers over adjacent position-wise distributions and
//! the full training objective:
//!
//! `Σ_i −log y_i[gold] + α Σ_i Σ_t L_{t,i} + β‖θ‖²`
//!
//! Every regularizer is a margin hinge on the symmetric KL divergence
//! between the current position's distribution and a candidate built from a
//! neighbor: the neighbor itself (non-sentiment), the neighbor plus a
//! class shifting vector (sentiment), or `softmax(T · neighbor)` with a
//! word-specific matrix (negation, intensity).

use std::fmt;
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::model::{directional_distribution, encode, predict_position, Half, ModelParams, Variant};
use crate::numeric::{Gradients, ParamId, ParamStore, Tape, Var};
use crate::resources::{LexClass, TokenRole};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegKind {
    Nsr,
    Sr,
    Nr,
    Ir,
}

impl RegKind {
    pub const ALL: [RegKind; 4] = [RegKind::Nsr, RegKind::Sr, RegKind::Nr, RegKind::Ir];

    pub fn name(self) -> &'static str {
        match self {
            RegKind::Nsr => "nsr",
            RegKind::Sr => "sr",
            RegKind::Nr => "nr",
            RegKind::Ir => "ir",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        RegKind::ALL
            .into_iter()
            .find(|k| k.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown regularizer `{s}` (nsr | sr | nr | ir)")))
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A regularizer bound to the parameter it uses at one position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Regularizer {
    Nsr,
    Sr(LexClass),
    /// Index of the negator entry.
    Nr(usize),
    /// Index of the intensifier entry.
    Ir(usize),
}

impl Regularizer {
    pub fn kind(self) -> RegKind {
        match self {
            Regularizer::Nsr => RegKind::Nsr,
            Regularizer::Sr(_) => RegKind::Sr,
            Regularizer::Nr(_) => RegKind::Nr,
            Regularizer::Ir(_) => RegKind::Ir,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EnabledSet {
    pub nsr: bool,
    pub sr: bool,
    pub nr: bool,
    pub ir: bool,
}

impl EnabledSet {
    pub const ALL: EnabledSet = EnabledSet {
        nsr: true,
        sr: true,
        nr: true,
        ir: true,
    };
    pub const NONE: EnabledSet = EnabledSet {
        nsr: false,
        sr: false,
        nr: false,
        ir: false,
    };

    pub fn contains(self, kind: RegKind) -> bool {
        match kind {
            RegKind::Nsr => self.nsr,
            RegKind::Sr => self.sr,
            RegKind::Nr => self.nr,
            RegKind::Ir => self.ir,
        }
    }

    pub fn without(mut self, kind: RegKind) -> Self {
        match kind {
            RegKind::Nsr => self.nsr = false,
            RegKind::Sr => self.sr = false,
            RegKind::Nr => self.nr = false,
            RegKind::Ir => self.ir = false,
        }
        self
    }

    pub fn disabled(self) -> Vec<RegKind> {
        RegKind::ALL.into_iter().filter(|k| !self.contains(*k)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerConfig {
    pub alpha: f64,
    pub margin: f64,
    pub beta: f64,
    pub enabled: EnabledSet,
}

impl Default for RegularizerConfig {
    fn default() -> Self {
        RegularizerConfig {
            alpha: 0.5,
            margin: 0.3,
            beta: 1e-4,
            enabled: EnabledSet::ALL,
        }
    }
}

impl RegularizerConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("margin", self.margin), ("beta", self.beta)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Neighbor a regularizer compared against: the previously processed
/// position (`t+1` for the right-to-left encoder, `t−1` on the forward
/// pass of the bidirectional encoder) or the other side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Previous,
    Next,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Previous => "prev",
            Side::Next => "next",
        }
    }
}

/// Regularizer per position from token roles. A disabled regularizer, or a
/// position without the neighbor its regularizer needs, yields `None`.
pub fn assign_regularizer(roles: &[TokenRole], variant: Variant, enabled: EnabledSet) -> Vec<Option<Regularizer>> {
    let n = roles.len();
    roles
        .iter()
        .enumerate()
        .map(|(t, role)| {
            let reg = match *role {
                TokenRole::Negator(i) => Regularizer::Nr(i),
                TokenRole::Intensifier(i) => Regularizer::Ir(i),
                TokenRole::Sentiment(c) => Regularizer::Sr(c),
                TokenRole::Plain => Regularizer::Nsr,
            };
            if !enabled.contains(reg.kind()) {
                return None;
            }
            let has_neighbor = match (variant, reg.kind()) {
                (Variant::Lstm, RegKind::Nsr | RegKind::Sr) => t + 1 < n,
                _ => n > 1,
            };
            has_neighbor.then_some(reg)
        })
        .collect()
}

/// Per-position diagnostics for one sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct PositionLoss {
    pub position: usize,
    pub tag: Option<RegKind>,
    /// Divergence of the chosen branch.
    pub divergence: f64,
    pub hinged: f64,
    pub side: Option<Side>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PositionLossBreakdown {
    pub positions: Vec<PositionLoss>,
}

impl PositionLossBreakdown {
    pub const CSV_HEADER: &'static str = "sentence_id,position,tag,divergence,hinged_loss,side";

    pub fn total(&self) -> f64 {
        self.positions.iter().map(|p| p.hinged).sum()
    }

    pub fn write_csv_rows(&self, sentence_id: usize, out: &mut String) {
        for p in &self.positions {
            let _ = writeln!(
                out,
                "{sentence_id},{},{},{},{},{}",
                p.position,
                p.tag.map_or("none", RegKind::name),
                p.divergence,
                p.hinged,
                p.side.map_or("none", Side::name)
            );
        }
    }
}

struct Branch {
    side: Side,
    current: Var,
    candidate: Var,
}

struct Chosen {
    hinged: Var,
    divergence: f64,
    side: Side,
}

/// Hinged divergence per branch, keeping the smallest. Gradient reaches only
/// the kept branch; ties keep the earlier (previous-side) branch.
fn min_branch(tape: &mut Tape, branches: &[Branch], margin: f64) -> Result<Chosen> {
    let mut best: Option<Chosen> = None;
    for b in branches {
        let div = tape.sym_kl(b.current, b.candidate)?;
        let hinged = tape.hinge(div, margin);
        let value = tape.scalar(hinged);
        if best.as_ref().is_none_or(|c| value < tape.scalar(c.hinged)) {
            best = Some(Chosen {
                hinged,
                divergence: tape.scalar(div),
                side: b.side,
            });
        }
    }
    best.ok_or_else(|| Error::Applicability("regularizer with no neighbor on either side".into()))
}

/// Candidate distribution built from a neighbor's distribution.
fn candidate(tape: &mut Tape, reg: Regularizer, neighbor: Var, shift: ParamId, transform: impl Fn(Regularizer) -> Option<ParamId>) -> Result<Var> {
    match reg {
        Regularizer::Nsr => Ok(neighbor),
        Regularizer::Sr(class) => {
            let s = tape.row(shift, class.index())?;
            let shifted = tape.add(neighbor, s)?;
            Ok(tape.floor_renorm(shifted))
        }
        Regularizer::Nr(_) | Regularizer::Ir(_) => {
            let t = transform(reg).ok_or_else(|| Error::Input(format!("no transformation matrix for {reg:?}")))?;
            let mapped = tape.matvec(t, neighbor)?;
            tape.distribution(mapped)
        }
    }
}

fn transform_param(params: &ModelParams, reg: Regularizer) -> Option<ParamId> {
    let ling = &params.handles.linguistic;
    match reg {
        Regularizer::Nr(i) => ling.negators.get(i).copied(),
        Regularizer::Ir(i) => ling.intensifiers.get(i).copied(),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Stand-alone forms over plain distributions.

fn detached_store(shift: Option<&[f64]>, transform: Option<&[f64]>, classes: usize) -> Result<(ParamStore, ParamId, ParamId)> {
    let mut store = ParamStore::new();
    // Same shift for every lexicon class, so any `Sr(class)` reads it.
    let one = shift.map_or(vec![0.0; classes], <[f64]>::to_vec);
    let s = store.add("shift", LexClass::ALL.len(), classes, one.repeat(LexClass::ALL.len()), false)?;
    let t = store.add(
        "transform",
        classes,
        classes,
        transform.map_or(vec![0.0; classes * classes], <[f64]>::to_vec),
        false,
    )?;
    Ok((store, s, t))
}

fn check_len(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!("distributions of length {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// `max(0, D(p_t, p_neighbor) − M)`.
pub fn nsr_loss(p_t: &[f64], p_neighbor: &[f64], margin: f64) -> Result<f64> {
    check_len(p_t, p_neighbor)?;
    let mut tape = Tape::detached();
    let cur = tape.constant(p_t.to_vec());
    let nb = tape.constant(p_neighbor.to_vec());
    let chosen = min_branch(&mut tape, &[Branch { side: Side::Previous, current: cur, candidate: nb }], margin)?;
    Ok(tape.scalar(chosen.hinged))
}

/// Projection of `p + s` onto the floored simplex.
pub fn shifted_distribution(p: &[f64], shift: &[f64]) -> Result<Vec<f64>> {
    check_len(p, shift)?;
    let sum: Vec<f64> = p.iter().zip(shift).map(|(a, b)| a + b).collect();
    Ok(crate::numeric::floor_renormalize(&sum))
}

/// `max(0, D(p_t, proj(p_neighbor + s)) − M)`.
pub fn sr_loss(p_t: &[f64], p_neighbor: &[f64], shift: &[f64], margin: f64) -> Result<f64> {
    check_len(p_t, p_neighbor)?;
    check_len(p_t, shift)?;
    let c = p_t.len();
    let (store, s, _) = detached_store(Some(shift), None, c)?;
    let mut tape = Tape::new(&store);
    let cur = tape.constant(p_t.to_vec());
    let nb = tape.constant(p_neighbor.to_vec());
    let cand = candidate(&mut tape, Regularizer::Sr(LexClass::StrongNeg), nb, s, |_| None)?;
    let chosen = min_branch(&mut tape, &[Branch { side: Side::Previous, current: cur, candidate: cand }], margin)?;
    Ok(tape.scalar(chosen.hinged))
}

/// Two-branch transformation loss: the smaller of the hinged divergences
/// from `p_t` to `softmax(T · p_prev)` and to `softmax(T · p_next)`.
/// `transform` is `C × C`, row-major.
pub fn transform_loss(
    p_t: &[f64],
    p_prev: Option<&[f64]>,
    p_next: Option<&[f64]>,
    transform: &[f64],
    margin: f64,
) -> Result<(f64, Side)> {
    let c = p_t.len();
    if transform.len() != c * c {
        return Err(Error::Dimension(format!("transformation of {} values for {c} classes", transform.len())));
    }
    let (store, _, t) = detached_store(None, Some(transform), c)?;
    let mut tape = Tape::new(&store);
    let cur = tape.constant(p_t.to_vec());
    let mut branches = Vec::new();
    for (side, nb) in [(Side::Previous, p_prev), (Side::Next, p_next)] {
        if let Some(nb) = nb {
            check_len(p_t, nb)?;
            let nb = tape.constant(nb.to_vec());
            let cand = candidate(&mut tape, Regularizer::Nr(0), nb, t, |_| Some(t))?;
            branches.push(Branch { side, current: cur, candidate: cand });
        }
    }
    let chosen = min_branch(&mut tape, &branches, margin)?;
    Ok((tape.scalar(chosen.hinged), chosen.side))
}

/// Bidirectional two-sided loss at position `t`: the forward branch compares
/// `→p_t` with the candidate built from `→p_{t−1}`, the backward branch
/// `←p_t` with the candidate from `←p_{t+1}`; the smaller hinge wins.
/// `shift` is used by `Sr`, `transform` (`C × C`) by `Nr`/`Ir`.
pub fn bidirectional_reg_loss(
    forward: &[Vec<f64>],
    backward: &[Vec<f64>],
    t: usize,
    reg: Regularizer,
    shift: &[f64],
    transform: &[f64],
    margin: f64,
) -> Result<(f64, Option<Side>)> {
    if forward.len() != backward.len() || t >= forward.len() {
        return Err(Error::Dimension(format!(
            "position {t} of sequences with {} and {} positions",
            forward.len(),
            backward.len()
        )));
    }
    let n = forward.len();
    if n < 2 {
        return Ok((0.0, None));
    }
    let c = forward[t].len();
    let (store, s, tm) = detached_store(Some(shift), Some(transform), c)?;
    let mut tape = Tape::new(&store);
    let mut branches = Vec::new();
    if t > 0 {
        let cur = tape.constant(forward[t].clone());
        let nb = tape.constant(forward[t - 1].clone());
        let cand = candidate(&mut tape, reg, nb, s, |_| Some(tm))?;
        branches.push(Branch { side: Side::Previous, current: cur, candidate: cand });
    }
    if t + 1 < n {
        let cur = tape.constant(backward[t].clone());
        let nb = tape.constant(backward[t + 1].clone());
        let cand = candidate(&mut tape, reg, nb, s, |_| Some(tm))?;
        branches.push(Branch { side: Side::Next, current: cur, candidate: cand });
    }
    let chosen = min_branch(&mut tape, &branches, margin)?;
    Ok((tape.scalar(chosen.hinged), Some(chosen.side)))
}

// ---------------------------------------------------------------------------
// Objective on the tape.

/// Loss node and diagnostics for one sentence.
pub struct SentenceLoss {
    pub loss: Var,
    pub cross_entropy: f64,
    /// Unweighted `Σ_t L_t`.
    pub regularization: f64,
    pub breakdown: PositionLossBreakdown,
}

struct PositionCache {
    forward: Vec<Option<Var>>,
    backward: Vec<Option<Var>>,
}

impl PositionCache {
    fn get(&mut self, tape: &mut Tape, params: &ModelParams, states: &[Var], half: Half, t: usize) -> Result<Var> {
        let slot = match half {
            Half::Forward => &mut self.forward[t],
            Half::Backward => &mut self.backward[t],
        };
        if let Some(v) = *slot {
            return Ok(v);
        }
        let v = directional_distribution(tape, params, states[t], half)?;
        *slot = Some(v);
        Ok(v)
    }
}

/// `−log y[gold] + α Σ_t L_t` for one sentence. Positions are evaluated
/// only where a regularizer applies. `sentence.roles` must be filled.
pub fn sentence_objective(
    tape: &mut Tape,
    params: &ModelParams,
    sentence: &Sentence,
    config: &RegularizerConfig,
    dropout_mask: Option<&[f64]>,
) -> Result<SentenceLoss> {
    if !sentence.is_annotated() {
        return Err(Error::Input("sentence roles have not been assigned".into()));
    }
    let ids = params.token_ids(&sentence.tokens);
    let enc = encode(tape, params, &ids)?;
    let y = predict_position(tape, params, enc.sentence, dropout_mask)?;
    let ce = tape.neg_log_pick(y, sentence.label)?;

    let n = ids.len();
    let tags = assign_regularizer(&sentence.roles, params.variant, config.enabled);
    let mut cache = PositionCache {
        forward: vec![None; n],
        backward: vec![None; n],
    };
    let shift = params.handles.linguistic.shift;
    let mut terms = Vec::new();
    let mut breakdown = PositionLossBreakdown::default();
    for (t, tag) in tags.iter().enumerate() {
        let Some(reg) = *tag else {
            breakdown.positions.push(PositionLoss {
                position: t,
                tag: None,
                divergence: 0.0,
                hinged: 0.0,
                side: None,
            });
            continue;
        };
        let mut branches = Vec::with_capacity(2);
        match params.variant {
            Variant::Lstm => {
                let cur = cache.get(tape, params, &enc.backward, Half::Backward, t)?;
                let two_sided = matches!(reg, Regularizer::Nr(_) | Regularizer::Ir(_));
                if t + 1 < n {
                    let nb = cache.get(tape, params, &enc.backward, Half::Backward, t + 1)?;
                    let cand = candidate(tape, reg, nb, shift, |r| transform_param(params, r))?;
                    branches.push(Branch { side: Side::Previous, current: cur, candidate: cand });
                }
                if two_sided && t > 0 {
                    let nb = cache.get(tape, params, &enc.backward, Half::Backward, t - 1)?;
                    let cand = candidate(tape, reg, nb, shift, |r| transform_param(params, r))?;
                    branches.push(Branch { side: Side::Next, current: cur, candidate: cand });
                }
            }
            Variant::BiLstm => {
                if t > 0 {
                    let cur = cache.get(tape, params, &enc.forward, Half::Forward, t)?;
                    let nb = cache.get(tape, params, &enc.forward, Half::Forward, t - 1)?;
                    let cand = candidate(tape, reg, nb, shift, |r| transform_param(params, r))?;
                    branches.push(Branch { side: Side::Previous, current: cur, candidate: cand });
                }
                if t + 1 < n {
                    let cur = cache.get(tape, params, &enc.backward, Half::Backward, t)?;
                    let nb = cache.get(tape, params, &enc.backward, Half::Backward, t + 1)?;
                    let cand = candidate(tape, reg, nb, shift, |r| transform_param(params, r))?;
                    branches.push(Branch { side: Side::Next, current: cur, candidate: cand });
                }
            }
        }
        let chosen = min_branch(tape, &branches, config.margin)?;
        breakdown.positions.push(PositionLoss {
            position: t,
            tag: Some(reg.kind()),
            divergence: chosen.divergence,
            hinged: tape.scalar(chosen.hinged),
            side: Some(chosen.side),
        });
        terms.push(chosen.hinged);
    }

    let cross_entropy = tape.scalar(ce);
    let (loss, regularization) = if terms.is_empty() {
        (ce, 0.0)
    } else {
        let reg_sum = tape.sum(&terms)?;
        let weighted = tape.scale(reg_sum, config.alpha);
        (tape.sum(&[ce, weighted])?, tape.scalar(reg_sum))
    };
    Ok(SentenceLoss {
        loss,
        cross_entropy,
        regularization,
        breakdown,
    })
}

/// Loss, gradient and diagnostics for a batch.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub loss: f64,
    pub cross_entropy: f64,
    pub regularization: f64,
    pub grads: Gradients,
    pub breakdowns: Vec<PositionLossBreakdown>,
}

struct PerSentence {
    loss: f64,
    cross_entropy: f64,
    regularization: f64,
    grads: Gradients,
    breakdown: PositionLossBreakdown,
}

fn non_finite(index: usize, sentence: &Sentence, what: &str) -> Error {
    Error::Numeric(format!(
        "{what} is not finite for batch item {index} ({} tokens: {:?})",
        sentence.tokens.len(),
        sentence.tokens.iter().take(12).collect::<Vec<_>>()
    ))
}

fn l2_value(params: &ModelParams) -> f64 {
    params
        .l2_blocks()
        .into_iter()
        .map(|id| params.store.get(id).data.iter().map(|w| w * w).sum::<f64>())
        .sum()
}

/// Reduces per-sentence results in batch order and appends the L2 term, so
/// the result does not depend on how sentences were scheduled.
fn reduce(params: &ModelParams, parts: Vec<PerSentence>, beta: f64) -> BatchLoss {
    let mut grads = Gradients::for_store(&params.store);
    let mut loss = 0.0;
    let mut cross_entropy = 0.0;
    let mut regularization = 0.0;
    let mut breakdowns = Vec::with_capacity(parts.len());
    for p in parts {
        loss += p.loss;
        cross_entropy += p.cross_entropy;
        regularization += p.regularization;
        grads.accumulate(&p.grads);
        breakdowns.push(p.breakdown);
    }
    if beta != 0.0 {
        loss += beta * l2_value(params);
        grads.add_scaled_params(&params.store, &params.l2_blocks(), 2.0 * beta);
    }
    BatchLoss {
        loss,
        cross_entropy,
        regularization,
        grads,
        breakdowns,
    }
}

fn mask_for(masks: &[Option<Vec<f64>>], i: usize) -> Option<&[f64]> {
    masks.get(i).and_then(|m| m.as_deref())
}

/// Full objective over a batch. Sentences are evaluated on private tapes
/// (in parallel on the current rayon pool) and summed in batch order.
/// `masks[i]` is the dropout mask for sentence `i`, if any.
pub fn total_loss(
    batch: &[&Sentence],
    params: &ModelParams,
    config: &RegularizerConfig,
    masks: &[Option<Vec<f64>>],
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(i, sentence)| {
            let mut tape = Tape::new(&params.store);
            let out = sentence_objective(&mut tape, params, sentence, config, mask_for(masks, i))?;
            let loss = tape.scalar(out.loss);
            if !loss.is_finite() {
                return Err(non_finite(i, sentence, "loss"));
            }
            let grads = tape.backward(out.loss);
            if !grads.all_finite() {
                return Err(non_finite(i, sentence, "gradient"));
            }
            Ok(PerSentence {
                loss,
                cross_entropy: out.cross_entropy,
                regularization: out.regularization,
                grads,
                breakdown: out.breakdown,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(params, parts, config.beta))
}

/// Plain cross-entropy + L2 objective with no regularizer machinery; the
/// reference the ablation identity is checked against.
pub fn baseline_loss(batch: &[&Sentence], params: &ModelParams, beta: f64, masks: &[Option<Vec<f64>>]) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let parts = batch
        .par_iter()
        .enumerate()
        .map(|(i, sentence)| {
            let mut tape = Tape::new(&params.store);
            let ids = params.token_ids(&sentence.tokens);
            let enc = encode(&mut tape, params, &ids)?;
            let y = predict_position(&mut tape, params, enc.sentence, mask_for(masks, i))?;
            let ce = tape.neg_log_pick(y, sentence.label)?;
            let loss = tape.scalar(ce);
            if !loss.is_finite() {
                return Err(non_finite(i, sentence, "loss"));
            }
            Ok(PerSentence {
                loss,
                cross_entropy: loss,
                regularization: 0.0,
                grads: tape.backward(ce),
                breakdown: PositionLossBreakdown::default(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(reduce(params, parts, beta))
}
