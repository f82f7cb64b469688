//! LSTM encoders (right-to-left single direction, or bidirectional with
//! shared weights), the shared position-wise softmax predictor, linguistic
//! parameters, and their initialization.

mod checkpoint;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numeric::{stream_rng, uniform_vec, ParamId, ParamStore, StreamRng, Tape, Var};
use crate::resources::{EmbeddingTable, LexClass, Vocab, WordLists};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Single LSTM run right to left.
    Lstm,
    /// Forward and backward passes sharing one set of LSTM weights.
    BiLstm,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Lstm => "lstm",
            Variant::BiLstm => "bilstm",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lstm" => Ok(Variant::Lstm),
            "bilstm" => Ok(Variant::BiLstm),
            other => Err(Error::Config(format!("unknown model variant `{other}` (lstm | bilstm)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub hidden: usize,
    pub embed: usize,
    pub classes: usize,
}

/// Gate blocks stacked in the order input, forget, output, candidate:
/// `w` is `4d × d_emb`, `u` is `4d × d`, `b` is `4d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LstmWeights {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

/// `s` is `C × h_dim`, `h_dim = d` (single) or `2d` (bidirectional).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictorWeights {
    pub s: ParamId,
    pub bias: ParamId,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinguisticParams {
    /// `4 × C`, one shifting vector per lexicon class.
    pub shift: ParamId,
    /// One `C × C` matrix per negator entry.
    pub negators: Vec<ParamId>,
    /// One `C × C` matrix per intensifier entry.
    pub intensifiers: Vec<ParamId>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Handles {
    pub embed: ParamId,
    pub lstm: LstmWeights,
    pub predictor: PredictorWeights,
    pub linguistic: LinguisticParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub store: ParamStore,
    pub handles: Handles,
    pub vocab: Vocab,
    pub lists: WordLists,
    pub dims: ModelDims,
    pub variant: Variant,
}

/// Scale of the shifting-vector prior.
pub const SHIFT_PRIOR: f64 = 0.1;
/// Diagonal (intensifier) / anti-diagonal (negator) weight of the matrix prior.
pub const TRANSFORM_PRIOR: f64 = 2.0;
/// Upper end of the uniform noise added to transformation priors.
pub const TRANSFORM_NOISE: f64 = 0.01;

/// Direction of each output class: −1 below the midpoint, +1 above, 0 at it.
pub fn class_direction(classes: usize) -> Vec<f64> {
    let mid = (classes as f64 - 1.0) / 2.0;
    (0..classes)
        .map(|k| {
            let off = k as f64 - mid;
            if off.abs() < 1e-12 {
                0.0
            } else {
                off.signum()
            }
        })
        .collect()
}

impl ModelParams {
    /// Hidden layers `W, U, S ~ Uniform(0, 1/√d)`, zero biases, embeddings
    /// from `embeddings`, and prior values for shifting vectors and
    /// transformation matrices.
    pub fn init(
        seed: u64,
        variant: Variant,
        hidden: usize,
        classes: usize,
        lists: &WordLists,
        embeddings: EmbeddingTable,
    ) -> Result<Self> {
        if hidden == 0 || embeddings.dim == 0 || classes < 2 {
            return Err(Error::Config(format!(
                "invalid dimensions: hidden {hidden}, embed {}, classes {classes}",
                embeddings.dim
            )));
        }
        let d = hidden;
        let d_emb = embeddings.dim;
        let c = classes;
        let h_dim = match variant {
            Variant::Lstm => d,
            Variant::BiLstm => 2 * d,
        };
        let bound = 1.0 / (d as f64).sqrt();
        let mut store = ParamStore::new();
        let draw = |label: &str, n: usize| uniform_vec(&mut stream_rng(seed, &format!("init/{label}")), n, 0.0, bound);

        let vocab_len = embeddings.vocab.len();
        let embed = store.add("embed", vocab_len, d_emb, embeddings.vectors, true)?;
        let lstm = LstmWeights {
            w: store.add("lstm.w", 4 * d, d_emb, draw("lstm.w", 4 * d * d_emb), false)?,
            u: store.add("lstm.u", 4 * d, d, draw("lstm.u", 4 * d * d), false)?,
            b: store.add("lstm.b", 4 * d, 1, vec![0.0; 4 * d], false)?,
            hidden: d,
        };
        let predictor = PredictorWeights {
            s: store.add("pred.s", c, h_dim, draw("pred.s", c * h_dim), false)?,
            bias: store.add("pred.b", c, 1, vec![0.0; c], false)?,
        };

        let direction = class_direction(c);
        let mut shift = Vec::with_capacity(4 * c);
        for class in LexClass::ALL {
            let k = SHIFT_PRIOR * f64::from(class.polarity());
            shift.extend(direction.iter().map(|v| k * v));
        }
        let shift = store.add("shift", 4, c, shift, false)?;

        let prior = |anti: bool, rng: &mut StreamRng| -> Vec<f64> {
            let mut m = vec![0.0; c * c];
            for i in 0..c {
                let j = if anti { c - 1 - i } else { i };
                m[i * c + j] = TRANSFORM_PRIOR;
            }
            for v in &mut m {
                *v += TRANSFORM_NOISE * rng.gen::<f64>();
            }
            m
        };
        let mut negators = Vec::new();
        for i in 0..lists.negators().len() {
            let mut rng = stream_rng(seed, &format!("init/neg.{i}"));
            negators.push(store.add(format!("neg.{i}"), c, c, prior(true, &mut rng), false)?);
        }
        let mut intensifiers = Vec::new();
        for i in 0..lists.intensifiers().len() {
            let mut rng = stream_rng(seed, &format!("init/int.{i}"));
            intensifiers.push(store.add(format!("int.{i}"), c, c, prior(false, &mut rng), false)?);
        }

        Ok(ModelParams {
            store,
            handles: Handles {
                embed,
                lstm,
                predictor,
                linguistic: LinguisticParams {
                    shift,
                    negators,
                    intensifiers,
                },
            },
            vocab: embeddings.vocab,
            lists: lists.clone(),
            dims: ModelDims {
                hidden: d,
                embed: d_emb,
                classes: c,
            },
            variant,
        })
    }

    /// Rebinds handles by block name; used after loading a checkpoint.
    pub(crate) fn from_store(
        store: ParamStore,
        vocab: Vocab,
        lists: WordLists,
        dims: ModelDims,
        variant: Variant,
    ) -> Result<Self> {
        let find = |name: &str, rows: usize, cols: usize| -> Result<ParamId> {
            let id = store
                .find(name)
                .ok_or_else(|| Error::format(name, "section missing"))?;
            let b = store.get(id);
            if b.rows != rows || b.cols != cols {
                return Err(Error::format(
                    name,
                    format!("shape {}x{} does not match expected {rows}x{cols}", b.rows, b.cols),
                ));
            }
            Ok(id)
        };
        let (d, e, c) = (dims.hidden, dims.embed, dims.classes);
        let h_dim = if variant == Variant::Lstm { d } else { 2 * d };
        let handles = Handles {
            embed: find("embed", vocab.len(), e)?,
            lstm: LstmWeights {
                w: find("lstm.w", 4 * d, e)?,
                u: find("lstm.u", 4 * d, d)?,
                b: find("lstm.b", 4 * d, 1)?,
                hidden: d,
            },
            predictor: PredictorWeights {
                s: find("pred.s", c, h_dim)?,
                bias: find("pred.b", c, 1)?,
            },
            linguistic: LinguisticParams {
                shift: find("shift", 4, c)?,
                negators: (0..lists.negators().len())
                    .map(|i| find(&format!("neg.{i}"), c, c))
                    .collect::<Result<_>>()?,
                intensifiers: (0..lists.intensifiers().len())
                    .map(|i| find(&format!("int.{i}"), c, c))
                    .collect::<Result<_>>()?,
            },
        };
        Ok(ModelParams {
            store,
            handles,
            vocab,
            lists,
            dims,
            variant,
        })
    }

    /// Blocks covered by the L2 penalty: everything except embeddings.
    pub fn l2_blocks(&self) -> Vec<ParamId> {
        self.store.ids().filter(|&id| id != self.handles.embed).collect()
    }

    pub fn token_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.vocab.id_or_unk(t)).collect()
    }

    /// Width of the sentence representation fed to the predictor.
    pub fn representation_dim(&self) -> usize {
        match self.variant {
            Variant::Lstm => self.dims.hidden,
            Variant::BiLstm => 2 * self.dims.hidden,
        }
    }

    /// Every parameter rounded through 32-bit storage.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        for id in self.store.ids() {
            for v in &mut out.store.get_mut(id).data {
                *v = f64::from(*v as f32);
            }
        }
        out
    }

    /// Sentence-level class distribution without dropout.
    pub fn predict(&self, tokens: &[String]) -> Result<Vec<f64>> {
        let ids = self.token_ids(tokens);
        let mut tape = Tape::new(&self.store);
        let enc = encode(&mut tape, self, &ids)?;
        let p = predict_position(&mut tape, self, enc.sentence, None)?;
        Ok(tape.value(p).to_vec())
    }
}

/// One LSTM step: `i, f, o = σ(·)`, `g = tanh(·)`, `c = f⊙c' + i⊙g`,
/// `h = o⊙tanh(c)`.
pub fn lstm_cell(tape: &mut Tape, w: &LstmWeights, bias: Var, c_prev: Var, h_prev: Var, x: Var) -> Result<(Var, Var)> {
    let d = w.hidden;
    if tape.value(c_prev).len() != d || tape.value(h_prev).len() != d {
        return Err(Error::Dimension(format!(
            "lstm state has length {}/{}, expected {d}",
            tape.value(c_prev).len(),
            tape.value(h_prev).len()
        )));
    }
    let wx = tape.matvec(w.w, x)?;
    let uh = tape.matvec(w.u, h_prev)?;
    let z = tape.sum(&[wx, uh, bias])?;
    let zi = tape.slice(z, 0, d)?;
    let zf = tape.slice(z, d, d)?;
    let zo = tape.slice(z, 2 * d, d)?;
    let zg = tape.slice(z, 3 * d, d)?;
    let i = tape.sigmoid(zi);
    let f = tape.sigmoid(zf);
    let o = tape.sigmoid(zo);
    let g = tape.tanh(zg);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((c, h))
}

/// Per-position hidden states and the sentence representation.
///
/// `backward[t]` has consumed tokens `t..n` (right to left); `forward[t]`
/// has consumed `0..=t` and is empty for the single-direction variant.
#[derive(Clone, Debug)]
pub struct Encoding {
    pub forward: Vec<Var>,
    pub backward: Vec<Var>,
    /// `←h_1` (single) or `[→h_n, ←h_1]` (bidirectional).
    pub sentence: Var,
}

impl Encoding {
    pub fn len(&self) -> usize {
        self.backward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.backward.is_empty()
    }

    /// Full representation at position `t`: `←h_t` or `[→h_t, ←h_t]`.
    pub fn position(&self, tape: &mut Tape, t: usize) -> Var {
        if self.forward.is_empty() {
            self.backward[t]
        } else {
            tape.concat(self.forward[t], self.backward[t])
        }
    }
}

fn run_direction(tape: &mut Tape, w: &LstmWeights, bias: Var, inputs: &[Var], order: impl Iterator<Item = usize>) -> Result<Vec<Option<Var>>> {
    let mut states = vec![None; inputs.len()];
    let mut c = tape.constant(vec![0.0; w.hidden]);
    let mut h = tape.constant(vec![0.0; w.hidden]);
    for t in order {
        let (c_next, h_next) = lstm_cell(tape, w, bias, c, h, inputs[t])?;
        c = c_next;
        h = h_next;
        states[t] = Some(h);
    }
    Ok(states)
}

pub fn encode(tape: &mut Tape, params: &ModelParams, token_ids: &[usize]) -> Result<Encoding> {
    if token_ids.is_empty() {
        return Err(Error::Input("cannot encode an empty sentence".into()));
    }
    let n = token_ids.len();
    let inputs = token_ids
        .iter()
        .map(|&id| tape.row(params.handles.embed, id))
        .collect::<Result<Vec<_>>>()?;
    let w = &params.handles.lstm;
    let bias = tape.param(w.b);
    let backward: Vec<Var> = run_direction(tape, w, bias, &inputs, (0..n).rev())?
        .into_iter()
        .map(|s| s.expect("every position visited"))
        .collect();
    match params.variant {
        Variant::Lstm => Ok(Encoding {
            forward: Vec::new(),
            sentence: backward[0],
            backward,
        }),
        Variant::BiLstm => {
            let forward: Vec<Var> = run_direction(tape, w, bias, &inputs, 0..n)?
                .into_iter()
                .map(|s| s.expect("every position visited"))
                .collect();
            let sentence = tape.concat(forward[n - 1], backward[0]);
            Ok(Encoding {
                forward,
                backward,
                sentence,
            })
        }
    }
}

/// `floor(softmax(S·h + bias))`, with an optional inverted-dropout mask on `h`.
pub fn predict_position(tape: &mut Tape, params: &ModelParams, h: Var, dropout_mask: Option<&[f64]>) -> Result<Var> {
    let pred = params.handles.predictor;
    let h = match dropout_mask {
        Some(mask) => tape.mask(h, mask.to_vec())?,
        None => h,
    };
    let logits = tape.matvec(pred.s, h)?;
    let bias = tape.param(pred.bias);
    let z = tape.add(logits, bias)?;
    tape.distribution(z)
}

/// Which half of a bidirectional predictor a directional state feeds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Half {
    Forward,
    Backward,
}

/// Distribution from one directional state through the shared predictor.
/// A bidirectional model applies the matching column half of `S`; a
/// single-direction model applies all of `S`.
pub fn directional_distribution(tape: &mut Tape, params: &ModelParams, h: Var, half: Half) -> Result<Var> {
    let pred = params.handles.predictor;
    let col0 = match (params.variant, half) {
        (Variant::Lstm, _) | (Variant::BiLstm, Half::Forward) => 0,
        (Variant::BiLstm, Half::Backward) => params.dims.hidden,
    };
    let logits = tape.matvec_cols(pred.s, col0, h)?;
    let bias = tape.param(pred.bias);
    let z = tape.add(logits, bias)?;
    tape.distribution(z)
}

/// Inverted-dropout mask: 0 with probability `p`, else `1/(1−p)`.
pub fn dropout_mask(rng: &mut StreamRng, len: usize, p: f64) -> Vec<f64> {
    if p <= 0.0 {
        return vec![1.0; len];
    }
    let keep = 1.0 / (1.0 - p);
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect()
}
