//! Seeded synthetic fixtures: small gradient-check instances and templated
//! corpora whose labels follow lexicon polarity, negation and intensity.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::corpus::{Dataset, LabelScheme, Sentence};
use crate::error::Result;
use crate::model::{ModelParams, Variant};
use crate::numeric::{grad_check, stream_rng, uniform_vec, GradCheckReport, StreamRng};
use crate::regularizers::{total_loss, RegularizerConfig};
use crate::resources::{build_lexicon, EmbeddingTable, LexClass, Lexicon, Vocab, WordLists};

const SYLLABLES: &[&str] = &[
    "ba", "ko", "ri", "mu", "te", "lo", "sa", "vi", "de", "na", "po", "gu", "fe", "zi", "ma", "tu",
];

/// Deterministic pronounceable pseudo-word number `i` with a fixed prefix.
fn pseudo_word(prefix: &str, i: usize) -> String {
    let n = SYLLABLES.len();
    format!("{prefix}{}{}{}", SYLLABLES[i % n], SYLLABLES[(i / n) % n], SYLLABLES[(i / (n * n) + i) % n])
}

const FILLERS: &[&str] = &[
    "the", "movie", "film", "plot", "story", "acting", "is", "was", "this", "it", "a", "cast", "script", "ending",
];
const CONNECTIVES: &[&str] = &["and", "but", "while", "yet"];

fn lexicon_for(words: &[(String, LexClass)]) -> Lexicon {
    build_lexicon(words, &[]).0
}

/// One gradient-check problem: a model with broadly spread parameters, a
/// sentence using every token role, and a fixed dropout mask.
pub struct GradInstance {
    pub model: ModelParams,
    pub sentence: Sentence,
    pub mask: Vec<f64>,
    pub config: RegularizerConfig,
}

pub fn grad_instance(seed: u64, variant: Variant, classes: usize, len: usize, hidden: usize) -> Result<GradInstance> {
    let mut rng = stream_rng(seed, "gradcheck/instance");
    let lists = WordLists::new(vec!["not".into(), "never".into()], vec!["very".into(), "too".into()])?;
    let lexicon = lexicon_for(&[
        ("good".into(), LexClass::WeakPos),
        ("superb".into(), LexClass::StrongPos),
        ("dull".into(), LexClass::WeakNeg),
        ("awful".into(), LexClass::StrongNeg),
    ]);
    let plain = ["film", "plot", "the", "was"];
    let pools: [&[&str]; 4] = [&["not", "never"], &["very", "too"], &["good", "superb", "dull", "awful"], &plain];
    let len = len.clamp(1, 6);
    let mut tokens: Vec<String> = (0..len)
        .map(|k| {
            let pool = pools[k % 4];
            pool[rng.gen_range(0..pool.len())].to_string()
        })
        .collect();
    tokens.shuffle(&mut rng);
    let label = rng.gen_range(0..classes);
    let mut sentence = Sentence::new(tokens, label);
    sentence.annotate(&lexicon, &lists);

    let vocab = Vocab::from_words(plain.iter().chain(["not", "never", "very", "too", "good", "superb", "dull", "awful"].iter()));
    let emb = EmbeddingTable::random(vocab, hidden, seed);
    let mut model = ModelParams::init(seed, variant, hidden, classes, &lists, emb)?;
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let block = model.store.get_mut(id);
        let n = block.data.len();
        block.data = uniform_vec(&mut rng, n, -0.8, 0.8);
    }
    let mask = (0..model.representation_dim())
        .map(|_| if rng.gen::<f64>() < 0.25 { 0.0 } else { 2.0 })
        .collect();
    let config = RegularizerConfig {
        alpha: 0.5,
        margin: rng.gen_range(0.0..0.02),
        beta: 1e-3,
        ..RegularizerConfig::default()
    };
    Ok(GradInstance {
        model,
        sentence,
        mask,
        config,
    })
}

/// Central-difference check of the full objective on one instance.
pub fn check_instance(inst: &GradInstance, h: f64) -> Result<GradCheckReport> {
    let masks = vec![Some(inst.mask.clone())];
    let batch = [&inst.sentence];
    let loss = |store: &crate::numeric::ParamStore| {
        let mut m = inst.model.clone();
        m.store = store.clone();
        let out = total_loss(&batch, &m, &inst.config, &masks)?;
        Ok((out.loss, out.grads))
    };
    grad_check(loss, &inst.model.store, &[], h)
}

/// Small corpus where the label is the polarity of the single lexicon word
/// in each sentence.
pub fn separable_corpus(n: usize, seed: u64) -> (Dataset, Lexicon) {
    let mut rng = stream_rng(seed, "synthetic/separable");
    let pos: Vec<String> = (0..6).map(|i| pseudo_word("p", i)).collect();
    let neg: Vec<String> = (0..6).map(|i| pseudo_word("n", i)).collect();
    let mut entries: Vec<(String, LexClass)> = pos.iter().map(|w| (w.clone(), LexClass::WeakPos)).collect();
    entries.extend(neg.iter().map(|w| (w.clone(), LexClass::WeakNeg)));
    let sentences = (0..n)
        .map(|i| {
            let label = i % 2;
            let word = if label == 1 { pos.choose(&mut rng) } else { neg.choose(&mut rng) }.unwrap().clone();
            let mut tokens = fillers(&mut rng, 1, 3);
            let at = rng.gen_range(0..=tokens.len());
            tokens.insert(at, word);
            Sentence::new(tokens, label)
        })
        .collect();
    let ds = Dataset::new("separable", LabelScheme::binary(), sentences).expect("binary labels");
    (ds, lexicon_for(&entries))
}

fn fillers(rng: &mut StreamRng, lo: usize, hi: usize) -> Vec<String> {
    let k = rng.gen_range(lo..=hi);
    (0..k).map(|_| FILLERS.choose(rng).unwrap().to_string()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TemplateConfig {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    /// Lexicon words per class.
    pub words_per_class: usize,
    /// Share of lexicon words that occur in training only after a negator.
    pub negated_only: f64,
    /// Probability that a sentiment phrase is negated.
    pub negation_rate: f64,
    /// Probability that a sentiment phrase is intensified.
    pub intensity_rate: f64,
    /// Probability of a second sentiment phrase.
    pub two_phrase_rate: f64,
    /// Extra neutral pseudo-words on top of the built-in fillers.
    pub neutral_words: usize,
    /// Most neutral tokens in each filler slot.
    pub max_fillers: usize,
    pub seed: u64,
}

impl Default for TemplateConfig {
    fn default() -> Self {
        TemplateConfig {
            train: 1000,
            valid: 200,
            test: 800,
            words_per_class: 30,
            negated_only: 0.0,
            negation_rate: 0.35,
            intensity_rate: 0.3,
            two_phrase_rate: 0.3,
            neutral_words: 300,
            max_fillers: 4,
            seed: 1,
        }
    }
}

pub struct TemplatedCorpus {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    pub lexicon: Lexicon,
    pub lists: WordLists,
    pub vocab: Vocab,
    /// Lexicon words that occur in training only after a negator.
    pub negated_only: Vec<String>,
}

struct Phrase {
    tokens: Vec<String>,
    score: i32,
}

/// Binary corpus: each sentiment phrase is `[negator] [intensifier] word`
/// scoring ±1 (weak) or ±2 (strong), doubled by an intensifier and negated
/// by a negator; the label is the sign of the summed phrase scores. Neutral
/// filler tokens surround the phrases. With `negated_only > 0` a share of
/// lexicon words appears in the training split only under negation, while
/// validation and test draw every word in every form.
pub fn templated_corpus(cfg: &TemplateConfig) -> Result<TemplatedCorpus> {
    let mut rng = stream_rng(cfg.seed, "synthetic/templated");
    let lists = WordLists::default();
    let negators = ["not", "never", "hardly"];
    let intensifiers = ["very", "extremely", "really"];
    let mut words: Vec<(String, LexClass)> = Vec::new();
    for (ci, class) in LexClass::ALL.into_iter().enumerate() {
        for i in 0..cfg.words_per_class {
            words.push((pseudo_word(["sn", "wn", "wp", "sp"][ci], i), class));
        }
    }
    let neutral: Vec<String> = FILLERS
        .iter()
        .map(|w| w.to_string())
        .chain((0..cfg.neutral_words).map(|i| pseudo_word("x", i)))
        .collect();
    let filler = |rng: &mut StreamRng, hi: usize| -> Vec<String> {
        let k = rng.gen_range(0..=hi);
        (0..k).map(|_| neutral.choose(rng).unwrap().clone()).collect()
    };
    let mut order: Vec<usize> = (0..words.len()).collect();
    order.shuffle(&mut rng);
    let cut = (cfg.negated_only * words.len() as f64).round() as usize;
    let mut negated_only = vec![false; words.len()];
    for &i in &order[..cut] {
        negated_only[i] = true;
    }

    let phrase = |rng: &mut StreamRng, restricted: bool| -> Phrase {
        let w = rng.gen_range(0..words.len());
        let (word, class) = &words[w];
        let negate = (restricted && negated_only[w]) || rng.gen::<f64>() < cfg.negation_rate;
        let intensify = rng.gen::<f64>() < cfg.intensity_rate;
        let mut tokens = Vec::new();
        let mut score = class.polarity();
        if negate {
            tokens.push(negators.choose(rng).unwrap().to_string());
            score = -score;
        }
        if intensify {
            tokens.push(intensifiers.choose(rng).unwrap().to_string());
            score *= 2;
        }
        tokens.push(word.clone());
        Phrase { tokens, score }
    };

    let make = |n: usize, restricted: bool, rng: &mut StreamRng| -> Vec<Sentence> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            let mut tokens = filler(rng, cfg.max_fillers);
            let first = phrase(rng, restricted);
            let mut score = first.score;
            tokens.extend(first.tokens);
            if rng.gen::<f64>() < cfg.two_phrase_rate {
                tokens.push(CONNECTIVES.choose(rng).unwrap().to_string());
                tokens.extend(filler(rng, cfg.max_fillers.div_ceil(2)));
                let second = phrase(rng, restricted);
                score += second.score;
                tokens.extend(second.tokens);
            }
            tokens.extend(filler(rng, cfg.max_fillers));
            if score != 0 {
                out.push(Sentence::new(tokens, usize::from(score > 0)));
            }
        }
        out
    };
    let train = make(cfg.train, true, &mut rng);
    let valid = make(cfg.valid, false, &mut rng);
    let test = make(cfg.test, false, &mut rng);

    let lexicon = lexicon_for(&words);
    let vocab = Vocab::from_words(
        words
            .iter()
            .map(|(w, _)| w.as_str())
            .chain(neutral.iter().map(String::as_str))
            .chain(CONNECTIVES.iter().copied())
            .chain(negators)
            .chain(intensifiers),
    );
    let build = |name: &str, s: Vec<Sentence>| -> Result<Dataset> {
        let mut ds = Dataset::new(name, LabelScheme::binary(), s)?;
        ds.annotate(&lexicon, &lists);
        Ok(ds)
    };
    Ok(TemplatedCorpus {
        train: build("templated-train", train)?,
        valid: build("templated-valid", valid)?,
        test: build("templated-test", test)?,
        lexicon: lexicon.clone(),
        lists,
        vocab,
        negated_only: words
            .iter()
            .zip(&negated_only)
            .filter(|(_, &n)| n)
            .map(|((w, _), _)| w.clone())
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::resources::TokenRole;

    #[test]
    fn pseudo_words_are_distinct() {
        let mut w: Vec<String> = (0..200).map(|i| pseudo_word("x", i)).collect();
        w.sort();
        w.dedup();
        assert_eq!(w.len(), 200);
    }

    #[test]
    fn templated_is_deterministic_and_annotated() {
        let cfg = TemplateConfig {
            train: 50,
            valid: 10,
            test: 10,
            ..Default::default()
        };
        let a = templated_corpus(&cfg).unwrap();
        let b = templated_corpus(&cfg).unwrap();
        assert_eq!(a.train, b.train);
        assert!(a.train.sentences.iter().all(Sentence::is_annotated));
        assert!(a
            .train
            .sentences
            .iter()
            .any(|s| s.roles.iter().any(|r| matches!(r, TokenRole::Negator(_)))));
    }

    #[test]
    fn grad_instance_uses_every_role() {
        let inst = grad_instance(3, Variant::BiLstm, 5, 6, 8).unwrap();
        let r = &inst.sentence.roles;
        assert!(r.iter().any(|x| x.is_negator()));
        assert!(r.iter().any(|x| x.is_intensifier()));
        assert!(r.iter().any(|x| matches!(x, TokenRole::Sentiment(_))));
        assert!(r.contains(&TokenRole::Plain));
    }
}
