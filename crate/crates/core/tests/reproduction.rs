//! Long-running reproduction checks on the real corpora. Ignored by default;
//! run with `cargo test --release -p lrlstm --test reproduction -- --ignored`
//! after placing the data under `$LRLSTM_DATA_DIR`:
//!
//! - `mr/rt-polarity.pos`, `mr/rt-polarity.neg`
//! - `sst/train.txt`, `sst/dev.txt`, `sst/test.txt`
//! - `lexicon.tsv` (word, class), optionally `mpqa.tff`
//! - `embeddings.txt` (300-dimensional `word v1 … v300` lines)

use std::path::{Path, PathBuf};

use lrlstm::analysis::evaluate;
use lrlstm::corpus::{extract_subset, load_mr, load_sst_splits, split_dataset, Dataset, RoleFilter};
use lrlstm::model::{ModelParams, Variant};
use lrlstm::regularizers::EnabledSet;
use lrlstm::resources::{build_lexicon, load_embeddings, load_lexicon_tsv, parse_mpqa_clues, Lexicon, Vocab, WordLists};
use lrlstm::training::{train, TrainConfig};

const SEED: u64 = 1;
const HIDDEN: usize = 100;
const EMBED_DIM: usize = 300;

fn data_dir() -> PathBuf {
    let dir = std::env::var_os("LRLSTM_DATA_DIR").expect("set LRLSTM_DATA_DIR to run the reproduction tests");
    PathBuf::from(dir)
}

fn lexicon(dir: &Path) -> Lexicon {
    let a = load_lexicon_tsv(&dir.join("lexicon.tsv")).unwrap();
    let mpqa = dir.join("mpqa.tff");
    let b = if mpqa.is_file() {
        parse_mpqa_clues(&std::fs::read_to_string(&mpqa).unwrap(), "mpqa.tff").unwrap()
    } else {
        Vec::new()
    };
    build_lexicon(&a, &b).0
}

struct Splits {
    train: Dataset,
    valid: Dataset,
    test: Dataset,
    lexicon: Lexicon,
    lists: WordLists,
}

fn annotate(mut train: Dataset, mut valid: Dataset, mut test: Dataset, dir: &Path) -> Splits {
    let lexicon = lexicon(dir);
    let lists = WordLists::default();
    for ds in [&mut train, &mut valid, &mut test] {
        ds.annotate(&lexicon, &lists);
    }
    Splits {
        train,
        valid,
        test,
        lexicon,
        lists,
    }
}

fn mr() -> Splits {
    let dir = data_dir();
    let (all, _) = load_mr(&dir.join("mr/rt-polarity.pos"), &dir.join("mr/rt-polarity.neg")).unwrap();
    let (a, b, c) = split_dataset(&all, [0.8, 0.1, 0.1], SEED).unwrap();
    annotate(a, b, c, &dir)
}

fn sst() -> Splits {
    let dir = data_dir();
    let (a, b, c) = load_sst_splits(&dir.join("sst")).unwrap().expect("sst/{train,dev,test}.txt");
    annotate(a, b, c, &dir)
}

/// Best-validation model for `variant`, scored on `test` and on the test
/// negation subset.
fn run(s: &Splits, variant: Variant, enabled: EnabledSet) -> (f64, f64) {
    let dir = data_dir();
    let vocab = Vocab::from_words([&s.train, &s.valid, &s.test].iter().flat_map(|d| d.sentences.iter().flat_map(|x| x.tokens.iter())));
    let emb = load_embeddings(&dir.join("embeddings.txt"), vocab, EMBED_DIM, SEED).unwrap();
    let model = ModelParams::init(SEED, variant, HIDDEN, s.train.scheme.classes(), &s.lists, emb).unwrap();
    let mut cfg = TrainConfig {
        seed: SEED,
        ..TrainConfig::default()
    };
    cfg.regularizers.enabled = enabled;
    let out = train(&s.train, &s.valid, model, &cfg).unwrap();
    assert!(out.aborted.is_none(), "{:?}", out.aborted);
    let test = 100.0 * evaluate(&out.best, &s.test).unwrap();
    let neg = extract_subset(&s.test, RoleFilter::ContainsNegator, &s.lists, &s.lexicon);
    let neg = 100.0 * evaluate(&out.best, &neg).unwrap();
    eprintln!("{variant} enabled={enabled:?}: test {test:.2}, negation subset {neg:.2}");
    (test, neg)
}

#[test]
#[ignore = "hours; needs MR and pretrained embeddings"]
fn plain_encoders_reach_baseline_accuracy_on_mr() {
    let s = mr();
    let (lstm, _) = run(&s, Variant::Lstm, EnabledSet::NONE);
    let (bilstm, _) = run(&s, Variant::BiLstm, EnabledSet::NONE);
    assert!((75.0..=80.0).contains(&lstm), "LSTM {lstm:.2}");
    assert!((77.0..=81.5).contains(&bilstm), "Bi-LSTM {bilstm:.2}");
}

#[test]
#[ignore = "hours; needs MR, SST and pretrained embeddings"]
fn regularization_improves_mr_and_sst() {
    let m = mr();
    let (plain, _) = run(&m, Variant::Lstm, EnabledSet::NONE);
    let (reg, _) = run(&m, Variant::Lstm, EnabledSet::ALL);
    assert!(reg - plain >= 1.0, "MR: regularized {reg:.2} vs plain {plain:.2}");
    let s = sst();
    let (plain, _) = run(&s, Variant::BiLstm, EnabledSet::NONE);
    let (reg, _) = run(&s, Variant::BiLstm, EnabledSet::ALL);
    assert!(reg - plain >= 1.0, "SST: regularized {reg:.2} vs plain {plain:.2}");
}

#[test]
#[ignore = "hours; needs MR and pretrained embeddings"]
fn regularization_helps_on_the_mr_negation_subset() {
    let s = mr();
    let (_, plain) = run(&s, Variant::BiLstm, EnabledSet::NONE);
    let (_, reg) = run(&s, Variant::BiLstm, EnabledSet::ALL);
    assert!(reg - plain >= 2.0, "negation subset: regularized {reg:.2} vs plain {plain:.2}");
}
