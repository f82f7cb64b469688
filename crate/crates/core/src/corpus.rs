//! Dataset ingestion, seeded splits, role-filtered subsets and corpus
//! statistics.

use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numeric::stream_rng;
use crate::resources::{classify_tokens, read_text, tokenize, Lexicon, TokenRole, WordLists};

/// Sentences longer than this are truncated at load time.
pub const MAX_SENTENCE_TOKENS: usize = 60;

/// Ordered class names, most negative first.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelScheme {
    names: Vec<String>,
}

impl LabelScheme {
    pub fn new(names: &[&str]) -> Result<Self> {
        if names.len() < 2 {
            return Err(Error::Config("a label scheme needs at least two classes".into()));
        }
        Ok(LabelScheme {
            names: names.iter().map(|s| s.to_string()).collect(),
        })
    }

    pub fn binary() -> Self {
        LabelScheme::new(&["negative", "positive"]).unwrap()
    }

    pub fn five_class() -> Self {
        LabelScheme::new(&["very negative", "negative", "neutral", "positive", "very positive"]).unwrap()
    }

    pub fn for_classes(classes: usize) -> Result<Self> {
        match classes {
            2 => Ok(LabelScheme::binary()),
            5 => Ok(LabelScheme::five_class()),
            c => Err(Error::Config(format!("no shipped label scheme with {c} classes"))),
        }
    }

    pub fn classes(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub label: usize,
    /// One role per token; empty until [`Sentence::annotate`] runs.
    pub roles: Vec<TokenRole>,
}

impl Sentence {
    pub fn new(tokens: Vec<String>, label: usize) -> Self {
        Sentence {
            tokens,
            label,
            roles: Vec::new(),
        }
    }

    pub fn annotate(&mut self, lexicon: &Lexicon, lists: &WordLists) {
        self.roles = classify_tokens(&self.tokens, lexicon, lists);
    }

    pub fn is_annotated(&self) -> bool {
        self.roles.len() == self.tokens.len()
    }

    pub fn has_role(&self, filter: RoleFilter) -> bool {
        self.roles.iter().any(|r| filter.matches(*r))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub name: String,
    pub scheme: LabelScheme,
    pub sentences: Vec<Sentence>,
}

/// Non-fatal events seen while loading.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub skipped_empty: usize,
    pub truncated: usize,
}

impl Dataset {
    pub fn new(name: impl Into<String>, scheme: LabelScheme, sentences: Vec<Sentence>) -> Result<Self> {
        let c = scheme.classes();
        if let Some(bad) = sentences.iter().find(|s| s.label >= c || s.tokens.is_empty()) {
            return Err(Error::Input(format!(
                "sentence {:?} with label {} does not fit a {c}-class scheme",
                bad.tokens, bad.label
            )));
        }
        Ok(Dataset {
            name: name.into(),
            scheme,
            sentences,
        })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn annotate(&mut self, lexicon: &Lexicon, lists: &WordLists) {
        for s in &mut self.sentences {
            s.annotate(lexicon, lists);
        }
    }

    /// `label<TAB>space-joined tokens` per line.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            let _ = writeln!(out, "{}\t{}", s.label, s.tokens.join(" "));
        }
        out
    }

    pub fn from_tsv(text: &str, name: &str, scheme: LabelScheme) -> Result<(Self, IngestReport)> {
        let mut report = IngestReport::default();
        let mut sentences = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                report.skipped_empty += 1;
                continue;
            }
            let (label, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(name, i + 1, "expected `label<TAB>sentence`"))?;
            let label: usize = label
                .trim()
                .parse()
                .map_err(|_| Error::parse(name, i + 1, format!("bad label `{label}`")))?;
            if label >= scheme.classes() {
                return Err(Error::parse(name, i + 1, format!("label {label} out of range")));
            }
            match sentence_from_text(text, label, &mut report) {
                Some(s) => sentences.push(s),
                None => report.skipped_empty += 1,
            }
        }
        Ok((Dataset::new(name, scheme, sentences)?, report))
    }
}

fn truncate(mut tokens: Vec<String>, report: &mut IngestReport) -> Vec<String> {
    if tokens.len() > MAX_SENTENCE_TOKENS {
        tokens.truncate(MAX_SENTENCE_TOKENS);
        report.truncated += 1;
    }
    tokens
}

fn sentence_from_text(text: &str, label: usize, report: &mut IngestReport) -> Option<Sentence> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return None;
    }
    Some(Sentence::new(truncate(tokens, report), label))
}

/// MR polarity files: positive lines get label 1, negative lines label 0,
/// positives first.
pub fn load_mr(pos_path: &Path, neg_path: &Path) -> Result<(Dataset, IngestReport)> {
    let pos = read_text(pos_path)?;
    let neg = read_text(neg_path)?;
    let (dataset, report) = mr_from_text(&pos, &neg)?;
    if report.skipped_empty > 0 {
        warn!("MR: skipped {} empty lines", report.skipped_empty);
    }
    if report.truncated > 0 {
        warn!("MR: truncated {} sentences to {MAX_SENTENCE_TOKENS} tokens", report.truncated);
    }
    Ok((dataset, report))
}

pub fn mr_from_text(pos: &str, neg: &str) -> Result<(Dataset, IngestReport)> {
    let mut report = IngestReport::default();
    let mut sentences = Vec::new();
    for (text, label) in [(pos, 1), (neg, 0)] {
        for line in text.lines() {
            match sentence_from_text(line, label, &mut report) {
                Some(s) => sentences.push(s),
                None => report.skipped_empty += 1,
            }
        }
    }
    Ok((Dataset::new("mr", LabelScheme::binary(), sentences)?, report))
}

/// Root label and leaves of one SST tree, plus the non-neutral leaves.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SstTree {
    pub sentence: Sentence,
    pub polar_leaves: Vec<(String, u8)>,
}

struct TreeParser<'a> {
    bytes: &'a [u8],
    pos: usize,
    source_name: &'a str,
    leaves: Vec<String>,
    polar: Vec<(String, u8)>,
}

impl TreeParser<'_> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::TreeSyntax {
            source_name: self.source_name.to_string(),
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn expect(&mut self, b: u8) -> Result<()> {
        self.skip_ws();
        if self.bytes.get(self.pos) == Some(&b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.error(format!("expected `{}`", b as char)))
        }
    }

    fn label(&mut self) -> Result<u8> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        let digits = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap_or_default();
        match digits.parse::<u8>() {
            Ok(l) if l <= 4 => Ok(l),
            _ => {
                self.pos = start;
                Err(self.error("expected an integer label 0-4"))
            }
        }
    }

    // node := '(' label (node+ | token) ')'
    fn node(&mut self) -> Result<u8> {
        self.expect(b'(')?;
        let label = self.label()?;
        self.skip_ws();
        match self.bytes.get(self.pos) {
            None => Err(self.error("unexpected end of tree")),
            Some(b'(') => {
                while {
                    self.skip_ws();
                    self.bytes.get(self.pos) == Some(&b'(')
                } {
                    self.node()?;
                }
                self.expect(b')')?;
                Ok(label)
            }
            Some(b')') => Err(self.error("node has neither children nor a token")),
            Some(_) => {
                let start = self.pos;
                while self.pos < self.bytes.len()
                    && !self.bytes[self.pos].is_ascii_whitespace()
                    && self.bytes[self.pos] != b'('
                    && self.bytes[self.pos] != b')'
                {
                    self.pos += 1;
                }
                let token = String::from_utf8_lossy(&self.bytes[start..self.pos]).to_lowercase();
                self.expect(b')')?;
                if label != 2 {
                    self.polar.push((token.clone(), label));
                }
                self.leaves.push(token);
                Ok(label)
            }
        }
    }
}

/// Parses one parenthesized SST tree. Only the root label is kept as the
/// sentence label; inner-node labels are validated and discarded.
pub fn parse_sst_tree(line: &str, source_name: &str) -> Result<SstTree> {
    let mut parser = TreeParser {
        bytes: line.as_bytes(),
        pos: 0,
        source_name,
        leaves: Vec::new(),
        polar: Vec::new(),
    };
    let label = parser.node()?;
    parser.skip_ws();
    if parser.pos != parser.bytes.len() {
        return Err(parser.error("trailing input after the root node"));
    }
    Ok(SstTree {
        sentence: Sentence::new(parser.leaves, label as usize),
        polar_leaves: parser.polar,
    })
}

/// A treebank file: its sentences, every polar `(word, label)` leaf, and the ingest report.
pub type SstFile = (Dataset, Vec<(String, u8)>, IngestReport);

/// One tree per line. Returns the dataset and every polar leaf seen.
pub fn load_sst_file(path: &Path, name: &str) -> Result<SstFile> {
    let text = read_text(path)?;
    sst_from_text(&text, name, &path.display().to_string())
}

pub fn sst_from_text(
    text: &str,
    name: &str,
    source_name: &str,
) -> Result<SstFile> {
    let mut report = IngestReport::default();
    let mut sentences = Vec::new();
    let mut polar = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            report.skipped_empty += 1;
            continue;
        }
        let tree = parse_sst_tree(line, &format!("{source_name}:{}", i + 1))?;
        polar.extend(tree.polar_leaves);
        let mut sentence = tree.sentence;
        sentence.tokens = truncate(sentence.tokens, &mut report);
        sentences.push(sentence);
    }
    Ok((Dataset::new(name, LabelScheme::five_class(), sentences)?, polar, report))
}

/// Official SST split files (`train.txt`, `dev.txt`, `test.txt`) when all
/// three exist in `dir`.
pub fn load_sst_splits(dir: &Path) -> Result<Option<(Dataset, Dataset, Dataset)>> {
    let files = ["train.txt", "dev.txt", "test.txt"].map(|f| dir.join(f));
    if !files.iter().all(|f| f.is_file()) {
        return Ok(None);
    }
    let (train, _, _) = load_sst_file(&files[0], "sst-train")?;
    let (valid, _, _) = load_sst_file(&files[1], "sst-dev")?;
    let (test, _, _) = load_sst_file(&files[2], "sst-test")?;
    Ok(Some((train, valid, test)))
}

/// Seeded shuffle, then a contiguous train/valid/test cut.
pub fn split_dataset(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    if ratios.iter().any(|&r| !(r > 0.0) || !r.is_finite()) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {total}, expected 1")));
    }
    let n = dataset.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, "corpus/split"));
    let n_train = ((ratios[0] * n as f64).round() as usize).min(n);
    let n_valid = ((ratios[1] * n as f64).round() as usize).min(n - n_train);
    let part = |name: &str, idx: &[usize]| Dataset {
        name: format!("{}-{name}", dataset.name),
        scheme: dataset.scheme.clone(),
        sentences: idx.iter().map(|&i| dataset.sentences[i].clone()).collect(),
    };
    Ok((
        part("train", &order[..n_train]),
        part("valid", &order[n_train..n_train + n_valid]),
        part("test", &order[n_train + n_valid..]),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RoleFilter {
    ContainsNegator,
    ContainsIntensifier,
    ContainsSentiment,
}

impl RoleFilter {
    pub fn matches(self, role: TokenRole) -> bool {
        match self {
            RoleFilter::ContainsNegator => role.is_negator(),
            RoleFilter::ContainsIntensifier => role.is_intensifier(),
            RoleFilter::ContainsSentiment => role.is_sentiment(),
        }
    }

    fn suffix(self) -> &'static str {
        match self {
            RoleFilter::ContainsNegator => "neg",
            RoleFilter::ContainsIntensifier => "int",
            RoleFilter::ContainsSentiment => "sent",
        }
    }
}

/// Sentences with at least one token of the filtered role, order kept.
pub fn extract_subset(dataset: &Dataset, filter: RoleFilter, lists: &WordLists, lexicon: &Lexicon) -> Dataset {
    let sentences = dataset
        .sentences
        .iter()
        .filter(|s| {
            if s.is_annotated() {
                s.has_role(filter)
            } else {
                classify_tokens(&s.tokens, lexicon, lists).into_iter().any(|r| filter.matches(r))
            }
        })
        .cloned()
        .collect();
    Dataset {
        name: format!("{}-{}", dataset.name, filter.suffix()),
        scheme: dataset.scheme.clone(),
        sentences,
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CorpusStats {
    pub total: usize,
    pub with_sentiment: usize,
    pub with_negation: usize,
    pub with_intensity: usize,
}

impl CorpusStats {
    /// Flat `key = value` report.
    pub fn to_report(&self, name: &str) -> String {
        format!(
            "dataset = {name}\nsentences = {}\nwith_sentiment = {}\nwith_negation = {}\nwith_intensity = {}\n",
            self.total, self.with_sentiment, self.with_negation, self.with_intensity
        )
    }

    pub const CSV_HEADER: &'static str = "dataset,sentences,with_sentiment,with_negation,with_intensity";

    pub fn to_csv_row(&self, name: &str) -> String {
        format!(
            "{name},{},{},{},{}",
            self.total, self.with_sentiment, self.with_negation, self.with_intensity
        )
    }
}

pub fn corpus_stats(dataset: &Dataset, lists: &WordLists, lexicon: &Lexicon) -> CorpusStats {
    let mut stats = CorpusStats {
        total: dataset.len(),
        ..Default::default()
    };
    for s in &dataset.sentences {
        let roles = classify_tokens(&s.tokens, lexicon, lists);
        stats.with_sentiment += usize::from(roles.iter().any(|r| r.is_sentiment()));
        stats.with_negation += usize::from(roles.iter().any(|r| r.is_negator()));
        stats.with_intensity += usize::from(roles.iter().any(|r| r.is_intensifier()));
    }
    stats
}
