//! Sentiment lexicon, negator/intensifier lists, token roles, vocabulary
//! and pretrained embeddings.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{stream_rng, uniform_vec};

/// Prior sentiment class of a lexicon word.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LexClass {
    StrongNeg,
    WeakNeg,
    WeakPos,
    StrongPos,
}

impl LexClass {
    pub const ALL: [LexClass; 4] = [
        LexClass::StrongNeg,
        LexClass::WeakNeg,
        LexClass::WeakPos,
        LexClass::StrongPos,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            LexClass::StrongNeg => "strong_neg",
            LexClass::WeakNeg => "weak_neg",
            LexClass::WeakPos => "weak_pos",
            LexClass::StrongPos => "strong_pos",
        }
    }

    /// Signed strength: −2, −1, +1, +2.
    pub fn polarity(self) -> i32 {
        match self {
            LexClass::StrongNeg => -2,
            LexClass::WeakNeg => -1,
            LexClass::WeakPos => 1,
            LexClass::StrongPos => 2,
        }
    }

    /// Suggested collapse of a 5-way SST leaf label; neutral (2) has no
    /// lexicon class.
    pub fn from_sst_leaf(label: u8) -> Option<LexClass> {
        match label {
            0 => Some(LexClass::StrongNeg),
            1 => Some(LexClass::WeakNeg),
            3 => Some(LexClass::WeakPos),
            4 => Some(LexClass::StrongPos),
            _ => None,
        }
    }
}

impl fmt::Display for LexClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for LexClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        LexClass::ALL
            .into_iter()
            .find(|c| c.label() == s)
            .ok_or_else(|| format!("unknown lexicon class `{s}`"))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Lexicon {
    entries: BTreeMap<String, LexClass>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LexiconReport {
    pub kept: usize,
    pub dropped: usize,
}

impl Lexicon {
    pub fn get(&self, word: &str) -> Option<LexClass> {
        self.entries.get(word).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, LexClass)> {
        self.entries.iter().map(|(w, c)| (w.as_str(), *c))
    }

    pub fn to_tsv(&self) -> String {
        self.iter().map(|(w, c)| format!("{w}\t{c}\n")).collect()
    }
}

/// Parses `word<TAB>class` lines. Blank lines and `#` comments are skipped.
pub fn parse_lexicon_tsv(text: &str, source_name: &str) -> Result<Vec<(String, LexClass)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (word, class) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(source_name, i + 1, "expected `word<TAB>class`"))?;
        let class = class
            .trim()
            .parse::<LexClass>()
            .map_err(|m| Error::parse(source_name, i + 1, m))?;
        out.push((word.trim().to_lowercase(), class));
    }
    Ok(out)
}

pub fn load_lexicon_tsv(path: &Path) -> Result<Vec<(String, LexClass)>> {
    let text = read_text(path)?;
    parse_lexicon_tsv(&text, &path.display().to_string())
}

/// Converts MPQA subjectivity-clue lines (`type=strongsubj ... word1=w ...
/// priorpolarity=negative`) to lexicon pairs: strong/weak subjectivity
/// picks the strength, prior polarity the sign. Neutral and `both`
/// entries are skipped.
pub fn parse_mpqa_clues(text: &str, source_name: &str) -> Result<Vec<(String, LexClass)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: HashMap<&str, &str> = line
            .split_whitespace()
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let (Some(kind), Some(word), Some(polarity)) =
            (fields.get("type"), fields.get("word1"), fields.get("priorpolarity"))
        else {
            return Err(Error::parse(source_name, i + 1, "missing type/word1/priorpolarity"));
        };
        let strong = match *kind {
            "strongsubj" => true,
            "weaksubj" => false,
            other => return Err(Error::parse(source_name, i + 1, format!("unknown type `{other}`"))),
        };
        let class = match (*polarity, strong) {
            ("negative", true) => LexClass::StrongNeg,
            ("negative", false) => LexClass::WeakNeg,
            ("positive", false) => LexClass::WeakPos,
            ("positive", true) => LexClass::StrongPos,
            _ => continue,
        };
        out.push((word.to_lowercase(), class));
    }
    Ok(out)
}

/// Union of two sources; a word whose labels disagree anywhere is dropped.
pub fn build_lexicon(
    source_a: &[(String, LexClass)],
    source_b: &[(String, LexClass)],
) -> (Lexicon, LexiconReport) {
    let mut seen: BTreeMap<&str, Option<LexClass>> = BTreeMap::new();
    for (word, class) in source_a.iter().chain(source_b) {
        seen.entry(word.as_str())
            .and_modify(|slot| {
                if *slot != Some(*class) {
                    *slot = None;
                }
            })
            .or_insert(Some(*class));
    }
    let mut report = LexiconReport::default();
    let mut entries = BTreeMap::new();
    for (word, class) in seen {
        match class {
            Some(c) => {
                entries.insert(word.to_string(), c);
                report.kept += 1;
            }
            None => report.dropped += 1,
        }
    }
    (Lexicon { entries }, report)
}

const DEFAULT_NEGATORS: &[&str] = &[
    "no", "not", "none", "never", "neither", "nobody", "nothing", "nowhere", "seldom", "scarcely",
    "hardly", "barely", "is not", "cannot", "may not", "could not", "would not", "did not",
    "do not", "does not", "was not", "are not", "were not",
];

const DEFAULT_INTENSIFIERS: &[&str] = &[
    "awfully", "extraordinary", "unusual", "much", "rather", "very", "entirely", "greatly",
    "really", "exceedingly", "too", "completely", "terribly", "perfectly", "quite", "certainly",
    "especially", "extremely", "fairly", "highly", "increasingly", "much more", "particularly",
    "probably", "more", "absolutely", "intensely", "supremely", "most", "pretty",
];

/// Negator and intensifier entries, each a sequence of one or more tokens.
/// Entry order fixes the index of each word's transformation matrix.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordLists {
    negators: Vec<String>,
    intensifiers: Vec<String>,
}

impl Default for WordLists {
    fn default() -> Self {
        WordLists::new(
            DEFAULT_NEGATORS.iter().map(|s| s.to_string()).collect(),
            DEFAULT_INTENSIFIERS.iter().map(|s| s.to_string()).collect(),
        )
        .expect("packaged word lists are valid")
    }
}

impl WordLists {
    pub fn new(negators: Vec<String>, intensifiers: Vec<String>) -> Result<Self> {
        let normalize = |v: Vec<String>| -> Vec<String> {
            let mut out: Vec<String> = Vec::new();
            for e in v {
                let e = e.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
                if !e.is_empty() && !out.contains(&e) {
                    out.push(e);
                }
            }
            out
        };
        let negators = normalize(negators);
        let intensifiers = normalize(intensifiers);
        if let Some(both) = negators.iter().find(|n| intensifiers.contains(n)) {
            return Err(Error::Config(format!(
                "`{both}` is listed as both a negator and an intensifier"
            )));
        }
        Ok(WordLists {
            negators,
            intensifiers,
        })
    }

    /// One entry per non-blank line in each file.
    pub fn from_files(negators: &Path, intensifiers: &Path) -> Result<Self> {
        let lines = |p: &Path| -> Result<Vec<String>> {
            Ok(read_text(p)?
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(String::from)
                .collect())
        };
        WordLists::new(lines(negators)?, lines(intensifiers)?)
    }

    pub fn negators(&self) -> &[String] {
        &self.negators
    }

    pub fn intensifiers(&self) -> &[String] {
        &self.intensifiers
    }

    fn longest_match(entries: &[String], tokens: &[String]) -> Option<(usize, usize)> {
        let mut best: Option<(usize, usize)> = None;
        for (idx, entry) in entries.iter().enumerate() {
            let len = entry.split(' ').count();
            if len <= tokens.len()
                && entry.split(' ').zip(tokens).all(|(a, b)| a == b)
                && best.is_none_or(|(_, l)| len > l)
            {
                best = Some((idx, len));
            }
        }
        best
    }
}

/// Linguistic role of one token occurrence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TokenRole {
    /// Index into [`WordLists::negators`].
    Negator(usize),
    /// Index into [`WordLists::intensifiers`].
    Intensifier(usize),
    Sentiment(LexClass),
    Plain,
}

impl TokenRole {
    pub fn is_negator(self) -> bool {
        matches!(self, TokenRole::Negator(_))
    }

    pub fn is_intensifier(self) -> bool {
        matches!(self, TokenRole::Intensifier(_))
    }

    pub fn is_sentiment(self) -> bool {
        matches!(self, TokenRole::Sentiment(_))
    }
}

/// Role of an isolated lowercase word; precedence is
/// negator > intensifier > sentiment > plain.
pub fn classify_token(word: &str, lexicon: &Lexicon, lists: &WordLists) -> TokenRole {
    if let Some(i) = lists.negators.iter().position(|n| n == word) {
        TokenRole::Negator(i)
    } else if let Some(i) = lists.intensifiers.iter().position(|n| n == word) {
        TokenRole::Intensifier(i)
    } else if let Some(c) = lexicon.get(word) {
        TokenRole::Sentiment(c)
    } else {
        TokenRole::Plain
    }
}

/// Roles for a token sequence. Multiword list entries are matched
/// greedily (longest first, negators before intensifiers on equal length);
/// the first token of a matched span carries the role and the remaining
/// span tokens are `Plain`.
pub fn classify_tokens(tokens: &[String], lexicon: &Lexicon, lists: &WordLists) -> Vec<TokenRole> {
    let mut roles = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let rest = &tokens[i..];
        let neg = WordLists::longest_match(&lists.negators, rest);
        let int = WordLists::longest_match(&lists.intensifiers, rest);
        let (role, span) = match (neg, int) {
            (Some((n, nl)), Some((_, il))) if nl >= il => (TokenRole::Negator(n), nl),
            (_, Some((k, il))) => (TokenRole::Intensifier(k), il),
            (Some((n, nl)), None) => (TokenRole::Negator(n), nl),
            (None, None) => (classify_token(&tokens[i], lexicon, lists), 1),
        };
        roles.push(role);
        roles.extend(std::iter::repeat_n(TokenRole::Plain, span - 1));
        i += span;
    }
    roles
}

/// Lowercases, detaches punctuation from words, splits on whitespace.
/// Apostrophes and hyphens inside a word stay attached.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for ch in text.chars() {
        if ch.is_ascii_punctuation() && ch != '\'' && ch != '-' {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.extend(ch.to_lowercase());
        }
    }
    spaced.split_whitespace().map(String::from).collect()
}

/// Word ↔ row index map. Row 0 is the unknown-word token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

pub const UNK: &str = "<unk>";

impl Vocab {
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut vocab = Vocab {
            words: vec![UNK.to_string()],
            index: HashMap::from([(UNK.to_string(), 0)]),
        };
        for w in words {
            let w = w.as_ref();
            if !vocab.index.contains_key(w) {
                vocab.index.insert(w.to_string(), vocab.words.len());
                vocab.words.push(w.to_string());
            }
        }
        vocab
    }

    /// Rebuilds from a stored word list whose first entry is [`UNK`].
    pub fn from_stored(words: Vec<String>) -> Result<Self> {
        if words.first().map(String::as_str) != Some(UNK) {
            return Err(Error::format("metadata", "vocabulary does not start with <unk>"));
        }
        let index: HashMap<String, usize> =
            words.iter().enumerate().map(|(i, w)| (w.clone(), i)).collect();
        if index.len() != words.len() {
            return Err(Error::format("metadata", "vocabulary has duplicate words"));
        }
        Ok(Vocab { words, index })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 1
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id_or_unk(&self, word: &str) -> usize {
        self.get(word).unwrap_or(0)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// FNV-1a over the newline-joined word list.
    pub fn fingerprint(&self) -> u64 {
        crate::numeric::stream_seed(&self.words.join("\n"))
    }
}

/// Embedding rows aligned with a [`Vocab`].
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub vocab: Vocab,
    pub dim: usize,
    /// Row-major `|V| × dim`.
    pub vectors: Vec<f64>,
    /// Fraction of non-`<unk>` words found in the embedding file.
    pub coverage: f64,
}

impl EmbeddingTable {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    /// Every row drawn from the out-of-file initializer.
    pub fn random(vocab: Vocab, dim: usize, seed: u64) -> Self {
        let mut rng = stream_rng(seed, "embeddings/oov");
        let vectors = uniform_vec(&mut rng, vocab.len() * dim, -0.01, 0.01);
        EmbeddingTable {
            coverage: if vocab.is_empty() { 1.0 } else { 0.0 },
            vocab,
            dim,
            vectors,
        }
    }
}

/// Reads `word v1 … vd` lines. Vocabulary words present in the file take
/// the file vector; the rest get `Uniform(−0.01, 0.01)` rows drawn in
/// vocabulary order from the seeded stream.
pub fn load_embeddings(path: &Path, vocab: Vocab, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_embeddings(BufReader::new(file), &path.display().to_string(), vocab, dim, seed)
}

pub fn read_embeddings<R: BufRead>(
    reader: R,
    source_name: &str,
    vocab: Vocab,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingTable> {
    let mut found: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut file_dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(source_name, e))?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split(' ');
        let word = parts.next().unwrap_or_default();
        let values: Vec<&str> = parts.filter(|s| !s.is_empty()).collect();
        match file_dim {
            None => {
                if values.len() != dim {
                    return Err(Error::Dimension(format!(
                        "{source_name}: vectors have {} components, expected {dim}",
                        values.len()
                    )));
                }
                file_dim = Some(values.len());
            }
            Some(d) if d != values.len() => {
                return Err(Error::parse(
                    source_name,
                    i + 1,
                    format!("row has {} components, earlier rows have {d}", values.len()),
                ));
            }
            Some(_) => {}
        }
        let Some(row) = vocab.get(word) else { continue };
        if row == 0 || found[row].is_some() {
            continue;
        }
        let parsed = values
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| Error::parse(source_name, i + 1, format!("bad component: {e}")))?;
        found[row] = Some(parsed);
    }

    let mut rng = stream_rng(seed, "embeddings/oov");
    let mut vectors = Vec::with_capacity(vocab.len() * dim);
    let mut hits = 0usize;
    for slot in &found {
        match slot {
            Some(v) => {
                hits += 1;
                vectors.extend_from_slice(v);
            }
            None => vectors.extend(uniform_vec(&mut rng, dim, -0.01, 0.01)),
        }
    }
    let known = vocab.len() - 1;
    Ok(EmbeddingTable {
        coverage: if known == 0 { 1.0 } else { hits as f64 / known as f64 },
        vocab,
        dim,
        vectors,
    })
}

/// Reads a file as UTF-8, replacing invalid sequences (MR ships in a
/// single-byte encoding).
pub(crate) fn read_text(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(match String::from_utf8(bytes) {
        Ok(s) => s,
        Err(e) => {
            warn!("{}: not valid UTF-8, decoding lossily", path.display());
            String::from_utf8_lossy(e.as_bytes()).into_owned()
        }
    })
}
