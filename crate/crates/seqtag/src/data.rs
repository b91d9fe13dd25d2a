//! Corpus ingestion (column-per-field token files), vocabulary
//! construction, labeling-rate subsampling, pretrained-embedding loading,
//! and evaluation metrics.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// A sentence as read from disk: the original columns of every token
/// line, plus the token and tag columns pulled out per the column spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSentence {
    pub rows: Vec<Vec<String>>,
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

/// Which columns carry the token and the tag. `tag_col: None` means the
/// last column of each line.
#[derive(Debug, Clone, Copy)]
pub struct ColumnSpec {
    pub token_col: usize,
    pub tag_col: Option<usize>,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            token_col: 0,
            tag_col: None,
        }
    }
}

/// A numericalized sentence ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct Sentence {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
    pub word_ids: Vec<usize>,
    pub char_ids: Vec<Vec<usize>>,
    pub tag_ids: Vec<usize>,
    pub extra: Option<Vec<Vec<f64>>>,
}

impl Sentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Evaluation metric attached to a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MetricKind {
    #[serde(rename = "accuracy")]
    Accuracy,
    #[serde(rename = "chunk-f1")]
    ChunkF1,
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "accuracy" => Ok(MetricKind::Accuracy),
            "chunk-f1" => Ok(MetricKind::ChunkF1),
            other => Err(Error::config(format!(
                "unknown metric '{other}' (expected accuracy or chunk-f1)"
            ))),
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricKind::Accuracy => write!(f, "accuracy"),
            MetricKind::ChunkF1 => write!(f, "chunk-f1"),
        }
    }
}

/// A task's label inventory with a fixed index order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::config(format!("duplicate label '{l}' in label set")));
            }
        }
        Ok(LabelSet { labels, index })
    }

    pub fn id_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: usize) -> &str {
        &self.labels[id]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A task: name, label inventory, metric, and width of the optional
/// per-token extra feature block.
#[derive(Debug, Clone)]
pub struct TaskSpec {
    pub name: String,
    pub labels: LabelSet,
    pub metric: MetricKind,
    pub extra_dim: usize,
}

/// A task's data splits. `test` may be empty.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<Sentence>,
    pub dev: Vec<Sentence>,
    pub test: Vec<Sentence>,
    pub task: TaskSpec,
}

// ---------------------------------------------------------------------------
// Column-file reading and writing

/// Reads a token-per-line column file: columns whitespace-separated,
/// blank lines separate sentences, lines whose first column is
/// `-DOCSTART-` are skipped. Token and tag columns come from `spec`.
pub fn read_conll(path: &Path, spec: ColumnSpec) -> Result<Vec<RawSentence>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let cols: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if cols.is_empty() {
            flush_sentence(&mut rows, &mut out, spec)?;
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        let needed = match spec.tag_col {
            Some(t) => spec.token_col.max(t) + 1,
            // with the tag in the last column, one column would make the
            // token double as its own tag
            None => spec.token_col.max(1) + 1,
        };
        if cols.len() < needed {
            return Err(Error::parse(
                lineno,
                format!("expected at least {needed} columns, found {}", cols.len()),
            ));
        }
        rows.push(cols);
    }
    flush_sentence(&mut rows, &mut out, spec)?;
    Ok(out)
}

fn flush_sentence(
    rows: &mut Vec<Vec<String>>,
    out: &mut Vec<RawSentence>,
    spec: ColumnSpec,
) -> Result<()> {
    if rows.is_empty() {
        return Ok(());
    }
    let rows = std::mem::take(rows);
    let tokens: Vec<String> = rows.iter().map(|r| r[spec.token_col].clone()).collect();
    let tags: Vec<String> = rows
        .iter()
        .map(|r| match spec.tag_col {
            Some(t) => r[t].clone(),
            None => r.last().expect("nonempty row").clone(),
        })
        .collect();
    out.push(RawSentence { rows, tokens, tags });
    Ok(())
}

/// Reads a column file for prediction: tokens only, any column count ≥ 1.
pub fn read_conll_unlabeled(path: &Path, token_col: usize) -> Result<Vec<RawSentence>> {
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    let mut rows: Vec<Vec<String>> = Vec::new();
    let flush = |rows: &mut Vec<Vec<String>>, out: &mut Vec<RawSentence>| {
        if rows.is_empty() {
            return;
        }
        let rows = std::mem::take(rows);
        let tokens: Vec<String> = rows.iter().map(|r| r[token_col].clone()).collect();
        out.push(RawSentence {
            rows,
            tokens,
            tags: Vec::new(),
        });
    };
    for (i, line) in text.lines().enumerate() {
        let cols: Vec<String> = line.split_whitespace().map(str::to_owned).collect();
        if cols.is_empty() {
            flush(&mut rows, &mut out);
            continue;
        }
        if cols[0] == "-DOCSTART-" {
            continue;
        }
        if cols.len() <= token_col {
            return Err(Error::parse(
                i + 1,
                format!("expected at least {} columns, found {}", token_col + 1, cols.len()),
            ));
        }
        rows.push(cols);
    }
    flush(&mut rows, &mut out);
    Ok(out)
}

/// Canonical serializer: columns joined by single tabs, one blank line
/// between sentences, trailing newline after the final row. Files already
/// in this form round-trip byte-identically through `read_conll`.
pub fn write_conll<W: Write>(sentences: &[RawSentence], w: &mut W) -> Result<()> {
    for (i, sent) in sentences.iter().enumerate() {
        if i > 0 {
            writeln!(w)?;
        }
        for row in &sent.rows {
            writeln!(w, "{}", row.join("\t"))?;
        }
    }
    Ok(())
}

pub fn write_conll_to_path(sentences: &[RawSentence], path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_conll(sentences, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Vocabularies

/// Token-to-index map with reserved padding and unknown entries at
/// indices 0 and 1. Built once from counts; lookups never insert.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    items: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds from (token, count) pairs: tokens with count ≥ `min_count`
    /// are kept and indexed in (count descending, token ascending) order
    /// starting at 2. Reserved names in the input are ignored.
    pub fn build<I>(counts: I, min_count: u64) -> Self
    where
        I: IntoIterator<Item = (String, u64)>,
    {
        let mut kept: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(t, c)| *c >= min_count && t != PAD_TOKEN && t != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut items = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        items.extend(kept.into_iter().map(|(t, _)| t));
        Self::from_items_unchecked(items)
    }

    /// Rebuilds from a stored item list (index order), e.g. a checkpoint.
    pub fn from_items(items: Vec<String>) -> Result<Self> {
        if items.len() < 2 || items[PAD] != PAD_TOKEN || items[UNK] != UNK_TOKEN {
            return Err(Error::config(
                "vocabulary item list must start with the reserved <pad> and <unk> entries",
            ));
        }
        let mut seen = HashSet::new();
        for t in &items {
            if !seen.insert(t) {
                return Err(Error::config(format!("duplicate vocabulary item '{t}'")));
            }
        }
        Ok(Self::from_items_unchecked(items))
    }

    fn from_items_unchecked(items: Vec<String>) -> Self {
        let index = items
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocabulary { items, index }
    }

    /// Index of `token`, or the unknown index when absent.
    pub fn id_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    /// Index of `token` only when actually present.
    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.items[id]
    }

    pub fn items(&self) -> &[String] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

pub fn count_words<'a, I>(sentences: I, lowercase: bool) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a RawSentence>,
{
    let mut counts = BTreeMap::new();
    for sent in sentences {
        for tok in &sent.tokens {
            let key = if lowercase {
                tok.to_lowercase()
            } else {
                tok.clone()
            };
            *counts.entry(key).or_insert(0) += 1;
        }
    }
    counts
}

pub fn count_chars<'a, I>(sentences: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a RawSentence>,
{
    let mut counts = BTreeMap::new();
    for sent in sentences {
        for tok in &sent.tokens {
            for ch in tok.chars() {
                *counts.entry(ch.to_string()).or_insert(0) += 1;
            }
        }
    }
    counts
}

pub fn count_tags<'a, I>(sentences: I) -> BTreeMap<String, u64>
where
    I: IntoIterator<Item = &'a RawSentence>,
{
    let mut counts = BTreeMap::new();
    for sent in sentences {
        for tag in &sent.tags {
            *counts.entry(tag.clone()).or_insert(0) += 1;
        }
    }
    counts
}

/// Orders labels by (count descending, name ascending).
pub fn label_order(counts: &BTreeMap<String, u64>) -> Vec<String> {
    let mut labels: Vec<(&String, &u64)> = counts.iter().collect();
    labels.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
    labels.into_iter().map(|(l, _)| l.clone()).collect()
}

/// Turns a raw sentence into model indices. Unknown words and characters
/// map to the unknown index; an unknown tag is an error.
pub fn numericalize(
    raw: &RawSentence,
    words: &Vocabulary,
    chars: &Vocabulary,
    labels: &LabelSet,
    lowercase_words: bool,
) -> Result<Sentence> {
    let mut word_ids = Vec::with_capacity(raw.tokens.len());
    let mut char_ids = Vec::with_capacity(raw.tokens.len());
    for tok in &raw.tokens {
        let key = if lowercase_words {
            tok.to_lowercase()
        } else {
            tok.clone()
        };
        word_ids.push(words.id_of(&key));
        let mut cs = Vec::with_capacity(tok.chars().count());
        for ch in tok.chars() {
            cs.push(chars.id_of(&ch.to_string()));
        }
        char_ids.push(cs);
    }
    let mut tag_ids = Vec::with_capacity(raw.tags.len());
    for tag in &raw.tags {
        match labels.id_of(tag) {
            Some(id) => tag_ids.push(id),
            None => {
                return Err(Error::domain(format!(
                    "tag '{tag}' is not in the task's label set"
                )))
            }
        }
    }
    Ok(Sentence {
        tokens: raw.tokens.clone(),
        tags: raw.tags.clone(),
        word_ids,
        char_ids,
        tag_ids,
        extra: None,
    })
}

// ---------------------------------------------------------------------------
// Subsampling and splitting

/// Keeps round(rate·N) items chosen uniformly without replacement,
/// preserving original order among survivors.
pub fn subsample<T: Clone>(items: &[T], rate: f64, rng: &mut Rng) -> Result<Vec<T>> {
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::config(format!(
            "labeling rate must be in (0, 1], got {rate}"
        )));
    }
    let n = items.len();
    let k = (rate * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    idx.truncate(k);
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| items[i].clone()).collect())
}

/// Seeded 80/10/10 split: round(0.1·N) test, round(0.1·N) dev, remainder
/// train. Original order is preserved within each split.
pub fn split_80_10_10<T: Clone>(items: &[T], rng: &mut Rng) -> (Vec<T>, Vec<T>, Vec<T>) {
    let n = items.len();
    let test_n = (0.1 * n as f64).round() as usize;
    let dev_n = (0.1 * n as f64).round() as usize;
    let mut idx: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut idx);
    let mut test_idx: Vec<usize> = idx[..test_n].to_vec();
    let mut dev_idx: Vec<usize> = idx[test_n..test_n + dev_n].to_vec();
    let mut train_idx: Vec<usize> = idx[test_n + dev_n..].to_vec();
    test_idx.sort_unstable();
    dev_idx.sort_unstable();
    train_idx.sort_unstable();
    let pick = |ids: &[usize]| ids.iter().map(|&i| items[i].clone()).collect();
    (pick(&train_idx), pick(&dev_idx), pick(&test_idx))
}

// ---------------------------------------------------------------------------
// Pretrained embeddings

#[derive(Debug, Clone, Copy)]
pub struct EmbeddingReport {
    /// Distinct vocabulary words whose rows were overwritten.
    pub found: usize,
    /// Vocabulary size excluding the reserved padding/unknown entries.
    pub vocab_words: usize,
    /// Data records read from the file (header excluded).
    pub file_records: usize,
}

impl EmbeddingReport {
    pub fn coverage(&self) -> f64 {
        if self.vocab_words == 0 {
            0.0
        } else {
            self.found as f64 / self.vocab_words as f64
        }
    }
}

/// Copies pretrained vectors over the rows of `table` for every
/// in-vocabulary word in the file. Format: `word v_1 … v_dim` per line; a
/// first line of exactly two integers is treated as a header and skipped.
pub fn apply_embeddings(
    path: &Path,
    vocab: &Vocabulary,
    table: &mut Tensor,
) -> Result<EmbeddingReport> {
    if table.rows() != vocab.len() {
        return Err(Error::config(format!(
            "embedding table has {} rows but the vocabulary has {} entries",
            table.rows(),
            vocab.len()
        )));
    }
    let dim = table.cols();
    let text = fs::read_to_string(path)?;
    let mut seen: HashSet<usize> = HashSet::new();
    let mut file_records = 0usize;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if lineno == 1
            && fields.len() == 2
            && fields.iter().all(|f| f.parse::<u64>().is_ok())
        {
            continue;
        }
        file_records += 1;
        let values = &fields[1..];
        if values.len() != dim {
            return Err(Error::parse(
                lineno,
                format!("expected {dim} embedding values, found {}", values.len()),
            ));
        }
        let Some(id) = vocab.lookup(fields[0]) else {
            continue;
        };
        let row = table.row_mut(id);
        for (slot, v) in row.iter_mut().zip(values.iter()) {
            *slot = v.parse::<f64>().map_err(|_| {
                Error::parse(lineno, format!("bad embedding value '{v}'"))
            })?;
        }
        seen.insert(id);
    }
    Ok(EmbeddingReport {
        found: seen.len(),
        vocab_words: vocab.len().saturating_sub(2),
        file_records,
    })
}

// ---------------------------------------------------------------------------
// Extra-feature sidecar files

/// Reads a sidecar feature file: same blank-line sentence structure as
/// the token files, one numeric vector per token line. All vectors must
/// share one width.
pub fn read_extra_features(path: &Path) -> Result<Vec<Vec<Vec<f64>>>> {
    let text = fs::read_to_string(path)?;
    let mut out: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut current: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            if !current.is_empty() {
                out.push(std::mem::take(&mut current));
            }
            continue;
        }
        let mut vec = Vec::with_capacity(fields.len());
        for f in &fields {
            vec.push(
                f.parse::<f64>()
                    .map_err(|_| Error::parse(lineno, format!("bad feature value '{f}'")))?,
            );
        }
        match width {
            None => width = Some(vec.len()),
            Some(w) if w != vec.len() => {
                return Err(Error::parse(
                    lineno,
                    format!("feature width {} does not match earlier width {w}", vec.len()),
                ));
            }
            _ => {}
        }
        current.push(vec);
    }
    if !current.is_empty() {
        out.push(current);
    }
    Ok(out)
}

/// Attaches sidecar features to sentences; counts must line up exactly.
/// Returns the feature width (0 when both sides are empty).
pub fn attach_extra(sentences: &mut [Sentence], features: Vec<Vec<Vec<f64>>>) -> Result<usize> {
    if sentences.len() != features.len() {
        return Err(Error::config(format!(
            "feature file has {} sentences but the token file has {}",
            features.len(),
            sentences.len()
        )));
    }
    let mut width = 0;
    for (i, (sent, feats)) in sentences.iter_mut().zip(features.into_iter()).enumerate() {
        if sent.len() != feats.len() {
            return Err(Error::config(format!(
                "feature sentence {} has {} vectors but the token sentence has {} tokens",
                i + 1,
                feats.len(),
                sent.len()
            )));
        }
        if let Some(first) = feats.first() {
            width = first.len();
        }
        sent.extra = Some(feats);
    }
    Ok(width)
}

// ---------------------------------------------------------------------------
// Metrics

/// A labeled span: sentence index, inclusive token range, chunk type.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Chunk {
    pub sent: usize,
    pub start: usize,
    pub end: usize,
    pub kind: String,
}

enum BioTag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
}

fn parse_bio(tag: &str) -> Option<BioTag<'_>> {
    if tag == "O" {
        return Some(BioTag::Outside);
    }
    if let Some(kind) = tag.strip_prefix("B-") {
        if !kind.is_empty() {
            return Some(BioTag::Begin(kind));
        }
    }
    if let Some(kind) = tag.strip_prefix("I-") {
        if !kind.is_empty() {
            return Some(BioTag::Inside(kind));
        }
    }
    None
}

/// Extracts maximal chunks from BIO sequences. A chunk of type X starts
/// at B-X, or at I-X not preceded by B-X/I-X of the same type, and runs
/// through subsequent I-X tags.
pub fn extract_chunks(sequences: &[Vec<String>]) -> Result<BTreeSet<Chunk>> {
    let mut chunks = BTreeSet::new();
    for (si, seq) in sequences.iter().enumerate() {
        let mut open: Option<(usize, String)> = None;
        for (t, tag) in seq.iter().enumerate() {
            let parsed = parse_bio(tag).ok_or_else(|| {
                Error::domain(format!(
                    "malformed BIO tag '{tag}' in sentence {} at position {}",
                    si + 1,
                    t + 1
                ))
            })?;
            match parsed {
                BioTag::Outside => {
                    if let Some((start, kind)) = open.take() {
                        chunks.insert(Chunk {
                            sent: si,
                            start,
                            end: t - 1,
                            kind,
                        });
                    }
                }
                BioTag::Begin(kind) => {
                    if let Some((start, k)) = open.take() {
                        chunks.insert(Chunk {
                            sent: si,
                            start,
                            end: t - 1,
                            kind: k,
                        });
                    }
                    open = Some((t, kind.to_owned()));
                }
                BioTag::Inside(kind) => match &open {
                    Some((_, k)) if k == kind => {}
                    _ => {
                        if let Some((start, k)) = open.take() {
                            chunks.insert(Chunk {
                                sent: si,
                                start,
                                end: t - 1,
                                kind: k,
                            });
                        }
                        open = Some((t, kind.to_owned()));
                    }
                },
            }
        }
        if let Some((start, kind)) = open {
            chunks.insert(Chunk {
                sent: si,
                start,
                end: seq.len() - 1,
                kind,
            });
        }
    }
    Ok(chunks)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct TypeCounts {
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl TypeCounts {
    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        f1(self.precision(), self.recall())
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone)]
pub struct ChunkScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
    /// True when either side contains no chunks at all; the scores above
    /// are then 0 by convention rather than measurement.
    pub zero_chunks: bool,
    pub per_type: BTreeMap<String, TypeCounts>,
}

/// Chunk-level precision/recall/F1: a predicted chunk counts as correct
/// iff its type, start, and end all match a gold chunk.
pub fn chunk_f1(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<ChunkScore> {
    check_aligned(gold, pred)?;
    let gold_chunks = extract_chunks(gold)?;
    let pred_chunks = extract_chunks(pred)?;
    let correct: Vec<&Chunk> = pred_chunks.intersection(&gold_chunks).collect();

    let mut per_type: BTreeMap<String, TypeCounts> = BTreeMap::new();
    for c in &gold_chunks {
        per_type.entry(c.kind.clone()).or_default().gold += 1;
    }
    for c in &pred_chunks {
        per_type.entry(c.kind.clone()).or_default().predicted += 1;
    }
    for c in &correct {
        per_type.entry(c.kind.clone()).or_default().correct += 1;
    }

    let p = ratio(correct.len(), pred_chunks.len());
    let r = ratio(correct.len(), gold_chunks.len());
    Ok(ChunkScore {
        precision: p,
        recall: r,
        f1: f1(p, r),
        gold: gold_chunks.len(),
        predicted: pred_chunks.len(),
        correct: correct.len(),
        zero_chunks: gold_chunks.is_empty() || pred_chunks.is_empty(),
        per_type,
    })
}

/// Fraction of positions where prediction equals gold.
pub fn token_accuracy(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<f64> {
    check_aligned(gold, pred)?;
    let mut correct = 0usize;
    let mut total = 0usize;
    for (g, p) in gold.iter().zip(pred.iter()) {
        for (gt, pt) in g.iter().zip(p.iter()) {
            total += 1;
            if gt == pt {
                correct += 1;
            }
        }
    }
    Ok(ratio(correct, total))
}

fn check_aligned(gold: &[Vec<String>], pred: &[Vec<String>]) -> Result<()> {
    if gold.len() != pred.len() {
        return Err(Error::domain(format!(
            "gold has {} sentences, predictions have {}",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.iter().zip(pred.iter()).enumerate() {
        if g.len() != p.len() {
            return Err(Error::domain(format!(
                "sentence {}: gold has {} tags, prediction has {}",
                i + 1,
                g.len(),
                p.len()
            )));
        }
    }
    Ok(())
}
