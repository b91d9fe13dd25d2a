//! Parameter sharing across two jointly trained tasks.
//!
//! A `ParameterRegistry` holds every trainable tensor exactly once, each
//! tagged with a scope: shared between tasks, source-specific, or
//! target-specific. The three architecture builders differ only in which
//! components land in the shared scope:
//!
//!   T-A  everything, including one CRF over a single label space
//!   T-B  the full encoder; each task keeps its own CRF
//!   T-C  character embeddings and the character BiGRU only
//!
//! Model views returned by the builders alias the registered tensors, so
//! a gradient step through either view is visible through both.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::crf::CrfLayer;
use crate::data::{TaskSpec, Vocabulary, UNK};
use crate::encoder::{BiGruStack, BiLayer, EmbeddingTable, Encoder, GruCell};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, ParamRef, Rng, Tensor};
use crate::tagger::Tagger;
use crate::training::TrainConfig;

// ---------------------------------------------------------------------------
// Registry

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Shared,
    Source,
    Target,
}

impl Scope {
    pub fn to_byte(self) -> u8 {
        match self {
            Scope::Shared => 0,
            Scope::Source => 1,
            Scope::Target => 2,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self> {
        match b {
            0 => Ok(Scope::Shared),
            1 => Ok(Scope::Source),
            2 => Ok(Scope::Target),
            other => Err(Error::Checkpoint(format!("unknown scope byte {other}"))),
        }
    }
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Scope::Shared => "shared",
            Scope::Source => "source",
            Scope::Target => "target",
        };
        f.write_str(s)
    }
}

#[derive(Debug)]
pub struct RegistryEntry {
    pub param: ParamRef,
    pub scope: Scope,
}

/// Every trainable tensor of a model, each registered exactly once under a
/// stable name. Iteration order is always name-sorted.
#[derive(Debug, Default)]
pub struct ParameterRegistry {
    entries: BTreeMap<String, RegistryEntry>,
}

pub type Snapshot = BTreeMap<String, Tensor>;

impl ParameterRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Wraps `tensor` as a parameter, stores it, and hands back the
    /// aliasing handle for the model view.
    pub fn register(&mut self, name: &str, scope: Scope, tensor: Tensor) -> Result<ParamRef> {
        if self.entries.contains_key(name) {
            return Err(Error::config(format!(
                "parameter '{name}' registered twice"
            )));
        }
        let p = crate::numerics::param(tensor);
        self.entries.insert(
            name.to_string(),
            RegistryEntry {
                param: p.clone(),
                scope,
            },
        );
        Ok(p)
    }

    pub fn get(&self, name: &str) -> Option<&RegistryEntry> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &RegistryEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&self) {
        for e in self.entries.values() {
            e.param.borrow_mut().zero_grad();
        }
    }

    pub fn names_in_scope(&self, scope: Scope) -> Vec<String> {
        self.entries
            .iter()
            .filter(|(_, e)| e.scope == scope)
            .map(|(n, _)| n.clone())
            .collect()
    }

    /// Sorted names of every scope-shared entry.
    pub fn shared_parameter_names(&self) -> Vec<String> {
        self.names_in_scope(Scope::Shared)
    }

    pub fn snapshot(&self) -> Snapshot {
        self.entries
            .iter()
            .map(|(n, e)| (n.clone(), e.param.borrow().value.clone()))
            .collect()
    }

    pub fn restore(&self, snap: &Snapshot) -> Result<()> {
        if snap.len() != self.entries.len() {
            return Err(Error::domain(format!(
                "snapshot holds {} parameters, registry holds {}",
                snap.len(),
                self.entries.len()
            )));
        }
        for (name, tensor) in snap {
            let entry = self
                .entries
                .get(name)
                .ok_or_else(|| Error::domain(format!("snapshot parameter '{name}' not in registry")))?;
            let mut pair = entry.param.borrow_mut();
            if pair.value.shape() != tensor.shape() {
                return Err(Error::shape(
                    &format!("restore of '{name}'"),
                    pair.value.shape(),
                    tensor.shape(),
                ));
            }
            pair.value = tensor.clone();
        }
        Ok(())
    }

    /// FNV-1a over names and value bits of one scope; detects any bitwise
    /// change to that scope's parameters.
    pub fn scope_checksum(&self, scope: Scope) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut absorb = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for (name, e) in &self.entries {
            if e.scope != scope {
                continue;
            }
            absorb(name.as_bytes());
            for &v in e.param.borrow().value.data() {
                absorb(&v.to_bits().to_le_bytes());
            }
        }
        h
    }
}

// ---------------------------------------------------------------------------
// Architectures

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArchitectureKind {
    TA,
    TB,
    TC,
}

impl FromStr for ArchitectureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T-A" | "t-a" | "TA" | "ta" => Ok(ArchitectureKind::TA),
            "T-B" | "t-b" | "TB" | "tb" => Ok(ArchitectureKind::TB),
            "T-C" | "t-c" | "TC" | "tc" => Ok(ArchitectureKind::TC),
            other => Err(Error::config(format!(
                "unknown architecture '{other}', expected T-A, T-B, or T-C"
            ))),
        }
    }
}

impl fmt::Display for ArchitectureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchitectureKind::TA => "T-A",
            ArchitectureKind::TB => "T-B",
            ArchitectureKind::TC => "T-C",
        };
        f.write_str(s)
    }
}

// ---------------------------------------------------------------------------
// Label mapping

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MappingDirection {
    SourceToTarget,
    TargetToSource,
}

impl MappingDirection {
    pub fn as_str(self) -> &'static str {
        match self {
            MappingDirection::SourceToTarget => "source_to_target",
            MappingDirection::TargetToSource => "target_to_source",
        }
    }
}

impl FromStr for MappingDirection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "source_to_target" => Ok(MappingDirection::SourceToTarget),
            "target_to_source" => Ok(MappingDirection::TargetToSource),
            other => Err(Error::config(format!(
                "unknown mapping direction '{other}'"
            ))),
        }
    }
}

/// Tag renaming between the two tasks' label sets, read from a file of
/// `from<TAB>to` pairs. The direction header declares which task's tags
/// sit on the `from` side; default is source_to_target.
#[derive(Debug, Clone)]
pub struct LabelMapping {
    pairs: BTreeMap<String, String>,
    direction: MappingDirection,
    file_lines: usize,
}

impl LabelMapping {
    pub fn from_pairs(pairs: Vec<(String, String)>, direction: MappingDirection) -> Result<Self> {
        let mut map = BTreeMap::new();
        let n = pairs.len();
        for (from, to) in pairs {
            if map.insert(from.clone(), to).is_some() {
                return Err(Error::config(format!(
                    "tag '{from}' mapped more than once"
                )));
            }
        }
        Ok(LabelMapping {
            pairs: map,
            direction,
            file_lines: n,
        })
    }

    pub fn parse_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut pairs = BTreeMap::new();
        let mut direction = MappingDirection::SourceToTarget;
        let mut seen_pair = false;
        let mut file_lines = 0;
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            file_lines = lineno;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix("!direction:") {
                if seen_pair {
                    return Err(Error::parse(
                        lineno,
                        "direction header must precede all mapping pairs",
                    ));
                }
                direction = rest.trim().parse()?;
                continue;
            }
            let mut fields = line.split('\t');
            let from = fields.next().map(str::trim).unwrap_or("");
            let to = fields.next().map(str::trim).unwrap_or("");
            if from.is_empty() || to.is_empty() || fields.next().is_some() {
                return Err(Error::parse(
                    lineno,
                    format!("expected 'from<TAB>to', got '{raw}'"),
                ));
            }
            if pairs.insert(from.to_string(), to.to_string()).is_some() {
                return Err(Error::parse(
                    lineno,
                    format!("tag '{from}' mapped more than once"),
                ));
            }
            seen_pair = true;
        }
        if pairs.is_empty() {
            return Err(Error::parse(file_lines, "no mapping pairs found"));
        }
        Ok(LabelMapping {
            pairs,
            direction,
            file_lines,
        })
    }

    pub fn direction(&self) -> MappingDirection {
        self.direction
    }

    /// Line count of the file this mapping came from (pair count when
    /// built directly from pairs); only used in diagnostics.
    pub fn file_lines(&self) -> usize {
        self.file_lines
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&String, &String)> {
        self.pairs.iter()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Elementwise substitution. Every input tag must have an image.
    pub fn map_labels(&self, tags: &[String]) -> Result<Vec<String>> {
        tags.iter()
            .map(|t| {
                self.pairs.get(t).cloned().ok_or_else(|| {
                    Error::config(format!(
                        "tag '{t}' has no image in the label mapping ({} file lines)",
                        self.file_lines
                    ))
                })
            })
            .collect()
    }

    /// Inverse lookup for prediction output: the lexicographically
    /// smallest preimage, or the tag itself when nothing maps to it.
    pub fn invert_tag(&self, tag: &str) -> String {
        self.pairs
            .iter()
            .find(|(_, to)| to.as_str() == tag)
            .map(|(from, _)| from.clone())
            .unwrap_or_else(|| tag.to_string())
    }
}

// ---------------------------------------------------------------------------
// Seeded initialization

fn glorot_tensor(rows: usize, cols: usize, seed: u64) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let mut rng = Rng::new(seed);
    let data = (0..rows * cols).map(|_| rng.uniform(-bound, bound)).collect();
    Tensor::from_vec(&[rows, cols], data).expect("sized by construction")
}

/// Row 0 (`<pad>`) stays zero; every other row draws from a stream keyed
/// by the token string, so a token's initial vector does not depend on
/// where it sits in the vocabulary.
fn embedding_tensor(name: &str, vocab: &Vocabulary, dim: usize, master: u64) -> Tensor {
    let mut t = Tensor::zeros(&[vocab.len(), dim]);
    let bound = (3.0 / dim as f64).sqrt();
    for id in 1..vocab.len() {
        let stream = derive_seed(master, &format!("init.{name}.row.{}", vocab.token(id)));
        let mut rng = Rng::new(stream);
        for k in 0..dim {
            *t.at_mut(id, k) = rng.uniform(-bound, bound);
        }
    }
    t
}

fn build_table(
    reg: &mut ParameterRegistry,
    name: &str,
    vocab: &Vocabulary,
    dim: usize,
    scope: Scope,
    master: u64,
) -> Result<EmbeddingTable> {
    let p = reg.register(name, scope, embedding_tensor(name, vocab, dim, master))?;
    Ok(EmbeddingTable::new(p, UNK))
}

fn build_cell(
    reg: &mut ParameterRegistry,
    prefix: &str,
    hidden: usize,
    input: usize,
    scope: Scope,
    master: u64,
) -> Result<GruCell> {
    let mk = |reg: &mut ParameterRegistry, m: &str, r: usize, c: usize| -> Result<ParamRef> {
        let name = format!("{prefix}.{m}");
        let seed = derive_seed(master, &format!("init.{name}"));
        reg.register(&name, scope, glorot_tensor(r, c, seed))
    };
    GruCell::new(
        mk(reg, "w_rx", hidden, input)?,
        mk(reg, "w_rh", hidden, hidden)?,
        mk(reg, "w_zx", hidden, input)?,
        mk(reg, "w_zh", hidden, hidden)?,
        mk(reg, "w_hx", hidden, input)?,
        mk(reg, "w_hh", hidden, hidden)?,
    )
}

fn build_stack(
    reg: &mut ParameterRegistry,
    prefix: &str,
    hidden: usize,
    input: usize,
    scope: Scope,
    master: u64,
) -> Result<BiGruStack> {
    let l0 = BiLayer::new(
        build_cell(reg, &format!("{prefix}.l0.fwd"), hidden, input, scope, master)?,
        build_cell(reg, &format!("{prefix}.l0.bwd"), hidden, input, scope, master)?,
    )?;
    let l1 = BiLayer::new(
        build_cell(reg, &format!("{prefix}.l1.fwd"), hidden, 2 * hidden, scope, master)?,
        build_cell(reg, &format!("{prefix}.l1.bwd"), hidden, 2 * hidden, scope, master)?,
    )?;
    BiGruStack::new(vec![l0, l1])
}

/// Emission gets the usual fan-based init; transitions and the initial
/// vector start at zero so untrained tag interactions are neutral.
fn build_crf(
    reg: &mut ParameterRegistry,
    prefix: &str,
    labels: usize,
    feature_dim: usize,
    scope: Scope,
    master: u64,
) -> Result<CrfLayer> {
    let ename = format!("{prefix}.emission");
    let seed = derive_seed(master, &format!("init.{ename}"));
    let emission = reg.register(&ename, scope, glorot_tensor(labels, feature_dim, seed))?;
    let transitions = reg.register(
        &format!("{prefix}.transitions"),
        scope,
        Tensor::zeros(&[labels, labels]),
    )?;
    let initial = reg.register(
        &format!("{prefix}.initial"),
        scope,
        Tensor::vector(vec![0.0; labels]),
    )?;
    CrfLayer::new(emission, transitions, initial)
}

// ---------------------------------------------------------------------------
// Model builders

/// One task's sizing inputs: label set, metric, and vocabularies.
#[derive(Debug, Clone)]
pub struct TaskDef {
    pub spec: TaskSpec,
    pub word_vocab: Vocabulary,
    pub char_vocab: Vocabulary,
}

#[derive(Debug)]
pub struct SingleModel {
    pub registry: ParameterRegistry,
    pub tagger: Tagger,
}

#[derive(Debug)]
pub struct JointModel {
    pub registry: ParameterRegistry,
    pub source: Tagger,
    pub target: Tagger,
}

/// Single-task model: the encoder registers under the shared scope with
/// the same names a joint T-B build would use, so a joint run whose
/// sampler never picks the source reproduces this model exactly.
pub fn build_single_model(task: &TaskDef, config: &TrainConfig) -> Result<SingleModel> {
    config.validate()?;
    let master = config.seed;
    let mut reg = ParameterRegistry::new();
    let encoder = shared_encoder(&mut reg, task, config, master)?;
    let crf = build_crf(
        &mut reg,
        &format!("task.{}.crf", task.spec.name),
        task.spec.labels.len(),
        2 * config.word_hidden + task.spec.extra_dim,
        Scope::Target,
        master,
    )?;
    let tagger = Tagger::new(encoder, crf, task.spec.labels.clone(), task.spec.extra_dim)?;
    Ok(SingleModel {
        registry: reg,
        tagger,
    })
}

/// Fully shared encoder: char and word components under the shared scope,
/// with names independent of the task pair (T-A, T-B, single-task).
fn shared_encoder(
    reg: &mut ParameterRegistry,
    task: &TaskDef,
    config: &TrainConfig,
    master: u64,
) -> Result<Encoder> {
    let char_table = build_table(
        reg,
        "shared.char_table",
        &task.char_vocab,
        config.char_emb_dim,
        Scope::Shared,
        master,
    )?;
    let char_stack = build_stack(
        reg,
        "shared.char",
        config.char_hidden,
        config.char_emb_dim,
        Scope::Shared,
        master,
    )?;
    let word_table = build_table(
        reg,
        "shared.word_table",
        &task.word_vocab,
        config.word_emb_dim,
        Scope::Shared,
        master,
    )?;
    let word_stack = build_stack(
        reg,
        "shared.word",
        config.word_hidden,
        2 * config.char_hidden + config.word_emb_dim,
        Scope::Shared,
        master,
    )?;
    Encoder::new(char_table, char_stack, word_table, word_stack)
}

pub fn build_joint_model(
    kind: ArchitectureKind,
    source: &TaskDef,
    target: &TaskDef,
    config: &TrainConfig,
) -> Result<JointModel> {
    config.validate()?;
    if source.spec.name == target.spec.name {
        return Err(Error::config(format!(
            "source and target task names must differ, both are '{}'",
            source.spec.name
        )));
    }
    if source.char_vocab.items() != target.char_vocab.items() {
        return Err(Error::config(
            "joint training requires one character vocabulary built over both corpora",
        ));
    }
    match kind {
        ArchitectureKind::TA => {
            if source.spec.labels.labels() != target.spec.labels.labels() {
                return Err(Error::config(
                    "T-A needs one label space for both tasks; map the label sets first \
                     or use T-B, which keeps per-task CRF layers",
                ));
            }
            if source.spec.extra_dim != target.spec.extra_dim {
                return Err(Error::config(
                    "T-A shares the CRF, so both tasks must use the same extra-feature width",
                ));
            }
        }
        ArchitectureKind::TB | ArchitectureKind::TC => {}
    }
    if matches!(kind, ArchitectureKind::TA | ArchitectureKind::TB)
        && source.word_vocab.items() != target.word_vocab.items()
    {
        return Err(Error::config(format!(
            "{kind} shares the word table, so both tasks must use one word vocabulary"
        )));
    }

    let master = config.seed;
    let mut reg = ParameterRegistry::new();

    let (source_tagger, target_tagger) = match kind {
        ArchitectureKind::TA => {
            let enc = shared_encoder(&mut reg, target, config, master)?;
            let crf = build_crf(
                &mut reg,
                "shared.crf",
                target.spec.labels.len(),
                2 * config.word_hidden + target.spec.extra_dim,
                Scope::Shared,
                master,
            )?;
            let s = Tagger::new(
                enc.clone(),
                crf.clone(),
                source.spec.labels.clone(),
                source.spec.extra_dim,
            )?;
            let t = Tagger::new(enc, crf, target.spec.labels.clone(), target.spec.extra_dim)?;
            (s, t)
        }
        ArchitectureKind::TB => {
            let enc = shared_encoder(&mut reg, target, config, master)?;
            let s_crf = build_crf(
                &mut reg,
                &format!("task.{}.crf", source.spec.name),
                source.spec.labels.len(),
                2 * config.word_hidden + source.spec.extra_dim,
                Scope::Source,
                master,
            )?;
            let t_crf = build_crf(
                &mut reg,
                &format!("task.{}.crf", target.spec.name),
                target.spec.labels.len(),
                2 * config.word_hidden + target.spec.extra_dim,
                Scope::Target,
                master,
            )?;
            let s = Tagger::new(
                enc.clone(),
                s_crf,
                source.spec.labels.clone(),
                source.spec.extra_dim,
            )?;
            let t = Tagger::new(enc, t_crf, target.spec.labels.clone(), target.spec.extra_dim)?;
            (s, t)
        }
        ArchitectureKind::TC => {
            let char_table = build_table(
                &mut reg,
                "shared.char_table",
                &target.char_vocab,
                config.char_emb_dim,
                Scope::Shared,
                master,
            )?;
            let char_stack = build_stack(
                &mut reg,
                "shared.char",
                config.char_hidden,
                config.char_emb_dim,
                Scope::Shared,
                master,
            )?;
            let build_side = |reg: &mut ParameterRegistry,
                                  task: &TaskDef,
                                  scope: Scope|
             -> Result<Tagger> {
                let prefix = format!("task.{}", task.spec.name);
                let word_table = build_table(
                    reg,
                    &format!("{prefix}.word_table"),
                    &task.word_vocab,
                    config.word_emb_dim,
                    scope,
                    master,
                )?;
                let word_stack = build_stack(
                    reg,
                    &format!("{prefix}.word"),
                    config.word_hidden,
                    2 * config.char_hidden + config.word_emb_dim,
                    scope,
                    master,
                )?;
                let crf = build_crf(
                    reg,
                    &format!("{prefix}.crf"),
                    task.spec.labels.len(),
                    2 * config.word_hidden + task.spec.extra_dim,
                    scope,
                    master,
                )?;
                let enc = Encoder::new(
                    char_table.clone(),
                    char_stack.clone(),
                    word_table,
                    word_stack,
                )?;
                Tagger::new(enc, crf, task.spec.labels.clone(), task.spec.extra_dim)
            };
            let s = build_side(&mut reg, source, Scope::Source)?;
            let t = build_side(&mut reg, target, Scope::Target)?;
            (s, t)
        }
    };

    Ok(JointModel {
        registry: reg,
        source: source_tagger,
        target: target_tagger,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crf::CostSpec;
    use crate::data::{LabelSet, MetricKind, Sentence};
    use std::rc::Rc;

    fn vocab(words: &[&str]) -> Vocabulary {
        Vocabulary::build(words.iter().map(|w| (w.to_string(), 1u64)), 1)
    }

    fn labels(names: &[&str]) -> LabelSet {
        LabelSet::new(names.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn task(name: &str, tags: &[&str], words: &[&str], chars: &[&str]) -> TaskDef {
        TaskDef {
            spec: TaskSpec {
                name: name.to_string(),
                labels: labels(tags),
                metric: MetricKind::Accuracy,
                extra_dim: 0,
            },
            word_vocab: vocab(words),
            char_vocab: vocab(chars),
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            char_emb_dim: 3,
            word_emb_dim: 4,
            char_hidden: 2,
            word_hidden: 3,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn same_language_pair() -> (TaskDef, TaskDef) {
        let words = ["cats", "chase", "dogs", "sleep"];
        let chars = ["a", "c", "d", "e", "g", "h", "l", "o", "p", "s", "t"];
        let src = task("src", &["A", "B"], &words, &chars);
        let tgt = task("tgt", &["A", "B"], &words, &chars);
        (src, tgt)
    }

    #[test]
    fn registry_rejects_duplicate_names() {
        let mut reg = ParameterRegistry::new();
        reg.register("w", Scope::Shared, Tensor::zeros(&[1, 1])).unwrap();
        let err = reg
            .register("w", Scope::Target, Tensor::zeros(&[1, 1]))
            .unwrap_err();
        assert!(err.to_string().contains("registered twice"));
    }

    #[test]
    fn registry_snapshot_restore_round_trips() {
        let mut reg = ParameterRegistry::new();
        let p = reg
            .register("w", Scope::Shared, Tensor::vector(vec![1.0, -2.0]))
            .unwrap();
        let snap = reg.snapshot();
        p.borrow_mut().value.data_mut()[0] = 9.0;
        reg.restore(&snap).unwrap();
        assert_eq!(p.borrow().value.data(), &[1.0, -2.0]);
    }

    #[test]
    fn scope_checksum_reacts_to_value_changes() {
        let mut reg = ParameterRegistry::new();
        let p = reg
            .register("w", Scope::Source, Tensor::vector(vec![1.0]))
            .unwrap();
        reg.register("v", Scope::Target, Tensor::vector(vec![1.0]))
            .unwrap();
        let before = reg.scope_checksum(Scope::Source);
        let target_before = reg.scope_checksum(Scope::Target);
        p.borrow_mut().value.data_mut()[0] = 2.0;
        assert_ne!(before, reg.scope_checksum(Scope::Source));
        assert_eq!(target_before, reg.scope_checksum(Scope::Target));
    }

    #[test]
    fn architecture_kind_parses_and_prints() {
        for (text, kind) in [
            ("T-A", ArchitectureKind::TA),
            ("T-B", ArchitectureKind::TB),
            ("T-C", ArchitectureKind::TC),
        ] {
            assert_eq!(text.parse::<ArchitectureKind>().unwrap(), kind);
            assert_eq!(kind.to_string(), text);
        }
        assert!("T-D".parse::<ArchitectureKind>().is_err());
    }

    #[test]
    fn mapping_parses_comments_header_and_pairs() {
        let m = LabelMapping::parse_str(
            "# genia to ptb\n!direction: target_to_source\nNN-bio\tNN\nVB-bio\tVB\n",
        )
        .unwrap();
        assert_eq!(m.direction(), MappingDirection::TargetToSource);
        assert_eq!(m.len(), 2);
        let mapped = m
            .map_labels(&["NN-bio".into(), "VB-bio".into(), "NN-bio".into()])
            .unwrap();
        assert_eq!(mapped, vec!["NN", "VB", "NN"]);
    }

    #[test]
    fn mapping_defaults_to_source_to_target() {
        let m = LabelMapping::parse_str("X\tNN\nY\tVB\n").unwrap();
        assert_eq!(m.direction(), MappingDirection::SourceToTarget);
        let mapped = m.map_labels(&["X".into(), "Y".into(), "X".into()]).unwrap();
        assert_eq!(mapped, vec!["NN", "VB", "NN"]);
    }

    #[test]
    fn mapping_errors_name_the_offender() {
        let m = LabelMapping::parse_str("X\tNN\n# c\nY\tVB\n").unwrap();
        let err = m.map_labels(&["Z".into()]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'Z'"), "{msg}");
        assert!(msg.contains("3 file lines"), "{msg}");
    }

    #[test]
    fn mapping_rejects_malformed_lines() {
        let err = LabelMapping::parse_str("X NN\n").unwrap_err();
        assert!(err.to_string().contains("line 1"));
        let err = LabelMapping::parse_str("X\tNN\nX\tVB\n").unwrap_err();
        assert!(err.to_string().contains("line 2"));
        let err = LabelMapping::parse_str("X\tNN\n!direction: target_to_source\n").unwrap_err();
        assert!(err.to_string().contains("precede"));
        assert!(LabelMapping::parse_str("# only comments\n").is_err());
    }

    #[test]
    fn mapping_is_idempotent_when_image_maps_to_itself() {
        let m = LabelMapping::parse_str("X\tNN\nNN\tNN\n").unwrap();
        let once = m.map_labels(&["X".into(), "NN".into()]).unwrap();
        let twice = m.map_labels(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn inverse_prefers_smallest_preimage_and_passes_unknowns_through() {
        let m = LabelMapping::parse_str("B\tNN\nA\tNN\nC\tVB\n").unwrap();
        assert_eq!(m.invert_tag("NN"), "A");
        assert_eq!(m.invert_tag("VB"), "C");
        assert_eq!(m.invert_tag("JJ"), "JJ");
    }

    #[test]
    fn single_model_registers_every_tensor_once() {
        let (_, tgt) = same_language_pair();
        let model = build_single_model(&tgt, &tiny_config()).unwrap();
        // 2 tables + 2 stacks of 24 matrices + 3 CRF tensors
        assert_eq!(model.registry.len(), 53);
        assert_eq!(model.registry.names_in_scope(Scope::Shared).len(), 50);
        assert_eq!(model.registry.names_in_scope(Scope::Target).len(), 3);
        assert!(model.registry.get("shared.word_table").is_some());
        assert!(model.registry.get("task.tgt.crf.emission").is_some());
    }

    #[test]
    fn tb_has_one_encoder_and_two_crf_triples() {
        let (src, tgt) = same_language_pair();
        let model = build_joint_model(ArchitectureKind::TB, &src, &tgt, &tiny_config()).unwrap();
        assert_eq!(model.registry.len(), 56);
        assert_eq!(model.registry.shared_parameter_names().len(), 50);
        assert_eq!(model.registry.names_in_scope(Scope::Source).len(), 3);
        assert_eq!(model.registry.names_in_scope(Scope::Target).len(), 3);
        // one encoder: the two views alias the same tensors
        assert!(Rc::ptr_eq(
            &model.source.encoder.word_table.weights,
            &model.target.encoder.word_table.weights
        ));
        assert!(!Rc::ptr_eq(
            &model.source.crf.emission,
            &model.target.crf.emission
        ));
    }

    #[test]
    fn ta_shares_everything_including_the_crf() {
        let (src, tgt) = same_language_pair();
        let model = build_joint_model(ArchitectureKind::TA, &src, &tgt, &tiny_config()).unwrap();
        assert_eq!(model.registry.len(), 53);
        assert_eq!(model.registry.shared_parameter_names().len(), 53);
        assert!(Rc::ptr_eq(
            &model.source.crf.emission,
            &model.target.crf.emission
        ));
        assert!(Rc::ptr_eq(
            &model.source.encoder.char_table.weights,
            &model.target.encoder.char_table.weights
        ));
    }

    #[test]
    fn tc_keeps_word_side_and_crf_per_task() {
        let chars = ["a", "b", "c", "d"];
        let src = task("src", &["A", "B"], &["aa", "bb", "cc"], &chars);
        let tgt = task("tgt", &["A", "B"], &["dd", "ad"], &chars);
        let model = build_joint_model(ArchitectureKind::TC, &src, &tgt, &tiny_config()).unwrap();
        assert_eq!(model.registry.shared_parameter_names().len(), 25);
        assert_eq!(model.registry.names_in_scope(Scope::Source).len(), 28);
        assert_eq!(model.registry.names_in_scope(Scope::Target).len(), 28);
        // one char table object, two word tables of different sizes
        assert!(Rc::ptr_eq(
            &model.source.encoder.char_table.weights,
            &model.target.encoder.char_table.weights
        ));
        assert!(!Rc::ptr_eq(
            &model.source.encoder.word_table.weights,
            &model.target.encoder.word_table.weights
        ));
        assert_eq!(model.source.encoder.word_table.vocab_size(), 5);
        assert_eq!(model.target.encoder.word_table.vocab_size(), 4);
    }

    #[test]
    fn shared_name_sets_are_strictly_nested_across_schemes() {
        let (src, tgt) = same_language_pair();
        let cfg = tiny_config();
        let ta = build_joint_model(ArchitectureKind::TA, &src, &tgt, &cfg).unwrap();
        let tb = build_joint_model(ArchitectureKind::TB, &src, &tgt, &cfg).unwrap();
        let tc = build_joint_model(ArchitectureKind::TC, &src, &tgt, &cfg).unwrap();
        let a: std::collections::BTreeSet<_> =
            ta.registry.shared_parameter_names().into_iter().collect();
        let b: std::collections::BTreeSet<_> =
            tb.registry.shared_parameter_names().into_iter().collect();
        let c: std::collections::BTreeSet<_> =
            tc.registry.shared_parameter_names().into_iter().collect();
        assert!(c.is_subset(&b) && c.len() < b.len());
        assert!(b.is_subset(&a) && b.len() < a.len());
    }

    #[test]
    fn mutation_through_one_view_is_visible_through_the_other() {
        let (src, tgt) = same_language_pair();
        let model = build_joint_model(ArchitectureKind::TB, &src, &tgt, &tiny_config()).unwrap();
        model
            .source
            .encoder
            .word_table
            .weights
            .borrow_mut()
            .value
            .data_mut()[5] = 17.25;
        assert_eq!(
            model.target.encoder.word_table.weights.borrow().value.data()[5],
            17.25
        );
    }

    fn toy_sentence(words: usize, labels: usize) -> Sentence {
        Sentence {
            tokens: (0..3).map(|i| format!("w{i}")).collect(),
            tags: (0..3).map(|i| format!("L{}", i % labels)).collect(),
            word_ids: (0..3).map(|i| i % words).collect(),
            char_ids: vec![vec![1, 2], vec![2], vec![1, 2, 2]],
            tag_ids: (0..3).map(|i| i % labels).collect(),
            extra: None,
        }
    }

    #[test]
    fn source_gradients_never_reach_target_parameters() {
        let (src, tgt) = same_language_pair();
        for kind in [
            ArchitectureKind::TA,
            ArchitectureKind::TB,
            ArchitectureKind::TC,
        ] {
            let model = build_joint_model(kind, &src, &tgt, &tiny_config()).unwrap();
            model.registry.zero_grads();
            let sent = toy_sentence(4, 2);
            model
                .source
                .loss_backward(&sent, CostSpec::hamming(1.0).unwrap(), 1.0)
                .unwrap();
            for name in model.registry.names_in_scope(Scope::Target) {
                let e = model.registry.get(&name).unwrap();
                assert!(
                    e.param.borrow().grad.data().iter().all(|&g| g == 0.0),
                    "{kind}: target parameter {name} received gradient"
                );
            }
            let touched = model
                .registry
                .shared_parameter_names()
                .iter()
                .any(|n| {
                    let e = model.registry.get(n).unwrap();
                    e.param.borrow().grad.data().iter().any(|&g| g != 0.0)
                });
            assert!(touched, "{kind}: no shared parameter received gradient");
        }
    }

    #[test]
    fn ta_with_different_label_sets_points_at_tb() {
        let words = ["cats", "dogs"];
        let chars = ["a", "c", "d", "g", "o", "s", "t"];
        let src = task("src", &["A", "B"], &words, &chars);
        let tgt = task("tgt", &["X", "Y", "Z"], &words, &chars);
        let err = build_joint_model(ArchitectureKind::TA, &src, &tgt, &tiny_config()).unwrap_err();
        assert!(err.to_string().contains("T-B"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn joint_build_rejects_mismatched_shared_vocabularies() {
        let chars = ["a", "b"];
        let src = task("src", &["A"], &["aa"], &chars);
        let tgt = task("tgt", &["A"], &["bb"], &chars);
        let err = build_joint_model(ArchitectureKind::TB, &src, &tgt, &tiny_config()).unwrap_err();
        assert!(err.to_string().contains("word vocabulary"));
        let src2 = task("src", &["A"], &["aa"], &["a"]);
        let tgt2 = task("tgt", &["A"], &["aa"], &["a", "b"]);
        let err2 =
            build_joint_model(ArchitectureKind::TC, &src2, &tgt2, &tiny_config()).unwrap_err();
        assert!(err2.to_string().contains("character vocabulary"));
    }

    #[test]
    fn equal_task_names_are_rejected() {
        let (src, _) = same_language_pair();
        let err =
            build_joint_model(ArchitectureKind::TB, &src, &src.clone(), &tiny_config()).unwrap_err();
        assert!(err.to_string().contains("names must differ"));
    }

    #[test]
    fn initialization_is_a_pure_function_of_seed_and_names() {
        let (_, tgt) = same_language_pair();
        let cfg = tiny_config();
        let a = build_single_model(&tgt, &cfg).unwrap();
        let b = build_single_model(&tgt, &cfg).unwrap();
        for (name, e) in a.registry.iter() {
            let other = b.registry.get(name).unwrap();
            assert_eq!(
                e.param.borrow().value.data(),
                other.param.borrow().value.data(),
                "{name} differs across identical builds"
            );
        }
        let mut cfg2 = cfg.clone();
        cfg2.seed = 12;
        let c = build_single_model(&tgt, &cfg2).unwrap();
        let changed = a.registry.iter().any(|(name, e)| {
            c.registry.get(name).unwrap().param.borrow().value.data()
                != e.param.borrow().value.data()
        });
        assert!(changed, "different seed produced identical parameters");
    }

    #[test]
    fn embedding_rows_follow_the_token_not_the_position() {
        let v1 = Vocabulary::from_items(vec![
            "<pad>".into(),
            "<unk>".into(),
            "alpha".into(),
            "beta".into(),
        ])
        .unwrap();
        let v2 = Vocabulary::from_items(vec![
            "<pad>".into(),
            "<unk>".into(),
            "beta".into(),
            "alpha".into(),
        ])
        .unwrap();
        let t1 = embedding_tensor("shared.word_table", &v1, 4, 7);
        let t2 = embedding_tensor("shared.word_table", &v2, 4, 7);
        assert_eq!(t1.row(2), t2.row(3)); // alpha
        assert_eq!(t1.row(3), t2.row(2)); // beta
        assert!(t1.row(0).iter().all(|&x| x == 0.0));
        let bound = (3.0f64 / 4.0).sqrt();
        assert!(t1.data().iter().all(|&x| x.abs() <= bound));
    }

    #[test]
    fn transitions_and_initial_start_at_zero() {
        let (_, tgt) = same_language_pair();
        let model = build_single_model(&tgt, &tiny_config()).unwrap();
        let trans = model.registry.get("task.tgt.crf.transitions").unwrap();
        let init = model.registry.get("task.tgt.crf.initial").unwrap();
        assert!(trans.param.borrow().value.data().iter().all(|&x| x == 0.0));
        assert!(init.param.borrow().value.data().iter().all(|&x| x == 0.0));
    }
}
