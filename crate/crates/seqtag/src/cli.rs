//! Command-line surface: train, eval, predict, plus the split and
//! subsample corpus utilities. Exit codes: 0 success, 1 runtime
//! failure, 2 configuration error (clap usage errors also exit 2).

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::info;

use crate::checkpoint::{Checkpoint, CheckpointMeta, MappingMeta, TaskMeta};
use crate::data::{
    attach_extra, chunk_f1, count_chars, count_tags, count_words, label_order, numericalize,
    read_conll, read_conll_unlabeled, read_extra_features, split_80_10_10, subsample,
    token_accuracy, write_conll, write_conll_to_path, ColumnSpec, LabelSet, MetricKind,
    RawSentence, Sentence, TaskSpec, Vocabulary,
};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Rng};
use crate::tagger::Tagger;
use crate::training::{train_joint, TaskRuntime, TrainConfig};
use crate::transfer::{
    build_joint_model, build_single_model, ArchitectureKind, JointModel, LabelMapping,
    MappingDirection, ParameterRegistry, SingleModel, TaskDef,
};

#[derive(Parser)]
#[command(
    name = "seqtag",
    version,
    about = "Sequence tagger with a char/word GRU encoder, margin CRF, and joint-training transfer"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a tagger, alone or jointly with a source task
    Train(TrainArgs),
    /// Score a trained model on a labeled file
    Eval(EvalArgs),
    /// Tag a file and write the rows with a predicted-tag column
    Predict(PredictArgs),
    /// Split a corpus 80/10/10 into .train/.dev/.test files
    Split(SplitArgs),
    /// Keep a random fraction of a corpus's sentences
    Subsample(SubsampleArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Sharing architecture: none, T-A, T-B, or T-C
    #[arg(long, default_value = "none")]
    arch: String,
    /// Target task name
    #[arg(long, default_value = "target")]
    task: String,
    /// Source task name
    #[arg(long, default_value = "source")]
    source_task: String,
    /// Target training corpus (CoNLL columns: token ... tag)
    #[arg(long)]
    train: PathBuf,
    /// Target development corpus
    #[arg(long)]
    dev: PathBuf,
    /// Source training corpus (joint architectures)
    #[arg(long)]
    source_train: Option<PathBuf>,
    /// Source development corpus (reported in the log, never used to stop)
    #[arg(long)]
    source_dev: Option<PathBuf>,
    /// Tag mapping file for T-A (`from<TAB>to` lines)
    #[arg(long)]
    label_map: Option<PathBuf>,
    /// Fraction of target training sentences kept
    #[arg(long)]
    labeling_rate: Option<f64>,
    /// Probability that a step trains the source task
    #[arg(long)]
    source_prob: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` configuration file; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pretrained word embeddings (token followed by values per line)
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Base path for target extra-feature files (<base>.train, <base>.dev)
    #[arg(long)]
    extra_features: Option<PathBuf>,
    /// Target metric: accuracy or chunk-f1
    #[arg(long, default_value = "accuracy")]
    metric: String,
    /// Source metric: accuracy or chunk-f1
    #[arg(long, default_value = "accuracy")]
    source_metric: String,
    /// Where to write the trained model
    #[arg(long)]
    checkpoint: PathBuf,
    /// Training log path (default: the checkpoint path + ".log")
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Labeled file to score
    #[arg(long)]
    test: PathBuf,
    /// Task to evaluate (default: the checkpoint's target task)
    #[arg(long)]
    task: Option<String>,
    /// Extra-feature file matching the test file
    #[arg(long)]
    extra_features: Option<PathBuf>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// File to tag; existing columns are preserved
    #[arg(long)]
    test: PathBuf,
    /// Task whose tagset to predict (default: the checkpoint's target task)
    #[arg(long)]
    task: Option<String>,
    /// Extra-feature file matching the input file
    #[arg(long)]
    extra_features: Option<PathBuf>,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SplitArgs {
    /// Corpus to split
    input: PathBuf,
    /// Output prefix; writes <prefix>.train, <prefix>.dev, <prefix>.test
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args)]
struct SubsampleArgs {
    /// Corpus to sample from
    input: PathBuf,
    /// Fraction of sentences to keep, in (0, 1]
    #[arg(long)]
    rate: f64,
    /// Output path (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

/// Parses argv, runs the requested command, and returns the exit code.
pub fn run() -> i32 {
    init_logging();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn init_logging() {
    let level = std::env::var("SEQTAG_LOG_LEVEL").unwrap_or_else(|_| "error".to_string());
    let filter = match level.as_str() {
        "error" => log::LevelFilter::Error,
        "info" => log::LevelFilter::Info,
        "debug" => log::LevelFilter::Debug,
        other => {
            eprintln!("warning: unknown SEQTAG_LOG_LEVEL '{other}', using error");
            log::LevelFilter::Error
        }
    };
    let _ = env_logger::Builder::new()
        .filter_level(filter)
        .format_timestamp(None)
        .try_init();
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::Predict(args) => cmd_predict(&args),
        Command::Split(args) => cmd_split(&args),
        Command::Subsample(args) => cmd_subsample(&args),
    }
}

// ---------------------------------------------------------------------------
// train

fn parse_arch(s: &str) -> Result<Option<ArchitectureKind>> {
    if s == "none" {
        return Ok(None);
    }
    s.parse::<ArchitectureKind>().map(Some)
}

fn parse_metric(s: &str) -> Result<MetricKind> {
    match s {
        "accuracy" => Ok(MetricKind::Accuracy),
        "chunk-f1" => Ok(MetricKind::ChunkF1),
        other => Err(Error::config(format!(
            "unknown metric '{other}'; expected accuracy or chunk-f1"
        ))),
    }
}

fn metric_name(m: MetricKind) -> &'static str {
    match m {
        MetricKind::Accuracy => "accuracy",
        MetricKind::ChunkF1 => "chunk-f1",
    }
}

fn merge_counts(mut a: BTreeMap<String, u64>, b: BTreeMap<String, u64>) -> BTreeMap<String, u64> {
    for (k, v) in b {
        *a.entry(k).or_insert(0) += v;
    }
    a
}

fn map_corpus_tags(mapping: &LabelMapping, sentences: &mut [RawSentence]) -> Result<()> {
    for s in sentences {
        s.tags = mapping.map_labels(&s.tags)?;
    }
    Ok(())
}

fn numericalize_all(
    raws: &[RawSentence],
    words: &Vocabulary,
    chars: &Vocabulary,
    labels: &LabelSet,
    lowercase: bool,
) -> Result<Vec<Sentence>> {
    raws.iter()
        .map(|r| numericalize(r, words, chars, labels, lowercase))
        .collect()
}

/// Either model shape behind one face for the command pipeline.
enum BuiltModel {
    Single(SingleModel),
    Joint(JointModel),
}

impl BuiltModel {
    fn registry(&self) -> &ParameterRegistry {
        match self {
            BuiltModel::Single(m) => &m.registry,
            BuiltModel::Joint(m) => &m.registry,
        }
    }

    fn target(&self) -> &Tagger {
        match self {
            BuiltModel::Single(m) => &m.tagger,
            BuiltModel::Joint(m) => &m.target,
        }
    }

    fn source(&self) -> Option<&Tagger> {
        match self {
            BuiltModel::Single(_) => None,
            BuiltModel::Joint(m) => Some(&m.source),
        }
    }
}

fn default_log_path(checkpoint: &Path) -> PathBuf {
    PathBuf::from(format!("{}.log", checkpoint.display()))
}

fn with_suffix(base: &Path, suffix: &str) -> PathBuf {
    PathBuf::from(format!("{}.{suffix}", base.display()))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let arch = parse_arch(&args.arch)?;
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)?;
        config.apply_file_text(&text)?;
    }
    if let Some(v) = args.labeling_rate {
        config.labeling_rate = v;
    }
    if let Some(v) = args.source_prob {
        config.source_prob = v;
    }
    if let Some(v) = args.seed {
        config.seed = v;
    }
    config.validate()?;
    let target_metric = parse_metric(&args.metric)?;
    let source_metric = parse_metric(&args.source_metric)?;

    let mapping = args
        .label_map
        .as_ref()
        .map(|p| LabelMapping::parse_file(p))
        .transpose()?;
    if mapping.is_some() && arch != Some(ArchitectureKind::TA) {
        return Err(Error::config(
            "--label-map only makes sense with --arch T-A; the other architectures keep per-task label spaces",
        ));
    }

    let cols = ColumnSpec::default();
    let mut target_train_raw = read_conll(&args.train, cols)?;
    let mut target_dev_raw = read_conll(&args.dev, cols)?;
    if config.labeling_rate < 1.0 {
        let mut rng = Rng::new(derive_seed(config.seed, "subsample.target"));
        let before = target_train_raw.len();
        target_train_raw = subsample(&target_train_raw, config.labeling_rate, &mut rng)?;
        info!(
            "kept {} of {before} target training sentences (rate {})",
            target_train_raw.len(),
            config.labeling_rate
        );
    }

    let (mut source_train_raw, mut source_dev_raw) = match arch {
        Some(kind) => {
            let st = args.source_train.as_ref().ok_or_else(|| {
                Error::config(format!("--source-train is required with --arch {kind}"))
            })?;
            let train = read_conll(st, cols)?;
            let dev = match &args.source_dev {
                Some(p) => read_conll(p, cols)?,
                None => Vec::new(),
            };
            (train, dev)
        }
        None => (Vec::new(), Vec::new()),
    };

    if let Some(m) = &mapping {
        match m.direction() {
            MappingDirection::SourceToTarget => {
                map_corpus_tags(m, &mut source_train_raw)?;
                map_corpus_tags(m, &mut source_dev_raw)?;
            }
            MappingDirection::TargetToSource => {
                map_corpus_tags(m, &mut target_train_raw)?;
                map_corpus_tags(m, &mut target_dev_raw)?;
            }
        }
    }

    // label spaces
    let target_tag_counts = count_tags(target_train_raw.iter().chain(&target_dev_raw));
    let source_tag_counts = count_tags(source_train_raw.iter().chain(&source_dev_raw));
    let (target_labels, source_labels) = if arch == Some(ArchitectureKind::TA) {
        let src_set: BTreeSet<&String> = source_tag_counts.keys().collect();
        let tgt_set: BTreeSet<&String> = target_tag_counts.keys().collect();
        if mapping.is_none() && src_set != tgt_set {
            let only_src: Vec<&str> = src_set.difference(&tgt_set).map(|s| s.as_str()).collect();
            let only_tgt: Vec<&str> = tgt_set.difference(&src_set).map(|s| s.as_str()).collect();
            return Err(Error::config(format!(
                "T-A shares one label space but the tagsets differ (only in source: [{}]; only in target: [{}]); pass --label-map or use T-B",
                only_src.join(", "),
                only_tgt.join(", ")
            )));
        }
        let merged = merge_counts(target_tag_counts.clone(), source_tag_counts.clone());
        let shared = LabelSet::new(label_order(&merged))?;
        (shared.clone(), Some(shared))
    } else {
        let target = LabelSet::new(label_order(&target_tag_counts))?;
        let source = if arch.is_some() {
            Some(LabelSet::new(label_order(&source_tag_counts))?)
        } else {
            None
        };
        (target, source)
    };

    // vocabularies: characters are always pooled; words are pooled unless T-C
    let char_counts = merge_counts(
        count_chars(&target_train_raw),
        count_chars(&source_train_raw),
    );
    let char_vocab = Vocabulary::build(char_counts, 1);
    let target_word_counts = count_words(&target_train_raw, config.lowercase_words);
    let source_word_counts = count_words(&source_train_raw, config.lowercase_words);
    let (target_word_vocab, source_word_vocab) = match arch {
        Some(ArchitectureKind::TC) => (
            Vocabulary::build(target_word_counts, config.min_count),
            Some(Vocabulary::build(source_word_counts, config.min_count)),
        ),
        Some(_) => {
            let shared = Vocabulary::build(
                merge_counts(target_word_counts, source_word_counts),
                config.min_count,
            );
            (shared.clone(), Some(shared))
        }
        None => (
            Vocabulary::build(target_word_counts, config.min_count),
            None,
        ),
    };

    // numericalize; extra features attach to the target task only
    let mut target_train = numericalize_all(
        &target_train_raw,
        &target_word_vocab,
        &char_vocab,
        &target_labels,
        config.lowercase_words,
    )?;
    let mut target_dev = numericalize_all(
        &target_dev_raw,
        &target_word_vocab,
        &char_vocab,
        &target_labels,
        config.lowercase_words,
    )?;
    let extra_dim = match &args.extra_features {
        Some(base) => {
            let train_feats = read_extra_features(&with_suffix(base, "train"))?;
            let dev_feats = read_extra_features(&with_suffix(base, "dev"))?;
            let d_train = attach_extra(&mut target_train, train_feats)?;
            let d_dev = attach_extra(&mut target_dev, dev_feats)?;
            if d_train != d_dev {
                return Err(Error::config(format!(
                    "extra features are {d_train}-dimensional in <base>.train but {d_dev}-dimensional in <base>.dev"
                )));
            }
            d_train
        }
        None => 0,
    };

    let target_def = TaskDef {
        spec: TaskSpec {
            name: args.task.clone(),
            labels: target_labels,
            metric: target_metric,
            extra_dim,
        },
        word_vocab: target_word_vocab,
        char_vocab: char_vocab.clone(),
    };

    let (model, source_def, source_train, source_dev);
    match arch {
        None => {
            model = BuiltModel::Single(build_single_model(&target_def, &config)?);
            source_def = None;
            source_train = Vec::new();
            source_dev = Vec::new();
        }
        Some(kind) => {
            let labels = source_labels.expect("joint arch always builds source labels");
            let word_vocab = source_word_vocab.expect("joint arch always builds a source vocab");
            let def = TaskDef {
                spec: TaskSpec {
                    name: args.source_task.clone(),
                    labels,
                    metric: source_metric,
                    extra_dim: 0,
                },
                word_vocab,
                char_vocab: char_vocab.clone(),
            };
            source_train = numericalize_all(
                &source_train_raw,
                &def.word_vocab,
                &def.char_vocab,
                &def.spec.labels,
                config.lowercase_words,
            )?;
            source_dev = numericalize_all(
                &source_dev_raw,
                &def.word_vocab,
                &def.char_vocab,
                &def.spec.labels,
                config.lowercase_words,
            )?;
            model = BuiltModel::Joint(build_joint_model(kind, &def, &target_def, &config)?);
            source_def = Some(def);
        }
    }

    if let Some(path) = &args.embeddings {
        let (table_name, vocab) = match arch {
            Some(ArchitectureKind::TC) => (
                format!("task.{}.word_table", target_def.spec.name),
                &target_def.word_vocab,
            ),
            _ => ("shared.word_table".to_string(), &target_def.word_vocab),
        };
        let entry = model
            .registry()
            .get(&table_name)
            .expect("the builders always register the word table");
        let report = apply_embeddings_logged(path, vocab, entry)?;
        info!(
            "embeddings: {} of {} vocabulary rows initialized from {}",
            report.0,
            report.1,
            path.display()
        );
    }

    let target_rt = TaskRuntime {
        name: &target_def.spec.name,
        tagger: model.target(),
        train: &target_train,
        dev: &target_dev,
        metric: target_metric,
    };
    let source_rt = source_def.as_ref().map(|def| TaskRuntime {
        name: &def.spec.name,
        tagger: model.source().expect("joint model has a source view"),
        train: &source_train,
        dev: &source_dev,
        metric: source_metric,
    });
    let report = train_joint(model.registry(), source_rt.as_ref(), &target_rt, &config)?;

    let meta = CheckpointMeta {
        config: config.clone(),
        architecture: match arch {
            None => "none".to_string(),
            Some(kind) => kind.to_string(),
        },
        source: source_def.as_ref().map(|def| TaskMeta {
            name: def.spec.name.clone(),
            labels: def.spec.labels.labels().to_vec(),
            metric: def.spec.metric,
            extra_dim: def.spec.extra_dim,
            word_vocab: match arch {
                Some(ArchitectureKind::TC) => Some(def.word_vocab.items().to_vec()),
                _ => None,
            },
        }),
        target: TaskMeta {
            name: target_def.spec.name.clone(),
            labels: target_def.spec.labels.labels().to_vec(),
            metric: target_metric,
            extra_dim,
            word_vocab: match arch {
                Some(ArchitectureKind::TC) => Some(target_def.word_vocab.items().to_vec()),
                _ => None,
            },
        },
        char_vocab: char_vocab.items().to_vec(),
        shared_word_vocab: match arch {
            Some(ArchitectureKind::TC) => None,
            _ => Some(target_def.word_vocab.items().to_vec()),
        },
        mapping: mapping.as_ref().map(|m| MappingMeta {
            direction: m.direction().as_str().to_string(),
            pairs: m.pairs().map(|(f, t)| (f.clone(), t.clone())).collect(),
            file_lines: m.file_lines(),
        }),
    };
    Checkpoint::from_registry(meta, model.registry()).write_to(&args.checkpoint)?;
    let log_path = args
        .out
        .clone()
        .unwrap_or_else(|| default_log_path(&args.checkpoint));
    std::fs::write(&log_path, report.log.as_bytes())?;

    println!("best_dev\t{:.6}", report.best_metric);
    println!("best_step\t{}", report.best_step);
    println!("steps\t{}", report.steps_run);
    Ok(())
}

fn apply_embeddings_logged(
    path: &Path,
    vocab: &Vocabulary,
    entry: &crate::transfer::RegistryEntry,
) -> Result<(usize, usize)> {
    let table = &mut entry.param.borrow_mut().value;
    let report = crate::data::apply_embeddings(path, vocab, table)?;
    Ok((report.found, report.vocab_words))
}

// ---------------------------------------------------------------------------
// checkpoint loading shared by eval and predict

struct LoadedModel {
    meta: CheckpointMeta,
    model: BuiltModel,
    mapping: Option<LabelMapping>,
    target_def: TaskDef,
    source_def: Option<TaskDef>,
}

fn load_model(path: &Path) -> Result<LoadedModel> {
    let ckpt = Checkpoint::read_from(path)?;
    let meta = ckpt.meta.clone();
    meta.config.validate()?;
    let char_vocab = Vocabulary::from_items(meta.char_vocab.clone())?;
    let shared_vocab = meta
        .shared_word_vocab
        .as_ref()
        .map(|items| Vocabulary::from_items(items.clone()))
        .transpose()?;
    let task_def = |tm: &TaskMeta| -> Result<TaskDef> {
        let word_vocab = match (&tm.word_vocab, &shared_vocab) {
            (Some(items), _) => Vocabulary::from_items(items.clone())?,
            (None, Some(v)) => v.clone(),
            (None, None) => {
                return Err(Error::Checkpoint(format!(
                    "checkpoint carries no word vocabulary for task '{}'",
                    tm.name
                )))
            }
        };
        Ok(TaskDef {
            spec: TaskSpec {
                name: tm.name.clone(),
                labels: LabelSet::new(tm.labels.clone())?,
                metric: tm.metric,
                extra_dim: tm.extra_dim,
            },
            word_vocab,
            char_vocab: char_vocab.clone(),
        })
    };

    let target_def = task_def(&meta.target)?;
    let (model, source_def) = match meta.architecture.as_str() {
        "none" => (
            BuiltModel::Single(build_single_model(&target_def, &meta.config)?),
            None,
        ),
        other => {
            let kind: ArchitectureKind = other.parse().map_err(|_| {
                Error::Checkpoint(format!("checkpoint names unknown architecture '{other}'"))
            })?;
            let source_meta = meta.source.as_ref().ok_or_else(|| {
                Error::Checkpoint("joint checkpoint is missing its source task".to_string())
            })?;
            let source_def = task_def(source_meta)?;
            (
                BuiltModel::Joint(build_joint_model(
                    kind,
                    &source_def,
                    &target_def,
                    &meta.config,
                )?),
                Some(source_def),
            )
        }
    };
    ckpt.restore_into(model.registry())?;

    let mapping = meta
        .mapping
        .as_ref()
        .map(|m| {
            let direction: MappingDirection = m.direction.parse()?;
            LabelMapping::from_pairs(m.pairs.clone(), direction)
        })
        .transpose()?;

    Ok(LoadedModel {
        meta,
        model,
        mapping,
        target_def,
        source_def,
    })
}

struct TaskView<'a> {
    def: &'a TaskDef,
    tagger: &'a Tagger,
    /// True when this task's corpus tags were rewritten by the mapping
    /// at training time, so its native tagset differs from the model's.
    mapped_side: bool,
}

fn select_task<'a>(loaded: &'a LoadedModel, requested: Option<&str>) -> Result<TaskView<'a>> {
    let target_name = &loaded.target_def.spec.name;
    let source_name = loaded.source_def.as_ref().map(|d| d.spec.name.as_str());
    let name = requested.unwrap_or(target_name);
    let (def, tagger, is_source) = if name == target_name {
        (&loaded.target_def, loaded.model.target(), false)
    } else if Some(name) == source_name {
        (
            loaded
                .source_def
                .as_ref()
                .expect("source name implies a source def"),
            loaded.model.source().expect("source name implies a view"),
            true,
        )
    } else {
        let mut known = vec![target_name.as_str()];
        known.extend(source_name);
        return Err(Error::config(format!(
            "task '{name}' is not in this checkpoint (tasks: {})",
            known.join(", ")
        )));
    };
    let mapped_side = match &loaded.mapping {
        None => false,
        Some(m) => match m.direction() {
            MappingDirection::SourceToTarget => is_source,
            MappingDirection::TargetToSource => !is_source,
        },
    };
    Ok(TaskView {
        def,
        tagger,
        mapped_side,
    })
}

fn prepare_inputs(
    raws: &[RawSentence],
    view: &TaskView,
    config: &TrainConfig,
    extra_path: Option<&Path>,
) -> Result<Vec<Sentence>> {
    let expected = view.def.spec.extra_dim;
    if expected > 0 && extra_path.is_none() {
        return Err(Error::config(format!(
            "the model expects {expected}-dimensional extra features; pass --extra-features"
        )));
    }
    if expected == 0 && extra_path.is_some() {
        return Err(Error::config(
            "the model was trained without extra features; drop --extra-features",
        ));
    }
    let mut sentences: Vec<Sentence> = raws
        .iter()
        .map(|r| {
            let stripped = RawSentence {
                rows: Vec::new(),
                tokens: r.tokens.clone(),
                tags: Vec::new(),
            };
            numericalize(
                &stripped,
                &view.def.word_vocab,
                &view.def.char_vocab,
                &view.def.spec.labels,
                config.lowercase_words,
            )
        })
        .collect::<Result<_>>()?;
    if let Some(path) = extra_path {
        let feats = read_extra_features(path)?;
        let d = attach_extra(&mut sentences, feats)?;
        if d != expected {
            return Err(Error::config(format!(
                "extra features are {d}-dimensional but the model expects {expected}"
            )));
        }
    }
    Ok(sentences)
}

// ---------------------------------------------------------------------------
// eval

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let loaded = load_model(&args.checkpoint)?;
    let view = select_task(&loaded, args.task.as_deref())?;
    let raw = read_conll(&args.test, ColumnSpec::default())?;
    if raw.is_empty() {
        return Err(Error::domain(format!(
            "no sentences in {}",
            args.test.display()
        )));
    }
    // score in the model's label space: a mapped task's gold tags are
    // rewritten exactly as they were at training time
    let gold: Vec<Vec<String>> = raw
        .iter()
        .map(|s| match (&loaded.mapping, view.mapped_side) {
            (Some(m), true) => m.map_labels(&s.tags),
            _ => Ok(s.tags.clone()),
        })
        .collect::<Result<_>>()?;
    let sentences = prepare_inputs(&raw, &view, &loaded.meta.config, args.extra_features.as_deref())?;
    let mut preds = Vec::with_capacity(sentences.len());
    for s in &sentences {
        preds.push(view.tagger.decode(s)?);
    }
    let name = metric_name(view.def.spec.metric);
    match view.def.spec.metric {
        MetricKind::Accuracy => {
            println!("{name}\t{:.6}", token_accuracy(&gold, &preds)?);
        }
        MetricKind::ChunkF1 => {
            let score = chunk_f1(&gold, &preds)?;
            println!("{name}\t{:.6}", score.f1);
            println!("precision\t{:.6}", score.precision);
            println!("recall\t{:.6}", score.recall);
            for (ty, c) in &score.per_type {
                println!(
                    "type\t{ty}\t{:.6}\t{:.6}\t{:.6}",
                    c.precision(),
                    c.recall(),
                    c.f1()
                );
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// predict

fn cmd_predict(args: &PredictArgs) -> Result<()> {
    let loaded = load_model(&args.checkpoint)?;
    let view = select_task(&loaded, args.task.as_deref())?;
    let raw = read_conll_unlabeled(&args.test, 0)?;
    let sentences = prepare_inputs(&raw, &view, &loaded.meta.config, args.extra_features.as_deref())?;
    let mut tagged = Vec::with_capacity(raw.len());
    for (r, s) in raw.iter().zip(&sentences) {
        let mut tags = view.tagger.decode(s)?;
        if view.mapped_side {
            let m = loaded.mapping.as_ref().expect("mapped side implies a mapping");
            tags = tags.iter().map(|t| m.invert_tag(t)).collect();
        }
        let rows: Vec<Vec<String>> = r
            .rows
            .iter()
            .zip(&tags)
            .map(|(row, tag)| {
                let mut row = row.clone();
                row.push(tag.clone());
                row
            })
            .collect();
        tagged.push(RawSentence {
            rows,
            tokens: r.tokens.clone(),
            tags,
        });
    }
    match &args.out {
        Some(path) => write_conll_to_path(&tagged, path)?,
        None => {
            let stdout = std::io::stdout();
            write_conll(&tagged, &mut stdout.lock())?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// split and subsample

fn cmd_split(args: &SplitArgs) -> Result<()> {
    let raw = read_conll(&args.input, ColumnSpec::default())?;
    let mut rng = Rng::new(derive_seed(args.seed, "split"));
    let (train, dev, test) = split_80_10_10(&raw, &mut rng);
    write_conll_to_path(&train, &with_suffix(&args.out, "train"))?;
    write_conll_to_path(&dev, &with_suffix(&args.out, "dev"))?;
    write_conll_to_path(&test, &with_suffix(&args.out, "test"))?;
    println!("train\t{}", train.len());
    println!("dev\t{}", dev.len());
    println!("test\t{}", test.len());
    Ok(())
}

fn cmd_subsample(args: &SubsampleArgs) -> Result<()> {
    let raw = read_conll(&args.input, ColumnSpec::default())?;
    let mut rng = Rng::new(derive_seed(args.seed, "subsample"));
    let kept = subsample(&raw, args.rate, &mut rng)?;
    match &args.out {
        Some(path) => write_conll_to_path(&kept, path)?,
        None => {
            let stdout = std::io::stdout();
            write_conll(&kept, &mut stdout.lock())?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arch_flag_accepts_none_and_the_three_schemes() {
        assert_eq!(parse_arch("none").unwrap(), None);
        assert_eq!(parse_arch("T-A").unwrap(), Some(ArchitectureKind::TA));
        assert_eq!(parse_arch("t-b").unwrap(), Some(ArchitectureKind::TB));
        assert_eq!(parse_arch("T-C").unwrap(), Some(ArchitectureKind::TC));
        let err = parse_arch("T-D").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn metric_flag_parses_both_kinds() {
        assert_eq!(parse_metric("accuracy").unwrap(), MetricKind::Accuracy);
        assert_eq!(parse_metric("chunk-f1").unwrap(), MetricKind::ChunkF1);
        assert_eq!(parse_metric("f1").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn default_log_path_appends_dot_log() {
        assert_eq!(
            default_log_path(Path::new("runs/model.ckpt")),
            PathBuf::from("runs/model.ckpt.log")
        );
    }

    #[test]
    fn cli_declaration_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
