//! Joint training: binomial task sampling, epoch-shuffled batches,
//! AdaGrad updates over the active task's parameter scopes, and early
//! stopping driven solely by the target task's dev metric.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::crf::CostSpec;
use crate::data::{chunk_f1, token_accuracy, ChunkScore, MetricKind, Sentence};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, Rng, Tensor};
use crate::tagger::Tagger;
use crate::transfer::{ParameterRegistry, Scope, Snapshot};

pub const ADAGRAD_EPSILON: f64 = 1e-8;
const EMA_DECAY: f64 = 0.95;

// ---------------------------------------------------------------------------
// Configuration

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub char_emb_dim: usize,
    pub word_emb_dim: usize,
    pub char_hidden: usize,
    pub word_hidden: usize,
    pub learning_rate: f64,
    /// Probability that one step trains the source task.
    pub source_prob: f64,
    pub batch_size: usize,
    /// Weight of the Hamming cost inside the margin loss.
    pub cost_weight: f64,
    pub max_steps: usize,
    /// Evaluations without target-dev improvement before stopping.
    pub patience: usize,
    /// Steps between target-dev evaluations.
    pub eval_interval: usize,
    pub seed: u64,
    /// Fraction of target training sentences kept.
    pub labeling_rate: f64,
    pub fine_tune_embeddings: bool,
    /// Minimum corpus count for a word to enter the vocabulary.
    pub min_count: u64,
    /// Lowercase tokens for word lookups (characters keep their case).
    pub lowercase_words: bool,
    /// Global gradient-norm cap; unset means no clipping.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            char_emb_dim: 25,
            word_emb_dim: 50,
            char_hidden: 80,
            word_hidden: 300,
            learning_rate: 0.01,
            source_prob: 0.5,
            batch_size: 16,
            cost_weight: 1.0,
            max_steps: 5000,
            patience: 10,
            eval_interval: 100,
            seed: 42,
            labeling_rate: 1.0,
            fine_tune_embeddings: true,
            min_count: 1,
            lowercase_words: true,
            clip_norm: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("char_emb_dim", self.char_emb_dim),
            ("word_emb_dim", self.word_emb_dim),
            ("char_hidden", self.char_hidden),
            ("word_hidden", self.word_hidden),
            ("batch_size", self.batch_size),
            ("max_steps", self.max_steps),
            ("patience", self.patience),
            ("eval_interval", self.eval_interval),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(Error::config(format!("{name} must be at least 1")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("learning_rate must be a positive number"));
        }
        if !(0.0..=1.0).contains(&self.source_prob) {
            return Err(Error::config("source_prob must lie in [0, 1]"));
        }
        if !(self.cost_weight.is_finite() && self.cost_weight >= 0.0) {
            return Err(Error::config("cost_weight must be a nonnegative number"));
        }
        if !(self.labeling_rate > 0.0 && self.labeling_rate <= 1.0) {
            return Err(Error::config("labeling_rate must lie in (0, 1]"));
        }
        if self.min_count == 0 {
            return Err(Error::config("min_count must be at least 1"));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::config("clip_norm must be a positive number"));
            }
        }
        Ok(())
    }

    /// Applies one `key = value` setting.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse::<T>()
                .map_err(|_| Error::config(format!("bad value '{value}' for {key}")))
        }
        match key {
            "char_emb_dim" => self.char_emb_dim = num(key, value)?,
            "word_emb_dim" => self.word_emb_dim = num(key, value)?,
            "char_hidden" => self.char_hidden = num(key, value)?,
            "word_hidden" => self.word_hidden = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "source_prob" => self.source_prob = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "cost_weight" => self.cost_weight = num(key, value)?,
            "max_steps" => self.max_steps = num(key, value)?,
            "patience" => self.patience = num(key, value)?,
            "eval_interval" => self.eval_interval = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "labeling_rate" => self.labeling_rate = num(key, value)?,
            "fine_tune_embeddings" => self.fine_tune_embeddings = num(key, value)?,
            "min_count" => self.min_count = num(key, value)?,
            "lowercase_words" => self.lowercase_words = num(key, value)?,
            "clip_norm" => {
                self.clip_norm = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            other => return Err(Error::config(format!("unknown configuration key '{other}'"))),
        }
        Ok(())
    }

    /// Parses flat `key = value` text: one setting per line, `#` comments
    /// and blank lines ignored.
    pub fn apply_file_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::parse(idx + 1, format!("expected 'key = value', got '{raw}'"))
            })?;
            self.apply_kv(key.trim(), value.trim())
                .map_err(|e| Error::parse(idx + 1, e.to_string()))?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// AdaGrad

/// Accumulated squared gradients, one tensor per parameter name.
#[derive(Default)]
pub struct AdaGradState {
    accums: BTreeMap<String, Tensor>,
}

impl AdaGradState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&mut self, name: &str, value: &mut Tensor, grad: &Tensor, lr: f64) -> Result<()> {
        let accum = self
            .accums
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(value.shape()));
        adagrad_step(value, grad, accum, lr)
    }
}

/// G += g⊙g; θ −= η · g / (√G + ε), elementwise.
pub fn adagrad_step(value: &mut Tensor, grad: &Tensor, accum: &mut Tensor, lr: f64) -> Result<()> {
    if value.shape() != grad.shape() {
        return Err(Error::shape("adagrad gradient", value.shape(), grad.shape()));
    }
    if value.shape() != accum.shape() {
        return Err(Error::shape(
            "adagrad accumulator",
            value.shape(),
            accum.shape(),
        ));
    }
    let v = value.data_mut();
    let g = grad.data();
    let a = accum.data_mut();
    for i in 0..v.len() {
        a[i] += g[i] * g[i];
        v[i] -= lr * g[i] / (a[i].sqrt() + ADAGRAD_EPSILON);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Task sampling and batching

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskChoice {
    Source,
    Target,
}

/// Bernoulli draw: source with probability `p_s`.
pub fn sample_task(rng: &mut Rng, p_s: f64) -> TaskChoice {
    if rng.next_f64() < p_s {
        TaskChoice::Source
    } else {
        TaskChoice::Target
    }
}

/// Without-replacement batches over a shuffled epoch order; the last
/// batch of an epoch may be short, then the order is reshuffled.
pub struct Batcher {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: Rng,
}

impl Batcher {
    pub fn new(n: usize, batch_size: usize, mut rng: Rng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        rng.shuffle(&mut order);
        Batcher {
            order,
            pos: 0,
            batch_size,
            rng,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.pos >= self.order.len() {
            self.rng.shuffle(&mut self.order);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

// ---------------------------------------------------------------------------
// Evaluation

pub struct EvalReport {
    pub value: f64,
    pub predictions: Vec<Vec<String>>,
    /// Full span-level breakdown when the metric is chunk F1.
    pub chunks: Option<ChunkScore>,
}

/// Viterbi-decodes every sentence and scores against gold tags.
pub fn evaluate(tagger: &Tagger, data: &[Sentence], metric: MetricKind) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::domain("evaluation data is empty"));
    }
    let mut gold = Vec::with_capacity(data.len());
    let mut preds = Vec::with_capacity(data.len());
    for sent in data {
        gold.push(sent.tags.clone());
        preds.push(tagger.decode(sent)?);
    }
    match metric {
        MetricKind::Accuracy => Ok(EvalReport {
            value: token_accuracy(&gold, &preds)?,
            predictions: preds,
            chunks: None,
        }),
        MetricKind::ChunkF1 => {
            let score = chunk_f1(&gold, &preds)?;
            Ok(EvalReport {
                value: score.f1,
                predictions: preds,
                chunks: Some(score),
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Joint training

/// One task's view plus its data, borrowed for the duration of training.
pub struct TaskRuntime<'a> {
    pub name: &'a str,
    pub tagger: &'a Tagger,
    pub train: &'a [Sentence],
    pub dev: &'a [Sentence],
    pub metric: MetricKind,
}

#[derive(Debug)]
pub struct TrainReport {
    pub best_metric: f64,
    pub best_step: usize,
    pub steps_run: usize,
    pub evaluations: usize,
    /// One tab-separated line per evaluation:
    /// step, source:target sample counts, loss EMA, target dev, source dev.
    pub log: String,
}

/// Alternates steps between the two tasks by Bernoulli draws, updates the
/// shared scope plus the drawn task's scope, and restores the parameters
/// of the best target-dev evaluation before returning.
pub fn train_joint(
    registry: &ParameterRegistry,
    source: Option<&TaskRuntime>,
    target: &TaskRuntime,
    config: &TrainConfig,
) -> Result<TrainReport> {
    config.validate()?;
    if target.train.is_empty() {
        return Err(Error::domain("target training set is empty"));
    }
    if target.dev.is_empty() {
        return Err(Error::domain(
            "target dev set is empty; early stopping needs one",
        ));
    }
    if let Some(s) = source {
        if s.train.is_empty() {
            return Err(Error::domain("source training set is empty"));
        }
    }

    let p_s = if source.is_some() {
        config.source_prob
    } else {
        0.0
    };
    let cost = CostSpec::hamming(config.cost_weight)?;
    let mut sampler = Rng::new(derive_seed(config.seed, "task_sampler"));
    let mut target_batches = Batcher::new(
        target.train.len(),
        config.batch_size,
        Rng::new(derive_seed(config.seed, "batch.target")),
    );
    let mut source_batches = source.map(|s| {
        Batcher::new(
            s.train.len(),
            config.batch_size,
            Rng::new(derive_seed(config.seed, "batch.source")),
        )
    });

    let mut adagrad = AdaGradState::new();
    let mut ema: Option<f64> = None;
    let mut counts = (0usize, 0usize);
    let mut best: Option<(f64, usize, Snapshot)> = None;
    let mut evals_since_best = 0usize;
    let mut evaluations = 0usize;
    let mut log = String::new();
    let mut steps_run = 0usize;

    for step in 1..=config.max_steps {
        steps_run = step;
        let choice = sample_task(&mut sampler, p_s);
        let runtime = match choice {
            TaskChoice::Source => source.expect("sampler picked source without a source task"),
            TaskChoice::Target => target,
        };
        let batch = match choice {
            TaskChoice::Source => source_batches
                .as_mut()
                .expect("sampler picked source without a source task")
                .next_batch(),
            TaskChoice::Target => target_batches.next_batch(),
        };
        match choice {
            TaskChoice::Source => counts.0 += 1,
            TaskChoice::Target => counts.1 += 1,
        }

        registry.zero_grads();
        let scale = 1.0 / batch.len() as f64;
        let mut batch_loss = 0.0;
        for &i in &batch {
            batch_loss += runtime.tagger.loss_backward(&runtime.train[i], cost, scale)?;
        }
        let mean_loss = batch_loss * scale;
        if !mean_loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                task: runtime.name.to_string(),
            });
        }
        ema = Some(match ema {
            None => mean_loss,
            Some(e) => EMA_DECAY * e + (1.0 - EMA_DECAY) * mean_loss,
        });

        if let Some(cap) = config.clip_norm {
            clip_global_norm(registry, cap);
        }

        let active = match choice {
            TaskChoice::Source => Scope::Source,
            TaskChoice::Target => Scope::Target,
        };
        let inactive = match choice {
            TaskChoice::Source => Scope::Target,
            TaskChoice::Target => Scope::Source,
        };
        let inactive_before = if cfg!(debug_assertions) {
            Some(registry.scope_checksum(inactive))
        } else {
            None
        };

        for (name, entry) in registry.iter() {
            if entry.scope != Scope::Shared && entry.scope != active {
                continue;
            }
            if !config.fine_tune_embeddings && name.ends_with("word_table") {
                continue;
            }
            let pair = &mut *entry.param.borrow_mut();
            adagrad.step(name, &mut pair.value, &pair.grad, config.learning_rate)?;
        }

        if let Some(before) = inactive_before {
            debug_assert_eq!(
                before,
                registry.scope_checksum(inactive),
                "step {step} leaked an update into the inactive task's parameters"
            );
        }

        if step % config.eval_interval == 0 || step == config.max_steps {
            evaluations += 1;
            let target_metric = evaluate(target.tagger, target.dev, target.metric)?.value;
            let source_metric = match source {
                Some(s) if !s.dev.is_empty() => {
                    format!("{:.6}", evaluate(s.tagger, s.dev, s.metric)?.value)
                }
                _ => "NA".to_string(),
            };
            log.push_str(&format!(
                "{step}\t{}:{}\t{:.6}\t{target_metric:.6}\t{source_metric}\n",
                counts.0,
                counts.1,
                ema.expect("at least one step ran"),
            ));

            let improved = best
                .as_ref()
                .map(|(b, _, _)| target_metric > *b)
                .unwrap_or(true);
            if improved {
                best = Some((target_metric, step, registry.snapshot()));
                evals_since_best = 0;
            } else {
                evals_since_best += 1;
                if evals_since_best >= config.patience {
                    break;
                }
            }
        }
    }

    let (best_metric, best_step, snapshot) =
        best.expect("max_steps >= 1 guarantees at least one evaluation");
    registry.restore(&snapshot)?;
    Ok(TrainReport {
        best_metric,
        best_step,
        steps_run,
        evaluations,
        log,
    })
}

/// Scales every gradient down so their joint Euclidean norm is at most
/// `cap`. Inactive-task gradients are zero, so including them is free.
fn clip_global_norm(registry: &ParameterRegistry, cap: f64) {
    let mut sum_sq = 0.0;
    for (_, entry) in registry.iter() {
        for &g in entry.param.borrow().grad.data() {
            sum_sq += g * g;
        }
    }
    let norm = sum_sq.sqrt();
    if norm <= cap || norm == 0.0 {
        return;
    }
    let factor = cap / norm;
    for (_, entry) in registry.iter() {
        for g in entry.param.borrow_mut().grad.data_mut() {
            *g *= factor;
        }
    }
}
