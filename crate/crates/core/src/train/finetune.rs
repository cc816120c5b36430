use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::pretrain::derive_seed;
use super::{lr_at, mean_grads, thread_pool, AdamW, EarlyStopper, OptimConfig, TraceRow, TrainError};
use crate::data::{ClsExample, ConlluSentence, NerExample};
use crate::heads::{pool_words, BiaffineConfig, BiaffineParser, Pooling, SequenceClassifier, TokenTagger};
use crate::metrics::{entity_span_f1, las_uas, macro_f1, Attachments};
use crate::model::{BoundParams, Checkpoint, ModelError, ParamStore, PixelModel};
use crate::numerics::{Graph, Tensor, Var};
use crate::render::{PatchSequence, RenderConfig, Renderer};
use crate::Scalar;

/// Learning rates searched per task.
pub const DEFAULT_LR_GRID: [f64; 5] = [1e-5, 3e-5, 5e-5, 7e-5, 9e-5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Sentence classification.
    Cls,
    /// Dependency parsing.
    Udp,
    /// Named entity recognition.
    Ner,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Cls => "cls",
            Task::Udp => "udp",
            Task::Ner => "ner",
        }
    }

    /// Model-selection metric.
    pub fn metric_name(self) -> &'static str {
        match self {
            Task::Cls => "macro_f1",
            Task::Udp => "las",
            Task::Ner => "span_f1",
        }
    }
}

impl std::fmt::Display for Task {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Task {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cls" => Ok(Task::Cls),
            "udp" => Ok(Task::Udp),
            "ner" => Ok(Task::Ner),
            other => Err(TrainError::Config(format!("unknown task `{other}` (cls, udp, ner)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalCadence {
    /// After every pass over the training set.
    Epoch,
    Steps(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub task: Task,
    pub lr: f64,
    pub max_steps: usize,
    pub batch_size: usize,
    pub max_patches: usize,
    pub eval: EvalCadence,
    pub patience: usize,
    pub dropout: f64,
    pub warmup_steps: usize,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
    pub seed: u64,
    pub pooling: Pooling,
    pub biaffine: BiaffineConfig,
}

impl FinetuneConfig {
    /// Per-task defaults of the fine-tuning protocol.
    pub fn for_task(task: Task) -> Self {
        let (batch_size, max_patches, eval, patience) = match task {
            Task::Cls => (32, 256, EvalCadence::Epoch, 20),
            Task::Udp => (64, 256, EvalCadence::Steps(500), 5),
            Task::Ner => (64, 196, EvalCadence::Steps(500), 5),
        };
        Self {
            task,
            lr: 5e-5,
            max_steps: 15_000,
            batch_size,
            max_patches,
            eval,
            patience,
            dropout: 0.1,
            warmup_steps: 100,
            weight_decay: 0.0,
            grad_clip: None,
            seed: 0,
            pooling: Pooling::Mean,
            biaffine: BiaffineConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 || self.max_steps == 0 || self.patience == 0 {
            return Err(TrainError::Config("batch size, max steps and patience must be positive".into()));
        }
        if self.max_patches < 2 {
            return Err(TrainError::Config(format!("max_patches {} < 2", self.max_patches)));
        }
        if self.eval == EvalCadence::Steps(0) {
            return Err(TrainError::Config("evaluation cadence of 0 steps".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TrainError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    fn optim(&self) -> OptimConfig {
        OptimConfig {
            peak_lr: self.lr,
            warmup_steps: self.warmup_steps.min(self.max_steps),
            total_steps: self.max_steps,
            weight_decay: self.weight_decay,
            grad_clip: self.grad_clip,
            ..OptimConfig::default()
        }
    }
}

/// Examples of one task split.
#[derive(Clone, Debug, PartialEq)]
pub enum TaskData {
    Cls(Vec<ClsExample>),
    Udp(Vec<ConlluSentence>),
    Ner(Vec<NerExample>),
}

impl TaskData {
    pub fn task(&self) -> Task {
        match self {
            TaskData::Cls(_) => Task::Cls,
            TaskData::Udp(_) => Task::Udp,
            TaskData::Ner(_) => Task::Ner,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TaskData::Cls(v) => v.len(),
            TaskData::Udp(v) => v.len(),
            TaskData::Ner(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sorted label inventory: classes, relations or BIO tags.
    pub fn labels(&self) -> Vec<String> {
        let set: BTreeSet<&str> = match self {
            TaskData::Cls(v) => v.iter().map(|e| e.label.as_str()).collect(),
            TaskData::Udp(v) => v.iter().flat_map(|s| s.tokens.iter().map(|t| t.deprel.as_str())).collect(),
            TaskData::Ner(v) => v.iter().flat_map(|e| e.tags.iter().map(String::as_str)).collect(),
        };
        set.into_iter().map(str::to_string).collect()
    }
}

#[derive(Clone, Debug)]
pub enum TaskHead<T> {
    Cls(SequenceClassifier<T>),
    Udp(BiaffineParser<T>),
    Ner(TokenTagger<T>),
}

impl<T: Scalar> TaskHead<T> {
    pub fn new(task: Task, input_dim: usize, labels: usize, biaffine: &BiaffineConfig, seed: u64) -> Result<Self, TrainError> {
        Ok(match task {
            Task::Cls => TaskHead::Cls(SequenceClassifier::new(input_dim, labels, seed)?),
            Task::Udp => TaskHead::Udp(BiaffineParser::new(input_dim, labels, biaffine.clone(), seed)?),
            Task::Ner => TaskHead::Ner(TokenTagger::new(input_dim, labels, seed)?),
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        match self {
            TaskHead::Cls(h) => h.params(),
            TaskHead::Udp(h) => h.params(),
            TaskHead::Ner(h) => h.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        match self {
            TaskHead::Cls(h) => h.params_mut(),
            TaskHead::Udp(h) => h.params_mut(),
            TaskHead::Ner(h) => h.params_mut(),
        }
    }
}

/// Whitespace would split a word when rendered; it is dropped.
fn clean_word(w: &str) -> String {
    let s: String = w.chars().filter(|c| !c.is_whitespace()).collect();
    if s.is_empty() {
        "_".into()
    } else {
        s
    }
}

/// Encoder plus task head, with the label inventory and rendering setup
/// needed for inference.
#[derive(Clone, Debug)]
pub struct FinetunedModel<T> {
    pub encoder: PixelModel<T>,
    pub head: TaskHead<T>,
    pub task: Task,
    pub labels: Vec<String>,
    pub render: RenderConfig,
    pub pooling: Pooling,
    pub biaffine: BiaffineConfig,
}

/// Rendered example with label indices.
enum Prepared {
    Cls { seq: PatchSequence, label: usize },
    Udp { seq: PatchSequence, heads: Vec<usize>, labels: Vec<usize> },
    Ner { seq: PatchSequence, tags: Vec<usize> },
}

impl<T: Scalar> FinetunedModel<T> {
    pub fn new(encoder: PixelModel<T>, labels: Vec<String>, cfg: &FinetuneConfig) -> Result<Self, TrainError> {
        let render = RenderConfig {
            patch_size: encoder.config().patch_size,
            max_patches: cfg.max_patches.min(encoder.config().max_patches),
            ..RenderConfig::default()
        };
        let head = TaskHead::new(
            cfg.task,
            encoder.config().hidden_dim,
            labels.len(),
            &cfg.biaffine,
            derive_seed(cfg.seed, 1, 0),
        )?;
        Ok(Self {
            encoder,
            head,
            task: cfg.task,
            labels,
            render,
            pooling: cfg.pooling,
            biaffine: cfg.biaffine.clone(),
        })
    }

    fn renderer(&self) -> Result<Renderer, TrainError> {
        Ok(Renderer::new(self.render.clone())?)
    }

    fn render_words(&self, r: &Renderer, words: &[String]) -> Result<PatchSequence, TrainError> {
        let cleaned: Vec<String> = words.iter().map(|w| clean_word(w)).collect();
        Ok(r.render_words(&cleaned)?)
    }

    /// Task output for one rendered input: `[1, C]` logits (cls), `[n, L]`
    /// logits (ner) or pooled word vectors (udp).
    fn forward(&self, g: &mut Graph<T>, enc_p: &BoundParams, head_p: &BoundParams, seq: &PatchSequence) -> Result<Var, TrainError> {
        let enc = self.encoder.encode_unmasked(g, enc_p, seq)?;
        Ok(match &self.head {
            TaskHead::Cls(h) => h.logits(g, head_p, enc.last(), seq.attended_len())?,
            TaskHead::Udp(_) => pool_words(g, enc.last(), &seq.word_spans, self.pooling)?,
            TaskHead::Ner(h) => {
                let words = pool_words(g, enc.last(), &seq.word_spans, self.pooling)?;
                h.logits(g, head_p, words)?
            }
        })
    }

    fn loss(&self, g: &mut Graph<T>, enc_p: &BoundParams, head_p: &BoundParams, ex: &Prepared) -> Result<Var, TrainError> {
        Ok(match (ex, &self.head) {
            (Prepared::Cls { seq, label }, _) => {
                let logits = self.forward(g, enc_p, head_p, seq)?;
                g.cross_entropy(logits, &[*label])?
            }
            (Prepared::Udp { seq, heads, labels }, TaskHead::Udp(parser)) => {
                let words = self.forward(g, enc_p, head_p, seq)?;
                parser.loss(g, head_p, words, heads, labels)?
            }
            (Prepared::Ner { seq, tags }, _) => {
                let logits = self.forward(g, enc_p, head_p, seq)?;
                g.cross_entropy(logits, tags)?
            }
            _ => return Err(TrainError::Config("example does not match the head".into())),
        })
    }

    fn frozen_graph(&self) -> (Graph<T>, BoundParams, BoundParams) {
        let mut g = Graph::no_grad();
        let enc_p = self.encoder.bind_frozen(&mut g);
        let head_p = self.head.params().bind_frozen(&mut g);
        (g, enc_p, head_p)
    }

    pub fn predict_class(&self, text: &str) -> Result<String, TrainError> {
        let seq = self.renderer()?.render_text(text);
        let (mut g, ep, hp) = self.frozen_graph();
        let logits = self.forward(&mut g, &ep, &hp, &seq)?;
        Ok(self.labels[crate::heads::argmax(g.value(logits).row(0))].clone())
    }

    /// Heads and relation labels; words lost to truncation attach to ROOT
    /// with the first label.
    pub fn predict_tree(&self, words: &[String]) -> Result<(Vec<usize>, Vec<String>), TrainError> {
        let TaskHead::Udp(parser) = &self.head else {
            return Err(TrainError::Config("model has no parser head".into()));
        };
        let seq = self.render_words(&self.renderer()?, words)?;
        let (mut g, ep, hp) = self.frozen_graph();
        let vecs = self.forward(&mut g, &ep, &hp, &seq)?;
        let (mut heads, labels) = parser.predict(&mut g, &hp, vecs)?;
        let mut labels: Vec<String> = labels.into_iter().map(|l| self.labels[l].clone()).collect();
        heads.resize(words.len(), 0);
        labels.resize(words.len(), self.labels[0].clone());
        Ok((heads, labels))
    }

    /// BIO tags; words lost to truncation are tagged `O`.
    pub fn predict_tags(&self, words: &[String]) -> Result<Vec<String>, TrainError> {
        let TaskHead::Ner(tagger) = &self.head else {
            return Err(TrainError::Config("model has no tagger head".into()));
        };
        let seq = self.render_words(&self.renderer()?, words)?;
        let (mut g, ep, hp) = self.frozen_graph();
        let enc = self.encoder.encode_unmasked(&mut g, &ep, &seq)?;
        let vecs = pool_words(&mut g, enc.last(), &seq.word_spans, self.pooling)?;
        let mut tags: Vec<String> = tagger
            .predict(&mut g, &hp, vecs)?
            .into_iter()
            .map(|t| self.labels[t].clone())
            .collect();
        tags.resize(words.len(), "O".into());
        Ok(tags)
    }

    /// Every metric of the task on `data`; the model-selection metric comes
    /// first.
    pub fn evaluate(&self, data: &TaskData) -> Result<Vec<(&'static str, f64)>, TrainError> {
        match data {
            TaskData::Cls(v) => {
                let pred: Vec<String> = v.par_iter().map(|e| self.predict_class(&e.text)).collect::<Result<_, _>>()?;
                let gold: Vec<String> = v.iter().map(|e| e.label.clone()).collect();
                Ok(vec![("macro_f1", macro_f1(&gold, &pred, &self.labels)?)])
            }
            TaskData::Udp(v) => {
                let pred: Vec<Attachments<String>> = v
                    .par_iter()
                    .map(|s| {
                        let words: Vec<String> = s.tokens.iter().map(|t| t.form.clone()).collect();
                        let (heads, labels) = self.predict_tree(&words)?;
                        Ok(Attachments { heads, labels })
                    })
                    .collect::<Result<_, TrainError>>()?;
                let gold: Vec<Attachments<String>> = v
                    .iter()
                    .map(|s| Attachments {
                        heads: s.heads(),
                        labels: s.tokens.iter().map(|t| t.deprel.clone()).collect(),
                    })
                    .collect();
                let (las, uas) = las_uas(&gold, &pred)?;
                Ok(vec![("las", las), ("uas", uas)])
            }
            TaskData::Ner(v) => {
                let pred: Vec<Vec<String>> = v.par_iter().map(|e| self.predict_tags(&e.words)).collect::<Result<_, _>>()?;
                let gold: Vec<Vec<String>> = v.iter().map(|e| e.tags.clone()).collect();
                Ok(vec![("span_f1", entity_span_f1(&gold, &pred)?)])
            }
        }
    }

    /// Model-selection metric on `data`.
    pub fn score(&self, data: &TaskData) -> Result<f64, TrainError> {
        Ok(self.evaluate(data)?[0].1)
    }

    fn prepare(&self, data: &TaskData) -> Result<(Vec<Prepared>, usize), TrainError> {
        let r = self.renderer()?;
        let index: HashMap<&str, usize> = self.labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let lookup = |l: &str| {
            index
                .get(l)
                .copied()
                .ok_or_else(|| TrainError::Config(format!("label `{l}` missing from the inventory")))
        };
        let mut out = Vec::new();
        let mut skipped = 0;
        match data {
            TaskData::Cls(v) => {
                for e in v {
                    out.push(Prepared::Cls {
                        seq: r.render_text(&e.text),
                        label: lookup(&e.label)?,
                    });
                }
            }
            TaskData::Udp(v) => {
                for s in v {
                    let words: Vec<String> = s.tokens.iter().map(|t| t.form.clone()).collect();
                    let seq = self.render_words(&r, &words)?;
                    if seq.truncated_words > 0 {
                        skipped += 1;
                        continue;
                    }
                    let labels = s.tokens.iter().map(|t| lookup(&t.deprel)).collect::<Result<_, _>>()?;
                    out.push(Prepared::Udp {
                        seq,
                        heads: s.heads(),
                        labels,
                    });
                }
            }
            TaskData::Ner(v) => {
                for e in v {
                    let seq = self.render_words(&r, &e.words)?;
                    if seq.truncated_words > 0 {
                        skipped += 1;
                        continue;
                    }
                    let tags = e.tags.iter().map(|t| lookup(t)).collect::<Result<_, _>>()?;
                    out.push(Prepared::Ner { seq, tags });
                }
            }
        }
        Ok((out, skipped))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = self.encoder.to_checkpoint();
        ck.config = json!({
            "model": self.encoder.config(),
            "task": self.task,
            "labels": self.labels,
            "render": self.render,
            "pooling": self.pooling,
            "biaffine": self.biaffine,
        });
        ck.tensors
            .extend(self.head.params().iter().map(|(n, t)| (n.to_string(), t.cast())));
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, TrainError> {
        let field = |k: &str| {
            ck.config
                .get(k)
                .cloned()
                .ok_or_else(|| ModelError::Checkpoint(format!("not a fine-tuned checkpoint: no `{k}`")))
        };
        let parse_err = |e: serde_json::Error| ModelError::Checkpoint(e.to_string());
        let task: Task = serde_json::from_value(field("task")?).map_err(parse_err)?;
        let labels: Vec<String> = serde_json::from_value(field("labels")?).map_err(parse_err)?;
        let render: RenderConfig = serde_json::from_value(field("render")?).map_err(parse_err)?;
        let pooling: Pooling = serde_json::from_value(field("pooling")?).map_err(parse_err)?;
        let biaffine: BiaffineConfig = serde_json::from_value(field("biaffine")?).map_err(parse_err)?;
        let encoder = PixelModel::from_checkpoint(ck)?;
        let mut head = TaskHead::new(task, encoder.config().hidden_dim, labels.len(), &biaffine, 0)?;
        ck.restore_into(head.params_mut())?;
        Ok(Self {
            encoder,
            head,
            task,
            labels,
            render,
            pooling,
            biaffine,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), TrainError> {
        Ok(self.to_checkpoint().save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome<T> {
    /// Weights of the best validation evaluation.
    pub model: FinetunedModel<T>,
    pub best_metric: f64,
    /// Update count at the best evaluation.
    pub best_step: usize,
    pub steps_run: usize,
    pub stopped_early: bool,
    /// Training examples left out because rendering truncated words.
    pub skipped_examples: usize,
    pub trace: Vec<TraceRow>,
}

/// Trains a fresh task head together with a copy of `encoder` on `train`,
/// evaluating on `val` at the configured cadence and keeping the best
/// weights. Labels are inferred from `train`.
pub fn finetune<T: Scalar>(
    encoder: &PixelModel<T>,
    train: &TaskData,
    val: &TaskData,
    cfg: &FinetuneConfig,
) -> Result<FinetuneOutcome<T>, TrainError> {
    cfg.validate()?;
    if train.task() != cfg.task || val.task() != cfg.task {
        return Err(TrainError::Config(format!("data does not belong to task {}", cfg.task)));
    }
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config("training and validation splits must be non-empty".into()));
    }
    let mut encoder = encoder.clone();
    encoder.set_dropout(cfg.dropout)?;
    let mut model = FinetunedModel::new(encoder, train.labels(), cfg)?;
    let (examples, skipped) = model.prepare(train)?;
    if skipped > 0 {
        log::warn!("{skipped} training examples skipped: words did not fit in {} patches", model.render.max_patches);
    }
    if examples.is_empty() {
        return Err(TrainError::Config("no training example fits the patch budget".into()));
    }

    let optim_cfg = cfg.optim();
    let mut optim = AdamW::new(optim_cfg.clone())?;
    let mut stopper = EarlyStopper::new(cfg.patience);
    let pool = thread_pool()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    let mut trace = Vec::new();
    let mut best: Option<(ParamStore<T>, ParamStore<T>)> = None;
    let mut steps_run = 0;
    let mut stopped_early = false;

    for step in 0..cfg.max_steps {
        let end = (cursor + cfg.batch_size).min(order.len());
        let batch = &order[cursor..end];
        let m = &model;
        let results: Vec<Result<(f64, Vec<Tensor<T>>), TrainError>> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(i, &ex)| {
                    let mut g = Graph::training(derive_seed(cfg.seed, step as u64, i as u64));
                    let ep = m.encoder.bind(&mut g);
                    let hp = m.head.params().bind(&mut g);
                    let loss = m.loss(&mut g, &ep, &hp, &examples[ex])?;
                    let grads = g.backward(loss)?;
                    let mut all = ep.grads(&g, &grads);
                    all.extend(hp.grads(&g, &grads));
                    Ok((g.value(loss).item().to_f64_lossy(), all))
                })
                .collect()
        });
        let mut loss = 0.0;
        let mut per_sample = Vec::with_capacity(results.len());
        for r in results {
            let (l, gr) = r?;
            loss += l;
            per_sample.push(gr);
        }
        loss /= per_sample.len() as f64;
        trace.push(TraceRow::new(step, "train", "loss", loss));
        let grads = mean_grads(per_sample).expect("non-empty batch");
        let lr = lr_at(step, &optim_cfg)?;
        {
            let FinetunedModel { encoder, head, .. } = &mut model;
            let mut params: Vec<&mut Tensor<T>> =
                encoder.params_mut().tensors_mut().chain(head.params_mut().tensors_mut()).collect();
            match optim.step(&mut params, &grads, lr) {
                Ok(()) => {}
                Err(TrainError::NonFiniteGrad { .. }) => log::warn!("step {step}: non-finite gradient, update skipped"),
                Err(e) => return Err(e),
            }
        }
        steps_run = step + 1;

        cursor = end;
        let epoch_done = cursor >= order.len();
        if epoch_done {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let due = match cfg.eval {
            EvalCadence::Epoch => epoch_done,
            EvalCadence::Steps(k) => steps_run % k == 0,
        };
        if due || steps_run == cfg.max_steps {
            let score = model.score(val)?;
            trace.push(TraceRow::new(steps_run, "validation", cfg.task.metric_name(), score));
            log::info!("{} step {steps_run}: validation {} {score:.4}", cfg.task, cfg.task.metric_name());
            if stopper.observe(steps_run, score) {
                best = Some((model.encoder.params().clone(), model.head.params().clone()));
            }
            if stopper.should_stop() {
                stopped_early = steps_run < cfg.max_steps;
                break;
            }
        }
    }
    if let Some((enc, head)) = best {
        *model.encoder.params_mut() = enc;
        *model.head.params_mut() = head;
    }
    Ok(FinetuneOutcome {
        model,
        best_metric: stopper.best().unwrap_or(0.0),
        best_step: stopper.best_step(),
        steps_run,
        stopped_early,
        skipped_examples: skipped,
        trace,
    })
}

/// Learning rate with the best validation metric; ties go to the smaller
/// rate. `results` holds `(lr, metric)` pairs.
pub fn select_lr(results: &[(f64, f64)]) -> Option<f64> {
    let mut sorted = results.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut best: Option<(f64, f64)> = None;
    for (lr, m) in sorted {
        if best.is_none_or(|(_, bm)| m > bm) {
            best = Some((lr, m));
        }
    }
    best.map(|b| b.0)
}

/// Runs [`finetune`] once per learning rate and keeps the best run.
pub fn finetune_lr_grid<T: Scalar>(
    encoder: &PixelModel<T>,
    train: &TaskData,
    val: &TaskData,
    cfg: &FinetuneConfig,
    grid: &[f64],
) -> Result<(f64, FinetuneOutcome<T>, Vec<(f64, f64)>), TrainError> {
    if grid.is_empty() {
        return Err(TrainError::Config("empty learning-rate grid".into()));
    }
    let mut runs = Vec::with_capacity(grid.len());
    for &lr in grid {
        let out = finetune(encoder, train, val, &FinetuneConfig { lr, ..cfg.clone() })?;
        runs.push((lr, out));
    }
    let summary: Vec<(f64, f64)> = runs.iter().map(|(lr, o)| (*lr, o.best_metric)).collect();
    let lr = select_lr(&summary).expect("non-empty grid");
    let (_, out) = runs.into_iter().find(|(l, _)| *l == lr).expect("selected from runs");
    Ok((lr, out, summary))
}
