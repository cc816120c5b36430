use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{check_layers, mean_rows, renderer_for, AnalysisError, ProbeRow};
use crate::heads::argmax;
use crate::model::PixelModel;
use crate::numerics::Tensor;
use crate::render::RenderConfig;
use crate::train::{AdamW, OptimConfig};
use crate::Scalar;

/// Word/label pairs of one (task, language) cell with fixed splits.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProbeDataset {
    pub task: String,
    pub lang: String,
    pub train: Vec<(String, String)>,
    pub val: Vec<(String, String)>,
    pub test: Vec<(String, String)>,
}

impl ProbeDataset {
    /// Sorted label inventory over all splits.
    pub fn labels(&self) -> Vec<String> {
        let mut l: Vec<String> = self
            .train
            .iter()
            .chain(&self.val)
            .chain(&self.test)
            .map(|(_, y)| y.clone())
            .collect();
        l.sort();
        l.dedup();
        l
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        for (name, split) in [("train", &self.train), ("val", &self.val), ("test", &self.test)] {
            if split.is_empty() {
                return Err(AnalysisError::Config(format!(
                    "probe split `{name}` of {}/{} is empty",
                    self.task, self.lang
                )));
            }
        }
        Ok(())
    }
}

/// Fixed training budget of the affine probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 128,
            lr: 1e-2,
            weight_decay: 0.0,
            eval_every: 25,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub val_accuracy: f64,
    pub test_accuracy: f64,
    pub best_step: usize,
}

struct Affine {
    w: Tensor<f64>, // [classes, d]
    b: Tensor<f64>, // [classes]
}

impl Affine {
    fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.logits(x))
    }

    fn logits(&self, x: &[f64]) -> Vec<f64> {
        (0..self.b.numel())
            .map(|c| self.b.data()[c] + self.w.row(c).iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
            .collect()
    }

    fn accuracy(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        if xs.is_empty() {
            return 0.0;
        }
        let hits = xs.iter().zip(ys).filter(|(x, &y)| self.predict(x) == y).count();
        hits as f64 / xs.len() as f64
    }

    /// Mean softmax cross-entropy gradient over a batch.
    fn grads(&self, xs: &[&Vec<f64>], ys: &[usize]) -> (Tensor<f64>, Tensor<f64>) {
        let (k, d) = (self.b.numel(), self.w.last_dim());
        let mut gw = Tensor::zeros([k, d]);
        let mut gb = Tensor::zeros([k]);
        let inv = 1.0 / xs.len() as f64;
        for (x, &y) in xs.iter().zip(ys) {
            let z = self.logits(x);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..k {
                let delta = (e[c] / s - if c == y { 1.0 } else { 0.0 }) * inv;
                gb.data_mut()[c] += delta;
                for (g, v) in gw.data_mut()[c * d..(c + 1) * d].iter_mut().zip(x.iter()) {
                    *g += delta * v;
                }
            }
        }
        (gw, gb)
    }
}

/// Trains a softmax-regression probe on fixed features. The weights with
/// the best validation accuracy (earliest on ties) are scored on test.
pub fn train_probe(
    train: (&[Vec<f64>], &[usize]),
    val: (&[Vec<f64>], &[usize]),
    test: (&[Vec<f64>], &[usize]),
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeResult, AnalysisError> {
    let (xs, ys) = train;
    if xs.is_empty() || xs.len() != ys.len() || val.0.len() != val.1.len() || test.0.len() != test.1.len() {
        return Err(AnalysisError::Config("probe splits must be non-empty and aligned".into()));
    }
    if num_classes == 0 || cfg.batch_size == 0 || cfg.eval_every == 0 {
        return Err(AnalysisError::Config("probe needs classes, batch size and eval cadence".into()));
    }
    let d = xs[0].len();
    let mut model = Affine {
        w: Tensor::zeros([num_classes, d]),
        b: Tensor::zeros([num_classes]),
    };
    let mut opt = AdamW::new(OptimConfig {
        peak_lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        warmup_steps: 0,
        total_steps: cfg.steps.max(1),
        ..OptimConfig::default()
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    let mut cursor = order.len();

    let mut best = (model.accuracy(val.0, val.1), 0usize);
    let mut best_test = model.accuracy(test.0, test.1);
    for step in 1..=cfg.steps {
        let mut bx = Vec::with_capacity(cfg.batch_size);
        let mut by = Vec::with_capacity(cfg.batch_size);
        while bx.len() < cfg.batch_size.min(xs.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            bx.push(&xs[order[cursor]]);
            by.push(ys[order[cursor]]);
            cursor += 1;
        }
        let (gw, gb) = model.grads(&bx, &by);
        opt.step(&mut [&mut model.w, &mut model.b], &[gw, gb], cfg.lr)?;
        if step % cfg.eval_every == 0 || step == cfg.steps {
            let acc = model.accuracy(val.0, val.1);
            if acc > best.0 {
                best = (acc, step);
                best_test = model.accuracy(test.0, test.1);
            }
        }
    }
    Ok(ProbeResult {
        val_accuracy: best.0,
        test_accuracy: best_test,
        best_step: best.1,
    })
}

/// Mean-pooled vectors of standalone-rendered words, `[layer][word]`.
pub fn probe_features<T: Scalar, S: AsRef<str> + Sync>(
    model: &PixelModel<T>,
    render: &RenderConfig,
    words: &[S],
    layers: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>, AnalysisError> {
    check_layers(model, layers)?;
    let r = renderer_for(model, render)?;
    let per_word: Vec<Vec<Vec<f64>>> = words
        .par_iter()
        .map(|w| {
            let w = w.as_ref().trim();
            let seq = r.render_words(&[if w.is_empty() { "_" } else { w }])?;
            let hidden = model.hidden_states(&seq)?;
            // a word too long for the sequence keeps whatever patches fit
            let (lo, hi) = seq.word_spans.first().copied().unwrap_or((0, seq.num_text_patches().max(1)));
            Ok(layers.iter().map(|&l| mean_rows(&hidden[l], 1 + lo, 1 + hi)).collect())
        })
        .collect::<Result<_, AnalysisError>>()?;
    Ok((0..layers.len())
        .map(|li| per_word.iter().map(|v| v[li].clone()).collect())
        .collect())
}

/// Probe accuracy on the test split at each layer, encoder frozen.
pub fn probe_layerwise<T: Scalar>(
    model: &PixelModel<T>,
    data: &ProbeDataset,
    layers: &[usize],
    render: &RenderConfig,
    cfg: &ProbeConfig,
) -> Result<Vec<ProbeRow>, AnalysisError> {
    data.validate()?;
    let labels = data.labels();
    let encode = |split: &[(String, String)]| -> Result<(Vec<Vec<Vec<f64>>>, Vec<usize>), AnalysisError> {
        let words: Vec<&str> = split.iter().map(|(w, _)| w.as_str()).collect();
        let ys = split
            .iter()
            .map(|(_, y)| labels.binary_search(y).expect("label from inventory"))
            .collect();
        Ok((probe_features(model, render, &words, layers)?, ys))
    };
    let (tr, ytr) = encode(&data.train)?;
    let (va, yva) = encode(&data.val)?;
    let (te, yte) = encode(&data.test)?;
    layers
        .par_iter()
        .enumerate()
        .map(|(li, &layer)| {
            let r = train_probe((&tr[li], &ytr), (&va[li], &yva), (&te[li], &yte), labels.len(), cfg)?;
            Ok(ProbeRow {
                task: data.task.clone(),
                lang: data.lang.clone(),
                layer,
                accuracy: r.test_accuracy,
            })
        })
        .collect()
}
