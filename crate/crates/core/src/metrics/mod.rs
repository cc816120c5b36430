//! Macro-F1, attachment scores, entity span F1 and result aggregation.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::repair_bio;

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("{gold} gold labels but {pred} predictions")]
    LengthMismatch { gold: usize, pred: usize },
    #[error("sentence {sentence}: {gold} gold tokens but {pred} predicted")]
    TokenCountMismatch { sentence: usize, gold: usize, pred: usize },
    #[error("example {example}: {gold} gold tags but {pred} predicted")]
    Alignment { example: usize, gold: usize, pred: usize },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-class true/false positive and false negative counts.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionTally {
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub fn_: Vec<usize>,
}

impl ConfusionTally {
    pub fn new(classes: usize) -> Self {
        Self {
            tp: vec![0; classes],
            fp: vec![0; classes],
            fn_: vec![0; classes],
        }
    }

    /// Records one decision. `None` stands for a label outside the class set.
    pub fn add(&mut self, gold: Option<usize>, pred: Option<usize>) {
        match (gold, pred) {
            (Some(g), Some(p)) if g == p => self.tp[g] += 1,
            _ => {
                if let Some(g) = gold {
                    self.fn_[g] += 1;
                }
                if let Some(p) = pred {
                    self.fp[p] += 1;
                }
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in [(&mut self.tp, &other.tp), (&mut self.fp, &other.fp), (&mut self.fn_, &other.fn_)] {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// 2PR/(P+R), 0 when undefined.
    pub fn f1(&self, class: usize) -> f64 {
        f1_from_counts(self.tp[class], self.fp[class], self.fn_[class])
    }

    /// Unweighted mean over every class, absent ones included.
    pub fn macro_f1(&self) -> f64 {
        if self.tp.is_empty() {
            return 0.0;
        }
        (0..self.tp.len()).map(|c| self.f1(c)).sum::<f64>() / self.tp.len() as f64
    }
}

fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    // 2PR/(P+R) simplifies to 2TP/(2TP+FP+FN); zero when TP is.
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

/// Macro-averaged F1 over the declared `classes`.
pub fn macro_f1<L: PartialEq>(gold: &[L], pred: &[L], classes: &[L]) -> Result<f64, MetricError> {
    if gold.len() != pred.len() {
        return Err(MetricError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut tally = ConfusionTally::new(classes.len());
    let idx = |l: &L| classes.iter().position(|c| c == l);
    for (g, p) in gold.iter().zip(pred) {
        tally.add(idx(g), idx(p));
    }
    Ok(tally.macro_f1())
}

/// Heads (0 = ROOT) and relation labels of one sentence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Attachments<L> {
    pub heads: Vec<usize>,
    pub labels: Vec<L>,
}

/// `(LAS, UAS)` micro-averaged over every token of the corpus; an empty
/// corpus scores 0.
pub fn las_uas<L: PartialEq>(gold: &[Attachments<L>], pred: &[Attachments<L>]) -> Result<(f64, f64), MetricError> {
    if gold.len() != pred.len() {
        return Err(MetricError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let (mut total, mut heads, mut both) = (0usize, 0usize, 0usize);
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        let n = g.heads.len();
        if g.labels.len() != n || p.heads.len() != n || p.labels.len() != n {
            return Err(MetricError::TokenCountMismatch {
                sentence: i,
                gold: n,
                pred: p.heads.len(),
            });
        }
        total += n;
        for t in 0..n {
            if g.heads[t] == p.heads[t] {
                heads += 1;
                if g.labels[t] == p.labels[t] {
                    both += 1;
                }
            }
        }
    }
    if total == 0 {
        return Ok((0.0, 0.0));
    }
    Ok((both as f64 / total as f64, heads as f64 / total as f64))
}

/// Entity span; `end` exclusive.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub ty: String,
    pub start: usize,
    pub end: usize,
}

/// Decodes BIO tags into spans after rewriting orphan `I-X` into `B-X`.
pub fn decode_spans<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let (tags, _) = repair_bio(tags);
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, tag) in tags.iter().enumerate() {
        if tag.starts_with("I-") {
            // After repair an I- tag always continues the open span.
            if let Some(s) = open.as_mut() {
                s.end = i + 1;
            }
            continue;
        }
        spans.extend(open.take());
        if let Some(ty) = tag.strip_prefix("B-") {
            open = Some(Span {
                ty: ty.to_string(),
                start: i,
                end: i + 1,
            });
        }
    }
    spans.extend(open);
    spans
}

/// Strict-match span F1, macro-averaged over entity types occurring in gold
/// or prediction. With no entities anywhere the score is 1.
pub fn entity_span_f1<S: AsRef<str>>(gold: &[Vec<S>], pred: &[Vec<S>]) -> Result<f64, MetricError> {
    if gold.len() != pred.len() {
        return Err(MetricError::LengthMismatch {
            gold: gold.len(),
            pred: pred.len(),
        });
    }
    let mut g_spans = Vec::new();
    let mut p_spans = Vec::new();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(MetricError::Alignment {
                example: i,
                gold: g.len(),
                pred: p.len(),
            });
        }
        g_spans.extend(decode_spans(g).into_iter().map(|s| (i, s)));
        p_spans.extend(decode_spans(p).into_iter().map(|s| (i, s)));
    }
    let types: BTreeSet<&str> = g_spans.iter().chain(&p_spans).map(|(_, s)| s.ty.as_str()).collect();
    if types.is_empty() {
        return Ok(1.0);
    }
    let g_set: BTreeSet<&(usize, Span)> = g_spans.iter().collect();
    let p_set: BTreeSet<&(usize, Span)> = p_spans.iter().collect();
    let total: f64 = types
        .iter()
        .map(|ty| {
            let tp = p_set.iter().filter(|s| s.1.ty == *ty && g_set.contains(*s)).count();
            let np = p_set.iter().filter(|s| s.1.ty == *ty).count();
            let ng = g_set.iter().filter(|s| s.1.ty == *ty).count();
            f1_from_counts(tp, np - tp, ng - tp)
        })
        .sum();
    Ok(total / types.len() as f64)
}

/// Mean test score of the `k` runs with the highest validation score; ties
/// keep the earlier run. `runs` holds `(validation, test)` pairs.
pub fn top_k_test_mean(runs: &[(f64, f64)], k: usize) -> Option<f64> {
    if runs.is_empty() || k == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..runs.len()).collect();
    order.sort_by(|&a, &b| runs[b].0.total_cmp(&runs[a].0).then(a.cmp(&b)));
    let chosen = &order[..k.min(runs.len())];
    Some(chosen.iter().map(|&i| runs[i].1).sum::<f64>() / chosen.len() as f64)
}

/// Runs kept when averaging test scores.
pub const TOP_RUNS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub task: String,
    pub lang: String,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

pub fn write_metric_csv<W: Write>(w: W, rows: &[MetricRow]) -> Result<(), MetricError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_metric_csv<R: std::io::Read>(r: R) -> Result<Vec<MetricRow>, MetricError> {
    csv::Reader::from_reader(r)
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(MetricError::from)
}
