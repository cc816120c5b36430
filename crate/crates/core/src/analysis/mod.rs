//! Representation analyses over a frozen encoder: sentence embeddings,
//! cross-lingual retrieval, language centroids and layer-wise word probes.

mod export;
mod probe;

use rayon::prelude::*;

pub use export::{
    export_embeddings, read_embeddings_tsv, read_probe_tsv, write_centroids_tsv, write_embeddings_tsv, write_probe_csv,
    write_retrieval_csv, ProbeRow, RetrievalRow,
};
pub use probe::{probe_features, probe_layerwise, train_probe, ProbeConfig, ProbeDataset, ProbeResult};

use crate::model::{ModelError, PixelModel};
use crate::numerics::Tensor;
use crate::render::{RenderConfig, RenderError, Renderer};
use crate::train::TrainError;
use crate::Scalar;

/// Top-k cutoff of the retrieval reports.
pub const RECALL_K: usize = 5;

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error("vector {index} has zero norm")]
    ZeroNorm { index: usize },
    #[error("{queries} queries but {candidates} candidates")]
    SizeMismatch { queries: usize, candidates: usize },
    #[error("no embeddings for language `{lang}`")]
    EmptyGroup { lang: String },
    #[error("layer {layer} outside 0..={num_layers}")]
    Layer { layer: usize, num_layers: usize },
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One pooled sentence vector with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct SentenceEmbedding {
    pub lang: String,
    pub index: usize,
    pub layer: usize,
    pub vector: Vec<f64>,
}

/// Mean of rows `[lo, hi)` of a `[rows, d]` hidden-state matrix.
pub fn mean_rows<T: Scalar>(hidden: &Tensor<T>, lo: usize, hi: usize) -> Vec<f64> {
    let d = hidden.last_dim();
    let mut acc = vec![0.0; d];
    for r in lo..hi {
        for (a, &x) in acc.iter_mut().zip(hidden.row(r)) {
            *a += x.to_f64_lossy();
        }
    }
    let n = (hi - lo).max(1) as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub fn l2_normalize(v: &[f64], index: usize) -> Result<Vec<f64>, AnalysisError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(AnalysisError::ZeroNorm { index });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

/// Renderer matching the model's patch geometry and position table.
pub fn renderer_for<T: Scalar>(model: &PixelModel<T>, base: &RenderConfig) -> Result<Renderer, AnalysisError> {
    let cfg = RenderConfig {
        patch_size: model.config().patch_size,
        max_patches: base.max_patches.min(model.config().max_patches),
        ..base.clone()
    };
    Ok(Renderer::new(cfg)?)
}

pub(crate) fn check_layers<T: Scalar>(model: &PixelModel<T>, layers: &[usize]) -> Result<(), AnalysisError> {
    let num_layers = model.config().num_layers;
    match layers.iter().find(|&&l| l > num_layers) {
        Some(&layer) => Err(AnalysisError::Layer { layer, num_layers }),
        None => Ok(()),
    }
}

/// Un-normalized mean-pooled vectors, `[sentence][layer]`, for the
/// requested layers. Pooling covers the attended non-CLS positions.
pub fn pooled_sentences<T: Scalar, S: AsRef<str> + Sync>(
    model: &PixelModel<T>,
    render: &RenderConfig,
    texts: &[S],
    layers: &[usize],
) -> Result<Vec<Vec<Vec<f64>>>, AnalysisError> {
    check_layers(model, layers)?;
    let r = renderer_for(model, render)?;
    texts
        .par_iter()
        .map(|t| {
            let seq = r.render_text(t.as_ref());
            let hidden = model.hidden_states(&seq)?;
            let n = seq.attended_len();
            Ok(layers.iter().map(|&l| mean_rows(&hidden[l], 1, 1 + n)).collect())
        })
        .collect()
}

/// Unit-norm sentence vectors at one layer.
pub fn embed_sentences<T: Scalar, S: AsRef<str> + Sync>(
    model: &PixelModel<T>,
    render: &RenderConfig,
    texts: &[S],
    layer: usize,
) -> Result<Vec<Vec<f64>>, AnalysisError> {
    pooled_sentences(model, render, texts, &[layer])?
        .into_iter()
        .enumerate()
        .map(|(i, mut v)| l2_normalize(&v.remove(0), i))
        .collect()
}

/// Raw pooled embeddings of `(lang, text)` records at every requested layer;
/// `index` counts sentences within each language.
pub fn embed_corpus<T: Scalar>(
    model: &PixelModel<T>,
    render: &RenderConfig,
    records: &[(String, String)],
    layers: &[usize],
) -> Result<Vec<SentenceEmbedding>, AnalysisError> {
    let texts: Vec<&str> = records.iter().map(|(_, t)| t.as_str()).collect();
    let pooled = pooled_sentences(model, render, &texts, layers)?;
    let mut seen: Vec<(&str, usize)> = Vec::new();
    let mut out = Vec::with_capacity(records.len() * layers.len());
    for ((lang, _), per_layer) in records.iter().zip(pooled) {
        let index = match seen.iter_mut().find(|(l, _)| *l == lang) {
            Some((_, n)) => {
                *n += 1;
                *n - 1
            }
            None => {
                seen.push((lang, 1));
                0
            }
        };
        for (&layer, vector) in layers.iter().zip(per_layer) {
            out.push(SentenceEmbedding {
                lang: lang.clone(),
                index,
                layer,
                vector,
            });
        }
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Fraction of queries whose gold candidate (same index) ranks in the top
/// `k` by dot product; equal scores rank the lower index first.
pub fn recall_at_k(queries: &[Vec<f64>], candidates: &[Vec<f64>], k: usize) -> Result<f64, AnalysisError> {
    if queries.len() != candidates.len() {
        return Err(AnalysisError::SizeMismatch {
            queries: queries.len(),
            candidates: candidates.len(),
        });
    }
    if queries.is_empty() {
        return Ok(0.0);
    }
    let hits = queries
        .par_iter()
        .enumerate()
        .filter(|&(i, q)| {
            let gold = dot(q, &candidates[i]);
            // rank of the gold candidate = number of candidates placed ahead of it
            let ahead = candidates
                .iter()
                .enumerate()
                .filter(|&(j, c)| {
                    let s = dot(q, c);
                    s > gold || (s == gold && j < i)
                })
                .count();
            ahead < k
        })
        .count();
    Ok(hits as f64 / queries.len() as f64)
}

/// Recall@k between two aligned sentence lists at each layer.
pub fn layerwise_retrieval<T: Scalar, S: AsRef<str> + Sync>(
    model: &PixelModel<T>,
    render: &RenderConfig,
    source: &[S],
    target: &[S],
    layers: &[usize],
    k: usize,
) -> Result<Vec<(usize, f64)>, AnalysisError> {
    if source.len() != target.len() {
        return Err(AnalysisError::SizeMismatch {
            queries: source.len(),
            candidates: target.len(),
        });
    }
    let src = pooled_sentences(model, render, source, layers)?;
    let tgt = pooled_sentences(model, render, target, layers)?;
    let unit = |rows: &[Vec<Vec<f64>>], li: usize| -> Result<Vec<Vec<f64>>, AnalysisError> {
        rows.iter().enumerate().map(|(i, v)| l2_normalize(&v[li], i)).collect()
    };
    layers
        .iter()
        .enumerate()
        .map(|(li, &layer)| Ok((layer, recall_at_k(&unit(&src, li)?, &unit(&tgt, li)?, k)?)))
        .collect()
}

/// Arithmetic mean of each language's vectors, in input order.
pub fn language_centroids(groups: &[(String, Vec<Vec<f64>>)]) -> Result<Vec<(String, Vec<f64>)>, AnalysisError> {
    groups
        .iter()
        .map(|(lang, vecs)| {
            let first = vecs.first().ok_or_else(|| AnalysisError::EmptyGroup { lang: lang.clone() })?;
            let mut c = vec![0.0; first.len()];
            for v in vecs {
                if v.len() != c.len() {
                    return Err(AnalysisError::Config(format!("ragged vectors for `{lang}`")));
                }
                c.iter_mut().zip(v).for_each(|(a, x)| *a += x);
            }
            let n = vecs.len() as f64;
            c.iter_mut().for_each(|a| *a /= n);
            Ok((lang.clone(), c))
        })
        .collect()
}

/// Groups embeddings of one layer by language (first-appearance order) and
/// returns their centroids.
pub fn centroids_at_layer(embeddings: &[SentenceEmbedding], layer: usize) -> Result<Vec<(String, Vec<f64>)>, AnalysisError> {
    let mut groups: Vec<(String, Vec<Vec<f64>>)> = Vec::new();
    for e in embeddings.iter().filter(|e| e.layer == layer) {
        match groups.iter_mut().find(|(l, _)| *l == e.lang) {
            Some((_, v)) => v.push(e.vector.clone()),
            None => groups.push((e.lang.clone(), vec![e.vector.clone()])),
        }
    }
    language_centroids(&groups)
}

/// Parses `a..b` (inclusive) or a comma list into layer indices.
pub fn parse_layers(spec: &str) -> Result<Vec<usize>, AnalysisError> {
    let bad = || AnalysisError::Config(format!("bad layer list `{spec}`"));
    if let Some((a, b)) = spec.split_once("..") {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if a > b {
            return Err(bad());
        }
        return Ok((a..=b).collect());
    }
    spec.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

#[cfg(test)]
mod tests;
