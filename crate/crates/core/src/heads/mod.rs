//! Task heads on top of encoder hidden states.
//!
//! Hidden states come from fine-tune-mode encoding, so patch `p` sits at
//! row `p + 1` and row 0 is CLS.

mod biaffine;
mod edmonds;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use biaffine::{score_matrix, BiaffineConfig, BiaffineParser};
pub use edmonds::{is_tree, max_arborescence, tree_score};

use crate::model::{BoundParams, Linear, ParamStore};
use crate::numerics::{Graph, NumericsError, Var};
use crate::Scalar;

#[derive(Debug, thiserror::Error)]
pub enum HeadError {
    #[error("word {index} has an empty or out-of-range patch span")]
    EmptySpan { index: usize },
    #[error("sequence has no attended positions")]
    AllPadding,
    #[error("head needs at least one word")]
    EmptyInput,
    #[error("invalid head configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    #[default]
    Mean,
    First,
}

impl std::str::FromStr for Pooling {
    type Err = HeadError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "first" => Ok(Self::First),
            other => Err(HeadError::Config(format!("unknown pooling `{other}`"))),
        }
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// One vector per word span (`[start, end)` in patch coordinates) from
/// `hidden: [1 + k, d]`.
pub fn pool_words<T: Scalar>(
    g: &mut Graph<T>,
    hidden: Var,
    spans: &[(usize, usize)],
    pooling: Pooling,
) -> Result<Var, HeadError> {
    if spans.is_empty() {
        return Err(HeadError::EmptyInput);
    }
    let patches = g.shape(hidden)[0].saturating_sub(1);
    for (index, &(lo, hi)) in spans.iter().enumerate() {
        if lo >= hi || hi > patches {
            return Err(HeadError::EmptySpan { index });
        }
    }
    Ok(match pooling {
        Pooling::Mean => {
            let rows: Vec<(usize, usize)> = spans.iter().map(|&(lo, hi)| (lo + 1, hi + 1)).collect();
            g.segment_mean(hidden, &rows)?
        }
        Pooling::First => {
            let rows: Vec<usize> = spans.iter().map(|&(lo, _)| lo + 1).collect();
            g.gather_rows(hidden, &rows)?
        }
    })
}

/// Mean over the first `attended` non-CLS rows: `[1, d]`.
pub fn pool_sequence<T: Scalar>(g: &mut Graph<T>, hidden: Var, attended: usize) -> Result<Var, HeadError> {
    if attended == 0 {
        return Err(HeadError::AllPadding);
    }
    if attended + 1 > g.shape(hidden)[0] {
        return Err(NumericsError::Index {
            index: attended,
            len: g.shape(hidden)[0] - 1,
        }
        .into());
    }
    Ok(g.segment_mean(hidden, &[(1, attended + 1)])?)
}

/// Mean-pooled sequence vector followed by an affine map to class logits.
#[derive(Clone, Debug)]
pub struct SequenceClassifier<T> {
    pub num_classes: usize,
    params: ParamStore<T>,
    linear: Linear,
}

impl<T: Scalar> SequenceClassifier<T> {
    pub fn new(input_dim: usize, num_classes: usize, seed: u64) -> Result<Self, HeadError> {
        if num_classes == 0 {
            return Err(HeadError::Config("classifier needs at least one class".into()));
        }
        let mut params = ParamStore::default();
        let linear = Linear::new(
            &mut params,
            "classifier",
            input_dim,
            num_classes,
            &mut ChaCha8Rng::seed_from_u64(seed),
        );
        Ok(Self {
            num_classes,
            params,
            linear,
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn linear(&self) -> &Linear {
        &self.linear
    }

    /// `[1, num_classes]` logits.
    pub fn logits(&self, g: &mut Graph<T>, p: &BoundParams, hidden: Var, attended: usize) -> Result<Var, HeadError> {
        let pooled = pool_sequence(g, hidden, attended)?;
        Ok(self.linear.forward(g, p, pooled)?)
    }
}

/// Per-word affine map to BIO label logits.
#[derive(Clone, Debug)]
pub struct TokenTagger<T> {
    pub num_labels: usize,
    params: ParamStore<T>,
    linear: Linear,
}

impl<T: Scalar> TokenTagger<T> {
    pub fn new(input_dim: usize, num_labels: usize, seed: u64) -> Result<Self, HeadError> {
        if num_labels == 0 {
            return Err(HeadError::Config("tagger needs at least one label".into()));
        }
        let mut params = ParamStore::default();
        let linear = Linear::new(&mut params, "tagger", input_dim, num_labels, &mut ChaCha8Rng::seed_from_u64(seed));
        Ok(Self {
            num_labels,
            params,
            linear,
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn linear(&self) -> &Linear {
        &self.linear
    }

    /// `[n, num_labels]` logits for `words: [n, d]`.
    pub fn logits(&self, g: &mut Graph<T>, p: &BoundParams, words: Var) -> Result<Var, HeadError> {
        if g.shape(words)[0] == 0 {
            return Err(HeadError::EmptyInput);
        }
        Ok(self.linear.forward(g, p, words)?)
    }

    pub fn predict(&self, g: &mut Graph<T>, p: &BoundParams, words: Var) -> Result<Vec<usize>, HeadError> {
        let logits = self.logits(g, p, words)?;
        let t = g.value(logits);
        Ok((0..t.rows()).map(|i| argmax(t.row(i))).collect())
    }
}

#[cfg(test)]
mod tests;
