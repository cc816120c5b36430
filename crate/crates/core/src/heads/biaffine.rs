use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, edmonds::max_arborescence, HeadError};
use crate::model::{BoundParams, Linear, ParamId, ParamStore, INIT_STD};
use crate::numerics::{Graph, Tensor, Var};
use crate::Scalar;

/// Logit added to word-as-its-own-head arcs so that softmax ignores them.
const SELF_ARC: f64 = -1e9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiaffineConfig {
    pub arc_dim: usize,
    pub label_dim: usize,
}

impl Default for BiaffineConfig {
    fn default() -> Self {
        Self {
            arc_dim: 128,
            label_dim: 128,
        }
    }
}

/// Biaffine dependency parser over pooled word vectors.
///
/// With `Hᵢ` the head-MLP output of candidate head `i` (row 0 is a learned
/// ROOT vector) and `Dⱼ` the dep-MLP output of word `j`:
/// `arc(i, j) = Hᵢ U Dⱼᵀ + Hᵢ·b` and
/// `label(j, i, ℓ) = D'ⱼ V_ℓ H'ᵢᵀ + D'ⱼ·W₁[:, ℓ] + H'ᵢ·W₂[:, ℓ] + c_ℓ`
/// with separate label MLPs.
#[derive(Clone, Debug)]
pub struct BiaffineParser<T> {
    pub config: BiaffineConfig,
    pub num_labels: usize,
    params: ParamStore<T>,
    root: ParamId,
    arc_dep: Linear,
    arc_head: Linear,
    label_dep: Linear,
    label_head: Linear,
    arc_u: ParamId,
    arc_b: ParamId,
    label_u: ParamId,
    label_w_dep: ParamId,
    label_w_head: ParamId,
    label_c: ParamId,
}

impl<T: Scalar> BiaffineParser<T> {
    pub fn new(input_dim: usize, num_labels: usize, config: BiaffineConfig, seed: u64) -> Result<Self, HeadError> {
        if num_labels == 0 || config.arc_dim == 0 || config.label_dim == 0 {
            return Err(HeadError::Config("parser needs labels and positive MLP sizes".into()));
        }
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let (a, l) = (config.arc_dim, config.label_dim);
        let mut s = ParamStore::default();
        let root = s.add_normal("parser.root", &[1, input_dim], INIT_STD, rng);
        let arc_dep = Linear::new(&mut s, "parser.arc_dep", input_dim, a, rng);
        let arc_head = Linear::new(&mut s, "parser.arc_head", input_dim, a, rng);
        let label_dep = Linear::new(&mut s, "parser.label_dep", input_dim, l, rng);
        let label_head = Linear::new(&mut s, "parser.label_head", input_dim, l, rng);
        let arc_u = s.add_normal("parser.arc_u", &[a, a], INIT_STD, rng);
        let arc_b = s.add("parser.arc_b", Tensor::zeros([a, 1]));
        let label_u = s.add_normal("parser.label_u", &[l, num_labels * l], INIT_STD, rng);
        let label_w_dep = s.add_normal("parser.label_w_dep", &[l, num_labels], INIT_STD, rng);
        let label_w_head = s.add_normal("parser.label_w_head", &[l, num_labels], INIT_STD, rng);
        let label_c = s.add("parser.label_c", Tensor::zeros([num_labels]));
        Ok(Self {
            config,
            num_labels,
            params: s,
            root,
            arc_dep,
            arc_head,
            label_dep,
            label_head,
            arc_u,
            arc_b,
            label_u,
            label_w_dep,
            label_w_head,
            label_c,
        })
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn mlp(&self, g: &mut Graph<T>, p: &BoundParams, layer: &Linear, x: Var) -> Result<Var, HeadError> {
        let h = layer.forward(g, p, x)?;
        Ok(g.gelu(h)?)
    }

    fn with_root(&self, g: &mut Graph<T>, p: &BoundParams, words: Var) -> Result<Var, HeadError> {
        if g.shape(words)[0] == 0 {
            return Err(HeadError::EmptyInput);
        }
        Ok(g.concat_rows(&[p.var(self.root), words])?)
    }

    /// `[n + 1, n]`: row `i` is the candidate head (0 = ROOT), column `j`
    /// the dependent word `j + 1`.
    pub fn arc_scores(&self, g: &mut Graph<T>, p: &BoundParams, words: Var) -> Result<Var, HeadError> {
        let n = g.shape(words)[0];
        let ext = self.with_root(g, p, words)?;
        let heads = self.mlp(g, p, &self.arc_head, ext)?;
        let deps = self.mlp(g, p, &self.arc_dep, words)?;
        let hu = g.matmul(heads, p.var(self.arc_u))?;
        let dt = g.transpose(deps)?;
        let bilinear = g.matmul(hu, dt)?;
        let hb = g.matmul(heads, p.var(self.arc_b))?;
        let ones = g.constant(Tensor::ones([1, n]));
        let bias = g.matmul(hb, ones)?;
        Ok(g.add(bilinear, bias)?)
    }

    /// `[n, num_labels]` label scores of each word under the head
    /// `heads[j] ∈ 0..=n` (0 = ROOT).
    pub fn label_scores(&self, g: &mut Graph<T>, p: &BoundParams, words: Var, heads: &[usize]) -> Result<Var, HeadError> {
        let n = g.shape(words)[0];
        if heads.len() != n {
            return Err(HeadError::Config(format!("{} heads for {n} words", heads.len())));
        }
        let (l, nl) = (self.config.label_dim, self.num_labels);
        let ext = self.with_root(g, p, words)?;
        let hl = self.mlp(g, p, &self.label_head, ext)?;
        let dl = self.mlp(g, p, &self.label_dep, words)?;
        let hsel = g.gather_rows(hl, heads)?;
        let du = g.matmul(dl, p.var(self.label_u))?;
        let du = g.reshape(du, &[n, nl, l])?;
        let hcol = g.reshape(hsel, &[n, l, 1])?;
        let bilinear = g.matmul(du, hcol)?;
        let bilinear = g.reshape(bilinear, &[n, nl])?;
        let lin_d = g.matmul(dl, p.var(self.label_w_dep))?;
        let lin_h = g.matmul(hsel, p.var(self.label_w_head))?;
        let s = g.add(bilinear, lin_d)?;
        let s = g.add(s, lin_h)?;
        Ok(g.add_bias(s, p.var(self.label_c))?)
    }

    /// Head cross-entropy per word plus label cross-entropy at the gold head.
    pub fn loss(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        words: Var,
        gold_heads: &[usize],
        gold_labels: &[usize],
    ) -> Result<Var, HeadError> {
        let n = g.shape(words)[0];
        if gold_heads.len() != n || gold_labels.len() != n {
            return Err(HeadError::Config("gold annotation length differs from word count".into()));
        }
        let arcs = self.arc_scores(g, p, words)?;
        let by_dep = g.transpose(arcs)?;
        let self_mask = g.constant(Tensor::from_fn([n, n + 1], |k| {
            if k % (n + 1) == k / (n + 1) + 1 {
                T::lit(SELF_ARC)
            } else {
                T::zero()
            }
        }));
        let by_dep = g.add(by_dep, self_mask)?;
        let arc_loss = g.cross_entropy(by_dep, gold_heads)?;
        let labels = self.label_scores(g, p, words, gold_heads)?;
        let label_loss = g.cross_entropy(labels, gold_labels)?;
        Ok(g.add(arc_loss, label_loss)?)
    }

    /// Decoded tree and the best label under each decoded head.
    pub fn predict(&self, g: &mut Graph<T>, p: &BoundParams, words: Var) -> Result<(Vec<usize>, Vec<usize>), HeadError> {
        let arcs = self.arc_scores(g, p, words)?;
        let heads = max_arborescence(&score_matrix(g.value(arcs)));
        let labels = self.label_scores(g, p, words, &heads)?;
        let t = g.value(labels);
        Ok((heads, (0..t.rows()).map(|j| argmax(t.row(j))).collect()))
    }
}

/// `[n + 1, n]` arc tensor to the `(n + 1) × (n + 1)` matrix expected by
/// [`max_arborescence`] (column 0 unused).
pub fn score_matrix<T: Scalar>(arcs: &Tensor<T>) -> Vec<Vec<f64>> {
    let n = arcs.shape()[1];
    (0..=n)
        .map(|h| {
            std::iter::once(f64::NEG_INFINITY)
                .chain(arcs.row(h).iter().map(|v| v.to_f64_lossy()))
                .collect()
        })
        .collect()
}
