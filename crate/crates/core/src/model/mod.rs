//! Masked-autoencoder transformer over patch sequences.
//!
//! The encoder sees CLS plus the visible patches only; padding never enters
//! it. A shallow decoder re-inserts a learned mask token at every masked
//! position and predicts that patch's pixels.

mod checkpoint;
mod config;
mod layers;
mod params;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use config::ModelConfig;
pub use layers::{Block, LayerNorm, Linear};
pub use params::{BoundParams, ParamId, ParamStore};

use crate::masking::{apply_mask, Mask, MaskError};
use crate::numerics::{Graph, NumericsError, Tensor, Var};
use crate::render::PatchSequence;
use crate::Scalar;

pub(crate) use layers::INIT_STD;

/// Per-patch variance below which norm-pix normalization is skipped.
pub const DEGENERATE_VARIANCE: f64 = 1e-12;
const NORM_PIX_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("patch size {got} does not match model patch size {expected}")]
    PatchSize { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn index_err(index: usize, len: usize) -> ModelError {
    NumericsError::Index { index, len }.into()
}

/// Hidden states of one encoder pass.
#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// `num_layers + 1` matrices of shape `[1 + visible.len(), hidden_dim]`;
    /// entry 0 is the embedding layer, the last one is layer-normed.
    pub hidden: Vec<Var>,
    /// Patch index of hidden row `1 + i`.
    pub visible: Vec<usize>,
    /// Patch count of the encoded sequence.
    pub num_patches: usize,
}

impl EncoderOutput {
    pub fn last(&self) -> Var {
        *self.hidden.last().expect("at least the embedding layer")
    }

    /// Hidden-state row of patch `p`, if it was encoded.
    pub fn row_of(&self, p: usize) -> Option<usize> {
        self.visible.binary_search(&p).ok().map(|i| i + 1)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct MaeLoss {
    pub loss: Var,
    /// Masked patches of zero pixel variance whose target was left
    /// unnormalized.
    pub degenerate_patches: usize,
}

#[derive(Clone, Debug)]
pub struct PixelModel<T> {
    config: ModelConfig,
    params: ParamStore<T>,
    patch_proj: Linear,
    cls: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    norm: LayerNorm,
    dec_embed: Linear,
    mask_token: ParamId,
    dec_pos_emb: ParamId,
    dec_blocks: Vec<Block>,
    dec_norm: LayerNorm,
    dec_pred: Linear,
}

impl<T: Scalar> PixelModel<T> {
    /// Fresh model with N(0, 0.02²) weights, zero biases and unit gains.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let rng = &mut ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let (h, d, pp) = (c.hidden_dim, c.decoder_dim, c.patch_pixels());
        let mut s = ParamStore::default();
        let patch_proj = Linear::new(&mut s, "embed.patch", pp, h, rng);
        let cls = s.add_normal("embed.cls", &[1, h], INIT_STD, rng);
        let pos_emb = s.add_normal("embed.pos", &[c.max_patches + 1, h], INIT_STD, rng);
        let blocks = (0..c.num_layers)
            .map(|i| Block::new(&mut s, &format!("encoder.{i}"), h, c.num_heads, h * c.mlp_ratio, c.dropout, rng))
            .collect();
        let norm = LayerNorm::new(&mut s, "encoder.norm", h);
        let dec_embed = Linear::new(&mut s, "decoder.embed", h, d, rng);
        let mask_token = s.add_normal("decoder.mask_token", &[1, d], INIT_STD, rng);
        let dec_pos_emb = s.add_normal("decoder.pos", &[c.max_patches + 1, d], INIT_STD, rng);
        let dec_blocks = (0..c.decoder_layers)
            .map(|i| Block::new(&mut s, &format!("decoder.{i}"), d, c.decoder_heads, d * c.mlp_ratio, c.dropout, rng))
            .collect();
        let dec_norm = LayerNorm::new(&mut s, "decoder.norm", d);
        let dec_pred = Linear::new(&mut s, "decoder.pred", d, pp, rng);
        Ok(Self {
            config,
            params: s,
            patch_proj,
            cls,
            pos_emb,
            blocks,
            norm,
            dec_embed,
            mask_token,
            dec_pos_emb,
            dec_blocks,
            dec_norm,
            dec_pred,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Changes the dropout probability of every encoder and decoder block.
    pub fn set_dropout(&mut self, p: f64) -> Result<(), ModelError> {
        if !(0.0..1.0).contains(&p) {
            return Err(ModelError::Config(format!("dropout {p} outside [0, 1)")));
        }
        self.config.dropout = p;
        for b in self.blocks.iter_mut().chain(self.dec_blocks.iter_mut()) {
            b.set_dropout(p);
        }
        Ok(())
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph<T>) -> BoundParams {
        self.params.bind(g)
    }

    pub fn bind_frozen(&self, g: &mut Graph<T>) -> BoundParams {
        self.params.bind_frozen(g)
    }

    /// Same weights in another precision.
    pub fn cast<U: Scalar>(&self) -> PixelModel<U> {
        PixelModel {
            config: self.config.clone(),
            params: self.params.cast(),
            patch_proj: self.patch_proj.clone(),
            cls: self.cls,
            pos_emb: self.pos_emb,
            blocks: self.blocks.clone(),
            norm: self.norm.clone(),
            dec_embed: self.dec_embed.clone(),
            mask_token: self.mask_token,
            dec_pos_emb: self.dec_pos_emb,
            dec_blocks: self.dec_blocks.clone(),
            dec_norm: self.dec_norm.clone(),
            dec_pred: self.dec_pred.clone(),
        }
    }

    fn patch_matrix(&self, seq: &PatchSequence) -> Result<Tensor<T>, ModelError> {
        if seq.patch_size != self.config.patch_size {
            return Err(ModelError::PatchSize {
                expected: self.config.patch_size,
                got: seq.patch_size,
            });
        }
        let n = seq.num_patches();
        if n > self.config.max_patches {
            return Err(NumericsError::Shape(format!(
                "{n} patches exceed the {} position embeddings",
                self.config.max_patches
            ))
            .into());
        }
        let data = seq.pixels.iter().map(|&v| T::lit(f64::from(v))).collect();
        Ok(Tensor::new([n, seq.patch_len()], data)?)
    }

    /// `[num_patches + 1, hidden_dim]`: CLS at row 0, patch `i` at row
    /// `i + 1`, each plus its absolute position embedding.
    pub fn embed_patches(&self, g: &mut Graph<T>, p: &BoundParams, seq: &PatchSequence) -> Result<Var, ModelError> {
        let x = g.constant(self.patch_matrix(seq)?);
        let x = self.patch_proj.forward(g, p, x)?;
        let x = g.concat_rows(&[p.var(self.cls), x])?;
        let rows: Vec<usize> = (0..=seq.num_patches()).collect();
        let pos = g.gather_rows(p.var(self.pos_emb), &rows)?;
        Ok(g.add(x, pos)?)
    }

    /// Runs the encoder over CLS plus `visible` (ascending patch indices).
    pub fn encode(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        tokens: Var,
        visible: &[usize],
    ) -> Result<EncoderOutput, ModelError> {
        let num_patches = g.shape(tokens)[0] - 1;
        for (i, &v) in visible.iter().enumerate() {
            if v >= num_patches {
                return Err(index_err(v, num_patches));
            }
            if i > 0 && visible[i - 1] >= v {
                return Err(NumericsError::Shape("visible indices must be strictly ascending".into()).into());
            }
        }
        let rows: Vec<usize> = std::iter::once(0).chain(visible.iter().map(|&v| v + 1)).collect();
        let mut x = g.gather_rows(tokens, &rows)?;
        let mut hidden = Vec::with_capacity(self.blocks.len() + 1);
        hidden.push(x);
        for (i, block) in self.blocks.iter().enumerate() {
            x = block.forward(g, p, x)?;
            if i + 1 == self.blocks.len() {
                x = self.norm.forward(g, p, x)?;
            }
            hidden.push(x);
        }
        Ok(EncoderOutput {
            hidden,
            visible: visible.to_vec(),
            num_patches,
        })
    }

    /// Fine-tune mode: every attended patch (text and separator) is visible,
    /// so patch `i` sits at hidden row `i + 1`.
    pub fn encode_unmasked(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        seq: &PatchSequence,
    ) -> Result<EncoderOutput, ModelError> {
        let tokens = self.embed_patches(g, p, seq)?;
        let visible: Vec<usize> = (0..seq.attended_len()).collect();
        self.encode(g, p, tokens, &visible)
    }

    /// Predicted pixels `[masked.len(), patch_size²]`, row `i` for patch
    /// `masked[i]`.
    pub fn reconstruct(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        enc: &EncoderOutput,
        masked: &[usize],
    ) -> Result<Var, ModelError> {
        let pp = self.config.patch_pixels();
        if masked.is_empty() {
            return Ok(g.constant(Tensor::zeros([0, pp])));
        }
        let n = enc.num_patches;
        // slot[q]: row of patch q in [dec_embed(encoded); mask tokens]
        let mut slot: Vec<Option<usize>> = vec![None; n];
        for (r, &v) in enc.visible.iter().enumerate() {
            slot[v] = Some(1 + r);
        }
        let v = enc.visible.len();
        for (j, &q) in masked.iter().enumerate() {
            if q >= n {
                return Err(index_err(q, n));
            }
            if slot[q].is_some() {
                return Err(NumericsError::Shape(format!("patch {q} is both visible and masked, or masked twice")).into());
            }
            slot[q] = Some(1 + v + j);
        }

        let x = self.dec_embed.forward(g, p, enc.last())?;
        let tokens = g.gather_rows(p.var(self.mask_token), &vec![0; masked.len()])?;
        let all = g.concat_rows(&[x, tokens])?;
        let mut order = vec![0];
        let mut pos_rows = vec![0];
        // decoder row of each patch, ascending patch order after CLS
        let mut dec_row = vec![0usize; n];
        for (q, s) in slot.iter().enumerate() {
            if let Some(s) = *s {
                dec_row[q] = order.len();
                order.push(s);
                pos_rows.push(q + 1);
            }
        }
        let x = g.gather_rows(all, &order)?;
        let pos = g.gather_rows(p.var(self.dec_pos_emb), &pos_rows)?;
        let mut x = g.add(x, pos)?;
        for block in &self.dec_blocks {
            x = block.forward(g, p, x)?;
        }
        let x = self.dec_norm.forward(g, p, x)?;
        let picked: Vec<usize> = masked.iter().map(|&q| dec_row[q]).collect();
        let x = g.gather_rows(x, &picked)?;
        Ok(self.dec_pred.forward(g, p, x)?)
    }

    /// Mean over masked patches of the per-patch mean squared error. Row `i`
    /// of `pred` is compared with patch `masked[i]` of `target`.
    pub fn mae_loss(
        &self,
        g: &mut Graph<T>,
        pred: Var,
        target: &PatchSequence,
        masked: &[usize],
        norm_pix: bool,
    ) -> Result<MaeLoss, ModelError> {
        mae_loss(g, pred, target, masked, norm_pix)
    }

    /// Full pretraining objective for `input` under `mask`; targets come from
    /// `target`, which normally is `input` itself.
    pub fn pretrain_loss_with_target(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        input: &PatchSequence,
        target: &PatchSequence,
        mask: &Mask,
    ) -> Result<MaeLoss, ModelError> {
        let (visible, masked) = apply_mask(input, mask)?;
        let tokens = self.embed_patches(g, p, input)?;
        let enc = self.encode(g, p, tokens, &visible)?;
        let pred = self.reconstruct(g, p, &enc, &masked)?;
        mae_loss(g, pred, target, &masked, self.config.norm_pix_loss)
    }

    pub fn pretrain_loss(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        seq: &PatchSequence,
        mask: &Mask,
    ) -> Result<MaeLoss, ModelError> {
        self.pretrain_loss_with_target(g, p, seq, seq, mask)
    }

    /// Fine-tune-mode hidden states of every layer, evaluated without a tape.
    pub fn hidden_states(&self, seq: &PatchSequence) -> Result<Vec<Tensor<T>>, ModelError> {
        let mut g = Graph::no_grad();
        let p = self.bind_frozen(&mut g);
        let enc = self.encode_unmasked(&mut g, &p, seq)?;
        Ok(enc.hidden.iter().map(|&h| g.value(h).clone()).collect())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: json!(self.config),
            tensors: self.params.iter().map(|(n, t)| (n.to_string(), t.cast())).collect(),
        }
    }

    /// Rebuilds a model from a checkpoint. Tensors are matched by name;
    /// extra tensors (such as a task head's) are ignored.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, ModelError> {
        let doc = ck.config.get("model").unwrap_or(&ck.config);
        let config: ModelConfig =
            serde_json::from_value(doc.clone()).map_err(|e| ModelError::Checkpoint(format!("config: {e}")))?;
        let mut model = Self::new(config, 0)?;
        ck.restore_into(&mut model.params)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Norm-pix target of one patch: `(x − mean) / √(var + 1e-6)`, or the raw
/// pixels when the patch has (near) zero variance. The flag reports the
/// fallback.
pub fn norm_pix_target(patch: &[f32]) -> (Vec<f64>, bool) {
    let n = patch.len() as f64;
    let mean = patch.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let var = patch.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
    if var < DEGENERATE_VARIANCE {
        return (patch.iter().map(|&v| f64::from(v)).collect(), true);
    }
    let inv = 1.0 / (var + NORM_PIX_EPS).sqrt();
    (patch.iter().map(|&v| (f64::from(v) - mean) * inv).collect(), false)
}

/// See [`PixelModel::mae_loss`]. With nothing masked the loss is the constant 0.
pub fn mae_loss<T: Scalar>(
    g: &mut Graph<T>,
    pred: Var,
    target: &PatchSequence,
    masked: &[usize],
    norm_pix: bool,
) -> Result<MaeLoss, ModelError> {
    let pl = target.patch_len();
    if g.shape(pred) != [masked.len(), pl] {
        return Err(NumericsError::Shape(format!(
            "prediction {:?} for {} masked patches of {pl} pixels",
            g.shape(pred),
            masked.len()
        ))
        .into());
    }
    if masked.is_empty() {
        let loss = g.constant(Tensor::scalar(T::zero()));
        return Ok(MaeLoss {
            loss,
            degenerate_patches: 0,
        });
    }
    let mut data = Vec::with_capacity(masked.len() * pl);
    let mut degenerate = 0;
    for &q in masked {
        if q >= target.num_patches() {
            return Err(index_err(q, target.num_patches()));
        }
        let patch = target.patch(q);
        if norm_pix {
            let (t, fallback) = norm_pix_target(patch);
            degenerate += usize::from(fallback);
            data.extend(t.into_iter().map(T::lit));
        } else {
            data.extend(patch.iter().map(|&v| T::lit(f64::from(v))));
        }
    }
    if degenerate > 0 {
        log::trace!("{degenerate} zero-variance masked patches kept unnormalized");
    }
    let t = g.constant(Tensor::new([masked.len(), pl], data)?);
    let diff = g.sub(pred, t)?;
    let sq = g.mul(diff, diff)?;
    let loss = g.mean(sq)?;
    Ok(MaeLoss {
        loss,
        degenerate_patches: degenerate,
    })
}
