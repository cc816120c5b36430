use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{lr_at, mean_grads, thread_pool, AdamW, OptimConfig, TraceRow, TrainError};
use crate::data::{BatchMixer, CorpusRecord};
use crate::masking::{mask_sequence, MaskSpec};
use crate::model::PixelModel;
use crate::numerics::{Graph, Tensor};
use crate::render::{RenderConfig, Renderer};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub mask: MaskSpec,
    /// `total_steps` is taken from `steps`.
    pub optim: OptimConfig,
    /// Patch geometry is taken from the model.
    pub render: RenderConfig,
    /// Checkpoint cadence in steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub log_every: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 32,
            seed: 0,
            mask: MaskSpec::default(),
            optim: OptimConfig {
                peak_lr: 1.5e-4,
                warmup_steps: 100,
                ..OptimConfig::default()
            },
            render: RenderConfig::default(),
            checkpoint_every: 0,
            checkpoint_dir: None,
            log_every: 50,
        }
    }
}

impl PretrainConfig {
    /// Short overfitting run on a few sentences: 300 steps of 32 samples,
    /// peak lr 1.5e-3 after 10 warmup steps, gradient norm capped at 1.
    pub fn smoke() -> Self {
        Self {
            steps: 300,
            batch_size: 32,
            optim: OptimConfig {
                peak_lr: 1.5e-3,
                warmup_steps: 10,
                grad_clip: Some(1.0),
                ..OptimConfig::default()
            },
            log_every: 0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainOutcome {
    /// Mean batch loss before each update.
    pub losses: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub skipped_steps: usize,
    /// Masked zero-variance patches whose norm-pix target fell back to raw
    /// pixels, summed over all steps.
    pub degenerate_patches: usize,
}

/// SplitMix64 finalizer over a combination of inputs; decorrelates the
/// per-sample random streams.
pub(crate) fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Masked-patch reconstruction training. Every step draws an equal-share
/// multilingual batch, masks each sample with its own seeded stream,
/// computes per-sample gradients in parallel and reduces them in batch
/// order. Identical inputs give identical traces and weights.
pub fn pretrain<T: Scalar>(
    model: &mut PixelModel<T>,
    corpus: &[CorpusRecord],
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome, TrainError> {
    if corpus.is_empty() {
        return Err(TrainError::Config("empty pretraining corpus".into()));
    }
    let optim_cfg = OptimConfig {
        total_steps: cfg.steps,
        warmup_steps: cfg.optim.warmup_steps.min(cfg.steps),
        ..cfg.optim.clone()
    };
    cfg.mask.validate()?;
    let mut optim = AdamW::new(optim_cfg.clone())?;
    let render = RenderConfig {
        patch_size: model.config().patch_size,
        max_patches: model.config().max_patches,
        ..cfg.render.clone()
    };
    let renderer = Renderer::new(render)?;
    let rendered: Vec<_> = corpus.par_iter().map(|r| renderer.render_text(&r.text)).collect();
    let mut groups: Vec<(String, Vec<usize>)> = Vec::new();
    for (i, r) in corpus.iter().enumerate() {
        match groups.iter_mut().find(|(l, _)| *l == r.lang) {
            Some((_, v)) => v.push(i),
            None => groups.push((r.lang.clone(), vec![i])),
        }
    }
    let batch_size = cfg.batch_size.max(groups.len());
    let mut mixer = BatchMixer::new(groups, batch_size, cfg.seed)?;
    let pool = thread_pool()?;
    let mut out = PretrainOutcome::default();

    for step in 0..cfg.steps {
        let batch = mixer.next_batch_cycling();
        let frozen: &PixelModel<T> = model;
        let results: Vec<Result<(f64, usize, Vec<Tensor<T>>), TrainError>> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(i, s)| {
                    let seq = &rendered[s.item];
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, step as u64, i as u64));
                    let mask = mask_sequence(seq, &cfg.mask, &mut rng)?;
                    let mut g = Graph::training(derive_seed(!cfg.seed, step as u64, i as u64));
                    let p = frozen.bind(&mut g);
                    let l = frozen.pretrain_loss(&mut g, &p, seq, &mask)?;
                    let grads = g.backward(l.loss)?;
                    Ok((g.value(l.loss).item().to_f64_lossy(), l.degenerate_patches, p.grads(&g, &grads)))
                })
                .collect()
        });
        let mut loss = 0.0;
        let mut per_sample = Vec::with_capacity(results.len());
        for r in results {
            let (l, d, grads) = r?;
            loss += l;
            out.degenerate_patches += d;
            per_sample.push(grads);
        }
        loss /= per_sample.len() as f64;
        out.losses.push(loss);
        out.trace.push(TraceRow::new(step, "train", "mae_loss", loss));
        if cfg.log_every > 0 && step % cfg.log_every == 0 {
            log::info!("pretrain step {step}: loss {loss:.5}");
        }

        let grads = mean_grads(per_sample).expect("non-empty batch");
        let lr = lr_at(step, &optim_cfg)?;
        let mut params: Vec<&mut Tensor<T>> = model.params_mut().tensors_mut().collect();
        match optim.step(&mut params, &grads, lr) {
            Ok(()) => {}
            Err(TrainError::NonFiniteGrad { .. }) => {
                log::warn!("pretrain step {step}: non-finite gradient, update skipped");
                out.skipped_steps += 1;
            }
            Err(e) => return Err(e),
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            if let Some(dir) = &cfg.checkpoint_dir {
                std::fs::create_dir_all(dir)?;
                model.save(dir.join(format!("step-{:07}.pxck", step + 1)))?;
            }
        }
    }
    Ok(out)
}

/// Mean masked-reconstruction loss over `corpus`, each text under
/// `masks_per_text` masks drawn from `seed`; no dropout, no updates.
pub fn evaluate_mae<T: Scalar>(
    model: &PixelModel<T>,
    corpus: &[CorpusRecord],
    mask: &MaskSpec,
    render: &RenderConfig,
    masks_per_text: usize,
    seed: u64,
) -> Result<f64, TrainError> {
    if corpus.is_empty() || masks_per_text == 0 {
        return Err(TrainError::Config("nothing to evaluate".into()));
    }
    let renderer = Renderer::new(RenderConfig {
        patch_size: model.config().patch_size,
        max_patches: model.config().max_patches,
        ..render.clone()
    })?;
    let losses: Vec<f64> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, r)| {
            let seq = renderer.render_text(&r.text);
            let mut total = 0.0;
            for k in 0..masks_per_text {
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64, k as u64));
                let m = mask_sequence(&seq, mask, &mut rng)?;
                let mut g = Graph::no_grad();
                let p = model.bind_frozen(&mut g);
                let l = model.pretrain_loss(&mut g, &p, &seq, &m)?;
                total += g.value(l.loss).item().to_f64_lossy();
            }
            Ok(total / masks_per_text as f64)
        })
        .collect::<Result<_, TrainError>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}
