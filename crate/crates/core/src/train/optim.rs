use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::numerics::Tensor;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub peak_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
    /// Global gradient-norm cap; off unless set.
    pub grad_clip: Option<f64>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            peak_lr: 5e-5,
            warmup_steps: 100,
            total_steps: 15_000,
            grad_clip: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let open01 = |b: f64| b > 0.0 && b < 1.0;
        if !open01(self.beta1) || !open01(self.beta2) {
            return Err(TrainError::Config(format!("betas ({}, {}) must lie in (0, 1)", self.beta1, self.beta2)));
        }
        if !(self.eps > 0.0) || !(self.peak_lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(TrainError::Config("eps must be positive, lr and weight decay non-negative".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(TrainError::Config(format!(
                "warmup {} exceeds total steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return Err(TrainError::Config("grad_clip must be positive".into()));
        }
        Ok(())
    }
}

/// Linear warmup from 0 to `peak_lr` over `warmup_steps`, then linear decay
/// to 0 at `total_steps`.
pub fn lr_at(step: usize, cfg: &OptimConfig) -> Result<f64, TrainError> {
    let (w, t) = (cfg.warmup_steps, cfg.total_steps);
    if step > t {
        return Err(TrainError::Range { step, total: t });
    }
    if step < w {
        return Ok(cfg.peak_lr * step as f64 / w as f64);
    }
    if t == w {
        return Ok(cfg.peak_lr);
    }
    Ok(cfg.peak_lr * (t - step) as f64 / (t - w) as f64)
}

/// AdamW moments for a fixed list of tensors.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    cfg: OptimConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    steps: u64,
    skipped: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(cfg: OptimConfig) -> Result<Self, TrainError> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            m: Vec::new(),
            v: Vec::new(),
            steps: 0,
            skipped: 0,
        })
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    /// Updates applied so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Updates refused because a gradient was not finite.
    pub fn skipped(&self) -> u64 {
        self.skipped
    }

    /// One update of `params` with `grads` (same order and shapes). A
    /// non-finite gradient leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<(), TrainError> {
        if params.len() != grads.len() || params.iter().zip(grads).any(|(p, g)| p.shape() != g.shape()) {
            return Err(TrainError::Config("parameter and gradient lists differ".into()));
        }
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| Tensor::zeros(g.shape().to_vec())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != grads.len() || self.m.iter().zip(grads).any(|(m, g)| m.shape() != g.shape()) {
            return Err(TrainError::Config("gradient shapes changed between steps".into()));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            self.skipped += 1;
            return Err(TrainError::NonFiniteGrad {
                step: self.steps + self.skipped,
            });
        }
        let clip = match self.cfg.grad_clip {
            Some(c) => {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.data())
                    .map(|x| x.to_f64_lossy().powi(2))
                    .sum::<f64>()
                    .sqrt();
                if norm > c {
                    c / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.steps += 1;
        let c = &self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bc2 = 1.0 - c.beta2.powi(self.steps as i32);
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let (one, eps) = (T::one(), T::lit(c.eps));
        let (lr_t, decay) = (T::lit(lr), T::lit(1.0 - lr * c.weight_decay));
        let (bc1, bc2, clip) = (T::lit(bc1), T::lit(bc2), T::lit(clip));
        for (i, p) in params.iter_mut().enumerate() {
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            for (k, w) in p.data_mut().iter_mut().enumerate() {
                let gk = g[k] * clip;
                m[k] = b1 * m[k] + (one - b1) * gk;
                v[k] = b2 * v[k] + (one - b2) * gk * gk;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                *w = *w * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Stops after `patience` consecutive evaluations that fail to beat the
/// best score by more than `threshold`. Higher scores are better.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopper {
    pub patience: usize,
    pub threshold: f64,
    best: Option<f64>,
    best_step: usize,
    bad_evals: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            threshold: 0.0,
            best: None,
            best_step: 0,
            bad_evals: 0,
        }
    }

    /// Records an evaluation; returns whether it is a new best.
    pub fn observe(&mut self, step: usize, score: f64) -> bool {
        let improved = match self.best {
            None => true,
            Some(b) => score > b + self.threshold,
        };
        if improved {
            self.best = Some(score);
            self.best_step = step;
            self.bad_evals = 0;
        } else {
            self.bad_evals += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.bad_evals >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_step(&self) -> usize {
        self.best_step
    }
}
