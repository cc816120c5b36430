//! Optimization: AdamW with warmup/decay, masked-patch pretraining and
//! task fine-tuning with early stopping.

mod finetune;
mod optim;
mod pretrain;

use std::io::Write;

use serde::{Deserialize, Serialize};

pub use finetune::{
    finetune, finetune_lr_grid, select_lr, EvalCadence, FinetuneConfig, FinetuneOutcome, FinetunedModel, Task,
    TaskData, TaskHead, DEFAULT_LR_GRID,
};
pub use optim::{lr_at, AdamW, EarlyStopper, OptimConfig};
pub use pretrain::{evaluate_mae, pretrain, PretrainConfig, PretrainOutcome};

use crate::data::DataError;
use crate::heads::HeadError;
use crate::masking::MaskError;
use crate::metrics::MetricError;
use crate::model::ModelError;
use crate::numerics::{NumericsError, Tensor};
use crate::render::RenderError;
use crate::Scalar;

/// Environment variable capping the worker threads used for per-sample
/// gradient computation.
pub const THREADS_ENV: &str = "PXM4_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("step {step} outside the schedule of {total} steps")]
    Range { step: usize, total: usize },
    #[error("non-finite gradient at update {step}; step skipped")]
    NonFiniteGrad { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Head(#[from] HeadError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One line of a loss or metric trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub split: String,
    pub metric_name: String,
    pub value: f64,
}

impl TraceRow {
    pub fn new(step: usize, split: &str, metric_name: &str, value: f64) -> Self {
        Self {
            step,
            split: split.to_string(),
            metric_name: metric_name.to_string(),
            value,
        }
    }
}

pub fn write_trace_csv<W: Write>(w: W, rows: &[TraceRow]) -> Result<(), TrainError> {
    let mut wr = csv::Writer::from_writer(w);
    for r in rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_trace_csv<R: std::io::Read>(r: R) -> Result<Vec<TraceRow>, TrainError> {
    Ok(csv::Reader::from_reader(r).deserialize().collect::<Result<_, _>>()?)
}

/// Worker pool honouring [`THREADS_ENV`]; rayon's default size otherwise.
pub fn thread_pool() -> Result<rayon::ThreadPool, TrainError> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| TrainError::Config(format!("{THREADS_ENV}=`{v}` is not a thread count")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| TrainError::Config(e.to_string()))
}

/// Mean of per-sample gradient lists, summed in sample order so the result
/// does not depend on thread scheduling.
pub(crate) fn mean_grads<T: Scalar>(per_sample: Vec<Vec<Tensor<T>>>) -> Option<Vec<Tensor<T>>> {
    let n = per_sample.len();
    let mut it = per_sample.into_iter();
    let mut acc = it.next()?;
    for grads in it {
        for (a, g) in acc.iter_mut().zip(&grads) {
            a.add_assign(g);
        }
    }
    let inv = T::lit(1.0 / n as f64);
    for a in &mut acc {
        a.scale_in_place(inv);
    }
    Some(acc)
}
