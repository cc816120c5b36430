//! Tokenizer-free pixel language modelling: text is rendered to grayscale
//! patches, a masked-autoencoder transformer is pretrained on them, and task
//! heads, probes and retrieval analyses run on top of the encoder.
//!
//! All numeric code is generic over [`Scalar`]; the aliases below fix the
//! common choices (`f32` for training, `f64` for gradient checks).

mod scalar;

pub mod numerics;
pub mod masking;
pub mod heads;
pub mod model;
pub mod render;
pub mod data;
pub mod metrics;
pub mod train;
pub mod analysis;

pub use scalar::Scalar;

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type Graph32 = numerics::Graph<f32>;
pub type Graph64 = numerics::Graph<f64>;
pub type PixelModel32 = model::PixelModel<f32>;
pub type PixelModel64 = model::PixelModel<f64>;
pub type FinetunedModel32 = train::FinetunedModel<f32>;
pub type AdamW32 = train::AdamW<f32>;

/// Any error raised by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Mask(#[from] masking::MaskError),
    #[error(transparent)]
    Render(#[from] render::RenderError),
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Head(#[from] heads::HeadError),
    #[error(transparent)]
    Data(#[from] data::DataError),
    #[error(transparent)]
    Metric(#[from] metrics::MetricError),
    #[error(transparent)]
    Train(#[from] train::TrainError),
    #[error(transparent)]
    Analysis(#[from] analysis::AnalysisError),
}

/// Coarse failure class, e.g. for process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad configuration or arguments.
    Config,
    /// Unreadable, malformed or insufficient input data, or I/O failure.
    Data,
    /// Non-finite values, zero norms, shape faults.
    Numeric,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        use analysis::AnalysisError as A;
        match self {
            Error::Numerics(_) | Error::Head(_) => ErrorKind::Numeric,
            Error::Model(e) => model_kind(e),
            Error::Train(e) => train_kind(e),
            Error::Analysis(e) => match e {
                A::ZeroNorm { .. } => ErrorKind::Numeric,
                A::Config(_) | A::Layer { .. } => ErrorKind::Config,
                A::Model(m) => model_kind(m),
                A::Train(t) => train_kind(t),
                _ => ErrorKind::Data,
            },
            Error::Mask(_) | Error::Render(_) | Error::Data(_) | Error::Metric(_) => ErrorKind::Data,
        }
    }
}

fn model_kind(e: &model::ModelError) -> ErrorKind {
    match e {
        model::ModelError::Numerics(_) => ErrorKind::Numeric,
        model::ModelError::Config(_) => ErrorKind::Config,
        _ => ErrorKind::Data,
    }
}

fn train_kind(e: &train::TrainError) -> ErrorKind {
    use train::TrainError as T;
    match e {
        T::Config(_) | T::Range { .. } => ErrorKind::Config,
        T::NonFiniteGrad { .. } | T::Numerics(_) | T::Head(_) => ErrorKind::Numeric,
        T::Model(m) => model_kind(m),
        _ => ErrorKind::Data,
    }
}
