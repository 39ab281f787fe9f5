use crate::graph::{NodeId, Shape};

/// Errors raised while building graphs, evaluating them, or running inference.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {lhs} vs {rhs}")]
    ShapeMismatch {
        context: String,
        lhs: Shape,
        rhs: Shape,
    },
    #[error("unknown op `{0}`")]
    UnknownOp(String),
    #[error("placeholder {0} is not bound in the feed")]
    UnboundPlaceholder(NodeId),
    #[error("loss must be scalar, got shape {0}")]
    NonScalarLoss(Shape),
    #[error("gradient path passes through a non-differentiable input: {0}")]
    NonDifferentiableOp(String),
    #[error("gradients can only be taken with respect to parameters or placeholders, node {0} is neither")]
    InvalidGradientTarget(NodeId),
    #[error("node {0} is not a parameter")]
    NotAParameter(NodeId),
    #[error("node {0} does not exist")]
    UnknownNode(NodeId),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("family `{0}` does not support sampling")]
    UnsupportedSample(String),
    #[error("family `{0}` does not support log_prob")]
    UnsupportedLogProb(String),
    #[error("mean is undefined for family `{0}`")]
    MeanUndefined(String),
    #[error("a family named `{0}` is already registered")]
    DuplicateName(String),
    #[error("custom family `{0}` needs a sampler or a fixed value")]
    NeitherSamplerNorValue(String),
    #[error("random variable {0} has no value in the log joint")]
    MissingValue(usize),
    #[error("substitution would introduce a cycle at node {0}")]
    CycleIntroduced(NodeId),
    #[error("{algorithm} cannot use a `{family}` posterior (random variable {rv})")]
    WrongPosteriorFamily {
        algorithm: String,
        family: String,
        rv: usize,
    },
    #[error("inference problem has no latent variables and no model parameters")]
    EmptyLatentAndNoParameters,
    #[error("invalid inference problem: {0}")]
    InvalidProblem(String),
    #[error("loss or gradient became non-finite at iteration {iteration}")]
    DivergedLoss { iteration: usize },
    #[error("sample buffer is full ({0} samples)")]
    BufferFull(usize),
    #[error("importance weights are degenerate (all zero or non-finite)")]
    DegenerateWeights,
    #[error("non-positive curvature {curvature} at coordinate {index} of the mode")]
    NonPositiveCurvature { index: usize, curvature: f64 },
    #[error("HMC trajectory diverged: |dH| = {0}")]
    DivergedTrajectory(f64),
    #[error("unknown metric `{0}`")]
    MetricUnknown(String),
    #[error("discrepancy must return a scalar, got shape {0}")]
    NonScalarStatistic(Shape),
    #[error("{0}")]
    Lifecycle(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, lhs: &Shape, rhs: &Shape) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            lhs: lhs.clone(),
            rhs: rhs.clone(),
        }
    }
}
