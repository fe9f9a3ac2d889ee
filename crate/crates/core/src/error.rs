use clutterbridge_numcore::NumError;
use clutterbridge_sim::SimError;

#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    #[error(transparent)]
    Num(#[from] NumError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("training diverged at epoch {epoch} (last finite epoch: {last_finite:?})")]
    Diverged { epoch: usize, last_finite: Option<usize> },
    #[error("non-finite {component} loss at step {step}")]
    NonFiniteLoss { component: &'static str, step: usize },
    #[error("policy did not reach {threshold} (final evaluation {achieved:.3}) after {} iterations", curve.len())]
    NotConverged {
        threshold: f64,
        achieved: f64,
        curve: Vec<crate::policy::CurvePoint>,
    },
    #[error("source replay failed for {failed} of {total} samples")]
    Replay { failed: usize, total: usize },
    #[error("bad file format: {0}")]
    Format(String),
    #[error("truncated file at byte offset {offset}")]
    Truncated { offset: usize },
}

pub type Result<T> = std::result::Result<T, CoreError>;
