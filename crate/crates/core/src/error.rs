use ndcompute::ComputeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Compute(#[from] ComputeError),
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("step called on a finished episode")]
    StepAfterDone,
    #[error("invalid action id {0}")]
    InvalidAction(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("transition {0} crosses an episode boundary")]
    CrossEpisode(usize),
    #[error("{0}")]
    Shape(String),
    #[error("labelings differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("checkpoint section `{section}`: {msg}")]
    Checkpoint { section: String, msg: String },
    #[error("iteration {iteration}: {component} failed: {source}")]
    Component {
        iteration: u64,
        component: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Tags a failure with the iteration and component that produced it.
pub(crate) trait Within<T> {
    fn within(self, iteration: u64, component: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> Within<T> for std::result::Result<T, E> {
    fn within(self, iteration: u64, component: &'static str) -> Result<T> {
        self.map_err(|e| Error::Component {
            iteration,
            component,
            source: Box::new(e.into()),
        })
    }
}
