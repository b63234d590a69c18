use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left} vs {right}")]
    Shape {
        op: &'static str,
        left: String,
        right: String,
    },

    #[error("{0}")]
    Usage(String),

    #[error("non-finite gradient entry in {tensor} at index {index}")]
    NonFiniteGradient { tensor: &'static str, index: usize },

    #[error("non-finite loss {loss} at epoch {epoch}, update {update} (lr {lr})")]
    Diverged {
        epoch: usize,
        update: usize,
        lr: f64,
        loss: f64,
    },
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn shape(op: &'static str, left: impl ToString, right: impl ToString) -> Self {
        Error::Shape {
            op,
            left: left.to_string(),
            right: right.to_string(),
        }
    }

    /// True for errors caused by arithmetic blowing up rather than by bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient { .. } | Error::Diverged { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
