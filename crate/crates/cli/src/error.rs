use thiserror::Error;

use mergelab_core::Error as CoreError;

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("incompatible checkpoints: {0}")]
    Incompatible(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<CliError>,
    },
}

impl CliError {
    /// 2 for config or input problems, 3 for incompatible checkpoints, 4 for
    /// numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Incompatible(_) => 3,
            CliError::Core(CoreError::ShapeMismatch(_)) => 3,
            CliError::Core(CoreError::NonFinite(_)) => 4,
            CliError::Core(_) => 2,
            CliError::Stage { source, .. } => source.exit_code(),
        }
    }
}

/// Names the pipeline stage an error came from.
pub trait StageContext<T> {
    fn stage(self, name: impl FnOnce() -> String) -> CliResult<T>;
}

impl<T, E: Into<CliError>> StageContext<T> for std::result::Result<T, E> {
    fn stage(self, name: impl FnOnce() -> String) -> CliResult<T> {
        self.map_err(|e| CliError::Stage { stage: name(), source: Box::new(e.into()) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(CoreError::ShapeMismatch("x".into())).exit_code(), 3);
        let e: CliResult<()> = Err(CoreError::NonFinite("x".into())).stage(|| "merge".into());
        let e = e.unwrap_err();
        assert_eq!(e.exit_code(), 4);
        assert!(e.to_string().starts_with("merge: "));
    }
}
