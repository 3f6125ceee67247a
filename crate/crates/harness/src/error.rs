use std::io;
use std::path::{Path, PathBuf};

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 2,
            HarnessError::Data(_) | HarnessError::Io { .. } => 3,
            HarnessError::Checkpoint(_) => 4,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(io::Error) -> HarnessError + '_ {
        move |source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

impl From<nellcom::Error> for HarnessError {
    fn from(e: nellcom::Error) -> Self {
        use nellcom::Error as E;
        match e {
            E::InvalidConfig(_) | E::UnknownGrammar(_) => HarnessError::Config(e.to_string()),
            E::Checkpoint(_) => HarnessError::Checkpoint(e.to_string()),
            _ => HarnessError::Data(e.to_string()),
        }
    }
}
