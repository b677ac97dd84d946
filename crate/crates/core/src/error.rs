use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid {h}x{w} is not a power of two in both dimensions")]
    NonPowerOfTwo { h: usize, w: usize },

    #[error("CFL condition violated at step {step}: courant number {courant:.4} >= 1 (reduce dt)")]
    Cfl { step: usize, courant: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("infeasible capped simplex: {m} weights with cap {cap} cannot sum to one")]
    InfeasibleCap { m: usize, cap: f64 },

    #[error("checksum mismatch for blob {blob}: expected {expected:08x}, found {found:08x}")]
    Checksum {
        blob: String,
        expected: u32,
        found: u32,
    },

    #[error("missing file {}", .0.display())]
    Missing(PathBuf),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Stable short name of the variant, for machine-readable reports.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::Config(_) => "config",
            Error::NonPowerOfTwo { .. } => "grid",
            Error::Cfl { .. } => "cfl",
            Error::NonFinite(_) => "non_finite",
            Error::InfeasibleCap { .. } => "infeasible_cap",
            Error::Checksum { .. } => "checksum",
            Error::Missing(_) => "missing",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
