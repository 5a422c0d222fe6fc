use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum Error {
    /// A config document failed validation. `path` names the section and key,
    /// e.g. `workload.tensors[1].dims`.
    #[error("{path}: {message}")]
    Config { path: String, message: String },

    #[error("line {line}: {message}")]
    TreeSyntax { line: usize, message: String },

    #[error("invalid mapping: {}", .0.join("; "))]
    InvalidMapping(Vec<String>),

    #[error("unbound symbol `{0}`")]
    UnboundSymbol(String),

    #[error("loop bounds for `{var}` multiply to {product}, expected {shape}")]
    Divisibility { var: String, product: u64, shape: u64 },

    #[error("mapspace has {count} mappings, above the oracle cap of {cap}; shrink the instance or raise --oracle-cap")]
    OracleCap { count: String, cap: u64 },

    #[error("trace simulation needs {computes} computes, above the cap of {cap}")]
    TraceCap { computes: u128, cap: u128 },

    #[error("index {index} out of range ({what} has {len} entries)")]
    OutOfRange { what: &'static str, index: usize, len: usize },
}

impl Error {
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Error {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
