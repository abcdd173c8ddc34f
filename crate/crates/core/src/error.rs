use std::path::PathBuf;

use thiserror::Error;

/// Everything that can go wrong across lattice construction, propagation,
/// permittivity design and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },

    #[error("lattice of {requested} sites exceeds the cap of {cap}")]
    TooManySites { requested: usize, cap: usize },

    #[error("lattice is empty")]
    EmptyLattice,

    #[error("lattice is already cloak-transformed")]
    AlreadyTransformed,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("dense reference limited to {cap} sites, got {actual}")]
    DenseCapExceeded { cap: usize, actual: usize },

    #[error("energy {energy} is outside the open band ({lower}, {upper})")]
    EnergyOutsideBand { energy: f64, lower: f64, upper: f64 },

    #[error("wave packet support ({support} around ({x}, {y})) extends beyond the lattice")]
    PacketOutsideLattice { x: f64, y: f64, support: f64 },

    #[error("state norm underflowed ({0:e})")]
    NormUnderflow(f64),

    #[error("propagation needs expansion order {required}, above the cap {cap}")]
    AccuracyUnreachable { required: usize, cap: usize },

    #[error("no root: {0}")]
    NoRoot(String),

    #[error("coupling is not monotone in eps_b over [{lower}, {upper}]")]
    NonMonotonicBracket { lower: f64, upper: f64 },

    #[error("{} bond(s) have no admissible eps_b: {}", .0.len(), summarize_bonds(.0))]
    UnreachableBonds(Vec<(u32, u32)>),

    #[error("dump sequences disagree: {0}")]
    DumpMismatch(String),

    #[error("analysis region contains no sites")]
    EmptyRegion,

    #[error("config error: {0}")]
    Config(String),

    #[error("malformed file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn summarize_bonds(bonds: &[(u32, u32)]) -> String {
    let shown: Vec<String> = bonds.iter().take(8).map(|(i, j)| format!("({i},{j})")).collect();
    if bonds.len() > 8 {
        format!("{} ...", shown.join(" "))
    } else {
        shown.join(" ")
    }
}

/// Broad failure classes, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numeric,
    Io,
}

impl Error {
    pub(crate) fn invalid(name: &str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter { name: name.to_string(), reason: reason.into() }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io { .. } | Error::Format { .. } => ErrorClass::Io,
            Error::AccuracyUnreachable { .. }
            | Error::NoRoot(_)
            | Error::NonMonotonicBracket { .. }
            | Error::UnreachableBonds(_)
            | Error::NormUnderflow(_) => ErrorClass::Numeric,
            _ => ErrorClass::Config,
        }
    }

    /// 0 is success; 2 config, 3 numeric failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Numeric => 3,
            ErrorClass::Io => 4,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
