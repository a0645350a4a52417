use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed ({invariant}): {detail}")]
    Validation { invariant: &'static str, detail: String },

    #[error("invalid state: {0}")]
    State(String),

    #[error("factorization failed: {0}")]
    Factorization(String),

    #[error("point ({0}, {1}) lies outside the mesh")]
    OutsideDomain(f64, f64),

    #[error("no plasma: {0}")]
    NoPlasma(String),

    #[error("degenerate plasma: axis flux equals boundary flux ({0})")]
    DegeneratePlasma(f64),

    #[error("plasma source is empty")]
    EmptySource,

    #[error("current normalisation diverges: source integral {integral:e} for Ip = {ip:e}")]
    DivergentLambda { integral: f64, ip: f64 },

    #[error("fixed point did not converge after {iterations} iterations (last residual {last:e})")]
    Convergence {
        iterations: usize,
        last: f64,
        history: Vec<f64>,
    },

    #[error("regularized normal system is singular: {0}")]
    Regularization(String),

    #[error("unsupported basis: {0}")]
    UnsupportedBasis(String),

    #[error("contour at level {0} is open")]
    OpenContour(f64),

    #[error("degenerate flux surface at level {0}")]
    DegenerateSurface(f64),

    #[error("nonphysical profile: {0}")]
    NonphysicalProfile(String),

    #[error("all {0} replicates failed")]
    EmptyStats(usize),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
