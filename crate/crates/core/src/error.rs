use crate::lattice::LatticePoint;
use crate::lerw::LatticePath;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("malformed curve: {0}")]
    MalformedCurve(String),

    #[error("malformed path: {0}")]
    MalformedPath(String),

    #[error("cannot concatenate curves: end of first and start of second are {gap} apart")]
    EndpointMismatch { gap: f64 },

    #[error("time {time} is outside [0, {duration}]")]
    TimeOutOfRange { time: f64, duration: f64 },

    #[error("horizon {horizon} exceeds the faithful duration {valid} of a truncated curve")]
    HorizonExceeded { horizon: f64, valid: f64 },

    #[error("start point {0:?} is not inside the domain")]
    StartOutsideDomain(LatticePoint),

    #[error("step cap of {cap} exhausted before leaving the domain")]
    StepCapExhausted { cap: u64, partial: Box<LatticePath> },

    #[error("path is not simple")]
    NotSimple,

    #[error("spanning points must be distinct (duplicate at index {0})")]
    DuplicateSpanningPoint(usize),

    #[error(
        "branch {index} reached the kill radius without hitting the tree; increase the safety factor"
    )]
    SafetyFactorExceeded { index: usize },

    #[error(
        "branch {index} left the truncation ball before merging into the tree; \
         increase the truncation radius or the safety factor"
    )]
    TruncationExceeded { index: usize },

    #[error("branch {0} does not end on a lower-indexed trace")]
    DanglingBranch(usize),

    #[error("branch {0} meets a lower-indexed trace before its endpoint")]
    BranchNotFirstHit(usize),

    #[error("unknown vertex {0}")]
    UnknownVertex(usize),

    #[error("the stop rule can never trigger on this tree")]
    UnreachableStop,

    #[error("size mismatch: {0} vs {1}")]
    SizeMismatch(usize, usize),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("no returns to the start observed at time {0}; increase the number of walkers")]
    ZeroReturns(u64),

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Error {
    Error::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

/// Collects every violated precondition instead of stopping at the first.
#[derive(Debug, Default)]
pub(crate) struct Checks(Vec<Error>);

impl Checks {
    pub(crate) fn require(&mut self, ok: bool, name: &'static str, reason: impl Into<String>) {
        if !ok {
            self.0.push(invalid(name, reason));
        }
    }

    pub(crate) fn result(&mut self, r: Result<()>) {
        if let Err(e) = r {
            self.0.push(e);
        }
    }

    pub(crate) fn finish(self) -> Vec<Error> {
        self.0
    }
}

/// `Ok` when there are no diagnostics, otherwise the first one.
pub(crate) fn first_error(diagnostics: Vec<Error>) -> Result<()> {
    diagnostics.into_iter().next().map_or(Ok(()), Err)
}
