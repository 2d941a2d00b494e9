use thiserror::Error;

/// Errors raised anywhere in the scoring pipeline.
#[derive(Debug, Error)]
pub enum Error {
    // model backends
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("verbalizer token {0:?} does not map into the model vocabulary")]
    UnknownLabelToken(String),
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("label {0:?} has no training example")]
    MissingLabel(String),
    #[error("weight file format error: {0}")]
    FormatError(String),
    #[error("weight file shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("{params} parameters is too many for finite differences (limit {limit})")]
    TooManyParamsForFiniteDiff { params: usize, limit: usize },
    #[error("invalid verbalizer: {0}")]
    InvalidVerbalizer(String),
    #[error("operation not supported by this backend: {0}")]
    Unsupported(&'static str),

    // perturbations
    #[error("requested {requested} reorderings but only {available} exist")]
    NotEnoughOrderings { requested: usize, available: usize },
    #[error("instruction needs at least 2 tokens, has {0}")]
    InstructionTooShort(usize),
    #[error("prompt {0:?} needs at least 2 demonstrations")]
    TooFewDemos(String),

    // metrics
    #[error("empty dataset")]
    EmptyDataset,
    #[error("non-finite loss")]
    NonFiniteLoss,
    #[error("empty perturbation set")]
    EmptyPerturbationSet,
    #[error("non-finite divergence")]
    NonFiniteDivergence,
    #[error("precondition not met: {0}")]
    PreconditionNotMet(String),

    // selection and evaluation
    #[error("non-finite score for prompt {0:?}")]
    NonFiniteScore(String),
    #[error("alpha grid is empty")]
    EmptyGrid,
    #[error("invalid alpha grid: {0}")]
    InvalidGrid(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("k = {k} out of range for {len} items")]
    BadK { k: usize, len: usize },
    #[error("negative relevance {0}")]
    NegativeRelevance(f64),
    #[error("best performance must be positive")]
    ZeroBest,
    #[error("selected performance {selected} exceeds best {best}")]
    SelectedExceedsBest { selected: f64, best: f64 },

    // prefix tuning
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("prefix with {entries} entries is too large for finite differences (limit {limit})")]
    PrefixTooLargeForFiniteDiff { entries: usize, limit: usize },

    // ingestion
    #[error("line {line}: parse error: {msg}")]
    ParseError { line: usize, msg: String },
    #[error("line {0}: empty text")]
    EmptyText(usize),
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("duplicate prompt id {0:?}")]
    DuplicateId(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            NonFiniteLoss
            | NonFiniteDivergence
            | NonFiniteScore(_)
            | NonFiniteGradient
            | DegenerateInput(_)
            | TooManyParamsForFiniteDiff { .. }
            | PrefixTooLargeForFiniteDiff { .. } => ErrorClass::Numeric,
            InvalidConfig(_) | InvalidGrid(_) | EmptyGrid | BadK { .. } => ErrorClass::Usage,
            _ => ErrorClass::Data,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
