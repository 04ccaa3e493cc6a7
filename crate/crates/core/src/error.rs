use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed {format} record at line {line}: {detail}")]
    MalformedRecord {
        format: String,
        line: usize,
        detail: String,
    },

    #[error("duplicate document id: {0}")]
    DuplicateId(String),

    #[error("document {0} already present in snapshot")]
    IdCollision(String),

    #[error("injected documents must be adversarial (got provenance=original for {0})")]
    ForgedOriginal(String),

    #[error("adversarial document {0} is missing lineage fields")]
    MissingLineage(String),

    #[error("original document {0} carries adversarial lineage fields")]
    UnexpectedLineage(String),

    #[error("cannot export adversarial lineage to TSV (document {0}); use jsonl")]
    LossyExport(String),

    #[error("embedding dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    #[error("insufficient shared structure: fewer than 2 markers met support threshold")]
    InsufficientStructure,

    #[error("need at least {expected} reasoning traces, got {got}")]
    TooFewTraces { expected: usize, got: usize },

    #[error("empty target answer")]
    EmptyTarget,

    #[error("empty record list")]
    EmptyRecords,

    #[error("annotation table rows must share one rater count (row {0} differs)")]
    UnevenRaters(usize),

    #[error("undefined correlation: input vector is constant")]
    ConstantVector,

    #[error("correlation inputs differ in length or are shorter than 2")]
    BadCorrelationInput,

    #[error("annotator {annotator} is missing sample {sample}")]
    MissingAnnotation { annotator: String, sample: String },

    #[error("generator produced no reasoning traces; template mining needs an R1-style generator")]
    NoReasoningTraces,

    #[error("method cot requires a mined reasoning template")]
    TemplateRequired,

    #[error("remote endpoint returned status {0}")]
    RemoteStatus(u16),

    #[error("remote request failed: {0}")]
    RemoteTransport(String),

    #[error("missing API credential: set {0}")]
    MissingCredential(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
