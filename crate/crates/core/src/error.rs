use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("annotation box {box_:?} does not intersect a {width}x{height} image")]
    AnnotationOutOfBounds {
        box_: (i64, i64, i64, i64),
        width: usize,
        height: usize,
    },
    #[error("invalid annotation: {0}")]
    InvalidAnnotation(String),
    #[error("degenerate eye landmarks: inter-eye distance {distance:.3} px")]
    DegenerateLandmarks { distance: f64 },
    #[error("invalid resize target {width}x{height}")]
    InvalidTarget { width: usize, height: usize },
    #[error("empty image")]
    EmptyImage,
    #[error("manifest incomplete: {0}")]
    ManifestIncomplete(String),
    #[error("cannot normalize a zero vector")]
    ZeroNorm,
    #[error("dimension mismatch{}: expected {expected}, got {actual}", context_suffix(.context))]
    DimMismatch {
        expected: usize,
        actual: usize,
        context: Option<String>,
    },
    #[error("embedding store is missing image_id {0}")]
    IncompleteStore(String),
    #[error("extractor failed: {0}")]
    ExtractorFailed(String),
    #[error("extractor protocol violation: {0}")]
    ProtocolViolation(String),
    #[error("too few subjects: {0}")]
    TooFewSubjects(usize),
    #[error("training labels contain a single class")]
    DegenerateLabels,
    #[error("negative feature value {value} at dimension {dim}")]
    NegativeFeature { dim: usize, value: f64 },
    #[error("voting forest seeds must be distinct, {0} repeats")]
    SeedCollision(u64),
    #[error("evaluation set is empty")]
    EmptyEval,
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("malformed file: {0}")]
    Format(String),
    #[error("stage `{stage}` failed{}: {source}", context_suffix(.image_id))]
    Stage {
        stage: &'static str,
        image_id: Option<String>,
        #[source]
        source: Box<Error>,
    },
    #[error("internal invariant violated: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn context_suffix(ctx: &Option<String>) -> String {
    match ctx {
        Some(c) => format!(" ({c})"),
        None => String::new(),
    }
}

impl Error {
    pub fn dim_mismatch(expected: usize, actual: usize) -> Self {
        Error::DimMismatch {
            expected,
            actual,
            context: None,
        }
    }

    /// Wraps an error with the pipeline stage and, when known, the offending image.
    pub fn in_stage(self, stage: &'static str, image_id: Option<&str>) -> Self {
        Error::Stage {
            stage,
            image_id: image_id.map(str::to_owned),
            source: Box::new(self),
        }
    }

    /// The innermost error, looking through stage wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self.root() {
            Error::ExtractorFailed(_) | Error::ProtocolViolation(_) => 3,
            Error::Invariant(_) => 4,
            _ => 2,
        }
    }
}
