use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("non-finite value: {0}")]
    Numerics(String),
    #[error("scene geometry: {0}")]
    Geometry(String),
    #[error("rationality oracle: {0}")]
    Oracle(String),
    #[error("subject {subject_h}x{subject_w} does not fit a {crop_h}x{crop_w} crop")]
    SubjectTooLarge {
        subject_h: usize,
        subject_w: usize,
        crop_h: usize,
        crop_w: usize,
    },
    #[error("no pair of crop windows differs by at least {min_offset} pixels")]
    NoFeasibleOffset { min_offset: usize },
    #[error("degenerate mask: {0}")]
    DegenerateMask(String),
    #[error("configuration: {0}")]
    Config(String),
    #[error("training diverged: {0}")]
    Training(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
