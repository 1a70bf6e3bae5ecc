use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("tile out of bounds on {axis} axis: origin {origin} + size {size} > {dim}")]
    OutOfBounds {
        axis: char,
        origin: usize,
        size: usize,
        dim: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("world smaller than tile: tile size {size} exceeds {axis} extent {dim}")]
    WorldSmallerThanTile { axis: char, size: usize, dim: usize },

    #[error("invalid stride {stride} for tile size {size}")]
    InvalidStride { stride: usize, size: usize },

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("voxel ({x}, {y}, {z}) is not covered by any tile")]
    Uncovered { x: usize, y: usize, z: usize },

    #[error("non-finite denoiser output for tile at {origin:?}")]
    NonFinite { origin: [usize; 3] },

    #[error("denoiser failed on tile at {origin:?}: {source}")]
    Tile {
        origin: [usize; 3],
        #[source]
        source: Box<Error>,
    },

    #[error("step {index} (t = {t}) failed: {source}")]
    Step {
        index: usize,
        t: f64,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported by denoiser: {0}")]
    Capability(String),

    #[error("unknown condition {condition:?}; known conditions: {known:?}")]
    UnknownCondition { condition: String, known: Vec<String> },

    #[error("transport error (request {id}): {message}")]
    Transport { id: u64, message: String },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("remote denoiser error (request {id}): {message}")]
    Remote { id: u64, message: String },

    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn at_tile(self, origin: [usize; 3]) -> Error {
        match self {
            e @ (Error::Tile { .. } | Error::NonFinite { .. }) => e,
            other => Error::Tile {
                origin,
                source: Box::new(other),
            },
        }
    }

    /// Walks nested step/tile wrappers down to the innermost cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Tile { source, .. } | Error::Step { source, .. } => source.root(),
            other => other,
        }
    }
}
