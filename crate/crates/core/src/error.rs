use std::io;

use thiserror::Error;

/// Errors produced by the placement library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("infeasible request: {0}")]
    Infeasible(String),

    #[error("point ({x}, {y}) is outside the {width}x{height} grid")]
    OutOfBounds {
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },

    #[error("base station at ({x}, {y}) stands on a building cell")]
    OnBuilding { x: usize, y: usize },

    #[error("misaligned inputs: expected length {expected}, got {got}")]
    Misaligned { expected: usize, got: usize },

    #[error("at least one base station site is required")]
    EmptySiteList,

    #[error("illegal placement: {0}")]
    IllegalSite(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
