//! File formats, experiment pipeline and oracle suite for the `probshield` binary.

pub mod bench;
pub mod experiment;
pub mod formats;
pub mod verify;
