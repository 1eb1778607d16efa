//! Attribution of risk increases produced by recurrent models over irregular
//! event streams.

pub mod alerts;
pub mod attribution;
pub mod cli;
pub mod error;
pub mod events;
pub mod explain;
pub mod lds;
pub mod pipeline;
pub mod rng;
pub mod seqmodel;
pub mod stats_attr;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
