pub mod audio;
pub mod cli;
pub mod corpus;
pub mod decision;
pub mod error;
pub mod eventgraph;
pub mod features;
pub mod gradcheck;
pub mod metrics;
pub mod network;
pub mod objective;
pub mod tensor;

pub use error::{CsedError, Result};
