pub mod cli;
pub mod corpus;
pub mod ctc;
pub mod decode;
pub mod error;
pub mod experiment;
pub mod manifest;
pub mod model;
pub mod numcore;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
