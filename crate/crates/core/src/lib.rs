pub mod asr;
pub mod attention;
pub mod checkpoint;
pub mod corpusgen;
pub mod error;
pub mod experiment;
pub mod frontend;
pub mod metrics;
pub mod nmt;
pub mod numerics;
pub mod recovery;
pub mod tokenizer;

pub use error::{Error, Result};
