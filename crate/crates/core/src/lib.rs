pub mod autograd;
pub mod cli;
pub mod corpus;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod model;
pub mod ontology;
pub mod reader;
pub mod text;
pub mod trainer;

pub use error::{Error, Result};
