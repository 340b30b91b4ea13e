//! Post-generation filtering for text-to-Cypher candidates: confidence filtering, grammar
//! and schema validation, voting, and execution-based evaluation.

pub mod confidence;
pub mod syntax;
pub mod trace;
pub mod schema;
pub mod aggregate;
pub mod executor;
pub mod eval;
pub mod synth;
pub mod pipeline;
