//! Low-resource neural machine translation toolkit.

pub mod tensor;
pub mod tokenizer;
pub mod corpus;
pub mod eval;
pub mod model;
pub mod decoder;
pub mod trainer;
pub mod lm;
pub mod pipeline;
