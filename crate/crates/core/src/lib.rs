pub mod contrastive;
pub mod corpus;
pub mod evaluation;
pub mod predictor;
pub mod synthgen;
