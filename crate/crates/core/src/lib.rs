//! Concept and keyphrase extraction with instruction-following language
//! models, plus the evaluation harness around it.

pub mod baselines;
pub mod corpus;
pub mod extraction;
pub mod fewshot;
pub mod gateway;
pub mod harness;
pub mod metrics;
pub mod prompts;
pub mod text;
