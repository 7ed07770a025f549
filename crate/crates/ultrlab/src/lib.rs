//! Desk-scale unbiased learning-to-rank laboratory: synthetic position-biased
//! click simulation, lexical IR features over an inverted index, dual-learning
//! debiasing with label correction and negative sampling, LambdaMART, and
//! nDCG/DCG evaluation, glued together by one CLI.

pub mod corpus;
pub mod dla;
pub mod error;
pub mod gbdt;
pub mod labelfix;
pub mod metrics;
pub mod negsample;
pub mod nn;
pub mod recipe;
pub mod simulate;
pub mod textfeat;
