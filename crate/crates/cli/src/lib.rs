//! Command-line front end: configuration, synthetic corpora, preprocessing
//! cache, and the train, infer, score, bench and render commands.

pub mod cache;
pub mod commands;
pub mod config;
pub mod render;
pub mod synth;
