//! Toolkit for anonymous-speaker guessing over TV-show transcripts.
//!
//! The pipeline runs from raw transcripts to scored predictions:
//! [`parser`] splits episodes into scenes, [`anonymizer`] masks main
//! speakers behind `P0`..`P5`, [`dataset`] stores and splits corpora,
//! [`models`] holds the character-pooling predictors built on the
//! from-scratch encoder in [`nn`], [`trainer`] fits them and
//! [`evaluator`] scores them. [`annotation`], [`retrieval`] and [`study`]
//! cover the human-study side.

pub mod annotation;
pub mod cli;
pub mod anonymizer;
pub mod dataset;
pub mod evaluator;
pub mod models;
pub mod nn;
pub mod parser;
pub mod retrieval;
pub mod study;
pub mod synth;
pub mod text;
pub mod trainer;
