//! Training framework for moving multimodal (audio + video) conversational
//! emotion recognition to speech-only inference.
//!
//! Two strategies are provided on top of a compact context-transformer plus
//! relational-graph model:
//!
//! * stochastic input masking during training ([`masking`]), and
//! * triplet-loss distillation from an audio-visual teacher into an
//!   audio-only student ([`losses`], [`training::distill`]).
//!
//! The crate also ships a seeded synthetic corpus generator ([`corpus`]), the
//! temporal utterance graph ([`graph`]), evaluation metrics and a command line
//! experiment runner ([`cli`]).

pub mod cli;
pub mod corpus;
pub mod error;
pub mod graph;
pub mod losses;
pub mod masking;
pub mod network;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
