//! Inference-time brand-bias mitigation for text-to-image models.
//!
//! A generated image is checked for logos and for brand house styles. When
//! anything is found, a vision-language model breaks each brand down into
//! features and proposes alternatives; the alternatives are scored for
//! divergence from the brand and relevance to the prompt, and the winners are
//! appended to the prompt before regenerating. A redirection cache remembers
//! the chosen modifiers per bias set, and the Brand Neutrality Score measures
//! the outcome.
//!
//! This crate is `no_std` (with `alloc`). Every model sits behind a provider
//! trait; network clients, file formats and the CLI live in the `cider` crate.

#![no_std]

extern crate alloc;

pub mod aesthetics;
pub mod bench;
pub mod bns;
pub mod cache;
pub mod detector;
pub mod embedding;
pub mod error;
pub mod mock;
pub mod model;
pub mod pipeline;
pub mod refiner;

pub use error::{Error, Result};
