//! Toolkit for building and evaluating reference-based text-to-image metrics.
//!
//! The crate covers three areas:
//!
//! * training-data construction: subject pairs from video scenes ([`pairgen`]),
//!   identity-sensitive pairs from inpainting ([`identgen`]), prompt generation
//!   ([`promptgen`]) and triplet assembly ([`assemble`]);
//! * the two-token scoring protocol and embedding baselines ([`scoring`]);
//! * meta-evaluation against human annotations ([`metaeval`]).
//!
//! Every external model is reached through [`clients`], which ships an HTTP-JSON
//! adapter and a deterministic mock so the whole toolkit runs offline.

pub mod assemble;
pub mod clients;
pub mod error;
pub mod fixtures;
pub mod identgen;
pub mod imaging;
pub mod jsonl;
pub mod markup;
pub mod metaeval;
pub mod pairgen;
pub mod pipeline;
pub mod par;
pub mod promptgen;
pub mod scoring;
pub mod seed;
pub mod stats;
pub mod store;
pub mod types;

pub use error::{Error, Result};
pub use types::{BBox, CategoryTag, ImageRef, Label, ScorePair, SubjectInstance};
