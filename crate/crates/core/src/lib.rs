//! Allocation-only core of the log-analysis instruction forge.
//!
//! Everything here is a pure function over in-memory records: placeholder
//! canonicalization, split disciplines, instruction-pair construction, the
//! Drain-style baseline parser, answer extraction and the parsing, anomaly
//! and text metrics. File formats, the model gateway and the CLI live in the
//! `logforge` crate.
#![no_std]
#![warn(rust_2018_idioms)]

extern crate alloc;

pub mod canon;
pub mod drain;
pub mod extract;
pub mod instruct;
pub mod metrics;
pub mod ratio;
pub mod record;
pub mod split;

pub use canon::{Canonicalizer, PLACEHOLDER};
pub use ratio::Fraction;
pub use record::{
    Capability, CommunityCase, InstructionPair, Label, LabeledTemplate, LogRecord, Provenance,
    TemplateAnnotation,
};
