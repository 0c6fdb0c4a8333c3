pub mod build;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod decompose;
pub mod gateway;
pub mod harness;
pub mod ingest;
