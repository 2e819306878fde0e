pub mod data;
pub mod em;
pub mod error;
pub mod eval;
pub mod exposure;
pub mod ingest;
pub mod checkpoint;
pub mod synthetic;
pub mod wmf;
pub mod cli;
