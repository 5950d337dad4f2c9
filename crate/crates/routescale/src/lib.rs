//! File formats, embedded reference tables and the `routescale` command line
//! built on top of `routescale-core`.

pub mod artifact;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod runs;
