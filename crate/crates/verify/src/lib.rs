//! Holds the `acceptance` test target (`cargo test -p routescale-verify`).
//!
//! It lives in its own package so that `cargo test --workspace` runs it after
//! every other test binary.
