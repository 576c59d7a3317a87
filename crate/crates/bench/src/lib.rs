//! Benchmark crate; see `benches/kernels.rs`.
