//! Criterion benchmarks for the dhjlab kernels; see `benches/kernels.rs`.
