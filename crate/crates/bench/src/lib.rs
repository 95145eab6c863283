//! Criterion benchmarks for the fkpath kernels; see `benches/kernels.rs`.
