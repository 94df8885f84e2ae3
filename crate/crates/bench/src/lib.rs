//! Criterion benchmarks for the spectral alignment path; see `benches/`.
