//! Criterion benchmarks for the hot paths of `ssal-core`; see `benches/`.
