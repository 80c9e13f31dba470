//! Criterion benchmarks for the hot paths in `t2s-core`. See `benches/`.
