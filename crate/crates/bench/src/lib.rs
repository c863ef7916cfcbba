//! Criterion benchmarks for the streaming engine live in `benches/`.
