//! Criterion benchmarks for the learners live under `benches/`.
