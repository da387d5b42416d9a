//! Criterion benchmarks for `synergy-core`; see `benches/estimators.rs`.
