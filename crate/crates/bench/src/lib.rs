//! Criterion benchmarks for the engine; see `benches/engine.rs`.
//! Run with `cargo bench -p switch-bench`.
