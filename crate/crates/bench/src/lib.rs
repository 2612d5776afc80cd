//! Criterion benchmarks for the simulator; see `benches/pipeline.rs`.
