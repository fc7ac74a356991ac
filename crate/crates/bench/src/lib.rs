//! Benchmark-only crate; the suites live in `benches/pipeline.rs`.
