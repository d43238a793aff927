//! Benchmarks for flint-core live in `benches/`; run them with `cargo bench -p flint-bench`.
