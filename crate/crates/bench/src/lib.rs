//! Criterion benchmarks for the simulator and metrics; see `benches/`.
