//! Criterion benchmarks for the numeric core and the training loop; see
//! `benches/`.
