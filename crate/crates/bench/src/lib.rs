//! Criterion benchmarks for generation, thinning and KDE queries; see `benches/`.
