//! Shared fixtures for the kernel benchmarks in `benches/`.

use lare::synthetic::{generate, SyntheticConfig};
use lare::{split, InteractionMatrix, SplitBundle, SplitConfig};

/// Skewed synthetic interactions with a fixed seed.
pub fn interactions(users: usize, items: usize) -> InteractionMatrix {
    generate(&SyntheticConfig::new(users, items, 7)).expect("synthetic data")
}

/// Strong-generalization split of [`interactions`].
pub fn bundle(users: usize, items: usize) -> SplitBundle {
    split(&interactions(users, items), &SplitConfig::strong(7)).expect("split")
}
