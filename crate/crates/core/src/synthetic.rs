//! Seeded generator for popularity-skewed interaction matrices, used by
//! tests, benchmarks and timing runs.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LareError, Result};
use crate::interactions::InteractionMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    /// Smallest user degree.
    pub min_user_degree: usize,
    /// Mean of the (exponential) extra degree on top of the minimum.
    pub mean_extra_degree: f64,
    /// Item popularity follows `(rank + 1)^-skew`.
    pub item_skew: f64,
    /// Give every item at least one interaction.
    pub cover_items: bool,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn new(users: usize, items: usize, seed: u64) -> Self {
        SyntheticConfig {
            users,
            items,
            min_user_degree: 2,
            mean_extra_degree: 8.0,
            item_skew: 0.8,
            cover_items: true,
            seed,
        }
    }
}

pub fn generate(cfg: &SyntheticConfig) -> Result<InteractionMatrix> {
    if cfg.items == 0 || cfg.users == 0 {
        return Err(LareError::Config("synthetic data needs users and items".into()));
    }
    if cfg.min_user_degree > cfg.items {
        return Err(LareError::Config("minimum user degree exceeds the item count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // shuffle popularity ranks so item index carries no information
    let mut ranks: Vec<usize> = (0..cfg.items).collect();
    for i in (1..ranks.len()).rev() {
        ranks.swap(i, rng.random_range(0..=i));
    }
    let weights: Vec<f64> = ranks
        .iter()
        .map(|&r| ((r + 1) as f64).powf(-cfg.item_skew))
        .collect();
    let dist = WeightedIndex::new(&weights).map_err(|e| LareError::Config(e.to_string()))?;
    let cap = cfg.items.div_ceil(2).max(cfg.min_user_degree);
    let mut rows: Vec<Vec<u32>> = Vec::with_capacity(cfg.users);
    for _ in 0..cfg.users {
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let extra = (-cfg.mean_extra_degree * u.ln()).floor() as usize;
        let d = (cfg.min_user_degree + extra).min(cap);
        let mut seen = vec![false; cfg.items];
        let mut row = Vec::with_capacity(d);
        while row.len() < d {
            let i = dist.sample(&mut rng);
            if !seen[i] {
                seen[i] = true;
                row.push(i as u32);
            }
        }
        rows.push(row);
    }
    if cfg.cover_items {
        let mut covered = vec![false; cfg.items];
        for row in &rows {
            for &i in row {
                covered[i as usize] = true;
            }
        }
        for (i, c) in covered.iter().enumerate() {
            if !c {
                let u = rng.random_range(0..cfg.users);
                rows[u].push(i as u32);
            }
        }
    }
    InteractionMatrix::from_rows(rows, cfg.items)
}
