//! Dataset and model diagnostics: item Gini index, weighted homophily,
//! weight-matrix spectra across the user exponent, and head/tail weight
//! distributions.

use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{LareError, Result};
use crate::evaluation::top_fraction;
use crate::interactions::InteractionMatrix;
use crate::linalg::{eig_sym, SpectrumReport};
use crate::models::{ItemModel, SymmetricFit};
use crate::normalization::{symmetric_representative, DegreePolicy};

/// Largest item count for spectrum reports.
pub const EIGEN_CAP: usize = 4096;

/// Gini index of the item degrees: `Σ_i Σ_j |d_i − d_j| / (2 n Σ_k d_k)`.
pub fn gini_item(x: &InteractionMatrix) -> f64 {
    gini(x.item_degrees())
}

pub fn gini(values: &[u32]) -> f64 {
    let n = values.len();
    let total: f64 = values.iter().map(|&d| d as f64).sum();
    if n == 0 || total == 0.0 {
        return 0.0;
    }
    let mut sorted = values.to_vec();
    sorted.sort_unstable();
    // Σ_{i<j} (d_(j) − d_(i)) = Σ_k d_(k) (2k − n + 1) over ascending order
    let pairs: f64 = sorted
        .iter()
        .enumerate()
        .map(|(k, &d)| d as f64 * (2.0 * k as f64 - n as f64 + 1.0))
        .sum();
    pairs / (n as f64 * total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgePolicy {
    /// Every item pair with at least one common user.
    AllCooccurring,
    /// A uniform sample (without replacement) of the co-engaged pairs.
    SampledEdges { count: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomophilyConfig {
    pub delta: f64,
    pub edge_policy: EdgePolicy,
}

impl Default for HomophilyConfig {
    fn default() -> Self {
        HomophilyConfig {
            delta: 1.5,
            edge_policy: EdgePolicy::AllCooccurring,
        }
    }
}

/// For item `i`, the common-user counts with every item `j > i`, in
/// ascending `j`.
fn cooccurrences(x: &InteractionMatrix, columns: &[Vec<u32>], i: usize, counts: &mut [u32]) -> Vec<(u32, u32)> {
    let mut touched = Vec::new();
    for &u in &columns[i] {
        let items = x.row(u as usize);
        let start = items.partition_point(|&j| (j as usize) <= i);
        for &j in &items[start..] {
            if counts[j as usize] == 0 {
                touched.push(j);
            }
            counts[j as usize] += 1;
        }
    }
    touched.sort_unstable();
    touched
        .into_iter()
        .map(|j| {
            let c = counts[j as usize];
            counts[j as usize] = 0;
            (j, c)
        })
        .collect()
}

/// Weighted homophily ratio `Σ w_ij s_ij / Σ w_ij` over co-engaged item
/// pairs, with Jaccard similarity `s_ij` of the user sets and weight
/// `w_ij = |V_i ∩ V_j|^δ · |V_i ∩ V_j| / min(|V_i|, |V_j|)`.
pub fn homophily_weighted(x: &InteractionMatrix, cfg: &HomophilyConfig) -> Result<f64> {
    if !(cfg.delta >= 0.0) {
        return Err(LareError::Config("delta must be nonnegative".into()));
    }
    let columns = x.columns();
    let n = x.n_items();
    let deg = x.item_degrees();
    let term = |i: usize, j: u32, c: u32| -> (f64, f64) {
        let (di, dj, c) = (deg[i] as f64, deg[j as usize] as f64, c as f64);
        let s = c / (di + dj - c);
        let w = c.powf(cfg.delta) * c / di.min(dj);
        (w * s, w)
    };
    // per-row partial sums are combined in row order for determinism
    let partials: Vec<(f64, f64, usize)> = match cfg.edge_policy {
        EdgePolicy::AllCooccurring => (0..n)
            .into_par_iter()
            .map_init(
                || vec![0u32; n],
                |counts, i| {
                    let pairs = cooccurrences(x, &columns, i, counts);
                    let (num, den) = pairs.iter().fold((0.0, 0.0), |(a, b), &(j, c)| {
                        let (t, w) = term(i, j, c);
                        (a + t, b + w)
                    });
                    (num, den, pairs.len())
                },
            )
            .collect(),
        EdgePolicy::SampledEdges { count, seed } => {
            let per_row: Vec<usize> = (0..n)
                .into_par_iter()
                .map_init(|| vec![0u32; n], |counts, i| cooccurrences(x, &columns, i, counts).len())
                .collect();
            let total: usize = per_row.iter().sum();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut chosen: Vec<usize> = index::sample(&mut rng, total, count.min(total)).into_vec();
            chosen.sort_unstable();
            let mut offsets = Vec::with_capacity(n);
            let mut acc = 0;
            for &c in &per_row {
                offsets.push(acc);
                acc += c;
            }
            (0..n)
                .into_par_iter()
                .map_init(
                    || vec![0u32; n],
                    |counts, i| {
                        let lo = chosen.partition_point(|&e| e < offsets[i]);
                        let hi = chosen.partition_point(|&e| e < offsets[i] + per_row[i]);
                        if lo == hi {
                            return (0.0, 0.0, 0);
                        }
                        let pairs = cooccurrences(x, &columns, i, counts);
                        let (mut num, mut den) = (0.0, 0.0);
                        for &e in &chosen[lo..hi] {
                            let (j, c) = pairs[e - offsets[i]];
                            let (t, w) = term(i, j, c);
                            num += t;
                            den += w;
                        }
                        (num, den, hi - lo)
                    },
                )
                .collect()
        }
    };
    let (num, den, edges) = partials
        .iter()
        .fold((0.0, 0.0, 0), |(a, b, e), &(x, y, k)| (a + x, b + y, e + k));
    if edges == 0 || den == 0.0 {
        return Err(LareError::UndefinedRatio);
    }
    Ok(num / den)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub m: usize,
    pub n: usize,
    pub nnz: usize,
    pub density: f64,
    pub gini_item: f64,
    pub homophily_w: f64,
}

impl DatasetStats {
    pub fn to_tsv_rows(&self, group: &str) -> Vec<(String, String, String)> {
        vec![
            ("users".into(), group.into(), self.m.to_string()),
            ("items".into(), group.into(), self.n.to_string()),
            ("interactions".into(), group.into(), self.nnz.to_string()),
            ("density".into(), group.into(), format!("{:.8}", self.density)),
            ("gini_item".into(), group.into(), format!("{:.8}", self.gini_item)),
            ("homophily_w".into(), group.into(), format!("{:.8}", self.homophily_w)),
        ]
    }
}

pub fn dataset_stats(x: &InteractionMatrix, cfg: &HomophilyConfig) -> Result<DatasetStats> {
    Ok(DatasetStats {
        m: x.n_users(),
        n: x.n_items(),
        nnz: x.nnz(),
        density: x.density(),
        gini_item: gini_item(x),
        homophily_w: homophily_weighted(x, cfg)?,
    })
}

/// For each beta, the spectrum (descending) of the LAE weight matrix fitted
/// on the symmetric gram `D_I^-1/2 Xᵀ D_U^-beta X D_I^-1/2`.
pub fn spectrum_vs_beta(x: &InteractionMatrix, betas: &[f64], lambda: f64) -> Result<Vec<SpectrumReport>> {
    if x.n_items() > EIGEN_CAP {
        return Err(LareError::Capacity {
            what: "eigensolver",
            n: x.n_items(),
            cap: EIGEN_CAP,
        });
    }
    if !(lambda > 0.0) {
        return Err(LareError::Config("lambda must be positive".into()));
    }
    betas
        .iter()
        .map(|&beta| {
            let s = symmetric_representative(x, beta, DegreePolicy::Strict)?;
            let weights = SymmetricFit::new(&s, lambda)?.lae_weights(None);
            // I − λK is symmetric up to rounding; mirror it exactly
            let n = weights.rows();
            let sym = crate::linalg::DenseMatrix::from_fn(n, n, |i, j| weights.get(i.min(j), i.max(j)));
            eig_sym(&sym, format!("weights:beta={beta},lambda={lambda}"))
        })
        .collect()
}

pub fn spectra_tsv(reports: &[SpectrumReport]) -> String {
    let mut out = String::from("metric\tgroup\tvalue\n");
    for r in reports {
        for (k, v) in r.eigenvalues.iter().enumerate() {
            let _ = writeln!(out, "eigenvalue[{k}]\t{}\t{v:.12e}", r.source);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupSummary {
    pub count: usize,
    pub mean: f64,
    pub std: f64,
    /// (lower edge, upper edge, count), shared edges across groups.
    pub histogram: Vec<(f64, f64, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightDistribution {
    pub head: GroupSummary,
    pub tail: GroupSummary,
}

impl WeightDistribution {
    pub fn to_tsv_rows(&self, label: &str) -> Vec<(String, String, String)> {
        let mut rows = Vec::new();
        for (name, g) in [("head", &self.head), ("tail", &self.tail)] {
            let group = format!("{label}:{name}");
            rows.push(("count".into(), group.clone(), g.count.to_string()));
            rows.push(("column_mean.mean".into(), group.clone(), format!("{:.10e}", g.mean)));
            rows.push(("column_mean.std".into(), group.clone(), format!("{:.10e}", g.std)));
            for (lo, hi, c) in &g.histogram {
                rows.push((format!("hist[{lo:.4e},{hi:.4e})"), group.clone(), c.to_string()));
            }
        }
        rows
    }
}

/// Per-item column means of the weight matrix, summarized separately for
/// head items (top `head_fraction` by degree) and the rest.
pub fn weight_distribution(
    model: &ItemModel,
    item_degrees: &[u32],
    head_fraction: f64,
    bins: usize,
) -> Result<WeightDistribution> {
    let n = model.n_items();
    if item_degrees.len() != n {
        return Err(LareError::Input(format!(
            "{} item degrees for a model over {n} items",
            item_degrees.len()
        )));
    }
    let mut col_means = vec![0.0; n];
    for i in 0..n {
        for (m, w) in col_means.iter_mut().zip(model.weights.row(i)) {
            *m += w;
        }
    }
    for m in &mut col_means {
        *m /= n as f64;
    }
    let head = top_fraction(item_degrees, head_fraction);
    let lo = col_means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = col_means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = bins.max(1);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let summarize = |want_head: bool| {
        let vals: Vec<f64> = (0..n).filter(|&i| head[i] == want_head).map(|i| col_means[i]).collect();
        let count = vals.len();
        let mean = if count == 0 { 0.0 } else { vals.iter().sum::<f64>() / count as f64 };
        let var = if count == 0 {
            0.0
        } else {
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / count as f64
        };
        let mut hist: Vec<(f64, f64, usize)> = (0..bins)
            .map(|b| (lo + b as f64 * width, lo + (b + 1) as f64 * width, 0))
            .collect();
        for v in &vals {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            hist[b].2 += 1;
        }
        GroupSummary {
            count,
            mean,
            std: var.sqrt(),
            histogram: hist,
        }
    };
    Ok(WeightDistribution {
        head: summarize(true),
        tail: summarize(false),
    })
}

/// Renders `(metric, group, value)` rows as TSV.
pub fn rows_tsv(rows: &[(String, String, String)]) -> String {
    let mut out = String::from("metric\tgroup\tvalue\n");
    for (m, g, v) in rows {
        let _ = writeln!(out, "{m}\t{g}\t{v}");
    }
    out
}
