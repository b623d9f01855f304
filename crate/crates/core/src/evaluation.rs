//! Top-K ranking metrics over fold-in/held-out evaluation sets, sliced by
//! item popularity (AOA, Head, Tail, Unbiased) and user activity
//! (Active, Inactive).

use std::cmp::Ordering;
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{LareError, Result};
use crate::interactions::{EvalSet, InteractionMatrix, SplitBundle};
use crate::models::{Scorer, MASKED_SCORE};

#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub k_list: Vec<usize>,
    pub head_fraction: f64,
    pub unbiased_gamma: f64,
    pub active_fraction: f64,
    pub mask_seen: bool,
    /// Users scored per batch.
    pub batch_size: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_list: vec![20],
            head_fraction: 0.2,
            unbiased_gamma: 2.0,
            active_fraction: 0.2,
            mask_seen: true,
            batch_size: 4096,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_list.is_empty() || self.k_list.contains(&0) {
            return Err(LareError::Config("k_list must hold positive cutoffs".into()));
        }
        for (name, f) in [("head_fraction", self.head_fraction), ("active_fraction", self.active_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(LareError::Config(format!("{name} must lie in (0, 1)")));
            }
        }
        if !(self.unbiased_gamma >= 0.0) {
            return Err(LareError::Config("unbiased_gamma must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Slice {
    Aoa,
    Head,
    Tail,
    Unbiased,
    Active,
    Inactive,
}

impl Slice {
    pub const ALL: [Slice; 6] = [
        Slice::Aoa,
        Slice::Head,
        Slice::Tail,
        Slice::Unbiased,
        Slice::Active,
        Slice::Inactive,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Slice::Aoa => "AOA",
            Slice::Head => "Head",
            Slice::Tail => "Tail",
            Slice::Unbiased => "Unbiased",
            Slice::Active => "Active",
            Slice::Inactive => "Inactive",
        }
    }
}

impl fmt::Display for Slice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Slice {
    type Err = LareError;

    fn from_str(s: &str) -> Result<Self> {
        Slice::ALL
            .into_iter()
            .find(|x| x.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| LareError::Config(format!("unknown slice `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    Recall,
    Ndcg,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Recall => "Recall",
            Metric::Ndcg => "NDCG",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = LareError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "recall" => Ok(Metric::Recall),
            "ndcg" => Ok(Metric::Ndcg),
            other => Err(LareError::Config(format!("unknown metric `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub slice: Slice,
    pub metric: Metric,
    pub k: usize,
    pub value: f64,
    pub n_users: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn get(&self, slice: Slice, metric: Metric, k: usize) -> Option<f64> {
        self.row(slice, metric, k).map(|r| r.value)
    }

    pub fn row(&self, slice: Slice, metric: Metric, k: usize) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.slice == slice && r.metric == metric && r.k == k)
    }

    pub const TSV_HEADER: &'static str = "slice\tmetric\tk\tvalue\tn_users";

    pub fn to_tsv(&self) -> String {
        let mut out = format!("{}\n", Self::TSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.8}\t{}", r.slice, r.metric, r.k, r.value, r.n_users);
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut ks: Vec<usize> = self.rows.iter().map(|r| r.k).collect();
        ks.sort_unstable();
        ks.dedup();
        let mut out = String::new();
        let _ = write!(out, "{:<10}{:>8}", "slice", "users");
        for k in &ks {
            let _ = write!(out, "{:>12}{:>12}", format!("Recall@{k}"), format!("NDCG@{k}"));
        }
        out.push('\n');
        for slice in Slice::ALL {
            let Some(first) = self.rows.iter().find(|r| r.slice == slice) else {
                continue;
            };
            let _ = write!(out, "{:<10}{:>8}", slice.as_str(), first.n_users);
            for &k in &ks {
                for metric in [Metric::Recall, Metric::Ndcg] {
                    match self.get(slice, metric, k) {
                        Some(v) => {
                            let _ = write!(out, "{v:>12.4}");
                        }
                        None => {
                            let _ = write!(out, "{:>12}", "-");
                        }
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Indices of the `k` highest scores, ties broken by ascending index.
/// Masked entries ([`MASKED_SCORE`]) are never returned, so the result can
/// be shorter than `k`.
pub fn rank_topk(scores: &[f64], k: usize) -> Vec<u32> {
    let cmp = |a: &u32, b: &u32| -> Ordering {
        scores[*b as usize]
            .total_cmp(&scores[*a as usize])
            .then(a.cmp(b))
    };
    let mut idx: Vec<u32> = (0..scores.len() as u32)
        .filter(|&i| scores[i as usize] != MASKED_SCORE)
        .collect();
    let k = k.min(idx.len());
    if k == 0 {
        return Vec::new();
    }
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, cmp);
        idx.truncate(k);
    }
    idx.sort_unstable_by(cmp);
    idx
}

fn discount(rank: usize) -> f64 {
    // rank is 1-based
    1.0 / ((rank + 1) as f64).log2()
}

/// Gain-weighted Recall@K and NDCG@K. `truth` is sorted; `gain(i)` is the
/// weight of a relevant item (1 for binary relevance). Both metrics are
/// normalized by the best achievable value with `min(K, |G|)` relevant
/// items, so they lie in [0, 1].
pub fn weighted_recall_ndcg(
    topk: &[u32],
    truth: &[u32],
    k: usize,
    gain: impl Fn(u32) -> f64,
) -> Result<(f64, f64)> {
    if truth.is_empty() {
        return Err(LareError::Contract("ground truth is empty".into()));
    }
    let mut hits = 0.0;
    let mut dcg = 0.0;
    for (pos, &i) in topk.iter().take(k).enumerate() {
        if truth.binary_search(&i).is_ok() {
            let g = gain(i);
            hits += g;
            dcg += g * discount(pos + 1);
        }
    }
    let mut gains: Vec<f64> = truth.iter().map(|&i| gain(i)).collect();
    gains.sort_by(|a, b| b.total_cmp(a));
    let cut = k.min(truth.len());
    let ideal_hits: f64 = gains[..cut].iter().sum();
    let idcg: f64 = gains[..cut]
        .iter()
        .enumerate()
        .map(|(pos, g)| g * discount(pos + 1))
        .sum();
    Ok((hits / ideal_hits, dcg / idcg))
}

/// Binary-relevance Recall@K (denominator `min(K, |G|)`) and NDCG@K.
pub fn recall_ndcg(topk: &[u32], truth: &[u32], k: usize) -> Result<(f64, f64)> {
    weighted_recall_ndcg(topk, truth, k, |_| 1.0)
}

/// The `round(fraction · n)` entries with the largest `counts`, ties broken
/// by ascending index; returned as a membership mask.
pub fn top_fraction(counts: &[u32], fraction: f64) -> Vec<bool> {
    let n = counts.len();
    let take = ((fraction * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut mask = vec![false; n];
    for &i in &order[..take] {
        mask[i] = true;
    }
    mask
}

/// Inverse propensities `1 / p̂_i` with `p̂_i = (d_i / max d)^((γ+1)/2)`.
/// Zero-degree items are treated as degree 1.
pub fn inverse_propensities(item_degrees: &[u32], gamma: f64) -> Vec<f64> {
    let max = item_degrees.iter().copied().max().unwrap_or(1).max(1) as f64;
    let exponent = (gamma + 1.0) / 2.0;
    item_degrees
        .iter()
        .map(|&d| 1.0 / ((d.max(1) as f64) / max).powf(exponent))
        .collect()
}

struct UserResult {
    // indexed [slice][k][metric]; None when the slice does not apply
    values: Vec<Option<Vec<(f64, f64)>>>,
}

/// Evaluates `model` on the bundle's test set, with item popularity taken
/// from the bundle's training matrix.
pub fn evaluate(model: &dyn Scorer, bundle: &SplitBundle, cfg: &EvalConfig) -> Result<EvalReport> {
    evaluate_set(model, &bundle.train, &bundle.test, cfg)
}

pub fn evaluate_set(
    model: &dyn Scorer,
    train: &InteractionMatrix,
    set: &EvalSet,
    cfg: &EvalConfig,
) -> Result<EvalReport> {
    cfg.validate()?;
    let n = model.n_items();
    if n != train.n_items() || n != set.foldin.n_items() {
        return Err(LareError::Input(format!(
            "model covers {n} items, training data {}, evaluation set {}",
            train.n_items(),
            set.foldin.n_items()
        )));
    }
    let n_eval = set.n_users();
    if n_eval == 0 {
        return Err(LareError::Input("evaluation set has no users".into()));
    }
    let head = top_fraction(train.item_degrees(), cfg.head_fraction);
    let inv_prop = inverse_propensities(train.item_degrees(), cfg.unbiased_gamma);
    let active = top_fraction(set.foldin.user_degrees(), cfg.active_fraction);
    let kmax = *cfg.k_list.iter().max().unwrap();

    let mut results: Vec<UserResult> = Vec::with_capacity(n_eval);
    let batch = cfg.batch_size.max(1);
    for start in (0..n_eval).step_by(batch) {
        let end = (start + batch).min(n_eval);
        let chunk: Vec<Result<UserResult>> = (start..end)
            .into_par_iter()
            .map(|u| {
                let foldin = set.foldin.row(u);
                let mut scores = vec![0.0; n];
                model.score_into(foldin, &mut scores);
                if cfg.mask_seen {
                    for &i in foldin {
                        scores[i as usize] = MASKED_SCORE;
                    }
                }
                let top = rank_topk(&scores, kmax);
                let truth = set.heldout.row(u);
                let head_truth: Vec<u32> = truth.iter().copied().filter(|&i| head[i as usize]).collect();
                let tail_truth: Vec<u32> = truth.iter().copied().filter(|&i| !head[i as usize]).collect();
                let per_k = |t: &[u32], gain: &dyn Fn(u32) -> f64| -> Result<Option<Vec<(f64, f64)>>> {
                    if t.is_empty() {
                        return Ok(None);
                    }
                    cfg.k_list
                        .iter()
                        .map(|&k| weighted_recall_ndcg(&top, t, k, gain))
                        .collect::<Result<Vec<_>>>()
                        .map(Some)
                };
                let unit = |_: u32| 1.0;
                let ipw = |i: u32| inv_prop[i as usize];
                let aoa = per_k(truth, &unit)?;
                let (act, inact) = if active[u] {
                    (aoa.clone(), None)
                } else {
                    (None, aoa.clone())
                };
                Ok(UserResult {
                    values: vec![
                        aoa,
                        per_k(&head_truth, &unit)?,
                        per_k(&tail_truth, &unit)?,
                        per_k(truth, &ipw)?,
                        act,
                        inact,
                    ],
                })
            })
            .collect();
        for r in chunk {
            results.push(r?);
        }
    }

    let mut report = EvalReport::default();
    for (s, slice) in Slice::ALL.into_iter().enumerate() {
        let users: Vec<&Vec<(f64, f64)>> = results.iter().filter_map(|r| r.values[s].as_ref()).collect();
        for (ki, &k) in cfg.k_list.iter().enumerate() {
            for metric in [Metric::Recall, Metric::Ndcg] {
                let sum: f64 = users
                    .iter()
                    .map(|v| match metric {
                        Metric::Recall => v[ki].0,
                        Metric::Ndcg => v[ki].1,
                    })
                    .sum();
                let value = if users.is_empty() { 0.0 } else { sum / users.len() as f64 };
                report.rows.push(ReportRow {
                    slice,
                    metric,
                    k,
                    value,
                    n_users: users.len(),
                });
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::DenseMatrix;
    use crate::models::{FitStats, ItemModel, SolverConfig};
    use crate::normalization::NormRecipe;
    use proptest::prelude::*;

    #[test]
    fn topk_basics() {
        assert_eq!(rank_topk(&[0.1, 0.9, 0.5], 2), vec![1, 2]);
        assert_eq!(rank_topk(&[0.3, 0.3, 0.3], 2), vec![0, 1]);
        assert_eq!(rank_topk(&[MASKED_SCORE, 0.0, MASKED_SCORE], 3), vec![1]);
    }

    #[test]
    fn metric_fixtures() {
        assert_eq!(recall_ndcg(&[5, 1, 2], &[5], 20).unwrap(), (1.0, 1.0));
        let (r, n) = recall_ndcg(&[1, 5, 2], &[5], 20).unwrap();
        assert_eq!(r, 1.0);
        assert!((n - 1.0 / 3f64.log2()).abs() < 1e-15);
        assert_eq!(recall_ndcg(&[1, 2], &[5], 2).unwrap(), (0.0, 0.0));
        assert!(matches!(recall_ndcg(&[1], &[], 2), Err(LareError::Contract(_))));
        // recall denominator is min(K, |G|)
        assert_eq!(recall_ndcg(&[0, 1], &[0, 1, 2, 3], 2).unwrap().0, 1.0);
    }

    #[test]
    fn top_fraction_ties_by_index() {
        assert_eq!(top_fraction(&[3, 5, 5, 1, 5], 0.4), vec![false, true, true, false, false]);
    }

    fn identity_model(n: usize) -> ItemModel {
        ItemModel {
            weights: DenseMatrix::identity(n),
            config: SolverConfig::lae(1.0, NormRecipe::none()),
            item_ids: (0..n).map(|i| i.to_string()).collect(),
            stats: FitStats {
                fit_seconds: 0.0,
                residual: None,
                n_users: 0,
                dataset_hash: String::new(),
            },
        }
    }

    /// Scores each user's held-out items highest, rarer items first, which
    /// is also the ideal order under inverse-propensity gains.
    struct Oracle<'a>(&'a EvalSet, &'a [u32]);

    impl Scorer for Oracle<'_> {
        fn n_items(&self) -> usize {
            self.1.len()
        }

        fn score_into(&self, foldin: &[u32], out: &mut [f64]) {
            out.fill(0.0);
            let u = (0..self.0.n_users()).find(|&u| self.0.foldin.row(u) == foldin).unwrap();
            for &i in self.0.heldout.row(u) {
                out[i as usize] = 1.0 + 1.0 / (1.0 + self.1[i as usize] as f64);
            }
        }
    }

    #[test]
    fn perfect_model_scores_one() {
        let train = InteractionMatrix::from_rows(vec![vec![0, 1, 2, 3, 4, 5], vec![0, 1]], 6).unwrap();
        let set = EvalSet {
            foldin: InteractionMatrix::from_rows(vec![vec![0], vec![1, 2], vec![3]], 6).unwrap(),
            heldout: InteractionMatrix::from_rows(vec![vec![1, 5], vec![0], vec![4, 5]], 6).unwrap(),
        };
        let r = evaluate_set(&Oracle(&set, train.item_degrees()), &train, &set, &EvalConfig::default()).unwrap();
        for row in &r.rows {
            if row.n_users > 0 {
                assert_eq!(row.value, 1.0, "{row:?}");
            }
        }
    }

    #[test]
    fn unbiased_equals_aoa_under_uniform_popularity() {
        let train = InteractionMatrix::from_rows(vec![vec![0, 1, 2, 3], vec![0, 1, 2, 3]], 4).unwrap();
        let set = EvalSet {
            foldin: InteractionMatrix::from_rows(vec![vec![0], vec![1], vec![2, 3]], 4).unwrap(),
            heldout: InteractionMatrix::from_rows(vec![vec![1, 2], vec![3], vec![0]], 4).unwrap(),
        };
        let mut m = identity_model(4);
        m.weights = DenseMatrix::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64);
        let cfg = EvalConfig {
            k_list: vec![1, 2, 3],
            ..EvalConfig::default()
        };
        let r = evaluate_set(&m, &train, &set, &cfg).unwrap();
        for &k in &cfg.k_list {
            for metric in [Metric::Recall, Metric::Ndcg] {
                assert_eq!(r.get(Slice::Unbiased, metric, k), r.get(Slice::Aoa, metric, k));
            }
        }
    }

    #[test]
    fn report_tsv_shape() {
        let train = InteractionMatrix::from_rows(vec![vec![0, 1, 2]], 3).unwrap();
        let set = EvalSet {
            foldin: InteractionMatrix::from_rows(vec![vec![0]], 3).unwrap(),
            heldout: InteractionMatrix::from_rows(vec![vec![1]], 3).unwrap(),
        };
        let r = evaluate_set(&identity_model(3), &train, &set, &EvalConfig::default()).unwrap();
        let tsv = r.to_tsv();
        assert!(tsv.starts_with("slice\tmetric\tk\tvalue\tn_users\n"));
        assert_eq!(tsv.lines().count(), 1 + 6 * 2);
        assert!(r.summary().contains("AOA"));
    }

    proptest! {
        #[test]
        fn metrics_in_unit_interval(
            scores in proptest::collection::vec(-5.0f64..5.0, 1..30),
            truth in proptest::collection::btree_set(0u32..30, 1..6),
            k in 1usize..12,
        ) {
            let truth: Vec<u32> = truth.into_iter().filter(|&i| (i as usize) < scores.len()).collect();
            prop_assume!(!truth.is_empty());
            let top = rank_topk(&scores, k);
            let (r, n) = recall_ndcg(&top, &truth, k).unwrap();
            prop_assert!((0.0..=1.0).contains(&r) && (0.0..=1.0 + 1e-12).contains(&n));
        }

        #[test]
        fn promoting_a_relevant_item_never_hurts(
            scores in proptest::collection::vec(-5.0f64..5.0, 2..30),
            pick in 0usize..30,
            k in 1usize..10,
        ) {
            let target = (pick % scores.len()) as u32;
            let truth = vec![target];
            let (r0, n0) = recall_ndcg(&rank_topk(&scores, k), &truth, k).unwrap();
            let mut boosted = scores.clone();
            boosted[target as usize] = 10.0;
            let (r1, n1) = recall_ndcg(&rank_topk(&boosted, k), &truth, k).unwrap();
            prop_assert!(r1 >= r0 && n1 >= n0);
        }

        #[test]
        fn topk_matches_full_sort(scores in proptest::collection::vec(-3i32..3, 1..40), k in 1usize..50) {
            let s: Vec<f64> = scores.iter().map(|&v| v as f64).collect();
            let mut all: Vec<u32> = (0..s.len() as u32).collect();
            all.sort_by(|&a, &b| s[b as usize].total_cmp(&s[a as usize]).then(a.cmp(&b)));
            all.truncate(k);
            prop_assert_eq!(rank_topk(&s, k), all);
        }
    }
}
