//! Closed-form item-to-item models (LAE, EASE, DLAE) over any normalization
//! recipe, plus scoring and persistence.
//!
//! Every recipe except DLAE reduces to a symmetric base gram `S`, an optional
//! diagonal similarity `E` and an optional column scaling:
//!
//! * the normalized gram is `E S E⁻¹` (only the degree-normalized recipes
//!   carry an `E`),
//! * with `K = (S + λI)⁻¹`, the LAE weights are `E (I − λK) E⁻¹`,
//! * the EASE weights are `I − C diagMat(1 ⊘ diag C)` with `C = E K E⁻¹`,
//!   whose diagonal equals `diag K`.
//!
//! So one Cholesky inverse of a symmetric matrix serves every alpha for a
//! given (beta, λ), which [`SymmetricFit`] exposes for sweeps.
//!
//! EASE over a non-symmetric gram: minimizing `‖X̃ − X̃B‖² + λ‖B‖²` subject
//! to `diag B = 0` gives the stationarity condition `(P̃ + λI)B − P̃ = −Γ`
//! for a diagonal multiplier `Γ`, hence `B = I − C Γ'` with `Γ' = diagMat(γ)`
//! chosen to zero the diagonal: `γ_j = 1 / C_jj`.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{LareError, Result};
use crate::interactions::InteractionMatrix;
use crate::linalg::{gram, solve_general, solve_spd, spd_inverse, DenseMatrix};
use crate::normalization::{
    alpha_similarity, build_gram_with, degree_powers, symmetric_representative, weighted_gram,
    DegreePolicy, NormKind, NormRecipe,
};

/// Score given to masked (already seen) items. Finite so sorting stays total.
pub const MASKED_SCORE: f64 = f64::MIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ModelKind {
    Lae,
    Ease,
    Dlae,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Lae => "lae",
            ModelKind::Ease => "ease",
            ModelKind::Dlae => "dlae",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelKind {
    type Err = LareError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lae" => Ok(ModelKind::Lae),
            "ease" => Ok(ModelKind::Ease),
            "dlae" => Ok(ModelKind::Dlae),
            other => Err(LareError::Config(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub model: ModelKind,
    pub lambda: f64,
    pub recipe: NormRecipe,
    pub degree_policy: DegreePolicy,
    /// Accept exponents outside the default search ranges.
    pub wide_exponents: bool,
}

impl SolverConfig {
    pub fn new(model: ModelKind, lambda: f64, recipe: NormRecipe) -> Self {
        SolverConfig {
            model,
            lambda,
            recipe,
            degree_policy: DegreePolicy::Strict,
            wide_exponents: false,
        }
    }

    pub fn lae(lambda: f64, recipe: NormRecipe) -> Self {
        Self::new(ModelKind::Lae, lambda, recipe)
    }

    pub fn ease(lambda: f64, recipe: NormRecipe) -> Self {
        Self::new(ModelKind::Ease, lambda, recipe)
    }

    pub fn dlae(lambda: f64) -> Self {
        Self::new(ModelKind::Dlae, lambda, NormRecipe::none())
    }

    /// DLAE parameterized by its dropout probability `p = λ / (1 + λ)`.
    pub fn dlae_from_dropout(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(LareError::Config(format!("dropout probability {p} outside (0, 1)")));
        }
        Ok(Self::dlae(p / (1.0 - p)))
    }

    pub fn dropout_p(&self) -> f64 {
        self.lambda / (1.0 + self.lambda)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(LareError::Config(format!(
                "lambda must be positive and finite, got {}",
                self.lambda
            )));
        }
        self.recipe.validate(self.wide_exponents)?;
        if self.model == ModelKind::Dlae && self.recipe.kind != NormKind::None {
            return Err(LareError::Config(format!(
                "DLAE takes no normalization (got {}); item-side normalization already \
                 carries the popularity-scaled penalty",
                self.recipe
            )));
        }
        if self.model == ModelKind::Ease && self.recipe.kind == NormKind::ColumnWise {
            return Err(LareError::Config(
                "column-wise scaling breaks the EASE zero-diagonal fit; use LAE".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitStats {
    pub fit_seconds: f64,
    /// Relative normal-equation residual, when it was computed.
    pub residual: Option<f64>,
    pub n_users: usize,
    pub dataset_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemModel {
    pub weights: DenseMatrix,
    pub config: SolverConfig,
    pub item_ids: Vec<String>,
    pub stats: FitStats,
}

impl ItemModel {
    pub fn n_items(&self) -> usize {
        self.weights.rows()
    }
}

/// The factored symmetric problem shared by all alphas of one (beta, λ).
pub struct SymmetricFit {
    inverse: DenseMatrix,
    lambda: f64,
}

impl SymmetricFit {
    /// Factors `S + λI`.
    pub fn new(base: &DenseMatrix, lambda: f64) -> Result<Self> {
        let mut a = base.clone();
        a.add_to_diagonal(lambda);
        Ok(SymmetricFit {
            inverse: spd_inverse(&a)?,
            lambda,
        })
    }

    /// `E (I − λK) E⁻¹`; `similarity = None` means `E = I`.
    pub fn lae_weights(&self, similarity: Option<&[f64]>) -> DenseMatrix {
        let mut b = self.inverse.clone();
        let n = b.rows();
        b.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(i, row)| {
            for (j, v) in row.iter_mut().enumerate() {
                let scaled = -self.lambda * *v;
                *v = if i == j { 1.0 + scaled } else { scaled };
            }
        });
        if let Some(e) = similarity {
            b.scale_sandwich(e, &reciprocal(e));
        }
        b
    }

    /// `I − C diagMat(1 ⊘ diag C)` with `C = E K E⁻¹`; the diagonal is set
    /// to exactly zero.
    pub fn ease_weights(&self, similarity: Option<&[f64]>) -> Result<DenseMatrix> {
        let n = self.inverse.rows();
        let diag = self.inverse.diagonal();
        if let Some(j) = diag.iter().position(|&c| !(c > 0.0)) {
            return Err(LareError::Numerical(format!(
                "inverse has a non-positive diagonal entry at {j}"
            )));
        }
        let ones = vec![1.0; n];
        let e = similarity.unwrap_or(&ones);
        let right: Vec<f64> = e.iter().zip(&diag).map(|(ej, cj)| -1.0 / (ej * cj)).collect();
        let mut b = self.inverse.clone();
        b.scale_sandwich(e, &right);
        for i in 0..n {
            b.set(i, i, 0.0);
        }
        Ok(b)
    }
}

fn reciprocal(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| 1.0 / x).collect()
}

/// Symmetric base gram and item similarity for a recipe.
pub fn symmetric_base(
    x: &InteractionMatrix,
    recipe: &NormRecipe,
    policy: DegreePolicy,
) -> Result<(DenseMatrix, Option<Vec<f64>>)> {
    match (recipe.kind, recipe.item_exponent()) {
        (_, Some(alpha)) => Ok((
            symmetric_representative(x, recipe.user_exponent(), policy)?,
            Some(alpha_similarity(x, alpha)),
        )),
        (NormKind::User, None) => Ok((weighted_gram(x, recipe.beta, policy)?, None)),
        _ => {
            if policy == DegreePolicy::Strict {
                degree_powers(x.item_degrees(), 0.0, policy)?;
            }
            Ok((gram(x, None)?, None))
        }
    }
}

fn column_scaling(x: &InteractionMatrix, recipe: &NormRecipe, policy: DegreePolicy) -> Result<Option<Vec<f64>>> {
    if recipe.kind != NormKind::ColumnWise {
        return Ok(None);
    }
    let mut s = degree_powers(x.item_degrees(), -recipe.gamma_col, policy)?;
    for (v, &d) in s.iter_mut().zip(x.item_degrees()) {
        if d == 0 {
            *v = 1.0;
        }
    }
    Ok(Some(s))
}

pub fn fit(x: &InteractionMatrix, config: &SolverConfig) -> Result<ItemModel> {
    match config.model {
        ModelKind::Lae => fit_lae(x, config),
        ModelKind::Ease => fit_ease(x, config),
        ModelKind::Dlae => fit_dlae(x, config),
    }
}

fn expect_kind(config: &SolverConfig, kind: ModelKind) -> Result<()> {
    config.validate()?;
    if config.model != kind {
        return Err(LareError::Config(format!(
            "{} fit called with a {} configuration",
            kind, config.model
        )));
    }
    Ok(())
}

/// LAE weights `(P̃ + λI)⁻¹ P̃`, right-scaled by `D_I^-gamma` for the
/// column-wise recipe.
pub fn fit_lae(x: &InteractionMatrix, config: &SolverConfig) -> Result<ItemModel> {
    expect_kind(config, ModelKind::Lae)?;
    let start = Instant::now();
    let (base, similarity) = symmetric_base(x, &config.recipe, config.degree_policy)?;
    let solved = SymmetricFit::new(&base, config.lambda)?;
    drop(base);
    let mut weights = solved.lae_weights(similarity.as_deref());
    if let Some(s) = column_scaling(x, &config.recipe, config.degree_policy)? {
        weights.scale_columns(&s);
    }
    Ok(finish(x, config, weights, start))
}

/// EASE weights with an exactly zero diagonal.
pub fn fit_ease(x: &InteractionMatrix, config: &SolverConfig) -> Result<ItemModel> {
    expect_kind(config, ModelKind::Ease)?;
    let start = Instant::now();
    let (base, similarity) = symmetric_base(x, &config.recipe, config.degree_policy)?;
    let solved = SymmetricFit::new(&base, config.lambda)?;
    drop(base);
    let weights = solved.ease_weights(similarity.as_deref())?;
    Ok(finish(x, config, weights, start))
}

/// DLAE weights `(P + λ D_I)⁻¹ P`.
pub fn fit_dlae(x: &InteractionMatrix, config: &SolverConfig) -> Result<ItemModel> {
    expect_kind(config, ModelKind::Dlae)?;
    let start = Instant::now();
    let weights = dlae_weights(x, config.lambda)?;
    Ok(finish(x, config, weights, start))
}

fn dlae_weights(x: &InteractionMatrix, lambda: f64) -> Result<DenseMatrix> {
    let p = gram(x, None)?;
    let mut a = p.clone();
    for (i, &d) in x.item_degrees().iter().enumerate() {
        if d == 0 {
            // an unused item: keep the system nonsingular, its row of P is zero
            a.set(i, i, lambda);
        } else {
            a.set(i, i, p.get(i, i) + lambda * d as f64);
        }
    }
    solve_spd(&a, &p)
}

fn finish(x: &InteractionMatrix, config: &SolverConfig, weights: DenseMatrix, start: Instant) -> ItemModel {
    let fit_seconds = start.elapsed().as_secs_f64();
    ItemModel {
        weights,
        config: *config,
        item_ids: x.item_ids().to_vec(),
        stats: FitStats {
            fit_seconds,
            residual: None,
            n_users: x.n_users(),
            dataset_hash: x.content_hash(),
        },
    }
}

/// `‖(G + λI)B − G‖_F / ‖G‖_F` for an LAE-style fit over gram `G`.
pub fn normal_equation_residual(gram: &DenseMatrix, lambda: f64, weights: &DenseMatrix) -> Result<f64> {
    let mut a = gram.clone();
    a.add_to_diagonal(lambda);
    let r = a.matmul(weights)?.sub(gram);
    Ok(r.frobenius_norm() / gram.frobenius_norm())
}

/// Computes and stores the normal-equation residual of an LAE model
/// against the normalized gram it was fitted on.
pub fn attach_residual(x: &InteractionMatrix, model: &mut ItemModel) -> Result<f64> {
    let g = build_gram_with(x, &model.config.recipe, model.config.degree_policy)?.matrix;
    let mut w = model.weights.clone();
    if let Some(s) = column_scaling(x, &model.config.recipe, model.config.degree_policy)? {
        w.scale_columns(&reciprocal(&s));
    }
    let r = normal_equation_residual(&g, model.config.lambda, &w)?;
    model.stats.residual = Some(r);
    Ok(r)
}

/// Both sides of the identity linking item-side normalization to DLAE:
/// `left` is the LAE solution over `D_I^-(1-alpha) XᵀX D_I^-alpha`, obtained
/// by a general (LU) solve of the non-symmetric system; `right` is
/// `D_I^alpha · B_DLAE · D_I^-alpha`.
pub fn item_normalization_as_dlae(
    x: &InteractionMatrix,
    alpha: f64,
    lambda: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    if !(lambda > 0.0) {
        return Err(LareError::Config("lambda must be positive".into()));
    }
    let g = build_gram_with(x, &NormRecipe::dan(alpha, 0.0), DegreePolicy::Strict)?.matrix;
    let mut a = g.clone();
    a.add_to_diagonal(lambda);
    let left = solve_general(&a, &g)?;
    let mut right = dlae_weights(x, lambda)?;
    let d_alpha = degree_powers(x.item_degrees(), alpha, DegreePolicy::Strict)?;
    right.scale_sandwich(&d_alpha, &reciprocal(&d_alpha));
    Ok((left, right))
}

/// Anything that turns a fold-in history into item scores.
pub trait Scorer: Sync {
    fn n_items(&self) -> usize;

    /// Writes unmasked scores for `foldin` into `out` (length `n_items`).
    fn score_into(&self, foldin: &[u32], out: &mut [f64]);
}

impl Scorer for ItemModel {
    fn n_items(&self) -> usize {
        self.weights.rows()
    }

    fn score_into(&self, foldin: &[u32], out: &mut [f64]) {
        out.fill(0.0);
        for &i in foldin {
            for (o, w) in out.iter_mut().zip(self.weights.row(i as usize)) {
                *o += w;
            }
        }
    }
}

/// Global popularity baseline: every user gets the training item degrees.
pub struct PopularityScorer {
    pub popularity: Vec<f64>,
}

impl PopularityScorer {
    pub fn new(train: &InteractionMatrix) -> Self {
        PopularityScorer {
            popularity: train.item_degrees().iter().map(|&d| d as f64).collect(),
        }
    }
}

impl Scorer for PopularityScorer {
    fn n_items(&self) -> usize {
        self.popularity.len()
    }

    fn score_into(&self, _foldin: &[u32], out: &mut [f64]) {
        out.copy_from_slice(&self.popularity);
    }
}

/// Scores one user: `X_u · B`, with fold-in items set to [`MASKED_SCORE`]
/// when `mask_seen`.
pub fn score(model: &dyn Scorer, foldin: &[u32], mask_seen: bool) -> Result<Vec<f64>> {
    let n = model.n_items();
    if let Some(&bad) = foldin.iter().find(|&&i| i as usize >= n) {
        return Err(LareError::Input(format!(
            "item index {bad} out of range for a model over {n} items"
        )));
    }
    let mut out = vec![0.0; n];
    model.score_into(foldin, &mut out);
    if mask_seen {
        for &i in foldin {
            out[i as usize] = MASKED_SCORE;
        }
    }
    Ok(out)
}

/// Scores every row of `foldin` in user chunks of `batch` (rows of the
/// returned matrix follow the rows of `foldin`).
pub fn score_batch(
    model: &dyn Scorer,
    foldin: &InteractionMatrix,
    mask_seen: bool,
    batch: usize,
) -> Result<DenseMatrix> {
    let n = model.n_items();
    if foldin.n_items() != n {
        return Err(LareError::Input(format!(
            "fold-in matrix has {} items, model has {n}",
            foldin.n_items()
        )));
    }
    let mut out = DenseMatrix::zeros(foldin.n_users(), n);
    for (c, chunk) in out.as_mut_slice().chunks_mut(batch.max(1) * n.max(1)).enumerate() {
        let first = c * batch.max(1);
        chunk.par_chunks_mut(n.max(1)).enumerate().for_each(|(k, row)| {
            let items = foldin.row(first + k);
            model.score_into(items, row);
            if mask_seen {
                for &i in items {
                    row[i as usize] = MASKED_SCORE;
                }
            }
        });
    }
    Ok(out)
}

fn meta_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

fn items_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".items.tsv");
    PathBuf::from(p)
}

/// Writes the weights (binary), a `key\tvalue` metadata sidecar
/// (`<path>.meta`) and the item id map (`<path>.items.tsv`).
pub fn save(model: &ItemModel, path: &Path) -> Result<()> {
    model.weights.save(path)?;
    let c = &model.config;
    let mut lines = vec![
        ("model".to_string(), c.model.to_string()),
        ("lambda".into(), format!("{}", c.lambda)),
        ("dropout_p".into(), format!("{}", c.dropout_p())),
    ];
    lines.extend(c.recipe.to_kv().into_iter().map(|(k, v)| (format!("recipe.{k}"), v)));
    lines.extend([
        ("degree_policy".into(), format!("{:?}", c.degree_policy).to_lowercase()),
        ("wide_exponents".into(), c.wide_exponents.to_string()),
        ("m".into(), model.stats.n_users.to_string()),
        ("n".into(), model.n_items().to_string()),
        ("dataset_hash".into(), model.stats.dataset_hash.clone()),
        ("fit_seconds".into(), format!("{}", model.stats.fit_seconds)),
    ]);
    if let Some(r) = model.stats.residual {
        lines.push(("residual".into(), format!("{r:e}")));
    }
    let text: String = lines.iter().map(|(k, v)| format!("{k}\t{v}\n")).collect();
    let meta = meta_path(path);
    fs::write(&meta, text).map_err(|e| LareError::io(&meta, e))?;
    let items = items_path(path);
    let ids: String = model
        .item_ids
        .iter()
        .enumerate()
        .map(|(k, id)| format!("{id}\t{k}\n"))
        .collect();
    fs::write(&items, ids).map_err(|e| LareError::io(&items, e))
}

pub fn load(path: &Path) -> Result<ItemModel> {
    let weights = DenseMatrix::load(path)?;
    let meta = meta_path(path);
    let text = fs::read_to_string(&meta).map_err(|e| LareError::io(&meta, e))?;
    let kv: HashMap<String, String> = text
        .lines()
        .filter_map(|l| l.split_once('\t'))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    let get = |k: &str| {
        kv.get(k)
            .ok_or_else(|| LareError::format(&meta, format!("missing key `{k}`")))
    };
    let num = |k: &str| -> Result<f64> {
        get(k)?
            .parse()
            .map_err(|_| LareError::format(&meta, format!("`{k}` is not a number")))
    };
    let recipe_kv: HashMap<String, String> = kv
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("recipe.").map(|k| (k.to_string(), v.clone())))
        .collect();
    let recipe = NormRecipe::from_kv(&recipe_kv).map_err(|e| LareError::format(&meta, e.to_string()))?;
    let degree_policy = match get("degree_policy")?.as_str() {
        "strict" => DegreePolicy::Strict,
        "zeroweight" => DegreePolicy::ZeroWeight,
        other => return Err(LareError::format(&meta, format!("unknown degree policy `{other}`"))),
    };
    let config = SolverConfig {
        model: get("model")?.parse().map_err(|e: LareError| LareError::format(&meta, e.to_string()))?,
        lambda: num("lambda")?,
        recipe,
        degree_policy,
        wide_exponents: get("wide_exponents")? == "true",
    };
    let n = num("n")? as usize;
    if weights.rows() != n || weights.cols() != n {
        return Err(LareError::format(
            path,
            format!("weights are {}x{}, metadata says n = {n}", weights.rows(), weights.cols()),
        ));
    }
    if config.model == ModelKind::Ease && weights.diagonal().iter().any(|&v| v != 0.0) {
        return Err(LareError::format(path, "EASE model with a nonzero diagonal"));
    }
    let items = items_path(path);
    let item_text = fs::read_to_string(&items).map_err(|e| LareError::io(&items, e))?;
    let item_ids: Vec<String> = item_text
        .lines()
        .map(|l| l.rsplit_once('\t').map_or(l, |(id, _)| id).to_string())
        .collect();
    if item_ids.len() != n {
        return Err(LareError::format(&items, format!("{} ids for {n} items", item_ids.len())));
    }
    Ok(ItemModel {
        weights,
        config,
        item_ids,
        stats: FitStats {
            fit_seconds: num("fit_seconds")?,
            residual: kv.get("residual").and_then(|v| v.parse().ok()),
            n_users: num("m")? as usize,
            dataset_hash: get("dataset_hash")?.clone(),
        },
    })
}
