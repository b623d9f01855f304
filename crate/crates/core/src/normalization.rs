//! Degree-normalized item grams.
//!
//! Every recipe is a pair of diagonal weightings around the raw co-occurrence
//! count: users are weighted by `d_u^-beta` inside the gram, and the result is
//! sandwiched as `D_I^-(1-alpha) · G · D_I^-alpha`. RW and Sym are the
//! `(alpha, beta) = (0, 1)` and `(0.5, 1)` corners of that family.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{LareError, Result};
use crate::interactions::InteractionMatrix;
use crate::linalg::{gram, DenseMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NormKind {
    None,
    Rw,
    Sym,
    Dan,
    /// `Xᵀ D_U^-beta X` without item-side scaling.
    User,
    /// Plain gram; the fitted weights are right-scaled by `D_I^-gamma_col`.
    ColumnWise,
}

impl NormKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::None => "none",
            NormKind::Rw => "rw",
            NormKind::Sym => "sym",
            NormKind::Dan => "dan",
            NormKind::User => "user",
            NormKind::ColumnWise => "column",
        }
    }
}

impl FromStr for NormKind {
    type Err = LareError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "none" | "wo" | "w/o" => NormKind::None,
            "rw" => NormKind::Rw,
            "sym" => NormKind::Sym,
            "dan" => NormKind::Dan,
            "user" => NormKind::User,
            "column" | "columnwise" | "column-wise" => NormKind::ColumnWise,
            other => return Err(LareError::Config(format!("unknown normalization `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormRecipe {
    pub kind: NormKind,
    pub alpha: f64,
    pub beta: f64,
    pub gamma_col: f64,
}

/// What to do with a zero user or item degree. The default refuses; noisy
/// matrices may legitimately contain empty columns and opt into zero weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DegreePolicy {
    #[default]
    Strict,
    ZeroWeight,
}

impl NormRecipe {
    pub fn none() -> Self {
        NormRecipe {
            kind: NormKind::None,
            alpha: 0.0,
            beta: 0.0,
            gamma_col: 0.0,
        }
    }

    pub fn rw() -> Self {
        NormRecipe {
            kind: NormKind::Rw,
            alpha: 0.0,
            beta: 1.0,
            ..Self::none()
        }
    }

    pub fn sym() -> Self {
        NormRecipe {
            kind: NormKind::Sym,
            alpha: 0.5,
            beta: 1.0,
            ..Self::none()
        }
    }

    pub fn dan(alpha: f64, beta: f64) -> Self {
        NormRecipe {
            kind: NormKind::Dan,
            alpha,
            beta,
            ..Self::none()
        }
    }

    pub fn user(beta: f64) -> Self {
        NormRecipe {
            kind: NormKind::User,
            beta,
            ..Self::none()
        }
    }

    pub fn column_wise(gamma_col: f64) -> Self {
        NormRecipe {
            kind: NormKind::ColumnWise,
            gamma_col,
            ..Self::none()
        }
    }

    /// Range checks. `wide` lifts the default alpha in [0, 0.5] and
    /// beta in [0, 1] limits (values must still be finite).
    pub fn validate(&self, wide: bool) -> Result<()> {
        let finite = self.alpha.is_finite() && self.beta.is_finite() && self.gamma_col.is_finite();
        if !finite {
            return Err(LareError::Config(format!("non-finite exponent in {self}")));
        }
        match self.kind {
            NormKind::Dan | NormKind::User if !wide => {
                if !(0.0..=0.5).contains(&self.alpha) {
                    return Err(LareError::Config(format!(
                        "alpha {} outside [0, 0.5]",
                        self.alpha
                    )));
                }
                if !(0.0..=1.0).contains(&self.beta) {
                    return Err(LareError::Config(format!("beta {} outside [0, 1]", self.beta)));
                }
            }
            NormKind::ColumnWise if self.gamma_col < 0.0 => {
                return Err(LareError::Config("gamma_col must be nonnegative".into()));
            }
            _ => {}
        }
        Ok(())
    }

    /// The user exponent beta this recipe applies inside the gram.
    pub fn user_exponent(&self) -> f64 {
        match self.kind {
            NormKind::None | NormKind::ColumnWise => 0.0,
            NormKind::Rw | NormKind::Sym => 1.0,
            NormKind::Dan | NormKind::User => self.beta,
        }
    }

    /// The item exponent alpha, or `None` when items are not rescaled.
    pub fn item_exponent(&self) -> Option<f64> {
        match self.kind {
            NormKind::None | NormKind::ColumnWise | NormKind::User => None,
            NormKind::Rw => Some(0.0),
            NormKind::Sym => Some(0.5),
            NormKind::Dan => Some(self.alpha),
        }
    }

    /// True when the normalized gram is symmetric by construction.
    pub fn is_symmetric(&self) -> bool {
        self.item_exponent().is_none_or(|a| a == 0.5)
    }

    pub fn to_kv(&self) -> Vec<(&'static str, String)> {
        vec![
            ("kind", self.kind.as_str().to_string()),
            ("alpha", format!("{}", self.alpha)),
            ("beta", format!("{}", self.beta)),
            ("gamma_col", format!("{}", self.gamma_col)),
        ]
    }

    pub fn from_kv(kv: &HashMap<String, String>) -> Result<Self> {
        let get = |k: &str| {
            kv.get(k)
                .ok_or_else(|| LareError::Config(format!("recipe is missing `{k}`")))
        };
        let num = |k: &str| -> Result<f64> {
            get(k)?
                .parse()
                .map_err(|_| LareError::Config(format!("recipe field `{k}` is not a number")))
        };
        Ok(NormRecipe {
            kind: get("kind")?.parse()?,
            alpha: num("alpha")?,
            beta: num("beta")?,
            gamma_col: num("gamma_col")?,
        })
    }
}

impl fmt::Display for NormRecipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NormKind::Dan => write!(f, "dan(alpha={},beta={})", self.alpha, self.beta),
            NormKind::User => write!(f, "user(beta={})", self.beta),
            NormKind::ColumnWise => write!(f, "column(gamma={})", self.gamma_col),
            k => f.write_str(k.as_str()),
        }
    }
}

/// `d^exponent` per entry; a zero degree is an error under `Strict` and
/// maps to weight 0 under `ZeroWeight`.
pub fn degree_powers(degrees: &[u32], exponent: f64, policy: DegreePolicy) -> Result<Vec<f64>> {
    degrees
        .iter()
        .enumerate()
        .map(|(k, &d)| match (d, policy) {
            (0, DegreePolicy::Strict) => Err(LareError::Contract(format!(
                "index {k} has zero degree; filter the matrix first"
            ))),
            (0, DegreePolicy::ZeroWeight) => Ok(0.0),
            (d, _) => Ok((d as f64).powf(exponent)),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedGram {
    pub matrix: DenseMatrix,
    pub recipe: NormRecipe,
}

pub fn build_gram(x: &InteractionMatrix, recipe: &NormRecipe) -> Result<NormalizedGram> {
    build_gram_with(x, recipe, DegreePolicy::Strict)
}

pub fn build_gram_with(
    x: &InteractionMatrix,
    recipe: &NormRecipe,
    policy: DegreePolicy,
) -> Result<NormalizedGram> {
    let mut matrix = weighted_gram(x, recipe.user_exponent(), policy)?;
    if let Some(alpha) = recipe.item_exponent() {
        let left = degree_powers(x.item_degrees(), -(1.0 - alpha), policy)?;
        let right = degree_powers(x.item_degrees(), -alpha, policy)?;
        matrix.scale_sandwich(&left, &right);
    } else if policy == DegreePolicy::Strict {
        degree_powers(x.item_degrees(), 0.0, policy)?;
    }
    Ok(NormalizedGram {
        matrix,
        recipe: *recipe,
    })
}

/// `Xᵀ D_U^-beta X`.
pub fn weighted_gram(x: &InteractionMatrix, beta: f64, policy: DegreePolicy) -> Result<DenseMatrix> {
    let weights = degree_powers(x.user_degrees(), -beta, policy)?;
    if beta == 0.0 {
        gram(x, None)
    } else {
        gram(x, Some(&weights))
    }
}

/// `D_I^-1/2 · Xᵀ D_U^-beta X · D_I^-1/2`, the symmetric member of the
/// alpha family for a given beta. Every other alpha is the similarity
/// transform `E · S · E⁻¹` with `E = diag(d_i^(alpha - 1/2))`.
pub fn symmetric_representative(
    x: &InteractionMatrix,
    beta: f64,
    policy: DegreePolicy,
) -> Result<DenseMatrix> {
    Ok(build_gram_with(x, &NormRecipe::dan(0.5, beta), policy)?.matrix)
}

/// Diagonal of `E = D_I^(alpha - 1/2)`; zero-degree items get 1.
pub fn alpha_similarity(x: &InteractionMatrix, alpha: f64) -> Vec<f64> {
    x.item_degrees()
        .iter()
        .map(|&d| if d == 0 { 1.0 } else { (d as f64).powf(alpha - 0.5) })
        .collect()
}

/// Sparse matrix with explicit float values, row-compressed.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSparse {
    pub rows: usize,
    pub cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl WeightedSparse {
    pub fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|r| self.row(r).1.iter().sum()).collect()
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            let (idx, val) = self.row(r);
            for (&c, &v) in idx.iter().zip(val) {
                out.set(r, c as usize, v);
            }
        }
        out
    }

    /// `selfᵀ · other`, both with the same row count.
    pub fn transpose_times(&self, other: &WeightedSparse) -> Result<DenseMatrix> {
        if self.rows != other.rows {
            return Err(LareError::Contract("row counts differ".into()));
        }
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let (ai, av) = self.row(r);
            let (bi, bv) = other.row(r);
            for (&i, &a) in ai.iter().zip(av) {
                let row = out.row_mut(i as usize);
                for (&j, &b) in bi.iter().zip(bv) {
                    row[j as usize] += a * b;
                }
            }
        }
        Ok(out)
    }
}

fn scaled(x: &InteractionMatrix, value: impl Fn(usize, usize) -> f64) -> WeightedSparse {
    let mut indptr = vec![0];
    let mut indices = Vec::with_capacity(x.nnz());
    let mut values = Vec::with_capacity(x.nnz());
    for u in 0..x.n_users() {
        for &i in x.row(u) {
            indices.push(i);
            values.push(value(u, i as usize));
        }
        indptr.push(indices.len());
    }
    WeightedSparse {
        rows: x.n_users(),
        cols: x.n_items(),
        indptr,
        indices,
        values,
    }
}

/// Random-walk normalized interaction matrices: `D_U⁻¹ X` (row-stochastic)
/// and `X D_I⁻¹` (column-stochastic, i.e. the transpose of `D_I⁻¹ Xᵀ`).
pub fn rw_normalize_matrix(x: &InteractionMatrix) -> Result<(WeightedSparse, WeightedSparse)> {
    let du = degree_powers(x.user_degrees(), -1.0, DegreePolicy::Strict)?;
    let di = degree_powers(x.item_degrees(), -1.0, DegreePolicy::Strict)?;
    Ok((scaled(x, |u, _| du[u]), scaled(x, |_, i| di[i])))
}

/// `D_U^-1/2 X D_I^-1/2`.
pub fn sym_normalize_matrix(x: &InteractionMatrix) -> Result<WeightedSparse> {
    let du = degree_powers(x.user_degrees(), -0.5, DegreePolicy::Strict)?;
    let di = degree_powers(x.item_degrees(), -0.5, DegreePolicy::Strict)?;
    Ok(scaled(x, |u, i| du[u] * di[i]))
}

/// `(D_I⁻¹ Xᵀ)(D_U⁻¹ X)` from the materialized normalized matrices.
pub fn rw_gram_explicit(x: &InteractionMatrix) -> Result<DenseMatrix> {
    let (user_norm, item_norm) = rw_normalize_matrix(x)?;
    item_norm.transpose_times(&user_norm)
}

/// `X̃ᵀ X̃` with `X̃ = D_U^-1/2 X D_I^-1/2`.
pub fn sym_gram_explicit(x: &InteractionMatrix) -> Result<DenseMatrix> {
    let xs = sym_normalize_matrix(x)?;
    xs.transpose_times(&xs)
}
