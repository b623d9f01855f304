//! Experiment drivers: hyperparameter sweeps, normalization ablations,
//! noise-robustness curves and fit/inference timing.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LareError, Result};
use crate::evaluation::{evaluate_set, rank_topk, EvalConfig, EvalReport, Metric, ReportRow, Slice};
use crate::interactions::{inject_noise, EvalSet, InteractionMatrix, NoiseConfig, SplitBundle};
use crate::models::{
    fit, score_batch, symmetric_base, FitStats, ItemModel, ModelKind, PopularityScorer, Scorer,
    SolverConfig, SymmetricFit,
};
use crate::normalization::{alpha_similarity, degree_powers, DegreePolicy, NormKind, NormRecipe};

/// `[10, 20, …, 500, 1000]`.
pub fn default_plain_lambdas() -> Vec<f64> {
    let mut g: Vec<f64> = (1..=50).map(|k| 10.0 * k as f64).collect();
    g.push(1000.0);
    g
}

/// `[1e-3, 2e-3, 5e-3, 1e-2, …, 20, 50]`.
pub fn default_normalized_lambdas() -> Vec<f64> {
    let mut g = Vec::new();
    for exp in -3..=1 {
        for m in [1.0, 2.0, 5.0] {
            g.push(format!("{m}e{exp}").parse().unwrap());
        }
    }
    g
}

/// `start, start + step, …, stop` computed from integer multiples so the
/// values print cleanly.
pub fn steps(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as i64;
    (0..=n)
        .map(|k| ((start + k as f64 * step) * 1e9).round() / 1e9)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub slice: Slice,
    pub metric: Metric,
    pub k: usize,
}

impl Default for Selection {
    fn default() -> Self {
        Selection {
            slice: Slice::Aoa,
            metric: Metric::Ndcg,
            k: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    /// Used for the unnormalized recipes (none, column-wise).
    pub lambda_grid: Vec<f64>,
    /// Used for the degree-normalized recipes (rw, sym, dan).
    pub normalized_lambda_grid: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub gamma_grid: Vec<f64>,
    pub dropout_grid: Vec<f64>,
    pub models: Vec<ModelKind>,
    pub recipes: Vec<NormKind>,
    pub selection: Selection,
    pub eval: EvalConfig,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            lambda_grid: default_plain_lambdas(),
            normalized_lambda_grid: default_normalized_lambdas(),
            alpha_grid: steps(0.0, 0.5, 0.1),
            beta_grid: steps(0.0, 1.0, 0.1),
            gamma_grid: steps(0.1, 1.0, 0.1),
            dropout_grid: steps(0.1, 0.9, 0.1),
            models: vec![ModelKind::Lae],
            recipes: vec![NormKind::None, NormKind::Rw, NormKind::Sym, NormKind::Dan],
            selection: Selection::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        let grids = [
            ("lambda", &self.lambda_grid),
            ("normalized lambda", &self.normalized_lambda_grid),
            ("alpha", &self.alpha_grid),
            ("beta", &self.beta_grid),
            ("gamma", &self.gamma_grid),
            ("dropout", &self.dropout_grid),
        ];
        for (name, g) in grids {
            if g.is_empty() {
                return Err(LareError::Config(format!("{name} grid is empty")));
            }
        }
        if self.models.is_empty() || self.recipes.is_empty() {
            return Err(LareError::Config("no models or recipes to sweep".into()));
        }
        if !self.eval.k_list.contains(&self.selection.k) {
            return Err(LareError::Config(format!(
                "selection cutoff {} is not among the evaluated cutoffs",
                self.selection.k
            )));
        }
        self.eval.validate()
    }

    fn lambdas_for(&self, kind: NormKind) -> Vec<f64> {
        match kind {
            NormKind::None | NormKind::ColumnWise => self.lambda_grid.clone(),
            NormKind::User => {
                let mut g = self.normalized_lambda_grid.clone();
                g.extend(self.lambda_grid.iter().copied());
                g
            }
            _ => self.normalized_lambda_grid.clone(),
        }
    }

    /// Every grid point, grouped as `model:recipe`.
    pub fn points(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &model in &self.models {
            if model == ModelKind::Dlae {
                for &p in &self.dropout_grid {
                    if let Ok(cfg) = SolverConfig::dlae_from_dropout(p) {
                        out.push(GridPoint::new("dlae:none", cfg));
                    }
                }
                continue;
            }
            for &kind in &self.recipes {
                if model == ModelKind::Ease && kind == NormKind::ColumnWise {
                    warn!("skipping column-wise scaling for EASE");
                    continue;
                }
                let group = format!("{}:{}", model.as_str(), kind.as_str());
                out.extend(
                    self.recipe_grid(kind)
                        .into_iter()
                        .flat_map(|recipe| {
                            self.lambdas_for(kind)
                                .into_iter()
                                .map(move |l| SolverConfig::new(model, l, recipe))
                        })
                        .map(|cfg| GridPoint::new(&group, cfg)),
                );
            }
        }
        out
    }

    fn recipe_grid(&self, kind: NormKind) -> Vec<NormRecipe> {
        match kind {
            NormKind::None => vec![NormRecipe::none()],
            NormKind::Rw => vec![NormRecipe::rw()],
            NormKind::Sym => vec![NormRecipe::sym()],
            NormKind::User => self.beta_grid.iter().map(|&b| NormRecipe::user(b)).collect(),
            NormKind::ColumnWise => self.gamma_grid.iter().map(|&g| NormRecipe::column_wise(g)).collect(),
            NormKind::Dan => self
                .alpha_grid
                .iter()
                .flat_map(|&a| self.beta_grid.iter().map(move |&b| NormRecipe::dan(a, b)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    pub group: String,
    pub config: SolverConfig,
}

impl GridPoint {
    pub fn new(group: &str, config: SolverConfig) -> Self {
        GridPoint {
            group: group.to_string(),
            config,
        }
    }

    /// Stable identifier used for checkpoints.
    pub fn key(&self) -> String {
        format!(
            "{}|{}|{}|{}|{}|{}|{}",
            self.group,
            self.config.model,
            self.config.recipe.kind.as_str(),
            self.config.recipe.alpha,
            self.config.recipe.beta,
            self.config.recipe.gamma_col,
            self.config.lambda
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Done { validation: EvalReport, test: EvalReport },
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridResult {
    pub point: GridPoint,
    pub outcome: Outcome,
}

impl GridResult {
    pub fn validation_value(&self, sel: &Selection) -> Option<f64> {
        match &self.outcome {
            Outcome::Done { validation, .. } => validation.get(sel.slice, sel.metric, sel.k),
            Outcome::Failed(_) => None,
        }
    }

    pub fn test(&self) -> Option<&EvalReport> {
        match &self.outcome {
            Outcome::Done { test, .. } => Some(test),
            Outcome::Failed(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<GridResult>,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderRow<'a> {
    pub group: &'a str,
    pub best: &'a GridResult,
    pub validation_value: f64,
}

const CONFIG_COLUMNS: &str = "group\tmodel\trecipe\talpha\tbeta\tgamma_col\tlambda";

fn config_columns(p: &GridPoint) -> String {
    let r = &p.config.recipe;
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}",
        p.group,
        p.config.model,
        r.kind.as_str(),
        r.alpha,
        r.beta,
        r.gamma_col,
        p.config.lambda
    )
}

impl SweepResult {
    pub fn groups(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .map(|r| r.point.group.as_str())
            .filter(|g| seen.insert(*g))
            .collect()
    }

    /// Best validated point of `group`; the first in grid order wins ties.
    pub fn best(&self, group: &str) -> Option<LeaderRow<'_>> {
        let mut best: Option<LeaderRow<'_>> = None;
        for r in self.rows.iter().filter(|r| r.point.group == group) {
            let Some(v) = r.validation_value(&self.selection) else {
                continue;
            };
            if best.as_ref().is_none_or(|b| v > b.validation_value) {
                best = Some(LeaderRow {
                    group: &r.point.group,
                    best: r,
                    validation_value: v,
                });
            }
        }
        best
    }

    pub fn leaderboard(&self) -> Vec<LeaderRow<'_>> {
        self.groups().into_iter().filter_map(|g| self.best(g)).collect()
    }

    pub fn failures(&self) -> Vec<(&GridPoint, &str)> {
        self.rows
            .iter()
            .filter_map(|r| match &r.outcome {
                Outcome::Failed(msg) => Some((&r.point, msg.as_str())),
                Outcome::Done { .. } => None,
            })
            .collect()
    }

    pub fn grid_tsv(&self) -> String {
        let mut out = format!("{CONFIG_COLUMNS}\tsplit\tslice\tmetric\tk\tvalue\tn_users\n");
        for r in &self.rows {
            if let Outcome::Done { validation, test } = &r.outcome {
                let cfg = config_columns(&r.point);
                for (split, rep) in [("validation", validation), ("test", test)] {
                    for row in &rep.rows {
                        let _ = writeln!(
                            out,
                            "{cfg}\t{split}\t{}\t{}\t{}\t{:.8}\t{}",
                            row.slice, row.metric, row.k, row.value, row.n_users
                        );
                    }
                }
            }
        }
        out
    }

    pub fn leaderboard_tsv(&self) -> String {
        let mut out = format!(
            "{CONFIG_COLUMNS}\tselection_value\tslice\tmetric\tk\ttest_value\tn_users\n"
        );
        for l in self.leaderboard() {
            let cfg = config_columns(&l.best.point);
            if let Some(test) = l.best.test() {
                for row in &test.rows {
                    let _ = writeln!(
                        out,
                        "{cfg}\t{:.8}\t{}\t{}\t{}\t{:.8}\t{}",
                        l.validation_value, row.slice, row.metric, row.k, row.value, row.n_users
                    );
                }
            }
        }
        out
    }

    pub fn failures_tsv(&self) -> String {
        let mut out = format!("{CONFIG_COLUMNS}\terror\n");
        for (p, msg) in self.failures() {
            let _ = writeln!(out, "{}\t{}", config_columns(p), msg.replace(['\t', '\n'], " "));
        }
        out
    }

    /// For each value of a recipe parameter within `group`, the best point
    /// (on validation) among those with that value, reported with its test
    /// metrics. Gives one row per (value, slice, metric, K).
    pub fn curve_tsv(&self, group: &str, param: CurveParam) -> String {
        let mut values: Vec<f64> = Vec::new();
        for r in self.rows.iter().filter(|r| r.point.group == group) {
            let v = param.of(&r.point);
            if !values.contains(&v) {
                values.push(v);
            }
        }
        let mut out = format!("{}\tlambda\tslice\tmetric\tk\tvalue\tn_users\n", param.name());
        for v in values {
            let mut best: Option<(&GridResult, f64)> = None;
            for r in self.rows.iter().filter(|r| r.point.group == group && param.of(&r.point) == v) {
                if let Some(s) = r.validation_value(&self.selection) {
                    if best.is_none_or(|(_, b)| s > b) {
                        best = Some((r, s));
                    }
                }
            }
            let Some((r, _)) = best else { continue };
            for row in &r.test().unwrap().rows {
                let _ = writeln!(
                    out,
                    "{v}\t{}\t{}\t{}\t{}\t{:.8}\t{}",
                    r.point.config.lambda, row.slice, row.metric, row.k, row.value, row.n_users
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveParam {
    Alpha,
    Beta,
    Lambda,
}

impl CurveParam {
    fn of(&self, p: &GridPoint) -> f64 {
        match self {
            CurveParam::Alpha => p.config.recipe.alpha,
            CurveParam::Beta => p.config.recipe.beta,
            CurveParam::Lambda => p.config.lambda,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            CurveParam::Alpha => "alpha",
            CurveParam::Beta => "beta",
            CurveParam::Lambda => "lambda_value",
        }
    }
}

/// Points that can share one factorization: same model family, same
/// symmetric base gram and same λ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum BaseKey {
    Raw,
    User(u64),
    Sym(u64),
}

fn base_key(recipe: &NormRecipe) -> BaseKey {
    match (recipe.kind, recipe.item_exponent()) {
        (_, Some(_)) => BaseKey::Sym(recipe.user_exponent().to_bits()),
        (NormKind::User, None) => BaseKey::User(recipe.beta.to_bits()),
        _ => BaseKey::Raw,
    }
}

/// Append-only record of finished grid points, so an interrupted sweep
/// can resume. Values are stored in round-trip precision.
pub struct Checkpoint {
    path: PathBuf,
    done: HashMap<String, (EvalReport, EvalReport)>,
    file: Mutex<fs::File>,
}

impl Checkpoint {
    pub fn open(path: &Path) -> Result<Self> {
        let mut done: HashMap<String, (EvalReport, EvalReport)> = HashMap::new();
        if path.exists() {
            let text = fs::read_to_string(path).map_err(|e| LareError::io(path, e))?;
            for (n, line) in text.lines().enumerate() {
                let f: Vec<&str> = line.split('\t').collect();
                let parsed = (|| -> Option<(String, bool, ReportRow)> {
                    if f.len() != 7 {
                        return None;
                    }
                    Some((
                        f[0].to_string(),
                        f[1] == "validation",
                        ReportRow {
                            slice: f[2].parse().ok()?,
                            metric: f[3].parse().ok()?,
                            k: f[4].parse().ok()?,
                            value: f[5].parse().ok()?,
                            n_users: f[6].parse().ok()?,
                        },
                    ))
                })();
                let Some((key, is_val, row)) = parsed else {
                    // a torn final line from an interrupted run
                    warn!("{}:{}: ignoring malformed checkpoint line", path.display(), n + 1);
                    continue;
                };
                let entry = done.entry(key).or_default();
                if is_val {
                    entry.0.rows.push(row);
                } else {
                    entry.1.rows.push(row);
                }
            }
        }
        let file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| LareError::io(path, e))?;
        Ok(Checkpoint {
            path: path.to_path_buf(),
            done,
            file: Mutex::new(file),
        })
    }

    fn get(&self, key: &str, expected_rows: usize) -> Option<&(EvalReport, EvalReport)> {
        self.done
            .get(key)
            .filter(|(v, t)| v.rows.len() == expected_rows && t.rows.len() == expected_rows)
    }

    fn lines(key: &str, validation: &EvalReport, test: &EvalReport) -> String {
        let mut text = String::new();
        for (split, rep) in [("validation", validation), ("test", test)] {
            for r in &rep.rows {
                let _ = writeln!(
                    text,
                    "{key}\t{split}\t{}\t{}\t{}\t{}\t{}",
                    r.slice, r.metric, r.k, r.value, r.n_users
                );
            }
        }
        text
    }

    fn record(&self, key: &str, validation: &EvalReport, test: &EvalReport) -> Result<()> {
        let text = Self::lines(key, validation, test);
        let mut f = self.file.lock().unwrap();
        f.write_all(text.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| LareError::io(&self.path, e))
    }

    /// Rewrites the journal in grid order once a run completes, so its
    /// contents do not depend on worker scheduling.
    fn rewrite(&self, rows: &[GridResult]) -> Result<()> {
        let mut text = String::new();
        for r in rows {
            if let Outcome::Done { validation, test } = &r.outcome {
                text.push_str(&Self::lines(&r.point.key(), validation, test));
            }
        }
        let _guard = self.file.lock().unwrap();
        fs::write(&self.path, text).map_err(|e| LareError::io(&self.path, e))
    }
}

fn model_from(x: &InteractionMatrix, config: SolverConfig, weights: crate::linalg::DenseMatrix) -> ItemModel {
    ItemModel {
        weights,
        config,
        item_ids: x.item_ids().to_vec(),
        stats: FitStats {
            fit_seconds: 0.0,
            residual: None,
            n_users: x.n_users(),
            dataset_hash: String::new(),
        },
    }
}

/// Fits and evaluates every point on the validation and test sets.
///
/// Points sharing a base gram are batched: the base is built once, and
/// each λ is factored once for all alphas / column exponents. Output order
/// follows `points`. A failing factorization marks its points as failed
/// and the sweep continues.
pub fn run_points(
    bundle: &SplitBundle,
    points: &[GridPoint],
    eval: &EvalConfig,
    checkpoint: Option<&Checkpoint>,
) -> Result<Vec<GridResult>> {
    let validation = bundle
        .validation
        .as_ref()
        .ok_or_else(|| LareError::Config("sweeps need a validation split".into()))?;
    for p in points {
        p.config.validate()?;
    }
    let x = &bundle.train;
    let expected_rows = Slice::ALL.len() * 2 * eval.k_list.len();

    // base -> lambda -> point indices, all in first-appearance order
    type LambdaGroups = Vec<(u64, Vec<usize>)>;
    let mut bases: Vec<(BaseKey, ModelKind, LambdaGroups)> = Vec::new();
    let mut direct: Vec<usize> = Vec::new();
    for (idx, p) in points.iter().enumerate() {
        if p.config.model == ModelKind::Dlae {
            direct.push(idx);
            continue;
        }
        let key = base_key(&p.config.recipe);
        let lam = p.config.lambda.to_bits();
        let slot = match bases.iter().position(|(k, m, _)| *k == key && *m == p.config.model) {
            Some(s) => s,
            None => {
                bases.push((key, p.config.model, Vec::new()));
                bases.len() - 1
            }
        };
        let lambdas = &mut bases[slot].2;
        match lambdas.iter_mut().find(|(l, _)| *l == lam) {
            Some((_, v)) => v.push(idx),
            None => lambdas.push((lam, vec![idx])),
        }
    }

    let evaluate_point = |model: &ItemModel, idx: usize| -> Result<Outcome> {
        let v = evaluate_set(model, x, validation, eval)?;
        let t = evaluate_set(model, x, &bundle.test, eval)?;
        if let Some(c) = checkpoint {
            c.record(&points[idx].key(), &v, &t)?;
        }
        Ok(Outcome::Done {
            validation: v,
            test: t,
        })
    };
    let cached = |idx: usize| -> Option<Outcome> {
        checkpoint
            .and_then(|c| c.get(&points[idx].key(), expected_rows))
            .map(|(v, t)| Outcome::Done {
                validation: v.clone(),
                test: t.clone(),
            })
    };

    let started = Instant::now();
    let mut outcomes: Vec<Option<Outcome>> = vec![None; points.len()];
    let batched: Vec<Vec<(usize, Outcome)>> = bases
        .par_iter()
        .map(|(_, _, lambdas)| -> Result<Vec<(usize, Outcome)>> {
            let mut out = Vec::new();
            let mut base: Option<crate::linalg::DenseMatrix> = None;
            for (lam, idxs) in lambdas {
                let todo: Vec<usize> = idxs
                    .iter()
                    .copied()
                    .filter(|&i| match cached(i) {
                        Some(o) => {
                            out.push((i, o));
                            false
                        }
                        None => true,
                    })
                    .collect();
                if todo.is_empty() {
                    continue;
                }
                let first = &points[todo[0]].config;
                if base.is_none() {
                    match symmetric_base(x, &first.recipe, first.degree_policy) {
                        Ok((b, _)) => base = Some(b),
                        Err(e) => {
                            out.extend(todo.iter().map(|&i| (i, Outcome::Failed(e.to_string()))));
                            continue;
                        }
                    }
                }
                let solved = match SymmetricFit::new(base.as_ref().unwrap(), f64::from_bits(*lam)) {
                    Ok(s) => s,
                    Err(e) => {
                        warn!("λ = {}: {e}", f64::from_bits(*lam));
                        out.extend(todo.iter().map(|&i| (i, Outcome::Failed(e.to_string()))));
                        continue;
                    }
                };
                for i in todo {
                    let cfg = points[i].config;
                    let weights = (|| -> Result<crate::linalg::DenseMatrix> {
                        let sim = cfg
                            .recipe
                            .item_exponent()
                            .map(|a| alpha_similarity(x, a));
                        match cfg.model {
                            ModelKind::Ease => solved.ease_weights(sim.as_deref()),
                            _ => {
                                let mut w = solved.lae_weights(sim.as_deref());
                                if cfg.recipe.kind == NormKind::ColumnWise {
                                    let mut s = degree_powers(
                                        x.item_degrees(),
                                        -cfg.recipe.gamma_col,
                                        cfg.degree_policy,
                                    )?;
                                    for (v, &d) in s.iter_mut().zip(x.item_degrees()) {
                                        if d == 0 {
                                            *v = 1.0;
                                        }
                                    }
                                    w.scale_columns(&s);
                                }
                                Ok(w)
                            }
                        }
                    })();
                    let outcome = match weights {
                        Ok(w) => evaluate_point(&model_from(x, cfg, w), i)?,
                        Err(e) => Outcome::Failed(e.to_string()),
                    };
                    out.push((i, outcome));
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    for (i, o) in batched.into_iter().flatten() {
        outcomes[i] = Some(o);
    }
    for i in direct {
        outcomes[i] = Some(match cached(i) {
            Some(o) => o,
            None => match fit(x, &points[i].config) {
                Ok(m) => evaluate_point(&m, i)?,
                Err(e) => Outcome::Failed(e.to_string()),
            },
        });
    }
    info!(
        "evaluated {} grid points in {:.1}s",
        points.len(),
        started.elapsed().as_secs_f64()
    );
    let rows: Vec<GridResult> = points
        .iter()
        .cloned()
        .zip(outcomes)
        .map(|(point, o)| GridResult {
            point,
            outcome: o.expect("every point is assigned an outcome"),
        })
        .collect();
    if let Some(c) = checkpoint {
        c.rewrite(&rows)?;
    }
    Ok(rows)
}

/// Fits every grid point, selects per group on validation and keeps test
/// metrics for all points.
pub fn run_sweep(bundle: &SplitBundle, spec: &SweepSpec, checkpoint: Option<&Checkpoint>) -> Result<SweepResult> {
    spec.validate()?;
    let rows = run_points(bundle, &spec.points(), &spec.eval, checkpoint)?;
    Ok(SweepResult {
        rows,
        selection: spec.selection,
    })
}

/// Normalization variants compared in the ablation table.
pub const ABLATION_METHODS: [&str; 8] = [
    "Most-pop",
    "W/O",
    "RW",
    "Sym",
    "User-only",
    "Item-only",
    "ColumnWise",
    "DAN",
];

fn ablation_points(spec: &SweepSpec) -> Vec<GridPoint> {
    let lae = |l: f64, r: NormRecipe| SolverConfig::lae(l, r);
    let mut pts = Vec::new();
    let mut add = |group: &str, recipes: Vec<NormRecipe>, lambdas: &[f64]| {
        for r in recipes {
            for &l in lambdas {
                pts.push(GridPoint::new(group, lae(l, r)));
            }
        }
    };
    let plain = spec.lambda_grid.clone();
    let norm = spec.normalized_lambda_grid.clone();
    let mut both = norm.clone();
    both.extend(plain.iter().copied());
    add("W/O", vec![NormRecipe::none()], &plain);
    add("RW", vec![NormRecipe::rw()], &norm);
    add("Sym", vec![NormRecipe::sym()], &norm);
    add("User-only", spec.beta_grid.iter().map(|&b| NormRecipe::user(b)).collect(), &both);
    add("Item-only", spec.alpha_grid.iter().map(|&a| NormRecipe::dan(a, 0.0)).collect(), &norm);
    add(
        "ColumnWise",
        spec.gamma_grid.iter().map(|&g| NormRecipe::column_wise(g)).collect(),
        &plain,
    );
    add(
        "DAN",
        spec.alpha_grid
            .iter()
            .flat_map(|&a| spec.beta_grid.iter().map(move |&b| NormRecipe::dan(a, b)))
            .collect(),
        &norm,
    );
    pts
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub method: String,
    /// `None` for the popularity baseline.
    pub config: Option<SolverConfig>,
    pub test: EvalReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    pub sweep: SweepResult,
}

impl AblationResult {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\trecipe\tlambda\tslice\tmetric\tk\tvalue\tn_users\n");
        for r in &self.rows {
            let (recipe, lambda) = match &r.config {
                Some(c) => (c.recipe.to_string(), c.lambda.to_string()),
                None => ("-".into(), "-".into()),
            };
            for row in &r.test.rows {
                if matches!(row.slice, Slice::Aoa | Slice::Head | Slice::Tail) {
                    let _ = writeln!(
                        out,
                        "{}\t{recipe}\t{lambda}\t{}\t{}\t{}\t{:.8}\t{}",
                        r.method, row.slice, row.metric, row.k, row.value, row.n_users
                    );
                }
            }
        }
        out
    }
}

/// One row per normalization variant, each with its own tuned λ (and
/// exponents), plus a popularity baseline.
pub fn run_ablation(bundle: &SplitBundle, spec: &SweepSpec, checkpoint: Option<&Checkpoint>) -> Result<AblationResult> {
    spec.validate()?;
    let sweep = SweepResult {
        rows: run_points(bundle, &ablation_points(spec), &spec.eval, checkpoint)?,
        selection: spec.selection,
    };
    let mut rows = vec![AblationRow {
        method: "Most-pop".into(),
        config: None,
        test: evaluate_set(&PopularityScorer::new(&bundle.train), &bundle.train, &bundle.test, &spec.eval)?,
    }];
    for method in &ABLATION_METHODS[1..] {
        if let Some(best) = sweep.best(method) {
            rows.push(AblationRow {
                method: method.to_string(),
                config: Some(best.best.point.config),
                test: best.best.test().unwrap().clone(),
            });
        } else {
            warn!("ablation method {method} has no successful grid point");
        }
    }
    Ok(AblationResult { rows, sweep })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub ratios: Vec<f64>,
    pub seeds: Vec<u64>,
    /// (label, configuration) pairs; fits use zero weights for items or
    /// users that lose every interaction.
    pub models: Vec<(String, SolverConfig)>,
    pub eval: EvalConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRow {
    pub label: String,
    pub seed: u64,
    pub ratio: f64,
    pub slice: Slice,
    pub metric: Metric,
    pub k: usize,
    pub value: f64,
    /// `(perf(r) − perf(0)) / perf(0)`; negative when noise hurts.
    pub relative_change: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct NoiseReport {
    pub rows: Vec<NoiseRow>,
}

impl NoiseReport {
    /// Mean relative change over seeds.
    pub fn mean_relative_change(&self, label: &str, ratio: f64, slice: Slice, metric: Metric, k: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.label == label && r.ratio == ratio && r.slice == slice && r.metric == metric && r.k == k)
            .map(|r| r.relative_change)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("model\tseed\tnoise_percent\tslice\tmetric\tk\tvalue\trelative_change\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{:.8}\t{:.8}",
                r.label, r.seed, r.ratio, r.slice, r.metric, r.k, r.value, r.relative_change
            );
        }
        out
    }

    /// Seed-averaged relative change per (model, ratio, slice, metric, K).
    pub fn summary_tsv(&self) -> String {
        let mut keys: Vec<(String, f64, Slice, Metric, usize)> = Vec::new();
        for r in &self.rows {
            let k = (r.label.clone(), r.ratio, r.slice, r.metric, r.k);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        let mut out = String::from("model\tnoise_percent\tslice\tmetric\tk\tmean_relative_change\n");
        for (label, ratio, slice, metric, k) in keys {
            let m = self.mean_relative_change(&label, ratio, slice, metric, k).unwrap();
            let _ = writeln!(out, "{label}\t{ratio}\t{slice}\t{metric}\t{k}\t{m:.8}");
        }
        out
    }
}

/// For each seed and ratio: inject noise into the training matrix, refit
/// every model and evaluate on the test set.
pub fn run_noise(bundle: &SplitBundle, spec: &NoiseSpec) -> Result<NoiseReport> {
    spec.eval.validate()?;
    if spec.ratios.is_empty() || spec.seeds.is_empty() || spec.models.is_empty() {
        return Err(LareError::Config("noise runs need ratios, seeds and models".into()));
    }
    let mut ratios = spec.ratios.clone();
    if !ratios.contains(&0.0) {
        ratios.insert(0, 0.0);
    }
    let mut report = NoiseReport::default();
    for &seed in &spec.seeds {
        let mut reference: HashMap<(usize, Slice, Metric, usize), f64> = HashMap::new();
        let mut per_ratio = Vec::new();
        for &ratio in &ratios {
            let noisy = inject_noise(&bundle.train, &NoiseConfig { ratio_percent: ratio, seed })?;
            let mut reports = Vec::new();
            for (label, cfg) in &spec.models {
                let mut cfg = *cfg;
                cfg.degree_policy = DegreePolicy::ZeroWeight;
                let model = fit(&noisy, &cfg)?;
                // head/tail membership stays with the clean training data
                let rep = evaluate_set(&model, &bundle.train, &bundle.test, &spec.eval)?;
                reports.push((label.clone(), rep));
            }
            if ratio == 0.0 {
                for (m, (_, rep)) in reports.iter().enumerate() {
                    for r in &rep.rows {
                        reference.insert((m, r.slice, r.metric, r.k), r.value);
                    }
                }
            }
            per_ratio.push((ratio, reports));
        }
        for (ratio, reports) in per_ratio {
            if !spec.ratios.contains(&ratio) {
                continue;
            }
            for (m, (label, rep)) in reports.into_iter().enumerate() {
                for r in rep.rows {
                    let base = reference[&(m, r.slice, r.metric, r.k)];
                    let relative_change = if base == 0.0 {
                        if r.value == 0.0 { 0.0 } else { f64::INFINITY }
                    } else {
                        (r.value - base) / base
                    };
                    report.rows.push(NoiseRow {
                        label: label.clone(),
                        seed,
                        ratio,
                        slice: r.slice,
                        metric: r.metric,
                        k: r.k,
                        value: r.value,
                        relative_change,
                    });
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingRow {
    pub label: String,
    pub config: SolverConfig,
    pub n_items: usize,
    pub n_eval_users: usize,
    /// Fastest of the repeats.
    pub fit_seconds: f64,
    pub infer_seconds: f64,
}

pub fn timing_tsv(rows: &[TimingRow]) -> String {
    let mut out = String::from("model\trecipe\tlambda\tn_items\tn_eval_users\tfit_seconds\tinfer_seconds\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}",
            r.label, r.config.recipe, r.config.lambda, r.n_items, r.n_eval_users, r.fit_seconds, r.infer_seconds
        );
    }
    out
}

/// Wall-clock fit time (minimum over `repeats`) and batched inference time
/// (score plus top-K for every evaluation user, `batch` users at a time).
pub fn run_timing(
    train: &InteractionMatrix,
    eval: &EvalSet,
    models: &[(String, SolverConfig)],
    repeats: usize,
    batch: usize,
    k: usize,
) -> Result<Vec<TimingRow>> {
    let mut rows = Vec::new();
    for (label, cfg) in models {
        let mut fit_best = f64::INFINITY;
        let mut infer_best = f64::INFINITY;
        for _ in 0..repeats.max(1) {
            let model = fit(train, cfg)?;
            fit_best = fit_best.min(model.stats.fit_seconds);
            let start = Instant::now();
            for first in (0..eval.n_users()).step_by(batch.max(1)) {
                let last = (first + batch.max(1)).min(eval.n_users());
                let users: Vec<Vec<u32>> = (first..last).map(|u| eval.foldin.row(u).to_vec()).collect();
                let chunk = InteractionMatrix::from_rows(users, eval.foldin.n_items())?;
                let scores = score_batch(&model as &dyn Scorer, &chunk, true, batch)?;
                let tops: usize = (0..chunk.n_users())
                    .into_par_iter()
                    .map(|u| rank_topk(scores.row(u), k).len())
                    .sum();
                std::hint::black_box(tops);
            }
            infer_best = infer_best.min(start.elapsed().as_secs_f64());
        }
        rows.push(TimingRow {
            label: label.clone(),
            config: *cfg,
            n_items: train.n_items(),
            n_eval_users: eval.n_users(),
            fit_seconds: fit_best,
            infer_seconds: infer_best,
        });
    }
    Ok(rows)
}

/// Experiment configuration file (TOML). Every field is optional; absent
/// fields fall back to command-line flags and then to defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub noise: NoiseSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub input: Option<PathBuf>,
    pub format: Option<String>,
    pub threshold: Option<f64>,
    pub k_user: Option<usize>,
    pub k_item: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    pub protocol: Option<String>,
    pub ratios: Option<Vec<f64>>,
    pub foldin_fraction: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub k: Option<Vec<usize>>,
    pub head_fraction: Option<f64>,
    pub unbiased_gamma: Option<f64>,
    pub active_fraction: Option<f64>,
    pub mask_seen: Option<bool>,
    pub batch_size: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub lambda: Option<Vec<f64>>,
    pub normalized_lambda: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub beta: Option<Vec<f64>>,
    pub gamma: Option<Vec<f64>>,
    pub dropout: Option<Vec<f64>>,
    pub models: Option<Vec<String>>,
    pub recipes: Option<Vec<String>>,
    pub selection_slice: Option<String>,
    pub selection_metric: Option<String>,
    pub selection_k: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub ratios: Option<Vec<f64>>,
    pub seeds: Option<Vec<u64>>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LareError::Config(format!("config file: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| LareError::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Overlays the file's evaluation settings on `base`.
    pub fn eval_config(&self, mut base: EvalConfig) -> EvalConfig {
        let e = &self.eval;
        if let Some(k) = &e.k {
            base.k_list = k.clone();
        }
        base.head_fraction = e.head_fraction.unwrap_or(base.head_fraction);
        base.unbiased_gamma = e.unbiased_gamma.unwrap_or(base.unbiased_gamma);
        base.active_fraction = e.active_fraction.unwrap_or(base.active_fraction);
        base.mask_seen = e.mask_seen.unwrap_or(base.mask_seen);
        base.batch_size = e.batch_size.unwrap_or(base.batch_size);
        base
    }

    /// Overlays the file's sweep settings on `base`.
    pub fn sweep_spec(&self, mut base: SweepSpec) -> Result<SweepSpec> {
        let s = &self.sweep;
        let pick = |v: &Option<Vec<f64>>, d: &mut Vec<f64>| {
            if let Some(v) = v {
                *d = v.clone();
            }
        };
        pick(&s.lambda, &mut base.lambda_grid);
        pick(&s.normalized_lambda, &mut base.normalized_lambda_grid);
        pick(&s.alpha, &mut base.alpha_grid);
        pick(&s.beta, &mut base.beta_grid);
        pick(&s.gamma, &mut base.gamma_grid);
        pick(&s.dropout, &mut base.dropout_grid);
        if let Some(m) = &s.models {
            base.models = m.iter().map(|v| v.parse()).collect::<Result<_>>()?;
        }
        if let Some(r) = &s.recipes {
            base.recipes = r.iter().map(|v| v.parse()).collect::<Result<_>>()?;
        }
        if let Some(v) = &s.selection_slice {
            base.selection.slice = v.parse()?;
        }
        if let Some(v) = &s.selection_metric {
            base.selection.metric = v.parse()?;
        }
        base.selection.k = s.selection_k.unwrap_or(base.selection.k);
        base.eval = self.eval_config(base.eval);
        Ok(base)
    }
}
