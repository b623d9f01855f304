mod plots;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use lare::analysis::{dataset_stats, rows_tsv, spectrum_vs_beta, weight_distribution, EdgePolicy, HomophilyConfig};
use lare::evaluation::{rank_topk, top_fraction};
use lare::experiments::{
    run_ablation, run_noise, run_sweep, run_timing, timing_tsv, Checkpoint, CurveParam, ExperimentConfig, NoiseSpec,
    SweepSpec,
};
use lare::manifest::{text_hash, RunManifest};
use lare::models::{self, score};
use lare::{
    evaluate_set, fit, ingest, k_core, split, ErrorClass, EvalConfig, InputFormat, LareError, ModelKind, NormKind,
    NormRecipe, Protocol, SolverConfig, SplitBundle, SplitConfig,
};

/// Normalized linear autoencoder recommenders: data preparation, fitting,
/// evaluation and experiment sweeps.
///
/// Exit codes: 0 success, 2 usage or configuration error, 3 numerical
/// failure, 4 I/O or file-format error.
#[derive(Parser, Debug)]
#[command(name = "lare", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Seed for every random choice (splits, noise, sampled edges).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads; defaults to all cores.
    #[arg(long, global = true, env = "LARE_THREADS")]
    threads: Option<usize>,
    /// TOML configuration file; its values override flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest raw interactions, apply the k-core filter and split.
    Prepare(PrepareArgs),
    /// Fit one model on a prepared training split.
    Fit(FitArgs),
    /// Evaluate a saved model on a prepared split.
    Evaluate(EvaluateArgs),
    /// Dataset statistics, weight spectra and weight distributions.
    Analyze(AnalyzeArgs),
    /// Grid search with validation-based selection.
    Sweep(SweepArgs),
    /// Compare normalization variants, each with its own tuned parameters.
    Ablate(SweepArgs),
    /// Relative performance change under injected interaction noise.
    Noise(NoiseArgs),
    /// Fit and inference wall-clock times.
    Timing(TimingArgs),
    /// Per-user top-K lists with head/tail tags.
    Topk(TopkArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Raw interaction file (user, item[, rating[, timestamp]]).
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Keep only ratings at or above this value.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value_t = 5)]
    k_user: usize,
    #[arg(long, default_value_t = 5)]
    k_item: usize,
    #[arg(long, default_value = "strong")]
    protocol: String,
    /// Comma-separated split ratios; defaults per protocol.
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0.8)]
    foldin_fraction: f64,
    /// Sample this many co-engaged pairs for the homophily ratio (0 = all).
    #[arg(long, default_value_t = 0)]
    homophily_edges: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value = "lae")]
    model: String,
    #[arg(long)]
    lambda: Option<f64>,
    /// DLAE dropout probability (alternative to --lambda).
    #[arg(long)]
    dropout: Option<f64>,
    /// none, rw, sym, dan, user or column.
    #[arg(long, default_value = "none")]
    recipe: String,
    #[arg(long, default_value_t = 0.0)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    #[arg(long, default_value_t = 0.0)]
    gamma_col: f64,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Prepared split directory.
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    /// Also report the normal-equation residual.
    #[arg(long)]
    residual: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    /// Comma-separated cutoffs.
    #[arg(long, value_delimiter = ',', default_value = "20")]
    k: Vec<usize>,
    #[arg(long, default_value_t = 0.2)]
    head_fraction: f64,
    #[arg(long, default_value_t = 2.0)]
    unbiased_gamma: f64,
    #[arg(long, default_value_t = 0.2)]
    active_fraction: f64,
    /// Keep fold-in items in the ranking.
    #[arg(long)]
    no_mask: bool,
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
}

impl EvalArgs {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            k_list: self.k.clone(),
            head_fraction: self.head_fraction,
            unbiased_gamma: self.unbiased_gamma,
            active_fraction: self.active_fraction,
            mask_seen: !self.no_mask,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model directory written by `fit`.
    #[arg(long)]
    model: PathBuf,
    /// test or validation.
    #[arg(long, default_value = "test")]
    split: String,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AnalyzeArgs {
    #[arg(long)]
    data: PathBuf,
    /// Model directory for the weight distribution.
    #[arg(long)]
    model: Option<PathBuf>,
    /// User exponents for the spectrum comparison.
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    betas: Vec<f64>,
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
    #[arg(long, default_value_t = 1.5)]
    delta: f64,
    #[arg(long, default_value_t = 0)]
    homophily_edges: usize,
    #[arg(long, default_value_t = 20)]
    bins: usize,
    #[arg(long)]
    skip_spectra: bool,
    #[arg(long)]
    plot: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated model kinds.
    #[arg(long, value_delimiter = ',', default_value = "lae")]
    models: Vec<String>,
    /// Comma-separated recipes.
    #[arg(long, value_delimiter = ',', default_value = "none,rw,sym,dan")]
    recipes: Vec<String>,
    /// λ grid for unnormalized recipes.
    #[arg(long, value_delimiter = ',')]
    lambdas: Option<Vec<f64>>,
    /// λ grid for normalized recipes.
    #[arg(long, value_delimiter = ',')]
    normalized_lambdas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    alphas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    betas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    gammas: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    dropouts: Option<Vec<f64>>,
    #[arg(long, default_value = "AOA")]
    select_slice: String,
    #[arg(long, default_value = "NDCG")]
    select_metric: String,
    #[command(flatten)]
    eval: EvalArgs,
    /// Reuse finished grid points from a previous run in the same directory.
    #[arg(long)]
    resume: bool,
    #[arg(long)]
    plot: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[arg(long)]
    data: PathBuf,
    /// Repeated `label=spec`, spec like `lae,lambda=0.5,recipe=dan,alpha=0.2,beta=0.5`.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    /// Noise percentages.
    #[arg(long, value_delimiter = ',', default_value = "0,2,5,10,20")]
    ratios: Vec<f64>,
    /// Noise seeds; defaults to --seed, --seed+1, --seed+2.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[command(flatten)]
    eval: EvalArgs,
    #[arg(long)]
    plot: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TimingArgs {
    #[arg(long)]
    data: PathBuf,
    /// Repeated `label=spec` as for `noise`.
    #[arg(long = "model", required = true)]
    models: Vec<String>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long, default_value_t = 4096)]
    batch_size: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TopkArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    /// Evaluation user ids; defaults to the first --limit users.
    #[arg(long, value_delimiter = ',')]
    users: Option<Vec<String>>,
    #[arg(long, default_value_t = 10)]
    limit: usize,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 0.2)]
    head_fraction: f64,
    #[arg(long)]
    out: PathBuf,
}

/// Collects a command's output files and writes its manifest.
struct Run {
    out: PathBuf,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn start(out: &Path, command: &str, effective: &str, dataset_hash: &str, seed: u64, threads: usize) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| LareError::io(out, e))?;
        Ok(Run {
            out: out.to_path_buf(),
            manifest: RunManifest::new(command, effective, dataset_hash, seed, threads),
            started: Instant::now(),
        })
    }

    fn write(&mut self, name: &str, text: &str) -> Result<()> {
        let path = self.out.join(name);
        fs::write(&path, text).map_err(|e| LareError::io(&path, e))?;
        self.manifest.outputs.push(name.to_string());
        Ok(())
    }

    fn track(&mut self, name: &str) {
        self.manifest.outputs.push(name.to_string());
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        self.manifest.write(&self.out)?;
        info!("wrote {} ({:.2}s)", self.out.display(), self.manifest.wall_seconds);
        Ok(())
    }
}

struct RunContext {
    seed: u64,
    threads: usize,
    file: ExperimentConfig,
    file_text: String,
}

impl RunContext {
    fn effective(&self, command: &Command) -> String {
        format!("{command:?}\nseed={}\n{}", self.seed, self.file_text)
    }
}

fn model_config(m: &ModelArgs) -> Result<SolverConfig> {
    let model: ModelKind = m.model.parse()?;
    let kind: NormKind = m.recipe.parse()?;
    let recipe = match kind {
        NormKind::None => NormRecipe::none(),
        NormKind::Rw => NormRecipe::rw(),
        NormKind::Sym => NormRecipe::sym(),
        NormKind::Dan => NormRecipe::dan(m.alpha, m.beta),
        NormKind::User => NormRecipe::user(m.beta),
        NormKind::ColumnWise => NormRecipe::column_wise(m.gamma_col),
    };
    let cfg = match (model, m.lambda, m.dropout) {
        (_, Some(_), Some(_)) => return Err(LareError::Config("give either --lambda or --dropout".into()).into()),
        (ModelKind::Dlae, None, Some(p)) => {
            let mut c = SolverConfig::dlae_from_dropout(p)?;
            c.recipe = recipe;
            c
        }
        (_, None, Some(_)) => return Err(LareError::Config("--dropout applies to DLAE only".into()).into()),
        (_, Some(l), None) => SolverConfig::new(model, l, recipe),
        (_, None, None) => return Err(LareError::Config("--lambda is required".into()).into()),
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `label=model,key=value,...`.
fn parse_model_spec(spec: &str) -> Result<(String, SolverConfig)> {
    let (label, rest) = spec
        .split_once('=')
        .filter(|(l, _)| !l.contains(','))
        .ok_or_else(|| LareError::Config(format!("model spec `{spec}` must look like label=lae,lambda=...")))?;
    let mut parts = rest.split(',');
    let mut args = ModelArgs {
        model: parts.next().unwrap_or_default().to_string(),
        lambda: None,
        dropout: None,
        recipe: "none".into(),
        alpha: 0.0,
        beta: 0.0,
        gamma_col: 0.0,
    };
    for kv in parts {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| LareError::Config(format!("`{kv}` in model spec is not key=value")))?;
        let num = || -> Result<f64> {
            v.parse()
                .map_err(|_| LareError::Config(format!("`{v}` is not a number")).into())
        };
        match k {
            "lambda" => args.lambda = Some(num()?),
            "dropout" => args.dropout = Some(num()?),
            "recipe" => args.recipe = v.to_string(),
            "alpha" => args.alpha = num()?,
            "beta" => args.beta = num()?,
            "gamma_col" | "gamma" => args.gamma_col = num()?,
            other => return Err(LareError::Config(format!("unknown model spec key `{other}`")).into()),
        }
    }
    Ok((label.to_string(), model_config(&args)?))
}

fn load_bundle(dir: &Path) -> Result<SplitBundle> {
    Ok(SplitBundle::load(dir)?)
}

fn pick_set<'a>(bundle: &'a SplitBundle, name: &str) -> Result<&'a lare::EvalSet> {
    match name {
        "test" => Ok(&bundle.test),
        "validation" => bundle
            .validation
            .as_ref()
            .ok_or_else(|| LareError::Config("this split has no validation set".into()).into()),
        other => Err(LareError::Config(format!("unknown split `{other}` (test or validation)")).into()),
    }
}

const MODEL_FILE: &str = "model.bin";

fn cmd_prepare(ctx: &RunContext, a: &PrepareArgs, effective: &str) -> Result<()> {
    let d = &ctx.file.data;
    let input = d.input.clone().unwrap_or_else(|| a.input.clone());
    let format: InputFormat = d.format.as_deref().unwrap_or(&a.format).parse()?;
    let threshold = d.threshold.or(a.threshold);
    let (k_user, k_item) = (d.k_user.unwrap_or(a.k_user), d.k_item.unwrap_or(a.k_item));
    let s = &ctx.file.split;
    let protocol: Protocol = s.protocol.as_deref().unwrap_or(&a.protocol).parse()?;
    let mut split_cfg = match protocol {
        Protocol::Strong => SplitConfig::strong(ctx.seed),
        Protocol::Weak => SplitConfig::weak(ctx.seed),
    };
    if let Some(r) = s.ratios.clone().or_else(|| a.ratios.clone()) {
        split_cfg.ratios = r;
    }
    split_cfg.foldin_fraction = s.foldin_fraction.unwrap_or(a.foldin_fraction);

    let raw = ingest(&input, format, threshold)?;
    let x = k_core(&raw, k_user, k_item)?;
    let bundle = split(&x, &split_cfg)?;
    let mut run = Run::start(&a.out, "prepare", effective, &x.content_hash(), ctx.seed, ctx.threads)?;
    bundle.save(&a.out)?;
    for f in fs::read_dir(&a.out).map_err(|e| LareError::io(&a.out, e))? {
        let name = f.map_err(|e| LareError::io(&a.out, e))?.file_name().to_string_lossy().into_owned();
        if name != lare::manifest::MANIFEST_FILE {
            run.track(&name);
        }
    }
    run.manifest.outputs.sort();
    let hcfg = homophily(a.homophily_edges, 1.5, ctx.seed);
    let mut rows = dataset_stats(&raw, &hcfg)?.to_tsv_rows("raw");
    rows.extend(dataset_stats(&x, &hcfg)?.to_tsv_rows("filtered"));
    rows.extend(dataset_stats(&bundle.train, &hcfg)?.to_tsv_rows("train"));
    run.write("stats.tsv", &rows_tsv(&rows))?;
    println!(
        "{} users x {} items ({} interactions) after {k_user}/{k_item}-core; train {} users",
        x.n_users(),
        x.n_items(),
        x.nnz(),
        bundle.train.n_users()
    );
    run.finish()
}

fn homophily(edges: usize, delta: f64, seed: u64) -> HomophilyConfig {
    HomophilyConfig {
        delta,
        edge_policy: if edges == 0 {
            EdgePolicy::AllCooccurring
        } else {
            EdgePolicy::SampledEdges { count: edges, seed }
        },
    }
}

fn cmd_fit(ctx: &RunContext, a: &FitArgs, effective: &str) -> Result<()> {
    let bundle = load_bundle(&a.data)?;
    let cfg = model_config(&a.model)?;
    let mut model = fit(&bundle.train, &cfg)?;
    if a.residual {
        models::attach_residual(&bundle.train, &mut model)?;
    }
    let mut run = Run::start(&a.out, "fit", effective, &model.stats.dataset_hash, ctx.seed, ctx.threads)?;
    models::save(&model, &a.out.join(MODEL_FILE))?;
    run.track(MODEL_FILE);
    let mut rows = vec![
        ("model".to_string(), cfg.model.to_string()),
        ("recipe".into(), cfg.recipe.to_string()),
        ("lambda".into(), cfg.lambda.to_string()),
        ("n_items".into(), model.n_items().to_string()),
        ("n_users".into(), model.stats.n_users.to_string()),
    ];
    if let Some(r) = model.stats.residual {
        rows.push(("residual".into(), format!("{r:.6e}")));
    }
    let text: String = std::iter::once("key\tvalue\n".to_string())
        .chain(rows.iter().map(|(k, v)| format!("{k}\t{v}\n")))
        .collect();
    run.write("fit.tsv", &text)?;
    println!("fitted {} with {} in {:.3}s", cfg.model, cfg.recipe, model.stats.fit_seconds);
    run.finish()
}

fn cmd_evaluate(ctx: &RunContext, a: &EvaluateArgs, effective: &str) -> Result<()> {
    let bundle = load_bundle(&a.data)?;
    let model = models::load(&a.model.join(MODEL_FILE))?;
    let cfg = ctx.file.eval_config(a.eval.config());
    let set = pick_set(&bundle, &a.split)?;
    let report = evaluate_set(&model, &bundle.train, set, &cfg)?;
    let mut run = Run::start(&a.out, "evaluate", effective, &bundle.train.content_hash(), ctx.seed, ctx.threads)?;
    run.write("report.tsv", &report.to_tsv())?;
    print!("{}", report.summary());
    run.finish()
}

fn cmd_analyze(ctx: &RunContext, a: &AnalyzeArgs, effective: &str) -> Result<()> {
    let bundle = load_bundle(&a.data)?;
    let x = &bundle.train;
    let mut run = Run::start(&a.out, "analyze", effective, &x.content_hash(), ctx.seed, ctx.threads)?;
    let stats = dataset_stats(x, &homophily(a.homophily_edges, a.delta, ctx.seed))?;
    run.write("stats.tsv", &rows_tsv(&stats.to_tsv_rows("train")))?;
    println!(
        "gini_item {:.4}  homophily_w {:.4}",
        stats.gini_item, stats.homophily_w
    );
    if !a.skip_spectra {
        let reports = spectrum_vs_beta(x, &a.betas, a.lambda)?;
        let mut text = String::from("beta\trank\teigenvalue\n");
        for (beta, r) in a.betas.iter().zip(&reports) {
            for (k, v) in r.eigenvalues.iter().enumerate() {
                text.push_str(&format!("{beta}\t{k}\t{v:.12e}\n"));
            }
        }
        run.write("spectra.tsv", &text)?;
        if a.plot {
            let series = plots::series_from_tsv(&text, "rank", "eigenvalue", "beta", &[])?;
            let named: Vec<_> = series.into_iter().map(|(b, p)| (format!("beta={b}"), p)).collect();
            plots::line_chart(&a.out.join("spectra.svg"), "Weight spectrum", "rank", "eigenvalue", &named)?;
            run.track("spectra.svg");
        }
    }
    if let Some(dir) = &a.model {
        let model = models::load(&dir.join(MODEL_FILE))?;
        let dist = weight_distribution(&model, x.item_degrees(), 0.2, a.bins)?;
        run.write("weights.tsv", &rows_tsv(&dist.to_tsv_rows(&model.config.recipe.to_string())))?;
    }
    run.finish()
}

fn sweep_spec(ctx: &RunContext, a: &SweepArgs) -> Result<SweepSpec> {
    let mut spec = SweepSpec {
        models: a.models.iter().map(|m| m.parse()).collect::<lare::Result<_>>()?,
        recipes: a.recipes.iter().map(|m| m.parse()).collect::<lare::Result<_>>()?,
        eval: a.eval.config(),
        ..SweepSpec::default()
    };
    let set = |src: &Option<Vec<f64>>, dst: &mut Vec<f64>| {
        if let Some(v) = src {
            *dst = v.clone();
        }
    };
    set(&a.lambdas, &mut spec.lambda_grid);
    set(&a.normalized_lambdas, &mut spec.normalized_lambda_grid);
    set(&a.alphas, &mut spec.alpha_grid);
    set(&a.betas, &mut spec.beta_grid);
    set(&a.gammas, &mut spec.gamma_grid);
    set(&a.dropouts, &mut spec.dropout_grid);
    spec.selection.slice = a.select_slice.parse()?;
    spec.selection.metric = a.select_metric.parse()?;
    spec.selection.k = spec.eval.k_list[0];
    Ok(ctx.file.sweep_spec(spec)?)
}

fn checkpoint(a: &SweepArgs) -> Result<Option<Checkpoint>> {
    let path = a.out.join("checkpoint.tsv");
    if !a.resume && path.exists() {
        fs::remove_file(&path).map_err(|e| LareError::io(&path, e))?;
    }
    fs::create_dir_all(&a.out).map_err(|e| LareError::io(&a.out, e))?;
    Ok(Some(Checkpoint::open(&path)?))
}

fn cmd_sweep(ctx: &RunContext, a: &SweepArgs, effective: &str) -> Result<()> {
    let bundle = load_bundle(&a.data)?;
    let spec = sweep_spec(ctx, a)?;
    let ckpt = checkpoint(a)?;
    let result = run_sweep(&bundle, &spec, ckpt.as_ref())?;
    let mut run = Run::start(&a.out, "sweep", effective, &bundle.train.content_hash(), ctx.seed, ctx.threads)?;
    run.track("checkpoint.tsv");
    run.write("grid.tsv", &result.grid_tsv())?;
    run.write("leaderboard.tsv", &result.leaderboard_tsv())?;
    run.write("failures.tsv", &result.failures_tsv())?;
    for group in result.groups() {
        let stem = group.replace(':', "_");
        for (param, name) in [(CurveParam::Alpha, "alpha"), (CurveParam::Beta, "beta"), (CurveParam::Lambda, "lambda")] {
            let tsv = result.curve_tsv(group, param);
            let distinct: HashSet<&str> = tsv.lines().skip(1).filter_map(|l| l.split('\t').next()).collect();
            // a parameter that never varies in this group gives no curve
            if param != CurveParam::Lambda && distinct.len() < 2 {
                continue;
            }
            let file = format!("curve_{stem}_{name}.tsv");
            run.write(&file, &tsv)?;
            let x_col = if param == CurveParam::Lambda { "lambda_value" } else { name };
            if a.plot && distinct.len() > 1 {
                let k = spec.selection.k.to_string();
                let series = plots::series_from_tsv(&tsv, x_col, "value", "slice", &[("metric", spec.selection.metric.as_str()), ("k", &k)])?;
                let svg = format!("curve_{stem}_{name}.svg");
                let title = format!("{group}: test {}@{k} over {name}", spec.selection.metric);
                plots::line_chart(&a.out.join(&svg), &title, name, spec.selection.metric.as_str(), &series)?;
                run.track(&svg);
            }
        }
    }
    for l in result.leaderboard() {
        let test = l.best.test().and_then(|t| t.get(spec.selection.slice, spec.selection.metric, spec.selection.k));
        println!(
            "{:<16} {} lambda={} validation={:.4} test={:.4}",
            l.group,
            l.best.point.config.recipe,
            l.best.point.config.lambda,
            l.validation_value,
            test.unwrap_or(f64::NAN)
        );
    }
    let failed = result.failures().len();
    if failed > 0 {
        eprintln!("{failed} grid points failed; see failures.tsv");
    }
    run.finish()
}

fn cmd_ablate(ctx: &RunContext, a: &SweepArgs, effective: &str) -> Result<()> {
    let bundle = load_bundle(&a.data)?;
    let spec = sweep_spec(ctx, a)?;
    let ckpt = checkpoint(a)?;
    let result = run_ablation(&bundle, &spec, ckpt.as_ref())?;
    let mut run = Run::start(&a.out, "ablate", effective, &bundle.train.content_hash(), ctx.seed, ctx.threads)?;
    run.track("checkpoint.tsv");
    run.write("ablation.tsv", &result.to_tsv())?;
    run.write("grid.tsv", &result.sweep.grid_tsv())?;
    run.write("failures.tsv", &result.sweep.failures_tsv())?;
    let k = spec.selection.k;
    println!("{:<12} {:>8} {:>8} {:>8}", "method", "AOA", "Head", "Tail");
    for r in &result.rows {
        let v = |s| r.test.get(s, spec.selection.metric, k).unwrap_or(f64::NAN);
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>8.4}",
            r.method,
            v(lare::Slice::Aoa),
            v(lare::Slice::Head),
            v(lare::Slice::Tail)
        );
    }
    run.finish()
}

fn cmd_noise(ctx: &RunContext, a: &NoiseArgs, effective: &str) -> Result<()> {
    let bundle = load_bundle(&a.data)?;
    let n = &ctx.file.noise;
    let spec = NoiseSpec {
        ratios: n.ratios.clone().unwrap_or_else(|| a.ratios.clone()),
        seeds: n
            .seeds
            .clone()
            .or_else(|| a.seeds.clone())
            .unwrap_or_else(|| (0..3).map(|k| ctx.seed + k).collect()),
        models: a.models.iter().map(|s| parse_model_spec(s)).collect::<Result<_>>()?,
        eval: ctx.file.eval_config(a.eval.config()),
    };
    let report = run_noise(&bundle, &spec)?;
    let mut run = Run::start(&a.out, "noise", effective, &bundle.train.content_hash(), ctx.seed, ctx.threads)?;
    run.write("noise.tsv", &report.to_tsv())?;
    let summary = report.summary_tsv();
    run.write("noise_summary.tsv", &summary)?;
    if a.plot {
        let k = spec.eval.k_list[0].to_string();
        let series = plots::series_from_tsv(
            &summary,
            "noise_percent",
            "mean_relative_change",
            "model",
            &[("slice", "AOA"), ("metric", "NDCG"), ("k", &k)],
        )?;
        plots::line_chart(&a.out.join("noise.svg"), &format!("AOA NDCG@{k} relative change"), "noise %", "relative change", &series)?;
        run.track("noise.svg");
    }
    print!("{summary}");
    run.finish()
}

fn cmd_timing(ctx: &RunContext, a: &TimingArgs, effective: &str) -> Result<()> {
    let bundle = load_bundle(&a.data)?;
    let models: Vec<_> = a.models.iter().map(|s| parse_model_spec(s)).collect::<Result<_>>()?;
    let rows = run_timing(&bundle.train, &bundle.test, &models, a.repeats, a.batch_size, a.k)?;
    let mut run = Run::start(&a.out, "timing", effective, &bundle.train.content_hash(), ctx.seed, ctx.threads)?;
    let text = timing_tsv(&rows);
    run.write("timing.tsv", &text)?;
    print!("{text}");
    run.finish()
}

fn cmd_topk(ctx: &RunContext, a: &TopkArgs, effective: &str) -> Result<()> {
    let bundle = load_bundle(&a.data)?;
    let model = models::load(&a.model.join(MODEL_FILE))?;
    let set = pick_set(&bundle, &a.split)?;
    let users: Vec<usize> = match &a.users {
        Some(ids) => ids
            .iter()
            .map(|id| {
                set.user_ids()
                    .iter()
                    .position(|u| u == id)
                    .ok_or_else(|| anyhow!(LareError::Input(format!("user `{id}` is not in the {} split", a.split))))
            })
            .collect::<Result<_>>()?,
        None => (0..set.n_users().min(a.limit)).collect(),
    };
    let head = top_fraction(bundle.train.item_degrees(), a.head_fraction);
    let items = bundle.train.item_ids();
    let mut text = String::from("user\trank\titem\tscore\tgroup\theldout\n");
    for u in users {
        let scores = score(&model, set.foldin.row(u), true)?;
        for (r, i) in rank_topk(&scores, a.k).into_iter().enumerate() {
            text.push_str(&format!(
                "{}\t{}\t{}\t{:.8}\t{}\t{}\n",
                set.user_ids()[u],
                r + 1,
                items[i as usize],
                scores[i as usize],
                if head[i as usize] { "head" } else { "tail" },
                u8::from(set.heldout.contains(u, i))
            ));
        }
    }
    let mut run = Run::start(&a.out, "topk", effective, &bundle.train.content_hash(), ctx.seed, ctx.threads)?;
    run.write("topk.tsv", &text)?;
    print!("{text}");
    run.finish()
}

fn run(cli: Cli) -> Result<()> {
    let (file, file_text) = match &cli.global.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| LareError::io(p, e))?;
            (ExperimentConfig::from_toml(&text)?, text)
        }
        None => (ExperimentConfig::default(), String::new()),
    };
    let seed = file.seed.unwrap_or(cli.global.seed);
    let threads = file
        .threads
        .or(cli.global.threads)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if threads == 0 {
        return Err(LareError::Config("--threads must be at least 1".into()).into());
    }
    lare::linalg::set_threads(threads);
    let ctx = RunContext {
        seed,
        threads,
        file,
        file_text,
    };
    let effective = ctx.effective(&cli.command);
    info!("config hash {}", text_hash(&effective));
    match &cli.command {
        Command::Prepare(a) => cmd_prepare(&ctx, a, &effective),
        Command::Fit(a) => cmd_fit(&ctx, a, &effective),
        Command::Evaluate(a) => cmd_evaluate(&ctx, a, &effective),
        Command::Analyze(a) => cmd_analyze(&ctx, a, &effective),
        Command::Sweep(a) => cmd_sweep(&ctx, a, &effective),
        Command::Ablate(a) => cmd_ablate(&ctx, a, &effective),
        Command::Noise(a) => cmd_noise(&ctx, a, &effective),
        Command::Timing(a) => cmd_timing(&ctx, a, &effective),
        Command::Topk(a) => cmd_topk(&ctx, a, &effective),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<LareError>().map(LareError::class) {
        Some(ErrorClass::Numerical) => 3,
        Some(ErrorClass::Io) => 4,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.global.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
