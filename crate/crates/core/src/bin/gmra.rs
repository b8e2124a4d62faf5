//! Command-line front end: reproducible experiment pipelines emitting
//! plot-ready CSV. Every run directory receives the fully resolved
//! `config.json` and a `versions.json`, and re-running a command reproduces
//! its CSVs byte for byte. Timings go to stderr only.
//!
//! Thread count follows `RAYON_NUM_THREADS`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use gmra::cloud::{load_cloud, CloudFormat, PointCloud};
use gmra::error::Error;
use gmra::genmodel::{fit_scale_model, hausdorff, sample_with_cells, FactorShape, HausdorffMode};
use gmra::oos::expand_oos;
use gmra::ortho::{construct_ortho, ortho_fgwt_training, OrthoGmraModel};
use gmra::prune::{
    gmra_cost_curve, prune, pruned_cost_curve, svd_baseline, svd_threshold_baseline, CostReport,
};
use gmra::storage;
use gmra::synth::{generate, GeneratorKind, GeneratorSpec};
use gmra::transforms::{
    fgwt, fgwt_batch, igwt_at_scale, per_scale_magnitudes, threshold_coefficients, GwtCoefficients,
    ThresholdMode,
};
use gmra::tree::{build_tree, SplitMethod, StoppingRule};
use gmra::wavelets::{
    construct_gmra, DimensionPolicy, ErrorNorm, GmraModel, GmraVariants, PolicyKind, PrecisionMode,
    Schedule,
};

#[derive(Parser)]
#[command(name = "gmra", version, about = "Multiscale geometric analysis of point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic point cloud.
    Gen(GenArgs),
    /// Build a partition tree and a model over a cloud.
    Build(BuildArgs),
    /// Forward-transform a cloud through a model.
    Transform(TransformArgs),
    /// Reconstruct points from stored coefficients.
    Reconstruct(ReconstructArgs),
    /// Threshold coefficients over a grid and report compression curves.
    Compress(CompressArgs),
    /// Compare plain / orthogonal / pruned encoders against SVD baselines.
    Compare(CompareArgs),
    /// Expand out-of-sample query points.
    Oos(OosArgs),
    /// Draw samples from a per-scale generative model.
    Sample(SampleArgs),
    /// Hausdorff distances between two clouds.
    Evaluate(EvaluateArgs),
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct GeneratorArgs {
    /// swissroll | s_manifold | oscillating2dwave | noisy_sphere | band_limited
    #[arg(long)]
    kind: String,
    #[arg(long, default_value_t = 10000)]
    n: usize,
    /// Ambient dimension (grid size for band_limited).
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Intrinsic sphere dimension (noisy_sphere only).
    #[arg(long, default_value_t = 2)]
    intrinsic_dim: usize,
    /// Highest frequency (band_limited only).
    #[arg(long, default_value_t = 63)]
    max_freq: usize,
    /// Band decay exponent (band_limited only).
    #[arg(long, default_value_t = 2.0)]
    alpha: f64,
}

impl GeneratorArgs {
    fn spec(&self) -> Result<GeneratorSpec, Error> {
        let kind = match self.kind.as_str() {
            "swissroll" => GeneratorKind::SwissRoll,
            "s_manifold" => GeneratorKind::SManifold,
            "oscillating2dwave" => GeneratorKind::Oscillating2DWave,
            "noisy_sphere" => GeneratorKind::NoisySphere {
                intrinsic_dim: self.intrinsic_dim,
            },
            "band_limited" => GeneratorKind::BandLimited {
                max_freq: self.max_freq,
                alpha: self.alpha,
            },
            other => return Err(Error::Config(format!("unknown generator kind '{other}'"))),
        };
        Ok(GeneratorSpec {
            kind,
            n: self.n,
            ambient_dim: self.dim,
            noise_sigma: self.sigma,
            seed: self.seed,
        })
    }
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct TreeArgs {
    /// pca | kmeans
    #[arg(long, default_value = "pca")]
    method: String,
    #[arg(long)]
    min_cell_size: Option<usize>,
    #[arg(long, default_value_t = 24)]
    max_scale: usize,
    /// Stop splitting once the PCA residual beyond the working dimension
    /// falls to this level (variance units).
    #[arg(long)]
    homogeneity: Option<f64>,
    #[arg(long, default_value_t = 2)]
    working_dim: usize,
    #[arg(long, default_value_t = 0)]
    tree_seed: u64,
}

impl TreeArgs {
    fn method(&self) -> Result<SplitMethod, Error> {
        match self.method.as_str() {
            "pca" => Ok(SplitMethod::IteratedPca),
            "kmeans" => Ok(SplitMethod::IteratedKMeans),
            other => Err(Error::Config(format!("unknown split method '{other}'"))),
        }
    }

    fn stopping_rule(&self) -> StoppingRule {
        let mut rule = StoppingRule::for_dimension(self.working_dim);
        if let Some(m) = self.min_cell_size {
            rule.min_cell_size = m;
        }
        rule.max_scale = self.max_scale;
        rule.homogeneity = self.homogeneity;
        rule
    }
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct PolicyArgs {
    /// fixed | relative | absolute
    #[arg(long, default_value = "fixed")]
    policy: String,
    /// Dimension for the fixed policy.
    #[arg(long, default_value_t = 2)]
    policy_dim: usize,
    /// Threshold for relative/absolute policies (interior nodes).
    #[arg(long)]
    policy_threshold: Option<f64>,
    /// Separate leaf threshold.
    #[arg(long)]
    leaf_threshold: Option<f64>,
}

impl PolicyArgs {
    fn policy(&self) -> Result<DimensionPolicy, Error> {
        match self.policy.as_str() {
            "fixed" => Ok(DimensionPolicy::fixed(self.policy_dim)),
            "relative" => {
                let mut p = match self.policy_threshold {
                    Some(t) => DimensionPolicy::relative(t),
                    None => DimensionPolicy::relative_default(),
                };
                if let Some(t) = self.leaf_threshold {
                    p.leaf_override = Some(PolicyKind::RelativeThreshold(Schedule::Constant(t)));
                }
                Ok(p)
            }
            "absolute" => {
                let t = self.policy_threshold.ok_or_else(|| {
                    Error::Config("absolute policy needs --policy-threshold".into())
                })?;
                let mut p = DimensionPolicy::absolute(t);
                if let Some(t) = self.leaf_threshold {
                    p.leaf_override = Some(PolicyKind::AbsoluteThreshold(Schedule::Constant(t)));
                }
                Ok(p)
            }
            other => Err(Error::Config(format!("unknown policy '{other}'"))),
        }
    }
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct InputArgs {
    /// Input cloud file; omit to generate synthetically.
    #[arg(long)]
    input: Option<PathBuf>,
    /// csv | binary
    #[arg(long, default_value = "csv")]
    format: String,
}

impl InputArgs {
    fn format(&self) -> Result<CloudFormat, Error> {
        parse_format(&self.format)
    }
}

fn parse_format(name: &str) -> Result<CloudFormat, Error> {
    match name {
        "csv" => Ok(CloudFormat::Csv),
        "binary" => Ok(CloudFormat::Binary),
        other => Err(Error::Config(format!("unknown cloud format '{other}'"))),
    }
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct GenArgs {
    #[command(flatten)]
    generator: GeneratorArgs,
    /// csv | binary
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
    /// Load all options from a JSON config instead of flags.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct BuildArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Generator kind when no --input is given.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, default_value_t = 10000)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tree: TreeArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// plain | ortho | pruned
    #[arg(long, default_value = "plain")]
    variant: String,
    /// Construction precision.
    #[arg(long, default_value_t = 1e-3)]
    epsilon: f64,
    /// Disable tangential corrections in the inverse transform.
    #[arg(long, default_value_t = false)]
    no_tangential: bool,
    /// Report shared wavelet directions across siblings.
    #[arg(long, default_value_t = false)]
    split_shared: bool,
    /// absolute | relative precision criterion (ortho/pruned).
    #[arg(long, default_value = "absolute")]
    criterion: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

impl BuildArgs {
    fn generator(&self) -> Option<GeneratorArgs> {
        self.kind.as_ref().map(|kind| GeneratorArgs {
            kind: kind.clone(),
            n: self.n,
            dim: self.dim,
            sigma: self.sigma,
            seed: self.seed,
            intrinsic_dim: 2,
            max_freq: 63,
            alpha: 2.0,
        })
    }
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct TransformArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// training | nearest leaf assignment.
    #[arg(long, default_value = "training")]
    assignment: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    /// Compact binary coefficient file.
    #[arg(long)]
    coeffs: PathBuf,
    /// Reconstruct at this scale (default: finest).
    #[arg(long)]
    at_scale: Option<usize>,
    /// Reference cloud for error reporting (CSV).
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct CompressArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    input: InputArgs,
    /// Comma-separated thresholds; default log grid 1e-5..1.
    #[arg(long)]
    deltas: Option<String>,
    /// entrywise | block
    #[arg(long, default_value = "entrywise")]
    mode: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct CompareArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Generator kind when no --input is given.
    #[arg(long)]
    kind: Option<String>,
    #[arg(long, default_value_t = 10000)]
    n: usize,
    #[arg(long, default_value_t = 50)]
    dim: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tree: TreeArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    /// Comma-separated thresholds; default log grid 1e-5..1.
    #[arg(long)]
    deltas: Option<String>,
    /// Comma-separated precisions for the pruned curve.
    #[arg(long)]
    epsilons: Option<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct OosArgs {
    #[arg(long)]
    model: PathBuf,
    /// Query points.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct SampleArgs {
    #[arg(long)]
    model: PathBuf,
    /// Training cloud the model was built on.
    #[command(flatten)]
    input: InputArgs,
    #[arg(long)]
    scale: usize,
    #[arg(long, default_value_t = 4000)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// diagonal | full local covariance.
    #[arg(long, default_value = "diagonal")]
    shape: String,
    #[arg(long, default_value = "csv")]
    out_format: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Clone, serde::Serialize, serde::Deserialize)]
struct EvaluateArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Gen(args) => with_config(args, |a| &a.config).and_then(run_gen),
        Command::Build(args) => with_config(args, |a| &a.config).and_then(run_build),
        Command::Transform(args) => with_config(args, |a| &a.config).and_then(run_transform),
        Command::Reconstruct(args) => with_config(args, |a| &a.config).and_then(run_reconstruct),
        Command::Compress(args) => with_config(args, |a| &a.config).and_then(run_compress),
        Command::Compare(args) => with_config(args, |a| &a.config).and_then(run_compare),
        Command::Oos(args) => with_config(args, |a| &a.config).and_then(run_oos),
        Command::Sample(args) => with_config(args, |a| &a.config).and_then(run_sample),
        Command::Evaluate(args) => with_config(args, |a| &a.config).and_then(run_evaluate),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

/// When `--config` is given, the JSON file replaces all other flags.
fn with_config<T: Clone + serde::de::DeserializeOwned>(
    args: T,
    config: impl Fn(&T) -> &Option<PathBuf>,
) -> Result<T, Error> {
    match config(&args) {
        None => Ok(args),
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("bad config {}: {e}", path.display())))
        }
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::SpecError(_) => 2,
        Error::Io(_) | Error::Json(_) | Error::ParseError { .. } | Error::EmptyInput
        | Error::ModelFormat(_) => 3,
        _ => 4,
    }
}

fn prepare_out<T: serde::Serialize>(dir: &Path, args: &T) -> Result<(), Error> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(args)?)?;
    let versions = serde_json::json!({
        "gmra": env!("CARGO_PKG_VERSION"),
        "model_format": 1,
        "coefficient_format": 1,
    });
    std::fs::write(
        dir.join("versions.json"),
        serde_json::to_string_pretty(&versions)?,
    )?;
    Ok(())
}

fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<(), Error> {
    let mut text = String::with_capacity(rows.len() * 32 + header.len() + 1);
    text.push_str(header);
    text.push('\n');
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_input(input: &InputArgs, generator: &Option<GeneratorArgs>) -> Result<PointCloud, Error> {
    match (&input.input, generator) {
        (Some(path), _) => load_cloud(path, input.format()?),
        (None, Some(g)) => generate(&g.spec()?),
        (None, None) => Err(Error::Config(
            "provide --input or a generator --kind".into(),
        )),
    }
}

fn parse_grid(
    spec: &Option<String>,
    default_min: f64,
    default_max: f64,
    count: usize,
) -> Result<Vec<f64>, Error> {
    match spec {
        Some(s) => s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad grid value '{t}'")))
            })
            .collect(),
        None => Ok(log_grid(default_min, default_max, count)),
    }
}

fn log_grid(min: f64, max: f64, count: usize) -> Vec<f64> {
    let (lmin, lmax) = (min.ln(), max.ln());
    (0..count)
        .map(|i| (lmin + (lmax - lmin) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

fn run_gen(args: GenArgs) -> Result<(), Error> {
    let spec = args.generator.spec()?;
    let cloud = generate(&spec)?;
    prepare_out(&args.out, &args)?;
    let (format, name) = match args.format.as_str() {
        "csv" => (CloudFormat::Csv, "cloud.csv"),
        "binary" => (CloudFormat::Binary, "cloud.bin"),
        other => return Err(Error::Config(format!("unknown format '{other}'"))),
    };
    cloud.save(args.out.join(name), format)?;
    eprintln!("generated {} points in R^{}", cloud.n(), cloud.ambient_dim());
    Ok(())
}

fn criterion_of(name: &str) -> Result<PrecisionMode, Error> {
    match name {
        "absolute" => Ok(PrecisionMode::Absolute),
        "relative" => Ok(PrecisionMode::Relative),
        other => Err(Error::Config(format!("unknown criterion '{other}'"))),
    }
}

fn run_build(args: BuildArgs) -> Result<(), Error> {
    let started = std::time::Instant::now();
    let cloud = load_input(&args.input, &args.generator())?;
    prepare_out(&args.out, &args)?;
    let tree = build_tree(
        &cloud,
        args.tree.method()?,
        &args.tree.stopping_rule(),
        args.tree.tree_seed,
    )?;
    std::fs::write(args.out.join("tree.json"), tree.to_json_string()?)?;

    let diam = tree.cell_diameter_stats(&cloud);
    write_csv(
        &args.out.join("diameter_stats.csv"),
        "scale,cell_count,mean_radius,max_radius",
        &diam
            .iter()
            .map(|s| format!("{},{},{},{}", s.scale, s.cell_count, s.mean_radius, s.max_radius))
            .collect::<Vec<_>>(),
    )?;

    match args.variant.as_str() {
        "plain" => {
            let variants = GmraVariants {
                tangential_corrections: !args.no_tangential,
                split_shared_wavelets: args.split_shared,
            };
            let model =
                construct_gmra(&cloud, &tree, &args.policy.policy()?, args.epsilon, variants)?;
            storage::save_gmra_model(&model, args.out.join("model.gwm"))?;
            let coeffs = fgwt_batch(&model, &cloud)?;
            write_per_scale_stats(&args.out, &model, &cloud, &coeffs)?;
            match model.effective_scale() {
                Some(j) => eprintln!("finest scale reaching precision {}: {}", args.epsilon, j),
                None => eprintln!(
                    "no scale reaches precision {} (max scale {})",
                    args.epsilon,
                    model.max_scale()
                ),
            }
        }
        "ortho" => {
            let model = construct_ortho(
                &cloud,
                &tree,
                &args.policy.policy()?,
                args.epsilon,
                criterion_of(&args.criterion)?,
            )?;
            storage::save_ortho_model(&model, args.out.join("model.gwm"))?;
            write_ortho_stats(&args.out, &model, &cloud)?;
        }
        "pruned" => {
            let forest = prune(&cloud, &tree, args.epsilon, criterion_of(&args.criterion)?)?;
            let cost = forest.total_cost();
            let hist = forest.strategy_histogram();
            let rows: Vec<String> = hist.iter().map(|(k, v)| format!("{k},{v}")).collect();
            write_csv(&args.out.join("strategy_histogram.csv"), "strategy,count", &rows)?;
            let feasibility = forest.feasibility_ratio(&cloud)?;
            write_csv(
                &args.out.join("pruned_summary.csv"),
                "epsilon,roots,nodes,coefficient_cost,dictionary_cost,total_cost,feasibility_ratio",
                &[format!(
                    "{},{},{},{},{},{},{}",
                    args.epsilon,
                    forest.roots.len(),
                    forest.nodes.len(),
                    cost.coefficients,
                    cost.dictionary,
                    cost.total(),
                    feasibility
                )],
            )?;
        }
        other => return Err(Error::Config(format!("unknown variant '{other}'"))),
    }
    eprintln!("build finished in {:.2?}", started.elapsed());
    Ok(())
}

fn write_per_scale_stats(
    out: &Path,
    model: &GmraModel,
    cloud: &PointCloud,
    coeffs: &[GwtCoefficients],
) -> Result<(), Error> {
    let magnitudes = per_scale_magnitudes(model, coeffs);
    let mut rows = Vec::new();
    for j in 0..=model.max_scale() {
        let cells = model.tree().partition_at_scale(j);
        let dims: Vec<usize> = cells.iter().map(|k| model.node(*k).unwrap().dim()).collect();
        let wdims: Vec<usize> = cells
            .iter()
            .map(|k| model.node(*k).unwrap().wavelet_dim())
            .collect();
        let mean = |v: &[usize]| v.iter().sum::<usize>() as f64 / v.len() as f64;
        let mag = magnitudes.iter().find(|m| m.scale == j);
        rows.push(format!(
            "{},{},{},{},{},{},{},{},{}",
            j,
            cells.len(),
            mean(&dims),
            mean(&wdims),
            model.approximation_error(cloud, j, ErrorNorm::L2Absolute),
            model.approximation_error(cloud, j, ErrorNorm::L2Relative),
            model.approximation_error_spectral(j),
            mag.map_or(0.0, |m| m.mean_block_norm),
            mag.map_or(0.0, |m| m.mean_abs_entry),
        ));
    }
    write_csv(
        &out.join("per_scale_stats.csv"),
        "scale,cells,mean_dim,mean_wavelet_dim,error_abs,error_rel,error_spectral,mean_coeff_norm,mean_abs_coeff",
        &rows,
    )
}

fn write_ortho_stats(out: &Path, model: &OrthoGmraModel, cloud: &PointCloud) -> Result<(), Error> {
    let mut rows = Vec::new();
    for j in 0..=model.max_scale() {
        let keys: Vec<_> = model.nodes().filter(|n| n.key.scale == j).collect();
        if keys.is_empty() {
            continue;
        }
        let mean_u = keys.iter().map(|n| n.u_basis.dim()).sum::<usize>() as f64 / keys.len() as f64;
        let mean_cum = keys.iter().map(|n| n.cum_dim).sum::<usize>() as f64 / keys.len() as f64;
        rows.push(format!("{},{},{},{}", j, keys.len(), mean_u, mean_cum));
    }
    write_csv(
        &out.join("ortho_scale_stats.csv"),
        "scale,cells,mean_new_dims,mean_cumulative_dims",
        &rows,
    )?;
    let mut rss = 0.0f64;
    let mut max_res = 0.0f64;
    for i in 0..cloud.n() {
        let c = ortho_fgwt_training(model, cloud, i)?;
        rss += c.residual_norm() * c.residual_norm();
        max_res = max_res.max(c.residual_norm());
    }
    write_csv(
        &out.join("ortho_residuals.csv"),
        "rms_residual,max_residual",
        &[format!("{},{}", (rss / cloud.n() as f64).sqrt(), max_res)],
    )
}

fn run_transform(args: TransformArgs) -> Result<(), Error> {
    let cloud = load_input(&args.input, &None)?;
    let model = storage::load_gmra_model(&args.model)?;
    prepare_out(&args.out, &args)?;
    let coeffs: Vec<GwtCoefficients> = match args.assignment.as_str() {
        "training" => {
            if cloud.n() != model.tree().n_points() {
                return Err(Error::Config(format!(
                    "training assignment needs the training cloud ({} points, got {})",
                    model.tree().n_points(),
                    cloud.n()
                )));
            }
            fgwt_batch(&model, &cloud)?
        }
        "nearest" => (0..cloud.n())
            .map(|i| fgwt(&model, &cloud.point(i).into_owned()))
            .collect::<Result<_, _>>()?,
        other => return Err(Error::Config(format!("unknown assignment '{other}'"))),
    };
    storage::write_coefficients_csv(args.out.join("coefficients.csv"), &coeffs)?;
    storage::write_coefficients_binary(args.out.join("coefficients.gwc"), &coeffs)?;
    let magnitudes = per_scale_magnitudes(&model, &coeffs);
    write_csv(
        &args.out.join("per_scale_magnitudes.csv"),
        "scale,mean_block_norm,mean_abs_entry,points",
        &magnitudes
            .iter()
            .map(|m| format!("{},{},{},{}", m.scale, m.mean_block_norm, m.mean_abs_entry, m.points))
            .collect::<Vec<_>>(),
    )?;
    let rows: Vec<String> = (0..=model.max_scale())
        .map(|j| {
            format!(
                "{},{},{}",
                j,
                model.approximation_error(&cloud, j, ErrorNorm::L2Absolute),
                model.approximation_error(&cloud, j, ErrorNorm::L2Relative)
            )
        })
        .collect();
    write_csv(&args.out.join("per_scale_errors.csv"), "scale,error_abs,error_rel", &rows)?;
    Ok(())
}

fn run_reconstruct(args: ReconstructArgs) -> Result<(), Error> {
    let model = storage::load_gmra_model(&args.model)?;
    let coeffs = storage::read_coefficients_binary(&args.coeffs)?;
    prepare_out(&args.out, &args)?;
    let scale = args.at_scale.unwrap_or(model.max_scale());
    let points: Vec<_> = coeffs
        .iter()
        .map(|c| igwt_at_scale(&model, c, scale))
        .collect::<Result<_, _>>()?;
    let mut data = nalgebra::DMatrix::zeros(model.ambient_dim(), points.len());
    for (i, p) in points.iter().enumerate() {
        data.set_column(i, p);
    }
    let rec = PointCloud::from_columns(data, "reconstruction")?;
    let (format, name) = match args.format.as_str() {
        "csv" => (CloudFormat::Csv, "reconstruction.csv"),
        "binary" => (CloudFormat::Binary, "reconstruction.bin"),
        other => return Err(Error::Config(format!("unknown format '{other}'"))),
    };
    rec.save(args.out.join(name), format)?;
    if let Some(reference) = &args.reference {
        let reference = load_cloud(reference, CloudFormat::Csv)?;
        if reference.n() != rec.n() {
            return Err(Error::Config("reference size mismatch".into()));
        }
        let errors: Vec<f64> = (0..rec.n())
            .map(|i| (reference.point(i) - rec.point(i)).norm())
            .collect();
        let rms = (errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt();
        let max = errors.iter().cloned().fold(0.0, f64::max);
        write_csv(
            &args.out.join("reconstruction_errors.csv"),
            "scale,rms_error,max_error",
            &[format!("{scale},{rms},{max}")],
        )?;
    }
    Ok(())
}

fn run_compress(args: CompressArgs) -> Result<(), Error> {
    let cloud = load_input(&args.input, &None)?;
    let model = storage::load_gmra_model(&args.model)?;
    prepare_out(&args.out, &args)?;
    let deltas = parse_grid(&args.deltas, 1e-5, 1.0, 25)?;
    let mode = match args.mode.as_str() {
        "entrywise" => ThresholdMode::Entrywise,
        "block" => ThresholdMode::BlockNorm,
        other => return Err(Error::Config(format!("unknown mode '{other}'"))),
    };
    let coeffs = fgwt_batch(&model, &cloud)?;
    let mut rows = Vec::new();
    for &delta in &deltas {
        let (_, report) = threshold_coefficients(&model, &cloud, &coeffs, delta, mode)?;
        let rel = {
            let mut acc = 0.0;
            for (i, e) in report.per_point_errors.iter().enumerate() {
                let nx = cloud.point(i).norm().max(f64::MIN_POSITIVE);
                acc += (e / nx) * (e / nx);
            }
            (acc / cloud.n() as f64).sqrt()
        };
        rows.push(format!(
            "{},{},{},{},{},{},{}",
            delta,
            report.kept,
            report.total,
            report.compression_ratio,
            report.rms_error,
            report.max_error,
            rel
        ));
    }
    write_csv(
        &args.out.join("compression_curve.csv"),
        "delta,kept,total,compression_ratio,rms_error,max_error,rel_error",
        &rows,
    )?;
    Ok(())
}

fn report_rows(reports: &[CostReport]) -> Vec<String> {
    reports
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{},{},{}",
                r.method,
                r.parameter,
                r.cost.coefficients,
                r.cost.dictionary,
                r.cost.total(),
                r.error_abs,
                r.error_rel
            )
        })
        .collect()
}

fn run_compare(args: CompareArgs) -> Result<(), Error> {
    let generator = args.kind.as_ref().map(|kind| GeneratorArgs {
        kind: kind.clone(),
        n: args.n,
        dim: args.dim,
        sigma: args.sigma,
        seed: args.seed,
        intrinsic_dim: 2,
        max_freq: 63,
        alpha: 2.0,
    });
    let cloud = load_input(&args.input, &generator)?;
    prepare_out(&args.out, &args)?;
    let deltas = parse_grid(&args.deltas, 1e-5, 1.0, 25)?;
    let epsilons = parse_grid(&args.epsilons, args.epsilon.max(1e-6), 1.0, 8)?;

    // Plain model on the no-scaling-function route, so the dictionary
    // accounting matches what the curve counts.
    let tree = build_tree(
        &cloud,
        args.tree.method()?,
        &args.tree.stopping_rule(),
        args.tree.tree_seed,
    )?;
    let model = construct_gmra(
        &cloud,
        &tree,
        &args.policy.policy()?,
        args.epsilon,
        GmraVariants {
            tangential_corrections: false,
            split_shared_wavelets: true,
        },
    )?;
    let coeffs = fgwt_batch(&model, &cloud)?;
    let mut rows = Vec::new();
    rows.extend(report_rows(&gmra_cost_curve(&model, &cloud, &coeffs, &deltas, "gmra")?));

    let ortho = construct_ortho(
        &cloud,
        &tree,
        &args.policy.policy()?,
        args.epsilon,
        PrecisionMode::Absolute,
    )?;
    rows.extend(report_rows(&ortho_cost_curve(&ortho, &cloud, &deltas)?));
    rows.extend(report_rows(&pruned_cost_curve(
        &cloud,
        &tree,
        &epsilons,
        PrecisionMode::Absolute,
    )?));
    rows.extend(report_rows(&svd_baseline(&cloud, None)?));
    rows.extend(report_rows(&svd_threshold_baseline(&cloud, &deltas)?));
    write_csv(
        &args.out.join("cost_error_curves.csv"),
        "method,parameter,coefficient_cost,dictionary_cost,total_cost,error_abs,error_rel",
        &rows,
    )?;
    Ok(())
}

/// Threshold sweep of the orthogonal encoder: zero small blocks entrywise,
/// count nonzeros, reconstruct by the plain sum.
fn ortho_cost_curve(
    model: &OrthoGmraModel,
    cloud: &PointCloud,
    deltas: &[f64],
) -> Result<Vec<CostReport>, Error> {
    use gmra::prune::EncodingCost;
    let coeffs: Vec<_> = (0..cloud.n())
        .map(|i| ortho_fgwt_training(model, cloud, i))
        .collect::<Result<_, _>>()?;
    let dim = model.ambient_dim() as u64;
    let node_count = model.tree().node_count() as u64;
    let mut out = Vec::new();
    for &delta in deltas {
        let mut kept = 0u64;
        let mut abs_sq = 0.0;
        let mut rel_sq = 0.0;
        let mut used_cols: std::collections::BTreeMap<gmra::tree::NodeKey, Vec<bool>> =
            std::collections::BTreeMap::new();
        for (i, c) in coeffs.iter().enumerate() {
            let mut sparse = c.clone();
            let path: Vec<gmra::tree::NodeKey> = c.path().to_vec();
            for (s, block) in sparse.blocks_mut().iter_mut().enumerate() {
                let flags = used_cols
                    .entry(path[s])
                    .or_insert_with(|| vec![false; block.len()]);
                for (l, v) in block.iter_mut().enumerate() {
                    if s > 0 && v.abs() < delta {
                        *v = 0.0;
                    } else if *v != 0.0 {
                        kept += 1;
                        flags[l] = true;
                    }
                }
            }
            let rec = gmra::ortho::ortho_igwt(model, &sparse)?;
            let e = (cloud.point(i) - rec).norm_squared();
            abs_sq += e;
            rel_sq += e / cloud.point(i).norm_squared().max(f64::MIN_POSITIVE);
        }
        let used_total: u64 = used_cols
            .values()
            .map(|f| f.iter().filter(|&&u| u).count() as u64)
            .sum();
        out.push(CostReport {
            method: "ortho".into(),
            parameter: delta,
            cost: EncodingCost {
                coefficients: kept,
                dictionary: dim * (used_total + node_count),
            },
            error_abs: (abs_sq / cloud.n() as f64).sqrt(),
            error_rel: (rel_sq / cloud.n() as f64).sqrt(),
        });
    }
    Ok(out)
}

fn run_oos(args: OosArgs) -> Result<(), Error> {
    let model = storage::load_gmra_model(&args.model)?;
    let queries = load_cloud(&args.queries, parse_format(&args.format)?)?;
    prepare_out(&args.out, &args)?;
    let mut block_rows = Vec::new();
    let mut residual_rows = Vec::new();
    for i in 0..queries.n() {
        let x = queries.point(i).into_owned();
        let expansion = expand_oos(&model, &x)?;
        for (key, block) in &expansion.normal_blocks {
            for (l, &v) in block.iter().enumerate() {
                block_rows.push(format!("{i},{},{},{l},{v}", key.scale, key.index));
            }
        }
        let rec = expansion.reconstruct(&model)?;
        residual_rows.push(format!(
            "{i},{},{},{},{},{}",
            expansion.leaf.scale,
            expansion.leaf.index,
            expansion.initial_residual,
            expansion.final_residual,
            (&x - rec).norm()
        ));
    }
    write_csv(
        &args.out.join("oos_blocks.csv"),
        "query_id,scale,index,block_index,value",
        &block_rows,
    )?;
    write_csv(
        &args.out.join("oos_residuals.csv"),
        "query_id,leaf_scale,leaf_index,initial_residual,final_residual,reconstruction_error",
        &residual_rows,
    )?;
    Ok(())
}

fn run_sample(args: SampleArgs) -> Result<(), Error> {
    let model = storage::load_gmra_model(&args.model)?;
    let cloud = load_input(&args.input, &None)?;
    prepare_out(&args.out, &args)?;
    let shape = match args.shape.as_str() {
        "diagonal" => FactorShape::Diagonal,
        "full" => FactorShape::Full,
        other => return Err(Error::Config(format!("unknown shape '{other}'"))),
    };
    let sm = fit_scale_model(&model, &cloud, args.scale, shape)?;
    let (samples, _) = sample_with_cells(&sm, args.count, args.seed)?;
    let (format, name) = match args.out_format.as_str() {
        "csv" => (CloudFormat::Csv, "samples.csv"),
        "binary" => (CloudFormat::Binary, "samples.bin"),
        other => return Err(Error::Config(format!("unknown format '{other}'"))),
    };
    samples.save(args.out.join(name), format)?;
    write_csv(
        &args.out.join("weights.csv"),
        "scale,index,weight",
        &sm.cells
            .iter()
            .map(|c| format!("{},{},{}", c.key.scale, c.key.index, c.weight))
            .collect::<Vec<_>>(),
    )?;
    Ok(())
}

fn run_evaluate(args: EvaluateArgs) -> Result<(), Error> {
    let format = parse_format(&args.format)?;
    let a = load_cloud(&args.a, format)?;
    let b = load_cloud(&args.b, format)?;
    prepare_out(&args.out, &args)?;
    let max = hausdorff(&a, &b, HausdorffMode::Max);
    let median = hausdorff(&a, &b, HausdorffMode::Median);
    write_csv(
        &args.out.join("distances.csv"),
        "hausdorff_max,hausdorff_median",
        &[format!("{max},{median}")],
    )?;
    println!("hausdorff_max={max} hausdorff_median={median}");
    Ok(())
}
