//! `projscope`: batch driver over the analysis engine, and launcher for the
//! HTTP service. Results go to stdout (or `--out`) as JSON; logs go to
//! stderr. Exit code 2 marks invalid input or parameters.

mod config;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::Value;

use projscope_core::cluster::{ClusterMethod, ClusteringModel, Linkage};
use projscope_core::data::{export_csv, load_csv, LoadOptions, TableView};
use projscope_core::dimred::{ProjectionMethod, ProjectionModel};
use projscope_core::distance::Distance;
use projscope_core::filter;
use projscope_core::interact::{ConstraintSpec, PointRef};
use projscope_core::stats::{anova_by_clusters, corr_pairs, point_stats};
use projscope_core::CancelToken;
use projscope_server::ops::{
    projection_result, run_backward, run_clustering, run_forward, run_projection, run_prolines,
    BackwardRequest, ClusterRequest, ForwardRequest, ProjectionRequest, ProlineRequest,
};
use projscope_server::ServerConfig;

use crate::config::Config;

#[derive(Debug, Parser)]
#[command(name = "projscope", version, about = "Interactive clustering and projection engine")]
struct Cli {
    /// TOML file with defaults for flags (same key names, underscores).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Start the HTTP service.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        ui_origin: Option<String>,
    },
    /// Cluster the rows of a CSV file.
    Cluster {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum)]
        distance: Option<DistanceArg>,
        #[arg(long, value_enum)]
        linkage: Option<LinkageArg>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        max_iter: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Project the rows of a CSV file to 2-D.
    Project {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, value_enum)]
        method: ProjectionArg,
        #[arg(long, value_enum)]
        distance: Option<DistanceArg>,
        /// z-score features before PCA.
        #[arg(long)]
        standardize: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Forward/backward projection and prolines against a saved model.
    Interact {
        #[command(subcommand)]
        op: InteractOp,
    },
    /// Statistics over a CSV file.
    Stats {
        #[command(subcommand)]
        op: StatsOp,
    },
    /// Write the rows matching a filter expression as CSV.
    Filter {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        expr: Option<String>,
        #[arg(long)]
        keyword: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct InputArgs {
    #[arg(long)]
    input: PathBuf,
    /// Single-byte field delimiter (default `,`).
    #[arg(long)]
    delimiter: Option<char>,
    /// The first row is data, not a header.
    #[arg(long)]
    no_header: bool,
    #[arg(long)]
    id_column: Option<String>,
    /// Comma-separated numeric features to use (default: all).
    #[arg(long, value_delimiter = ',')]
    features: Option<Vec<String>>,
    /// Row filter applied before any computation.
    #[arg(long = "where")]
    filter: Option<String>,
}

#[derive(Debug, Args)]
struct ModelArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Projection model JSON (or the output of `project`).
    #[arg(long)]
    model: PathBuf,
    /// Row id of the point to move.
    #[arg(long, conflicts_with = "point_json")]
    point: Option<String>,
    /// Explicit point as a JSON object of feature values.
    #[arg(long)]
    point_json: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum InteractOp {
    Forward {
        #[command(flatten)]
        model: ModelArgs,
        /// JSON object of feature changes, e.g. '{"age": 2}'.
        #[arg(long)]
        delta: String,
    },
    Backward {
        #[command(flatten)]
        model: ModelArgs,
        /// Target plane displacement `dx,dy`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        delta_y: Vec<f64>,
        /// Constraint JSON file; enables the constrained solver.
        #[arg(long)]
        constraints: Option<PathBuf>,
        #[arg(long)]
        lambda: Option<f64>,
    },
    Prolines {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "k")]
        k_extent: Option<f64>,
        #[arg(long = "c")]
        c_step: Option<f64>,
        #[arg(long = "only", value_delimiter = ',')]
        only: Option<Vec<String>>,
    },
}

#[derive(Debug, Subcommand)]
enum StatsOp {
    /// One-way ANOVA between clusters, one result per `--feature`.
    Anova {
        #[command(flatten)]
        input: InputArgs,
        /// Output of `cluster` (or a bare clustering model).
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, required = true)]
        feature: Vec<String>,
        #[arg(long, value_delimiter = ',', required = true)]
        clusters: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pairwise Pearson correlations sorted by |r|.
    Corr {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-feature count, mean, std, min, max.
    Points {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Kmeans,
    #[value(alias = "agglomerative")]
    Agglo,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProjectionArg {
    Pca,
    Cmds,
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceArg {
    Euclidean,
    Manhattan,
    Cosine,
    Correlation,
}

impl From<DistanceArg> for Distance {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::Euclidean => Distance::Euclidean,
            DistanceArg::Manhattan => Distance::Manhattan,
            DistanceArg::Cosine => Distance::Cosine,
            DistanceArg::Correlation => Distance::Correlation,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkageArg {
    Single,
    Complete,
    Average,
    Ward,
}

impl From<LinkageArg> for Linkage {
    fn from(l: LinkageArg) -> Self {
        match l {
            LinkageArg::Single => Linkage::Single,
            LinkageArg::Complete => Linkage::Complete,
            LinkageArg::Average => Linkage::Average,
            LinkageArg::Ward => Linkage::Ward,
        }
    }
}

/// Invalid input or parameters (exit code 2).
#[derive(Debug)]
struct Invalid(String);

impl std::fmt::Display for Invalid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

fn invalid(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Invalid(msg.into()))
}

fn is_validation(err: &anyhow::Error) -> bool {
    err.chain().any(|c| {
        c.is::<Invalid>()
            || c.is::<projscope_core::Error>()
            || c.is::<projscope_core::filter::ParseError>()
            || c.is::<serde_json::Error>()
    })
}

fn load_view(args: &InputArgs, cfg: &Config) -> Result<TableView> {
    let mut opts = LoadOptions::default();
    if let Some(d) = args.delimiter.or(cfg.delimiter) {
        if !d.is_ascii() {
            return Err(invalid(format!("delimiter must be a single ASCII character, got `{d}`")));
        }
        opts.delimiter = d as u8;
    }
    opts.header_row = !args.no_header;
    opts.id_column = args.id_column.clone().or_else(|| cfg.id_column.clone());
    let file = fs::File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let table = load_csv(file, &opts).with_context(|| format!("loading {}", args.input.display()))?;
    log::info!("loaded {} rows x {} features from {}", table.n_rows(), table.n_features(), args.input.display());
    let table = Arc::new(table);
    let mut view = TableView::full(table.clone());
    if let Some(names) = &args.features {
        view = view.with_features(names)?;
    }
    if let Some(expr) = &args.filter {
        let parsed = filter::parse(expr)?;
        view = view.with_mask(table.apply_filter(&parsed)?)?;
    }
    Ok(view)
}

fn emit<T: Serialize>(value: &T, out: Option<&PathBuf>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_out(text.as_bytes(), out)
}

fn write_out(bytes: &[u8], out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn read_json(path: &PathBuf) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Accepts a bare model or any object with a `model` field.
fn read_model(path: &PathBuf) -> Result<ProjectionModel> {
    let v = read_json(path)?;
    let v = if v.get("mu").is_some() { v } else { v.get("model").cloned().unwrap_or(Value::Null) };
    if v.is_null() {
        return Err(invalid(format!("{} holds no linear projection model", path.display())));
    }
    serde_json::from_value(v).with_context(|| format!("parsing model in {}", path.display()))
}

fn read_labels(path: &PathBuf) -> Result<ClusteringModel> {
    let v = read_json(path)?;
    let v = if v.get("labels").is_some() { v } else { v.get("model").cloned().unwrap_or(Value::Null) };
    serde_json::from_value(v).with_context(|| format!("parsing clustering in {}", path.display()))
}

fn point_ref(args: &ModelArgs) -> Result<PointRef> {
    match (&args.point, &args.point_json) {
        (Some(id), None) => Ok(PointRef::RowId(id.clone())),
        (None, Some(json)) => Ok(PointRef::Values(serde_json::from_str(json).context("parsing --point-json")?)),
        _ => Err(invalid("exactly one of --point or --point-json is required")),
    }
}

/// View over the model's features so σ and row lookup match the fit.
fn model_view(args: &ModelArgs, cfg: &Config, model: &ProjectionModel) -> Result<TableView> {
    if args.input.features.is_some() {
        return Err(invalid("--features is taken from the model in interact commands"));
    }
    Ok(load_view(&args.input, cfg)?.with_features(&model.feature_names)?)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Serve { port, data_dir, ui_origin } => {
            let port = port.or(cfg.port).unwrap_or_else(projscope_server::port_from_env);
            let config = ServerConfig {
                data_dir: data_dir.or_else(|| cfg.data_dir.clone()),
                ui_origin: ui_origin.or_else(|| cfg.ui_origin.clone()),
            };
            let addr = SocketAddr::from(([0, 0, 0, 0], port));
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(projscope_server::serve(addr, config))?;
            Ok(())
        }
        Command::Cluster { input, method, k, distance, linkage, seed, max_iter, out } => {
            let view = load_view(&input, &cfg)?;
            let method = match method {
                MethodArg::Kmeans => ClusterMethod::Kmeans,
                MethodArg::Agglo => ClusterMethod::Agglomerative,
            };
            let linkage = linkage.or(match method {
                ClusterMethod::Agglomerative => cfg.linkage,
                ClusterMethod::Kmeans => None,
            });
            let req = ClusterRequest {
                method,
                k,
                distance: distance.or(cfg.distance).map(Distance::from).unwrap_or_default(),
                linkage: linkage.map(Linkage::from),
                seed: seed.or(cfg.seed),
                max_iter: max_iter.or(cfg.max_iter),
            };
            let result = run_clustering(&view, &req, &CancelToken::new())?;
            emit(&result, out.as_ref())
        }
        Command::Project { input, method, distance, standardize, out } => {
            let view = load_view(&input, &cfg)?;
            let req = ProjectionRequest {
                method: match method {
                    ProjectionArg::Pca => ProjectionMethod::Pca,
                    ProjectionArg::Cmds => ProjectionMethod::Cmds,
                },
                distance: distance.or(match method {
                    ProjectionArg::Cmds => cfg.distance,
                    ProjectionArg::Pca => None,
                })
                .map(Distance::from),
                standardize,
            };
            let embedding = run_projection(&view, &req)?;
            emit(&projection_result(&view, embedding, None), out.as_ref())
        }
        Command::Interact { op } => match op {
            InteractOp::Forward { model, delta } => {
                let m = read_model(&model.model)?;
                let view = model_view(&model, &cfg, &m)?;
                let delta: BTreeMap<String, f64> = serde_json::from_str(&delta).context("parsing --delta")?;
                let req = ForwardRequest { point: point_ref(&model)?, delta };
                emit(&run_forward(&m, &view, &req)?, model.out.as_ref())
            }
            InteractOp::Backward { model, delta_y, constraints, lambda } => {
                if delta_y.len() != 2 {
                    return Err(invalid(format!("--delta-y needs two numbers, got {}", delta_y.len())));
                }
                let m = read_model(&model.model)?;
                let view = model_view(&model, &cfg, &m)?;
                let constraints = match constraints {
                    Some(path) => Some(serde_json::from_value::<ConstraintSpec>(read_json(&path)?).context("parsing constraints")?),
                    None => None,
                };
                let req = BackwardRequest {
                    point: point_ref(&model)?,
                    delta_y: [delta_y[0], delta_y[1]],
                    constraints,
                    lambda_reg: lambda.or(cfg.lambda),
                };
                emit(&run_backward(&m, &view, &req)?, model.out.as_ref())
            }
            InteractOp::Prolines { model, k_extent, c_step, only } => {
                let m = read_model(&model.model)?;
                let view = model_view(&model, &cfg, &m)?;
                let req = ProlineRequest {
                    point: point_ref(&model)?,
                    k: k_extent.or(cfg.proline_k),
                    c: c_step.or(cfg.proline_c),
                    features: only,
                };
                emit(&run_prolines(&m, &view, &req)?, model.out.as_ref())
            }
        },
        Command::Stats { op } => match op {
            StatsOp::Anova { input, labels, feature, clusters, out } => {
                let view = load_view(&input, &cfg)?;
                let model = read_labels(&labels)?;
                if let Some(bad) = clusters.iter().find(|&&c| c >= model.k) {
                    bail!(invalid(format!("cluster id {bad} out of range for k = {}", model.k)));
                }
                let results = feature
                    .iter()
                    .map(|f| anova_by_clusters(&view, &model.labels, f, &clusters))
                    .collect::<Result<Vec<_>, _>>()?;
                if results.len() == 1 {
                    emit(&results[0], out.as_ref())
                } else {
                    emit(&results, out.as_ref())
                }
            }
            StatsOp::Corr { input, out } => emit(&corr_pairs(&load_view(&input, &cfg)?)?, out.as_ref()),
            StatsOp::Points { input, out } => emit(&point_stats(&load_view(&input, &cfg)?)?, out.as_ref()),
        },
        Command::Filter { input, expr, keyword, out } => {
            let mut view = load_view(&input, &cfg)?;
            let table = view.table().clone();
            let mut mask = view.row_mask().to_vec();
            if let Some(text) = expr.as_deref().filter(|e| !e.trim().is_empty()) {
                let parsed = filter::parse(text)?;
                for (m, hit) in mask.iter_mut().zip(table.apply_filter(&parsed)?) {
                    *m &= hit;
                }
            }
            if let Some(q) = keyword.as_deref().filter(|k| !k.is_empty()) {
                for (m, hit) in mask.iter_mut().zip(table.keyword_filter(q)) {
                    *m &= hit;
                }
            }
            view = view.with_mask(mask)?;
            log::info!("{} of {} rows match", view.n_rows(), table.n_rows());
            write_out(&export_csv(&view), out.as_ref())
        }
    }
}

fn init_logging() {
    let mut builder = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"));
    if std::env::var_os("NO_COLOR").is_some_and(|v| !v.is_empty()) {
        builder.write_style(env_logger::WriteStyle::Never);
    }
    builder.target(env_logger::Target::Stderr).init();
}

fn main() -> ExitCode {
    init_logging();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if is_validation(&err) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
