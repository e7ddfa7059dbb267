//! `partgroup`: batch entry points for segmentation, dedup, rendering,
//! embedding, training, retrieval, evaluation and the HTTP service.

mod cmd;

use std::net::{IpAddr, Ipv4Addr};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use partgroup::dedup::{ExemplarChoice, Tolerances, DEFAULT_BINS};
use partgroup::encode::ViewMask;
use partgroup::eval::{PrAveraging, DEFAULT_THRESHOLDS};
use partgroup::pipeline::PipelineConfig;
use partgroup::raster::DEFAULT_RESOLUTION;
use partgroup::retrieve::Space;
use partgroup::views::ViewConfig;
use partgroup_service::Backend;

#[derive(Debug, Parser)]
#[command(name = "partgroup", version, about = "Material-aware part grouping for segmented meshes")]
struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true, env = "PARTGROUP_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Full pipeline: segment, dedup, render, embed, index; writes an artifact directory.
    Run(RunArgs),
    /// Split a mesh into connected parts; prints the mesh snapshot as JSON.
    Segment(SegmentArgs),
    /// Group near-identical parts; prints duplicate groups as JSON.
    Dedup(DedupArgs),
    /// Render the isolated, context and full views of parts as PNG.
    Views(ViewsArgs),
    /// Embed every exemplar and write an embedding store.
    Embed(EmbedArgs),
    /// Train the projection head with a supervised contrastive loss.
    Train(TrainArgs),
    /// Select parts within λ of the query parts; prints JSON.
    Query(QueryArgs),
    /// Rank every other part against one query; prints CSV.
    Rank(RankArgs),
    /// Evaluate retrieval on a benchmark of processed meshes.
    Eval(EvalArgs),
    /// Generate a synthetic benchmark with ground-truth materials.
    Genbench(GenbenchArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
struct ViewOpts {
    /// Render resolution (square, pixels).
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// Candidate context cameras per part.
    #[arg(long, default_value_t = 16)]
    candidates: usize,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 45.0)]
    fov: f64,
    /// Visibility ratio below which the context view zooms in.
    #[arg(long, default_value_t = 0.3)]
    occlusion_threshold: f64,
    /// Maximum number of zoom steps.
    #[arg(long, default_value_t = 3)]
    max_zoom_steps: u32,
}

impl ViewOpts {
    fn config(&self) -> ViewConfig {
        ViewConfig {
            resolution: self.resolution,
            candidates: self.candidates,
            fov_deg: self.fov,
            occlusion_threshold: self.occlusion_threshold,
            max_zoom_steps: self.max_zoom_steps,
            ..ViewConfig::default()
        }
    }
}

#[derive(Debug, Clone, Args)]
struct DedupOpts {
    /// Radial histogram bins.
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    /// Maximum ℓ1 distance between radial histograms.
    #[arg(long, default_value_t = 1e-2)]
    histogram_tol: f64,
    /// Maximum relative difference of part extents.
    #[arg(long, default_value_t = 1e-2)]
    scale_tol: f64,
    /// Relative vertex-count difference must be below this.
    #[arg(long, default_value_t = 0.05)]
    vertex_tol: f64,
    /// Pick group exemplars at random with this seed instead of the lowest part id.
    #[arg(long)]
    exemplar_seed: Option<u64>,
}

impl DedupOpts {
    fn tolerances(&self) -> Tolerances {
        Tolerances {
            bins: self.bins,
            histogram_l1: self.histogram_tol,
            scale: self.scale_tol,
            vertex_count: self.vertex_tol,
        }
    }

    fn exemplar(&self) -> ExemplarChoice {
        self.exemplar_seed.map_or(ExemplarChoice::Lowest, ExemplarChoice::Seeded)
    }
}

#[derive(Debug, Clone, Args)]
struct EmbedOpts {
    /// Views concatenated into the embedding.
    #[arg(long, value_delimiter = ',', default_value = "isolated,context,full")]
    embed_views: Vec<String>,
    /// Read exemplar embeddings from this store directory instead of rendering.
    #[arg(long)]
    external: Option<PathBuf>,
}

impl EmbedOpts {
    fn mask(&self) -> anyhow::Result<ViewMask> {
        let mut mask = ViewMask {
            isolated: false,
            context: false,
            full: false,
        };
        for v in &self.embed_views {
            match v.as_str() {
                "isolated" => mask.isolated = true,
                "context" => mask.context = true,
                "full" => mask.full = true,
                other => anyhow::bail!("unknown view `{other}`"),
            }
        }
        Ok(mask)
    }
}

#[derive(Debug, Clone, Args)]
struct SpaceOpts {
    /// Retrieval space: x (view features) or z (projection-head output).
    #[arg(long, default_value = "x")]
    space: Space,
    /// Projection-head checkpoint, required for space z.
    #[arg(long)]
    head: Option<PathBuf>,
}

fn pipeline_config(view: &ViewOpts, dedup: &DedupOpts, embed: &EmbedOpts, space: &SpaceOpts) -> anyhow::Result<PipelineConfig> {
    Ok(PipelineConfig {
        tolerances: dedup.tolerances(),
        exemplar: dedup.exemplar(),
        views: view.config(),
        mask: embed.mask()?,
        space: space.space,
        head: space.head.clone(),
        external: embed.external.clone(),
        ..PipelineConfig::default()
    })
}

#[derive(Debug, Args)]
struct RunArgs {
    /// Input mesh (OBJ).
    input: PathBuf,
    /// Output artifact directory.
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    view: ViewOpts,
    #[command(flatten)]
    dedup: DedupOpts,
    #[command(flatten)]
    embed: EmbedOpts,
    #[command(flatten)]
    space: SpaceOpts,
    /// Keep the rendered view PNGs.
    #[arg(long)]
    save_views: bool,
    /// Also write every part's full ranking.
    #[arg(long)]
    rankings: bool,
}

#[derive(Debug, Args)]
struct SegmentArgs {
    /// Input mesh (OBJ).
    input: PathBuf,
    /// Write here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DedupArgs {
    /// Input mesh (OBJ).
    input: PathBuf,
    /// Write here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    dedup: DedupOpts,
}

#[derive(Debug, Args)]
struct ViewsArgs {
    /// Input mesh (OBJ).
    input: PathBuf,
    /// Output directory; images go to `<out>/<part>/<view>.png`.
    #[arg(long, short)]
    out: PathBuf,
    /// Parts to render (repeatable; default: every part).
    #[arg(long = "part")]
    parts: Vec<u32>,
    #[command(flatten)]
    view: ViewOpts,
}

#[derive(Debug, Args)]
struct EmbedArgs {
    /// Input mesh (OBJ).
    input: PathBuf,
    /// Output directory for `embeddings.json` and `embeddings.bin`.
    #[arg(long, short)]
    out: PathBuf,
    #[command(flatten)]
    view: ViewOpts,
    #[command(flatten)]
    dedup: DedupOpts,
    #[command(flatten)]
    embed: EmbedOpts,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training meshes (OBJ); `usemtl` names are the material labels.
    meshes: Vec<PathBuf>,
    /// Train on this many generated meshes instead of (or besides) files.
    #[arg(long, default_value_t = 0)]
    synthetic: usize,
    /// Seed for generated meshes.
    #[arg(long, default_value_t = 0)]
    synthetic_seed: u64,
    /// Checkpoint output path.
    #[arg(long, short)]
    out: PathBuf,
    /// Loss log (CSV: step,loss).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Optimizer steps.
    #[arg(long, default_value_t = 20_000)]
    steps: usize,
    #[arg(long, default_value_t = 256)]
    batch_size: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 1e-5)]
    lr: f64,
    /// Contrastive temperature τ.
    #[arg(long, default_value_t = 0.07)]
    temperature: f64,
    /// Weight-init, batch and balancing seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Extra viewpoints available per part when balancing.
    #[arg(long, default_value_t = 3)]
    extra_views: usize,
    /// Minimum samples per material.
    #[arg(long, default_value_t = 8)]
    min_samples: usize,
    /// Maximum samples per material.
    #[arg(long, default_value_t = 100)]
    max_samples: usize,
    /// Maximum most/least frequent material ratio within a mesh.
    #[arg(long, default_value_t = 5.0)]
    max_ratio: f64,
    #[command(flatten)]
    view: ViewOpts,
    #[command(flatten)]
    dedup: DedupOpts,
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// Artifact directory written by `run`.
    #[arg(long)]
    index_dir: PathBuf,
    /// Query part (repeatable).
    #[arg(long = "part", required = true)]
    parts: Vec<u32>,
    /// Distance threshold λ.
    #[arg(long)]
    lambda: f64,
    #[command(flatten)]
    space: SpaceOpts,
}

#[derive(Debug, Args)]
struct RankArgs {
    /// Artifact directory written by `run`.
    #[arg(long)]
    index_dir: PathBuf,
    /// Query part.
    #[arg(long)]
    part: u32,
    /// Write here instead of stdout.
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    space: SpaceOpts,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Benchmark JSON: `[{mesh, queries: [{query_part, positives}]}]`.
    #[arg(long)]
    benchmark: PathBuf,
    /// Directory holding one artifact directory per benchmark mesh, named by file stem.
    #[arg(long)]
    index_dir: PathBuf,
    /// Leading benchmark meshes used to choose λ.
    #[arg(long, default_value_t = 5)]
    val_meshes: usize,
    /// Quantile thresholds of the PR sweep.
    #[arg(long, default_value_t = DEFAULT_THRESHOLDS)]
    thresholds: usize,
    /// PR averaging: macro or micro.
    #[arg(long, default_value = "macro")]
    averaging: PrAveraging,
    /// Metrics report output (JSON).
    #[arg(long, short)]
    out: Option<PathBuf>,
    #[command(flatten)]
    space: SpaceOpts,
}

#[derive(Debug, Args)]
struct GenbenchArgs {
    /// Output directory for meshes and `benchmark.json`.
    #[arg(long, short)]
    out: PathBuf,
    /// Number of meshes (cycling pinecone, fence, plant).
    #[arg(long, default_value_t = 10)]
    count: usize,
    /// Generator seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Listen port.
    #[arg(long, env = "PARTGROUP_PORT", default_value_t = 8080)]
    port: u16,
    /// Listen address.
    #[arg(long, env = "PARTGROUP_BIND", default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
    bind: IpAddr,
    /// Session storage.
    #[arg(long, env = "PARTGROUP_DATA_DIR", default_value = "partgroup-data")]
    data_dir: PathBuf,
    /// Render resolution (square, pixels).
    #[arg(long, env = "PARTGROUP_RESOLUTION", default_value_t = DEFAULT_RESOLUTION)]
    resolution: usize,
    /// `builtin` or `external:<sidecar dir>`.
    #[arg(long, env = "PARTGROUP_BACKEND", default_value = "builtin")]
    backend: Backend,
    /// Retrieval space: x or z.
    #[arg(long, env = "PARTGROUP_SPACE", default_value = "x")]
    space: Space,
    /// Projection-head checkpoint, required for space z.
    #[arg(long, env = "PARTGROUP_HEAD")]
    head: Option<PathBuf>,
}

fn main() -> std::process::ExitCode {
    let cli = Cli::parse();
    partgroup::exec::init_global_jobs(cli.jobs);
    match cmd::dispatch(cli.command) {
        Ok(()) => std::process::ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::ExitCode::FAILURE
        }
    }
}
