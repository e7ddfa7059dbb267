use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use partgroup::dedup::group_duplicates;
use partgroup::encode::{BuiltinBackend, ProjectionHead};
use partgroup::eval::synth::{generate_synthetic_benchmark, SynthSpec};
use partgroup::eval::{parse_benchmark, BenchmarkMesh};
use partgroup::mesh::{segment, Mesh, MeshSnapshot};
use partgroup::obj::{load_obj, write_mesh_obj};
use partgroup::pipeline::{
    evaluate_benchmark, load_artifacts, process_mesh, run_pipeline, training_samples, EvalConfig,
    PipelineConfig,
};
use partgroup::retrieve::{EmbeddingIndex, SelectionRequest};
use partgroup::store::{load_checkpoint, save_checkpoint, write_store_files};
use partgroup::train::balance::BalanceConfig;
use partgroup::train::{train_projection_head, TrainConfig};
use partgroup::views::{render_view_set, PartScene, ViewRole};
use partgroup::Exec;
use partgroup_service::{QueryResponse, ServiceConfig};

use crate::*;

pub fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(a) => run(a),
        Command::Segment(a) => segment_cmd(a),
        Command::Dedup(a) => dedup(a),
        Command::Views(a) => views(a),
        Command::Embed(a) => embed(a),
        Command::Train(a) => train(a),
        Command::Query(a) => query(a),
        Command::Rank(a) => rank(a),
        Command::Eval(a) => eval(a),
        Command::Genbench(a) => genbench(a),
        Command::Serve(a) => serve(a),
    }
}

fn load_mesh(path: &Path) -> Result<Mesh> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let name = path
        .file_stem()
        .map_or_else(|| "mesh".into(), |s| s.to_string_lossy().into_owned());
    load_obj(&bytes, &name).with_context(|| format!("loading {}", path.display()))
}

/// Writes to `out` or stdout.
fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_head(path: Option<&Path>) -> Result<Option<ProjectionHead>> {
    path.map(|p| {
        load_checkpoint(p)
            .map(|(_, h)| h)
            .with_context(|| format!("loading head {}", p.display()))
    })
    .transpose()
}

fn open_index(dir: &Path, space: &SpaceOpts) -> Result<EmbeddingIndex> {
    let head = load_head(space.head.as_deref())?;
    let art = load_artifacts(dir).with_context(|| format!("loading artifacts from {}", dir.display()))?;
    Ok(art.index(space.space, head.as_ref())?)
}

fn run(a: RunArgs) -> Result<()> {
    let mut cfg = pipeline_config(&a.view, &a.dedup, &a.embed, &a.space)?;
    cfg.save_views = a.save_views;
    cfg.rankings = a.rankings;
    let manifest = run_pipeline(&a.input, &a.out, &cfg, &BuiltinBackend)
        .with_context(|| format!("pipeline failed; manifest in {}", a.out.display()))?;
    if let Some(s) = manifest.summary {
        println!(
            "{} parts, {} exemplars, {}-d embeddings -> {}",
            s.parts,
            s.exemplars,
            s.embedding_dim,
            a.out.display()
        );
    }
    Ok(())
}

fn segment_cmd(a: SegmentArgs) -> Result<()> {
    let (mesh, parts) = segment(&load_mesh(&a.input)?);
    let snapshot = MeshSnapshot::new(&mesh, &parts);
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&snapshot)? + "\n"))
}

fn dedup(a: DedupArgs) -> Result<()> {
    let (mesh, parts) = segment(&load_mesh(&a.input)?);
    let groups = group_duplicates(&parts, &mesh, &a.dedup.tolerances(), a.dedup.exemplar(), Exec::default());
    emit(a.out.as_deref(), &(serde_json::to_string_pretty(&groups)? + "\n"))
}

fn views(a: ViewsArgs) -> Result<()> {
    let (mesh, parts) = segment(&load_mesh(&a.input)?);
    let wanted: Vec<u32> = if a.parts.is_empty() {
        parts.iter().map(|p| p.part_id).collect()
    } else {
        a.parts.clone()
    };
    if let Some(p) = wanted.iter().find(|&&p| p as usize >= parts.len()) {
        bail!("part {p} out of range (mesh has {} parts)", parts.len());
    }
    let cfg = a.view.config();
    let ps = PartScene::new(&mesh, &parts);
    let rendered = Exec::default().try_map(&wanted, |&pid| {
        let set = render_view_set(&ps, &parts[pid as usize], &cfg, Exec::Sequential)?;
        ViewRole::ALL
            .into_iter()
            .map(|r| set.get(r).png_bytes().map(|b| (r, b)))
            .collect::<partgroup::Result<Vec<_>>>()
    })?;
    for (pid, pngs) in wanted.iter().zip(rendered) {
        let dir = a.out.join(pid.to_string());
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        for (role, bytes) in pngs {
            std::fs::write(dir.join(format!("{}.png", role.as_str())), bytes)?;
        }
    }
    println!("{} parts rendered -> {}", wanted.len(), a.out.display());
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let space = SpaceOpts {
        space: partgroup::retrieve::Space::X,
        head: None,
    };
    let cfg = pipeline_config(&a.view, &a.dedup, &a.embed, &space)?;
    cfg.prepare(partgroup::encode::VIEW_FEATURE_DIM)?;
    let mut stage = "load";
    let art = process_mesh(&load_mesh(&a.input)?, &cfg, &BuiltinBackend, &mut stage)
        .with_context(|| format!("stage {stage}"))?;
    std::fs::create_dir_all(&a.out)?;
    let embeddings: Vec<_> = art.embeddings.values().cloned().collect();
    write_store_files(&a.out, &embeddings, &cfg.mask.roles())?;
    println!("{} exemplar embeddings -> {}", embeddings.len(), a.out.display());
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut meshes = Vec::new();
    for (i, path) in a.meshes.iter().enumerate() {
        let mut m = load_mesh(path)?;
        // Material keys are per mesh name, so names must be unique.
        m.name = format!("{i}:{}", m.name);
        meshes.push(m);
    }
    if a.synthetic > 0 {
        let bench = generate_synthetic_benchmark(a.synthetic_seed, &SynthSpec::standard(a.synthetic))?;
        meshes.extend(bench.meshes.into_iter().map(|m| m.mesh));
    }
    if meshes.is_empty() {
        bail!("no training meshes (pass OBJ files or --synthetic N)");
    }
    let tcfg = TrainConfig {
        temperature: a.temperature,
        learning_rate: a.lr,
        steps: a.steps,
        batch_size: a.batch_size,
        seed: a.seed,
        ..TrainConfig::default()
    };
    tcfg.validate()?;
    let pcfg = PipelineConfig {
        tolerances: a.dedup.tolerances(),
        exemplar: a.dedup.exemplar(),
        views: a.view.config(),
        ..PipelineConfig::default()
    };
    let balance = BalanceConfig {
        min_samples: a.min_samples,
        max_samples: a.max_samples,
        max_ratio: a.max_ratio,
        seed: a.seed,
    };
    let samples = training_samples(&meshes, &balance, &pcfg, &BuiltinBackend, a.extra_views)?;
    eprintln!("{} training samples from {} meshes", samples.len(), meshes.len());
    let outcome = train_projection_head(&samples, &tcfg)?;
    let config = serde_json::json!({ "train": tcfg, "balance": balance_json(&balance), "views": pcfg.views });
    save_checkpoint(&a.out, &outcome.head, a.seed, config)?;
    if let Some(log) = &a.log {
        std::fs::write(log, outcome.loss_csv()).with_context(|| format!("writing {}", log.display()))?;
    }
    if let (Some(first), Some(last)) = (outcome.losses.first(), outcome.losses.last()) {
        println!("loss {:.4} -> {:.4} over {} steps -> {}", first.1, last.1, last.0 + 1, a.out.display());
    }
    Ok(())
}

fn balance_json(b: &BalanceConfig) -> serde_json::Value {
    serde_json::json!({
        "min_samples": b.min_samples,
        "max_samples": b.max_samples,
        "max_ratio": b.max_ratio,
        "seed": b.seed,
    })
}

/// Same bytes as the service's query response for the same artifacts.
pub fn query_json(index: &EmbeddingIndex, parts: Vec<u32>, lambda: f64) -> Result<String> {
    let selected = index.select_group(&SelectionRequest {
        query_part_ids: parts,
        lambda,
    })?;
    Ok(serde_json::to_string(&QueryResponse { selected, lambda })?)
}

fn query(a: QueryArgs) -> Result<()> {
    let index = open_index(&a.index_dir, &a.space)?;
    println!("{}", query_json(&index, a.parts, a.lambda)?);
    Ok(())
}

fn rank(a: RankArgs) -> Result<()> {
    let index = open_index(&a.index_dir, &a.space)?;
    let mut csv = String::from("rank,part_id,distance\n");
    for (i, s) in index.rank_parts(a.part)?.iter().enumerate() {
        writeln!(csv, "{},{},{}", i + 1, s.part_id, s.distance)?;
    }
    emit(a.out.as_deref(), &csv)
}

fn eval(a: EvalArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.benchmark)
        .with_context(|| format!("reading {}", a.benchmark.display()))?;
    let bench = parse_benchmark(&text)?;
    let head = load_head(a.space.head.as_deref())?;
    let cfg = EvalConfig {
        val_meshes: a.val_meshes,
        space: a.space.space,
        n_thresholds: a.thresholds,
        averaging: a.averaging,
        ..EvalConfig::default()
    };
    let report = evaluate_benchmark(&bench, &a.index_dir, head.as_ref(), &cfg)?;
    let m = &report.metrics;
    println!(
        "AUC-PR {:.4}  mAP {:.4}  R-Prec {:.4}  F1 {:.4}  lambda {:.6}  ({} test / {} validation queries)",
        m.auc_pr, m.map, m.r_prec, m.f1, report.lambda, report.query_count, report.validation_query_count
    );
    if let Some(out) = &a.out {
        std::fs::write(out, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn genbench(a: GenbenchArgs) -> Result<()> {
    let synth = generate_synthetic_benchmark(a.seed, &SynthSpec::standard(a.count))?;
    std::fs::create_dir_all(&a.out)?;
    let mut entries = Vec::new();
    for m in &synth.meshes {
        let file = format!("{}.obj", m.mesh.name);
        std::fs::write(a.out.join(&file), write_mesh_obj(&m.mesh))?;
        entries.push(BenchmarkMesh {
            mesh: file,
            queries: m.queries.clone(),
        });
    }
    std::fs::write(a.out.join("benchmark.json"), serde_json::to_string_pretty(&entries)?)?;
    println!("{} meshes -> {}", entries.len(), a.out.display());
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let cfg = ServiceConfig {
        resolution: a.resolution,
        backend: a.backend,
        head: a.head,
        space: a.space,
        ..ServiceConfig::new(a.data_dir)
    };
    // Fail on a bad head or space before binding.
    cfg.pipeline_config("").prepare(partgroup::encode::VIEW_FEATURE_DIM)?;
    let addr = std::net::SocketAddr::new(a.bind, a.port);
    let rt = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    rt.block_on(partgroup_service::serve(cfg, addr))?;
    Ok(())
}
