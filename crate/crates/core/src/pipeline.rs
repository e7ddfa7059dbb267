//! End-to-end processing of one mesh and its on-disk artifact layout.
//!
//! Layout of an output directory:
//! `mesh.json`, `groups.json`, `embeddings.json` + `embeddings.bin`,
//! optional `views/{part}/{role}.png` and `rankings.json`, and `manifest.json`
//! with a SHA-256 of every other file.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dedup::{group_duplicates, DuplicateGroups, ExemplarChoice, Tolerances};
use crate::encode::{embed_part, project, FeatureBackend, PartEmbedding, ProjectionHead, ViewMask};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, BenchmarkMesh, MetricsReport, PrAveraging, QueryResult,
};
use crate::exec::Exec;
use crate::mesh::{segment, Mesh, MeshSnapshot, Part, PartId};
use crate::obj::load_obj;
use crate::retrieve::{EmbeddingIndex, Scored, Space};
use crate::store::{
    load_checkpoint, read_file, write_file, write_store_files, EmbeddingIndexFile, BLOB_FILE,
    INDEX_FILE,
};
use crate::train::balance::{balance_dataset, Augmentation, BalanceConfig, InventoryPart, MeshInventory};
use crate::train::{MaterialKey, TrainSample};
use crate::views::{render_from_selection, select_context_view, PartScene, ViewConfig, ViewRole};

pub const MESH_FILE: &str = "mesh.json";
pub const GROUPS_FILE: &str = "groups.json";
pub const RANKINGS_FILE: &str = "rankings.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const VIEWS_DIR: &str = "views";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub tolerances: Tolerances,
    pub exemplar: ExemplarChoice,
    pub views: ViewConfig,
    pub mask: ViewMask,
    pub space: Space,
    /// Projection-head checkpoint; required for [`Space::Z`].
    pub head: Option<PathBuf>,
    /// Directory holding a precomputed `embeddings.json` + `embeddings.bin`.
    pub external: Option<PathBuf>,
    pub save_views: bool,
    pub rankings: bool,
    #[serde(skip)]
    pub exec: Exec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            tolerances: Tolerances::default(),
            exemplar: ExemplarChoice::default(),
            views: ViewConfig::default(),
            mask: ViewMask::default(),
            space: Space::X,
            head: None,
            external: None,
            save_views: false,
            rankings: false,
            exec: Exec::default(),
        }
    }
}

impl PipelineConfig {
    /// Checks everything that can be checked before any rendering, and loads
    /// the head checkpoint if one is configured.
    pub fn prepare(&self, backend_dim: usize) -> Result<Option<ProjectionHead>> {
        let roles = self.mask.roles();
        if roles.is_empty() {
            return Err(Error::Config("at least one view must be enabled".into()));
        }
        if self.views.candidates == 0 || self.views.resolution == 0 {
            return Err(Error::Config("view candidates and resolution must be positive".into()));
        }
        let head = match &self.head {
            Some(path) => Some(load_checkpoint(path)?.1),
            None => None,
        };
        if self.space == Space::Z && head.is_none() {
            return Err(Error::Config("space z needs a projection-head checkpoint".into()));
        }
        if let Some(h) = &head {
            let expected = roles.len() * backend_dim;
            if h.input_dim() != expected {
                return Err(Error::Dimension {
                    expected,
                    actual: h.input_dim(),
                });
            }
        }
        Ok(head)
    }
}

/// Everything computed for one mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshArtifacts {
    pub mesh: Mesh,
    pub parts: Vec<Part>,
    pub groups: DuplicateGroups,
    /// One embedding per group exemplar.
    pub embeddings: BTreeMap<PartId, PartEmbedding>,
    /// PNG bytes per exemplar and role, when views are kept.
    pub view_pngs: BTreeMap<PartId, Vec<(ViewRole, Vec<u8>)>>,
    pub zoom_levels: BTreeMap<PartId, u32>,
}

impl MeshArtifacts {
    pub fn index(&self, space: Space, head: Option<&ProjectionHead>) -> Result<EmbeddingIndex> {
        build_index(&self.mesh.name, &self.parts, &self.groups, &self.embeddings, space, head)
    }
}

pub fn build_index(
    mesh_id: &str,
    parts: &[Part],
    groups: &DuplicateGroups,
    embeddings: &BTreeMap<PartId, PartEmbedding>,
    space: Space,
    head: Option<&ProjectionHead>,
) -> Result<EmbeddingIndex> {
    let vectors: BTreeMap<PartId, Vec<f32>> = match space {
        Space::X => embeddings.iter().map(|(&p, e)| (p, e.x.clone())).collect(),
        Space::Z => {
            let head = head
                .ok_or_else(|| Error::Config("space z needs a projection-head checkpoint".into()))?;
            embeddings
                .iter()
                .map(|(&p, e)| {
                    project(e, head).map(|z| (p, z.z.iter().map(|&v| v as f32).collect()))
                })
                .collect::<Result<_>>()?
        }
    };
    EmbeddingIndex::build(mesh_id, space, groups.clone(), parts.len(), &vectors)
}

/// Stage names, in execution order.
pub const STAGES: [&str; 6] = ["load", "segment", "dedup", "views", "index", "write"];

struct ExemplarOutput {
    embedding: PartEmbedding,
    pngs: Vec<(ViewRole, Vec<u8>)>,
    zoom: u32,
}

/// Renders and embeds every exemplar; parallel over exemplars.
pub fn embed_exemplars(
    mesh: &Mesh,
    parts: &[Part],
    groups: &DuplicateGroups,
    cfg: &PipelineConfig,
    backend: &dyn FeatureBackend,
) -> Result<(BTreeMap<PartId, PartEmbedding>, BTreeMap<PartId, Vec<(ViewRole, Vec<u8>)>>, BTreeMap<PartId, u32>)> {
    let ps = PartScene::new(mesh, parts);
    let exemplars = groups.exemplars();
    let outputs = cfg.exec.try_map(&exemplars, |&pid| -> Result<ExemplarOutput> {
        let part = &parts[pid as usize];
        let selection = select_context_view(&ps, part, &cfg.views, Exec::Sequential)?;
        let views = render_from_selection(&ps, part, &cfg.views, &selection, 0)?;
        let embedding = embed_part(pid, &views, backend, cfg.mask)?;
        let pngs = if cfg.save_views {
            ViewRole::ALL
                .into_iter()
                .map(|r| views.get(r).png_bytes().map(|b| (r, b)))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(ExemplarOutput {
            embedding,
            pngs,
            zoom: selection.zoom_level,
        })
    })?;
    let mut embeddings = BTreeMap::new();
    let mut pngs = BTreeMap::new();
    let mut zooms = BTreeMap::new();
    for (pid, out) in exemplars.into_iter().zip(outputs) {
        embeddings.insert(pid, out.embedding);
        if !out.pngs.is_empty() {
            pngs.insert(pid, out.pngs);
        }
        zooms.insert(pid, out.zoom);
    }
    Ok((embeddings, pngs, zooms))
}

/// Runs segmentation, dedup and embedding on an in-memory mesh. `stage` is
/// updated as work progresses so callers can report where a failure happened.
pub fn process_mesh(
    mesh: &Mesh,
    cfg: &PipelineConfig,
    backend: &dyn FeatureBackend,
    stage: &mut &'static str,
) -> Result<MeshArtifacts> {
    *stage = "segment";
    mesh.validate()?;
    let (mesh, parts) = segment(mesh);
    *stage = "dedup";
    let groups = group_duplicates(&parts, &mesh, &cfg.tolerances, cfg.exemplar, cfg.exec);
    *stage = "views";
    let (embeddings, view_pngs, zoom_levels) = match &cfg.external {
        Some(dir) => {
            let ext = read_external(dir, &cfg.mask.roles())?;
            let missing: Vec<PartId> = groups
                .exemplars()
                .into_iter()
                .filter(|p| !ext.contains_key(p))
                .collect();
            if !missing.is_empty() {
                return Err(Error::Data(format!(
                    "external embeddings missing for parts {missing:?}"
                )));
            }
            (ext, BTreeMap::new(), BTreeMap::new())
        }
        None => embed_exemplars(&mesh, &parts, &groups, cfg, backend)?,
    };
    Ok(MeshArtifacts {
        mesh,
        parts,
        groups,
        embeddings,
        view_pngs,
        zoom_levels,
    })
}

fn read_external(dir: &Path, roles: &[ViewRole]) -> Result<BTreeMap<PartId, PartEmbedding>> {
    let index: EmbeddingIndexFile = serde_json::from_slice(&read_file(&dir.join(INDEX_FILE))?)?;
    crate::store::decode_embedding_store(&index, &read_file(&dir.join(BLOB_FILE))?, roles)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingFile {
    pub space: Space,
    pub rankings: Vec<PartRanking>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartRanking {
    pub query: PartId,
    pub ranked: Vec<Scored>,
}

pub fn all_rankings(index: &EmbeddingIndex, exec: Exec) -> Result<RankingFile> {
    let ids: Vec<PartId> = (0..index.n_parts() as PartId).collect();
    let rankings = exec.try_map(&ids, |&q| {
        index.rank_parts(q).map(|ranked| PartRanking { query: q, ranked })
    })?;
    Ok(RankingFile {
        space: index.space,
        rankings,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub input: String,
    pub input_sha256: String,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    pub failed_stage: Option<String>,
    pub error: Option<String>,
    pub summary: Option<ManifestSummary>,
    /// Relative path → SHA-256 hex.
    pub files: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestSummary {
    pub parts: usize,
    pub exemplars: usize,
    pub embedding_dim: usize,
    pub embedding_bytes: usize,
}

impl ManifestSummary {
    fn new(art: &MeshArtifacts) -> Self {
        let embedding_dim = art.embeddings.values().next().map_or(0, |e| e.x.len());
        ManifestSummary {
            parts: art.parts.len(),
            exemplars: art.groups.groups.len(),
            embedding_dim,
            embedding_bytes: art.embeddings.len() * embedding_dim * 4,
        }
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn stage_records(done_until: &str, failed: bool) -> Vec<StageRecord> {
    let mut out = Vec::new();
    for s in STAGES {
        if s == done_until {
            out.push(StageRecord {
                name: s.into(),
                status: if failed { "failed" } else { "ok" }.into(),
            });
            break;
        }
        out.push(StageRecord {
            name: s.into(),
            status: "ok".into(),
        });
    }
    out
}

struct Writer<'a> {
    root: &'a Path,
    files: BTreeMap<String, String>,
}

impl Writer<'_> {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_file(&path, bytes)?;
        self.files.insert(rel.to_string(), sha256_hex(bytes));
        Ok(())
    }
}

/// Writes all artifacts except the manifest; returns the file hashes.
pub fn write_artifacts(
    out_dir: &Path,
    art: &MeshArtifacts,
    cfg: &PipelineConfig,
    head: Option<&ProjectionHead>,
) -> Result<BTreeMap<String, String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut w = Writer {
        root: out_dir,
        files: BTreeMap::new(),
    };
    let snapshot = MeshSnapshot::new(&art.mesh, &art.parts);
    w.put(MESH_FILE, &serde_json::to_vec(&snapshot)?)?;
    w.put(GROUPS_FILE, &serde_json::to_vec_pretty(&art.groups)?)?;

    let embeddings: Vec<PartEmbedding> = art.embeddings.values().cloned().collect();
    let roles = cfg.mask.roles();
    write_store_files(out_dir, &embeddings, &roles)?;
    for name in [INDEX_FILE, BLOB_FILE] {
        let bytes = read_file(&out_dir.join(name))?;
        w.files.insert(name.to_string(), sha256_hex(&bytes));
    }

    for (pid, pngs) in &art.view_pngs {
        for (role, bytes) in pngs {
            w.put(&format!("{VIEWS_DIR}/{pid}/{}.png", role.as_str()), bytes)?;
        }
    }
    if cfg.rankings {
        let index = art.index(cfg.space, head)?;
        let rankings = all_rankings(&index, cfg.exec)?;
        w.put(RANKINGS_FILE, &serde_json::to_vec(&rankings)?)?;
    }
    Ok(w.files)
}

/// Full pipeline from an OBJ file to an artifact directory. A manifest is
/// written even on failure, naming the failed stage.
pub fn run_pipeline(
    input: &Path,
    out_dir: &Path,
    cfg: &PipelineConfig,
    backend: &dyn FeatureBackend,
) -> Result<Manifest> {
    let mut stage: &'static str = "load";
    let input_name = input
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut input_sha = String::new();
    let mut summary = None;
    let result = (|| -> Result<BTreeMap<String, String>> {
        let head = cfg.prepare(backend.dim())?;
        let bytes = read_file(input)?;
        input_sha = sha256_hex(&bytes);
        let stem = input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "mesh".into());
        let mesh = load_obj(&bytes, &stem)?;
        let art = process_mesh(&mesh, cfg, backend, &mut stage)?;
        summary = Some(ManifestSummary::new(&art));
        stage = "index";
        if cfg.space == Space::Z {
            art.index(Space::Z, head.as_ref())?;
        }
        stage = "write";
        write_artifacts(out_dir, &art, cfg, head.as_ref())
    })();
    let (files, failed, error) = match &result {
        Ok(files) => (files.clone(), false, None),
        Err(e) => (BTreeMap::new(), true, Some(e.to_string())),
    };
    let manifest = Manifest {
        format: "partgroup-manifest-v1".into(),
        input: input_name,
        input_sha256: input_sha,
        config: cfg.clone(),
        stages: stage_records(if failed { stage } else { "write" }, failed),
        failed_stage: failed.then(|| stage.to_string()),
        error,
        summary,
        files,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join(MANIFEST_FILE), &serde_json::to_vec_pretty(&manifest)?)?;
    result.map(|_| manifest)
}

/// Artifacts read back from an output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedArtifacts {
    pub mesh: Mesh,
    pub parts: Vec<Part>,
    pub groups: DuplicateGroups,
    pub embeddings: BTreeMap<PartId, PartEmbedding>,
}

impl LoadedArtifacts {
    pub fn index(&self, space: Space, head: Option<&ProjectionHead>) -> Result<EmbeddingIndex> {
        build_index(&self.mesh.name, &self.parts, &self.groups, &self.embeddings, space, head)
    }
}

pub fn load_artifacts(dir: &Path) -> Result<LoadedArtifacts> {
    let snapshot: MeshSnapshot = serde_json::from_slice(&read_file(&dir.join(MESH_FILE))?)?;
    let (mesh, parts) = snapshot.into_mesh()?;
    let groups: DuplicateGroups = serde_json::from_slice(&read_file(&dir.join(GROUPS_FILE))?)?;
    let index: EmbeddingIndexFile = serde_json::from_slice(&read_file(&dir.join(INDEX_FILE))?)?;
    let present: BTreeSet<ViewRole> = index.order.iter().map(|e| e.view).collect();
    let roles: Vec<ViewRole> = ViewRole::ALL
        .into_iter()
        .filter(|r| present.contains(r))
        .collect();
    let embeddings =
        crate::store::decode_embedding_store(&index, &read_file(&dir.join(BLOB_FILE))?, &roles)?;
    Ok(LoadedArtifacts {
        mesh,
        parts,
        groups,
        embeddings,
    })
}

/// Directory holding the artifacts of benchmark mesh `mesh` (named by the
/// file stem of its path).
pub fn artifact_dir(index_dir: &Path, mesh: &str) -> PathBuf {
    let stem = Path::new(mesh)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| mesh.to_string());
    index_dir.join(stem)
}

/// Query results for every benchmark query against one index.
pub fn query_results(entry: &BenchmarkMesh, index: &EmbeddingIndex) -> Result<Vec<QueryResult>> {
    entry
        .queries
        .iter()
        .map(|q| {
            q.validate(index.n_parts())?;
            Ok(QueryResult {
                mesh: entry.mesh.clone(),
                query_part: q.query_part,
                ranking: index.rank_parts(q.query_part)?,
                positives: q.positive_set(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct EvalConfig {
    pub val_meshes: usize,
    pub space: Space,
    pub n_thresholds: usize,
    pub averaging: PrAveraging,
    pub exec: Exec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            val_meshes: 5,
            space: Space::X,
            n_thresholds: crate::eval::DEFAULT_THRESHOLDS,
            averaging: PrAveraging::Macro,
            exec: Exec::default(),
        }
    }
}

/// First `val_meshes` benchmark entries select λ, the rest are reported.
pub fn evaluate_benchmark(
    bench: &[BenchmarkMesh],
    index_dir: &Path,
    head: Option<&ProjectionHead>,
    cfg: &EvalConfig,
) -> Result<MetricsReport> {
    if cfg.val_meshes >= bench.len() {
        return Err(Error::Config(format!(
            "{} validation meshes leave no test meshes out of {}",
            cfg.val_meshes,
            bench.len()
        )));
    }
    let per_mesh = cfg.exec.try_map(bench, |entry| {
        let art = load_artifacts(&artifact_dir(index_dir, &entry.mesh))?;
        let index = art.index(cfg.space, head)?;
        query_results(entry, &index)
    })?;
    let validation: Vec<QueryResult> = per_mesh[..cfg.val_meshes].iter().flatten().cloned().collect();
    let test: Vec<QueryResult> = per_mesh[cfg.val_meshes..].iter().flatten().cloned().collect();
    evaluate(&test, &validation, cfg.n_thresholds, cfg.averaging, cfg.exec)
}

/// Builds balanced contrastive training samples from segmented meshes. Each
/// mesh's name is its identity for material keys. `extra_views` caps the
/// number of additional viewpoints per part.
pub fn training_samples(
    meshes: &[Mesh],
    balance: &BalanceConfig,
    cfg: &PipelineConfig,
    backend: &dyn FeatureBackend,
    extra_views: usize,
) -> Result<Vec<TrainSample>> {
    let extra = extra_views.min(cfg.views.candidates.saturating_sub(1));
    let prepared: Vec<(Mesh, Vec<Part>, DuplicateGroups)> = meshes
        .iter()
        .map(|m| {
            let (mesh, parts) = segment(m);
            let groups = group_duplicates(&parts, &mesh, &cfg.tolerances, cfg.exemplar, cfg.exec);
            (mesh, parts, groups)
        })
        .collect();
    let corpus: Vec<MeshInventory> = prepared
        .iter()
        .map(|(mesh, parts, groups)| {
            let group_of = groups.group_of(parts.len());
            MeshInventory {
                mesh_id: mesh.name.clone(),
                parts: parts
                    .iter()
                    .map(|p| InventoryPart {
                        part_id: p.part_id,
                        material_id: p.material_id,
                        group: group_of[p.part_id as usize],
                        extra_views: extra,
                    })
                    .collect(),
            }
        })
        .collect();
    let refs = balance_dataset(&corpus, balance);

    let mut samples = Vec::with_capacity(refs.len());
    for (mesh, parts, _) in &prepared {
        let ps = PartScene::new(mesh, parts);
        let mut wanted: BTreeMap<PartId, Vec<(usize, Augmentation, u32)>> = BTreeMap::new();
        for (i, r) in refs.iter().enumerate().filter(|(_, r)| r.mesh_id == mesh.name) {
            wanted.entry(r.part_id).or_default().push((i, r.augmentation, r.material_id));
        }
        let work: Vec<(PartId, Vec<(usize, Augmentation, u32)>)> = wanted.into_iter().collect();
        let rendered = cfg.exec.try_map(&work, |(pid, items)| {
            let part = &parts[*pid as usize];
            let selection = select_context_view(&ps, part, &cfg.views, Exec::Sequential)?;
            items
                .iter()
                .map(|&(i, aug, material_id)| {
                    let rank = match aug {
                        Augmentation::ExtraView(k) => k,
                        _ => 0,
                    };
                    let views = render_from_selection(&ps, part, &cfg.views, &selection, rank)?;
                    let e = embed_part(*pid, &views, backend, cfg.mask)?;
                    Ok((
                        i,
                        TrainSample {
                            key: MaterialKey {
                                mesh_id: mesh.name.clone(),
                                material_id,
                            },
                            part_id: *pid,
                            augmentation: aug,
                            x: e.x,
                        },
                    ))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        samples.extend(rendered.into_iter().flatten());
    }
    samples.sort_by_key(|(i, _)| *i);
    Ok(samples.into_iter().map(|(_, s)| s).collect())
}
