//! Per-mesh sessions: ingest, immutable query state and the assignment journal.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use partgroup::encode::BuiltinBackend;
use partgroup::mesh::{face_part_ids, PartId};
use partgroup::pipeline::{load_artifacts, run_pipeline, LoadedArtifacts, Manifest, MANIFEST_FILE};
use partgroup::retrieve::EmbeddingIndex;
use partgroup::{Error, Result};
use serde::{Deserialize, Serialize};

use crate::ServiceConfig;

pub const INPUT_FILE: &str = "input.obj";
pub const ARTIFACTS_DIR: &str = "artifacts";
pub const JOURNAL_FILE: &str = "assignments.jsonl";

#[derive(Debug, Clone)]
pub enum Status {
    Ingesting,
    Ready(Arc<Ready>),
    Failed(String),
}

impl Status {
    pub fn name(&self) -> &'static str {
        match self {
            Status::Ingesting => "ingesting",
            Status::Ready(_) => "ready",
            Status::Failed(_) => "failed",
        }
    }
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub dir: PathBuf,
    status: RwLock<Status>,
}

impl Session {
    pub fn new(id: String, dir: PathBuf) -> Self {
        Session {
            id,
            dir,
            status: RwLock::new(Status::Ingesting),
        }
    }

    pub fn status(&self) -> Status {
        self.status.read().expect("status lock").clone()
    }

    fn set_status(&self, s: Status) {
        *self.status.write().expect("status lock") = s;
    }

    pub fn artifacts_dir(&self) -> PathBuf {
        self.dir.join(ARTIFACTS_DIR)
    }

    /// Runs (or reuses) the pipeline for the stored input and publishes the
    /// outcome. Blocking.
    pub fn ingest(&self, cfg: &ServiceConfig) {
        let status = match self.build(cfg) {
            Ok(ready) => Status::Ready(Arc::new(ready)),
            Err(e) => Status::Failed(e.to_string()),
        };
        self.set_status(status);
    }

    fn build(&self, cfg: &ServiceConfig) -> Result<Ready> {
        let out = self.artifacts_dir();
        let pcfg = cfg.pipeline_config(&self.id);
        let head = pcfg.prepare(partgroup::encode::VIEW_FEATURE_DIM)?;
        if !reusable(&out, &self.id, &pcfg) {
            run_pipeline(&self.dir.join(INPUT_FILE), &out, &pcfg, &BuiltinBackend)?;
        }
        let loaded = load_artifacts(&out)?;
        let index = loaded.index(pcfg.space, head.as_ref())?;
        let journal = self.dir.join(JOURNAL_FILE);
        let assignments = replay_journal(&journal, loaded.parts.len())?;
        Ok(Ready::new(loaded, index, journal, assignments))
    }
}

/// A finished manifest for the same input and configuration.
fn reusable(out: &Path, id: &str, cfg: &partgroup::pipeline::PipelineConfig) -> bool {
    let Ok(bytes) = std::fs::read(out.join(MANIFEST_FILE)) else {
        return false;
    };
    let Ok(m) = serde_json::from_slice::<Manifest>(&bytes) else {
        return false;
    };
    m.failed_stage.is_none() && m.input_sha256 == id && &m.config == cfg
}

/// Query state of a ready session. Everything except the assignment map is
/// immutable.
#[derive(Debug)]
pub struct Ready {
    pub artifacts: LoadedArtifacts,
    pub index: EmbeddingIndex,
    pub face_part: Vec<PartId>,
    pub group_of: Vec<usize>,
    pub exemplar_of: Vec<PartId>,
    journal: PathBuf,
    assignments: Mutex<BTreeMap<PartId, String>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct JournalRecord {
    part_id: PartId,
    material: String,
    timestamp_ms: u128,
}

fn replay_journal(path: &Path, n_parts: usize) -> Result<BTreeMap<PartId, String>> {
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeMap::new()),
        Err(e) => return Err(Error::Data(format!("{}: {e}", path.display()))),
    };
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: JournalRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        if (rec.part_id as usize) < n_parts {
            map.insert(rec.part_id, rec.material);
        }
    }
    Ok(map)
}

impl Ready {
    fn new(
        artifacts: LoadedArtifacts,
        index: EmbeddingIndex,
        journal: PathBuf,
        assignments: BTreeMap<PartId, String>,
    ) -> Self {
        let n = artifacts.parts.len();
        Ready {
            face_part: face_part_ids(&artifacts.mesh, &artifacts.parts),
            group_of: artifacts.groups.group_of(n),
            exemplar_of: artifacts.groups.exemplar_of(n),
            artifacts,
            index,
            journal,
            assignments: Mutex::new(assignments),
        }
    }

    pub fn n_parts(&self) -> usize {
        self.artifacts.parts.len()
    }

    pub fn assignments(&self) -> BTreeMap<PartId, String> {
        self.assignments.lock().expect("assignment lock").clone()
    }

    /// Validates every part first, then appends one journal batch and updates
    /// the map under a single lock, so a request applies entirely or not at all.
    pub fn assign(&self, part_ids: &[PartId], material: &str) -> Result<BTreeMap<PartId, String>> {
        if let Some(p) = part_ids.iter().find(|&&p| p as usize >= self.n_parts()) {
            return Err(Error::NotFound(format!("part {p}")));
        }
        let mut map = self.assignments.lock().expect("assignment lock");
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_millis());
        let mut batch = String::new();
        for &part_id in part_ids {
            let rec = JournalRecord {
                part_id,
                material: material.to_string(),
                timestamp_ms,
            };
            batch.push_str(&serde_json::to_string(&rec)?);
            batch.push('\n');
        }
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.journal)
            .map_err(|e| Error::Data(format!("{}: {e}", self.journal.display())))?;
        file.write_all(batch.as_bytes())
            .map_err(|e| Error::Data(format!("{}: {e}", self.journal.display())))?;
        for &p in part_ids {
            map.insert(p, material.to_string());
        }
        Ok(map.clone())
    }
}
