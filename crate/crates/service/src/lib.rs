//! HTTP facade over the part-grouping pipeline.
//!
//! Meshes are uploaded as OBJ bytes and addressed by the SHA-256 of those
//! bytes. Each session runs the pipeline once in the background, persists its
//! artifacts under `<data_dir>/<mesh_id>/`, and then serves parts, geometry,
//! view images, selections and material assignments.
//!
//! Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/meshes` | body: OBJ bytes; returns `{mesh_id, status}` |
//! | GET | `/meshes/{id}` | status, part and exemplar counts |
//! | GET | `/meshes/{id}/parts` | part list |
//! | GET | `/meshes/{id}/geometry` | binary, see [`geometry`] |
//! | GET | `/meshes/{id}/parts/{pid}/views/{role}.png` | exemplar view image |
//! | POST | `/meshes/{id}/query` | `{query_part_ids, lambda}` |
//! | POST | `/meshes/{id}/assignments` | `{part_ids, material}` |
//! | GET | `/meshes/{id}/export.json`, `/meshes/{id}/export.obj` | |

pub mod api;
pub mod geometry;
pub mod session;

use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};

use partgroup::pipeline::PipelineConfig;
use partgroup::retrieve::Space;
use partgroup::views::ViewConfig;

pub use api::{router, QueryResponse};
use session::{Session, INPUT_FILE};

/// Where exemplar embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Backend {
    #[default]
    Builtin,
    /// Sidecar root. A session uses `<dir>/<mesh_id>/` when present and
    /// `<dir>` itself otherwise.
    External(PathBuf),
}

impl std::str::FromStr for Backend {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "builtin" => Ok(Backend::Builtin),
            _ => match s.strip_prefix("external:") {
                Some(dir) if !dir.is_empty() => Ok(Backend::External(dir.into())),
                _ => Err(format!("unknown backend `{s}` (expected builtin or external:<dir>)")),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub resolution: usize,
    pub backend: Backend,
    pub head: Option<PathBuf>,
    pub space: Space,
    /// Upload size limit in bytes.
    pub max_upload: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        ServiceConfig {
            data_dir: data_dir.into(),
            resolution: partgroup::raster::DEFAULT_RESOLUTION,
            backend: Backend::Builtin,
            head: None,
            space: Space::X,
            max_upload: 512 << 20,
        }
    }

    /// Pipeline settings for one session.
    pub fn pipeline_config(&self, mesh_id: &str) -> PipelineConfig {
        let external = match &self.backend {
            Backend::Builtin => None,
            Backend::External(root) => {
                let own = root.join(mesh_id);
                Some(if own.is_dir() { own } else { root.clone() })
            }
        };
        PipelineConfig {
            views: ViewConfig {
                resolution: self.resolution,
                ..ViewConfig::default()
            },
            space: self.space,
            head: self.head.clone(),
            external,
            save_views: true,
            ..PipelineConfig::default()
        }
    }
}

/// Shared state behind the router.
#[derive(Debug, Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

#[derive(Debug)]
struct Inner {
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

fn valid_id(id: &str) -> bool {
    id.len() == 64 && id.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b))
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Self {
        AppState {
            inner: Arc::new(Inner {
                cfg,
                sessions: RwLock::new(HashMap::new()),
            }),
        }
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.cfg
    }

    /// Creates the session for `bytes` unless it exists. Returns the session
    /// and whether it was newly created; a new session starts ingesting on the
    /// blocking pool.
    pub fn create(&self, bytes: &[u8]) -> std::io::Result<(Arc<Session>, bool)> {
        let id = partgroup::pipeline::sha256_hex(bytes);
        if let Some(s) = self.get_loaded(&id) {
            return Ok((s, false));
        }
        let dir = self.inner.cfg.data_dir.join(&id);
        std::fs::create_dir_all(&dir)?;
        let input = dir.join(INPUT_FILE);
        if std::fs::read(&input).ok().as_deref() != Some(bytes) {
            std::fs::write(&input, bytes)?;
        }
        Ok(self.start(id, dir))
    }

    fn get_loaded(&self, id: &str) -> Option<Arc<Session>> {
        self.inner.sessions.read().expect("session map").get(id).cloned()
    }

    fn start(&self, id: String, dir: PathBuf) -> (Arc<Session>, bool) {
        let session = {
            let mut map = self.inner.sessions.write().expect("session map");
            if let Some(s) = map.get(&id) {
                return (s.clone(), false);
            }
            let s = Arc::new(Session::new(id.clone(), dir));
            map.insert(id, s.clone());
            s
        };
        let (s, state) = (session.clone(), self.clone());
        tokio::task::spawn_blocking(move || s.ingest(&state.inner.cfg));
        (session, true)
    }

    /// Looks a session up, reopening one persisted by an earlier process.
    pub fn session(&self, id: &str) -> Option<Arc<Session>> {
        if !valid_id(id) {
            return None;
        }
        if let Some(s) = self.get_loaded(id) {
            return Some(s);
        }
        let dir = self.inner.cfg.data_dir.join(id);
        dir.join(INPUT_FILE)
            .is_file()
            .then(|| self.start(id.to_string(), dir).0)
    }
}

/// Binds `addr` and serves until the process is stopped.
pub async fn serve(cfg: ServiceConfig, addr: SocketAddr) -> std::io::Result<()> {
    std::fs::create_dir_all(&cfg.data_dir)?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(AppState::new(cfg))).await
}
