//! Material-aware part grouping for untextured, pre-segmented triangle meshes.
//!
//! A mesh is split into parts (connected components), near-identical parts are
//! collapsed into duplicate groups, every group exemplar is rendered from three
//! canonical views and embedded, and retrieval ranks the remaining parts of the
//! mesh against one or more clicked query parts by ℓ1 embedding distance.
//!
//! The crate is organised bottom-up:
//!
//! - [`mesh`] / [`obj`]: geometry ingest, vertex merging, segmentation.
//! - [`dedup`]: radial-histogram duplicate grouping.
//! - [`raster`] / [`views`]: deterministic software rendering and view selection.
//! - [`encode`] / [`store`]: part features, projection head, on-disk formats.
//! - [`train`]: supervised contrastive training of the projection head.
//! - [`retrieve`]: ranking and threshold selection.
//! - [`eval`]: retrieval metrics, PR curves and a synthetic benchmark.
//! - [`pipeline`]: the end-to-end artifact writer used by the CLI and service.

pub mod dedup;
pub mod encode;
pub mod error;
pub mod eval;
pub mod exec;
pub mod geom;
pub mod mesh;
pub mod obj;
pub mod pipeline;
pub mod raster;
pub mod retrieve;
pub mod store;
pub mod train;
pub mod views;

pub use error::{Error, Result};
pub use exec::Exec;
pub use geom::Vec3;
pub use mesh::{Mesh, Part};
