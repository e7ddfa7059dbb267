//! Per-mesh, per-material sample balancing for contrastive training.
//!
//! Applied in order: a floor of `min_samples` per material (extra instances of
//! duplicated geometry first, then extra rendered viewpoints), a cap of
//! `max_samples` per material, then a per-mesh limit on the ratio between the
//! most and least frequent material. Materials that cannot reach two samples
//! are dropped since they can never form a positive pair.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mesh::PartId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceConfig {
    pub min_samples: usize,
    pub max_samples: usize,
    pub max_ratio: f64,
    pub seed: u64,
}

impl Default for BalanceConfig {
    fn default() -> Self {
        BalanceConfig {
            min_samples: 8,
            max_samples: 100,
            max_ratio: 5.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InventoryPart {
    pub part_id: PartId,
    pub material_id: u32,
    /// Duplicate-group index within the mesh.
    pub group: usize,
    /// Number of additional viewpoints that can be rendered for this part.
    pub extra_views: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshInventory {
    pub mesh_id: String,
    pub parts: Vec<InventoryPart>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Augmentation {
    Base,
    ExtraInstance,
    /// `k`-th additional viewpoint (k ≥ 1).
    ExtraView(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SampleRef {
    pub mesh_id: String,
    pub part_id: PartId,
    pub material_id: u32,
    pub augmentation: Augmentation,
}

/// Floor step for one material: representatives of each duplicate group, then
/// round-robin extra instances, then round-robin extra views.
fn fill_material(mesh_id: &str, parts: &[&InventoryPart], min_samples: usize) -> Vec<SampleRef> {
    let mut groups: BTreeMap<usize, Vec<&InventoryPart>> = BTreeMap::new();
    for p in parts {
        groups.entry(p.group).or_default().push(p);
    }
    let mut groups: Vec<Vec<&InventoryPart>> = groups
        .into_values()
        .map(|mut g| {
            g.sort_by_key(|p| p.part_id);
            g
        })
        .collect();
    groups.sort_by_key(|g| g[0].part_id);

    let make = |p: &InventoryPart, augmentation| SampleRef {
        mesh_id: mesh_id.to_string(),
        part_id: p.part_id,
        material_id: p.material_id,
        augmentation,
    };
    let mut out: Vec<SampleRef> = groups.iter().map(|g| make(g[0], Augmentation::Base)).collect();

    let max_instances = groups.iter().map(Vec::len).max().unwrap_or(0);
    'instances: for r in 1..max_instances {
        for g in &groups {
            if out.len() >= min_samples {
                break 'instances;
            }
            if let Some(p) = g.get(r) {
                out.push(make(p, Augmentation::ExtraInstance));
            }
        }
    }

    let max_views = groups.iter().map(|g| g[0].extra_views).max().unwrap_or(0);
    'views: for k in 1..=max_views {
        for g in &groups {
            if out.len() >= min_samples {
                break 'views;
            }
            if g[0].extra_views >= k {
                out.push(make(g[0], Augmentation::ExtraView(k)));
            }
        }
    }
    out
}

fn downsample(samples: &mut Vec<SampleRef>, keep: usize, rng: &mut ChaCha8Rng) {
    if samples.len() <= keep {
        return;
    }
    let mut chosen = sample(rng, samples.len(), keep).into_vec();
    chosen.sort_unstable();
    let kept: Vec<SampleRef> = chosen.into_iter().map(|i| samples[i].clone()).collect();
    *samples = kept;
}

pub fn balance_dataset(corpus: &[MeshInventory], cfg: &BalanceConfig) -> Vec<SampleRef> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = Vec::new();
    for mesh in corpus {
        let materials: BTreeSet<u32> = mesh.parts.iter().map(|p| p.material_id).collect();
        let mut per_material: BTreeMap<u32, Vec<SampleRef>> = BTreeMap::new();
        for m in materials {
            let parts: Vec<&InventoryPart> =
                mesh.parts.iter().filter(|p| p.material_id == m).collect();
            let samples = fill_material(&mesh.mesh_id, &parts, cfg.min_samples);
            if samples.len() >= 2 {
                per_material.insert(m, samples);
            }
        }

        for samples in per_material.values_mut() {
            downsample(samples, cfg.max_samples, &mut rng);
        }

        while let Some(min) = per_material.values().map(Vec::len).min() {
            let limit = (cfg.max_ratio * min as f64).floor() as usize;
            let mut changed = false;
            for samples in per_material.values_mut() {
                if samples.len() > limit {
                    downsample(samples, limit, &mut rng);
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        out.extend(per_material.into_values().flatten());
    }
    out
}
