//! Part retrieval by ℓ1 embedding distance: rankings and threshold
//! selections with duplicate-group sharing and multi-query union.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dedup::DuplicateGroups;
use crate::error::{Error, Result};
use crate::mesh::PartId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Space {
    /// Concatenated view features.
    #[default]
    X,
    /// Unit-norm projection-head output.
    Z,
}

impl std::str::FromStr for Space {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "x" => Ok(Space::X),
            "z" => Ok(Space::Z),
            other => Err(Error::Config(format!("unknown space `{other}` (expected x or z)"))),
        }
    }
}

/// Sum of absolute differences, accumulated in f64.
pub fn l1_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - y as f64).abs())
        .sum())
}

/// Negative ℓ1 distance.
pub fn similarity(a: &[f32], b: &[f32]) -> Result<f64> {
    l1_distance(a, b).map(|d| -d)
}

/// Immutable per-mesh index: one vector per duplicate group.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    pub mesh_id: String,
    pub space: Space,
    pub groups: DuplicateGroups,
    group_of: Vec<usize>,
    vectors: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub part_id: PartId,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRequest {
    pub query_part_ids: Vec<PartId>,
    pub lambda: f64,
}

impl EmbeddingIndex {
    /// `embeddings` must hold a vector for every group exemplar.
    pub fn build(
        mesh_id: impl Into<String>,
        space: Space,
        groups: DuplicateGroups,
        n_parts: usize,
        embeddings: &BTreeMap<PartId, Vec<f32>>,
    ) -> Result<Self> {
        let group_of = groups.group_of(n_parts);
        if let Some(p) = group_of.iter().position(|&g| g == usize::MAX) {
            return Err(Error::Data(format!("part {p} belongs to no duplicate group")));
        }
        let mut vectors = Vec::with_capacity(groups.groups.len());
        let mut dim = None;
        for g in &groups.groups {
            let v = embeddings.get(&g.exemplar).ok_or_else(|| {
                Error::Data(format!("no embedding for exemplar part {}", g.exemplar))
            })?;
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => {
                    return Err(Error::Dimension {
                        expected: d,
                        actual: v.len(),
                    })
                }
                _ => {}
            }
            vectors.push(v.clone());
        }
        Ok(EmbeddingIndex {
            mesh_id: mesh_id.into(),
            space,
            groups,
            group_of,
            vectors,
        })
    }

    pub fn n_parts(&self) -> usize {
        self.group_of.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }

    fn group(&self, part: PartId) -> Result<usize> {
        self.group_of
            .get(part as usize)
            .copied()
            .ok_or_else(|| Error::NotFound(format!("part {part} in mesh {}", self.mesh_id)))
    }

    /// The vector shared by `part`'s duplicate group.
    pub fn vector(&self, part: PartId) -> Result<&[f32]> {
        Ok(&self.vectors[self.group(part)?])
    }

    fn group_distances(&self, query_group: usize) -> Vec<f64> {
        let q = &self.vectors[query_group];
        self.vectors
            .iter()
            .map(|v| l1_distance(q, v).expect("uniform dimension"))
            .collect()
    }

    /// Every other part by ascending distance to `query` (ties by part id).
    pub fn rank_parts(&self, query: PartId) -> Result<Vec<Scored>> {
        let qg = self.group(query)?;
        let by_group = self.group_distances(qg);
        let mut out: Vec<Scored> = (0..self.n_parts() as PartId)
            .filter(|&p| p != query)
            .map(|p| Scored {
                part_id: p,
                distance: by_group[self.group_of[p as usize]],
            })
            .collect();
        out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.part_id.cmp(&b.part_id)));
        Ok(out)
    }

    /// Parts whose minimum distance to any query is ≤ λ, queries included.
    /// Sorted by distance, then part id.
    pub fn select_group(&self, req: &SelectionRequest) -> Result<Vec<Scored>> {
        if req.query_part_ids.is_empty() {
            return Err(Error::Request("at least one query part is required".into()));
        }
        if !(req.lambda >= 0.0) {
            return Err(Error::Request(format!("lambda must be nonnegative, got {}", req.lambda)));
        }
        let query_groups: BTreeSet<usize> = req
            .query_part_ids
            .iter()
            .map(|&q| self.group(q))
            .collect::<Result<_>>()?;
        let queries: BTreeSet<PartId> = req.query_part_ids.iter().copied().collect();

        let mut best = vec![f64::INFINITY; self.vectors.len()];
        for qg in query_groups {
            for (g, d) in self.group_distances(qg).into_iter().enumerate() {
                best[g] = best[g].min(d);
            }
        }
        let mut out: Vec<Scored> = (0..self.n_parts() as PartId)
            .filter_map(|p| {
                let distance = if queries.contains(&p) {
                    0.0
                } else {
                    best[self.group_of[p as usize]]
                };
                (distance <= req.lambda).then_some(Scored { part_id: p, distance })
            })
            .collect();
        out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.part_id.cmp(&b.part_id)));
        Ok(out)
    }
}
