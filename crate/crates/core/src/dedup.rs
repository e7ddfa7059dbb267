//! Near-duplicate part grouping with radial vertex-distance histograms.
//!
//! Each part is summarised by the distribution of its vertices' distances to
//! the part centroid, scale-normalised by the largest such distance. Two parts
//! are duplicates when their vertex counts, histograms and scales all agree
//! within tolerance. This only catches rigid (and uniformly scaled, if the
//! scale tolerance allows) copies; looser similarity is the embedding's job.

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::exec::Exec;
use crate::mesh::{Mesh, Part, PartId};

pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor {
    /// Normalised to sum 1, or all zero for a zero-extent part.
    pub histogram: Vec<f64>,
    pub vertex_count: usize,
    pub max_radial_extent: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub bins: usize,
    /// Upper bound on ℓ1 histogram distance (inclusive).
    pub histogram_l1: f64,
    /// Upper bound on relative extent difference (inclusive).
    pub scale: f64,
    /// Relative vertex-count difference must be strictly below this.
    pub vertex_count: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            bins: DEFAULT_BINS,
            histogram_l1: 1e-2,
            scale: 1e-2,
            vertex_count: 0.05,
        }
    }
}

pub fn radial_histogram(part: &Part, mesh: &Mesh, bins: usize) -> Descriptor {
    let bins = bins.max(1);
    let verts = part.vertex_ids(mesh);
    let mut histogram = vec![0.0; bins];
    let extent = part.max_radial_extent;
    if extent > 0.0 && !verts.is_empty() {
        let weight = 1.0 / verts.len() as f64;
        for &v in &verts {
            let t = mesh.vertices[v as usize].distance(part.centroid) / extent;
            let bin = ((t * bins as f64) as usize).min(bins - 1);
            histogram[bin] += weight;
        }
    }
    Descriptor {
        histogram,
        vertex_count: verts.len(),
        max_radial_extent: extent,
    }
}

/// |a − b| / max(a, b); zero when both are zero.
fn relative_difference(a: f64, b: f64) -> f64 {
    let m = a.abs().max(b.abs());
    if m == 0.0 {
        0.0
    } else {
        (a - b).abs() / m
    }
}

pub fn is_duplicate(a: &Descriptor, b: &Descriptor, tol: &Tolerances) -> bool {
    if a.histogram.len() != b.histogram.len() {
        return false;
    }
    let count_diff = relative_difference(a.vertex_count as f64, b.vertex_count as f64);
    if count_diff >= tol.vertex_count {
        return false;
    }
    if relative_difference(a.max_radial_extent, b.max_radial_extent) > tol.scale {
        return false;
    }
    let l1: f64 = a
        .histogram
        .iter()
        .zip(&b.histogram)
        .map(|(x, y)| (x - y).abs())
        .sum();
    l1 <= tol.histogram_l1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateGroup {
    pub exemplar: PartId,
    /// Sorted ascending, includes the exemplar.
    pub members: Vec<PartId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DuplicateGroups {
    pub groups: Vec<DuplicateGroup>,
}

impl DuplicateGroups {
    /// Every part in its own group.
    pub fn singletons(parts: &[Part]) -> Self {
        DuplicateGroups {
            groups: parts
                .iter()
                .map(|p| DuplicateGroup {
                    exemplar: p.part_id,
                    members: vec![p.part_id],
                })
                .collect(),
        }
    }

    /// Group index for every part id in `0..n_parts`.
    pub fn group_of(&self, n_parts: usize) -> Vec<usize> {
        let mut out = vec![usize::MAX; n_parts];
        for (g, group) in self.groups.iter().enumerate() {
            for &m in &group.members {
                out[m as usize] = g;
            }
        }
        out
    }

    /// Exemplar part id for every part id in `0..n_parts`.
    pub fn exemplar_of(&self, n_parts: usize) -> Vec<PartId> {
        let mut out = vec![PartId::MAX; n_parts];
        for group in &self.groups {
            for &m in &group.members {
                out[m as usize] = group.exemplar;
            }
        }
        out
    }

    pub fn exemplars(&self) -> Vec<PartId> {
        self.groups.iter().map(|g| g.exemplar).collect()
    }
}

/// How the exemplar of each group is chosen once grouping is done.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum ExemplarChoice {
    #[default]
    Lowest,
    Seeded(u64),
}

pub fn descriptors(parts: &[Part], mesh: &Mesh, bins: usize, exec: Exec) -> Vec<Descriptor> {
    exec.map(parts, |p| radial_histogram(p, mesh, bins))
}

/// Greedy exemplar grouping: parts are visited by ascending id and join the
/// first existing group whose exemplar they duplicate, otherwise they found a
/// new group. Matching always uses the lowest-id member as exemplar;
/// [`ExemplarChoice::Seeded`] only relabels the exemplar afterwards.
pub fn group_duplicates(
    parts: &[Part],
    mesh: &Mesh,
    tol: &Tolerances,
    choice: ExemplarChoice,
    exec: Exec,
) -> DuplicateGroups {
    let descs = descriptors(parts, mesh, tol.bins, exec);
    group_descriptors(parts, &descs, tol, choice)
}

pub fn group_descriptors(
    parts: &[Part],
    descs: &[Descriptor],
    tol: &Tolerances,
    choice: ExemplarChoice,
) -> DuplicateGroups {
    let mut order: Vec<usize> = (0..parts.len()).collect();
    order.sort_by_key(|&i| parts[i].part_id);

    // (exemplar index into parts, members)
    let mut groups: Vec<(usize, Vec<PartId>)> = Vec::new();
    for i in order {
        match groups
            .iter_mut()
            .find(|(ex, _)| is_duplicate(&descs[*ex], &descs[i], tol))
        {
            Some((_, members)) => members.push(parts[i].part_id),
            None => groups.push((i, vec![parts[i].part_id])),
        }
    }

    let mut rng = match choice {
        ExemplarChoice::Seeded(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        ExemplarChoice::Lowest => None,
    };
    DuplicateGroups {
        groups: groups
            .into_iter()
            .map(|(ex, members)| {
                let exemplar = match rng.as_mut() {
                    Some(rng) => *members.choose(rng).expect("nonempty group"),
                    None => parts[ex].part_id,
                };
                DuplicateGroup { exemplar, members }
            })
            .collect(),
    }
}
