//! Part embeddings: per-view features, concatenation, and the projection head.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::PartId;
use crate::raster::FrameBuffer;
use crate::views::{ViewRole, ViewSet};

pub const VIEW_FEATURE_DIM: usize = 384;
pub const EMBEDDING_DIM: usize = 3 * VIEW_FEATURE_DIM;
pub const HIDDEN_DIM: usize = 512;
pub const PROJECTED_DIM: usize = 128;

const OCC_GRID: usize = 16;
const COARSE_GRID: usize = 8;

/// Turns one rendered view into a fixed-length feature vector.
pub trait FeatureBackend: Sync {
    fn dim(&self) -> usize;
    fn extract(&self, fb: &FrameBuffer, role: ViewRole) -> Vec<f32>;
}

/// Coarse-grid silhouette, depth and shading statistics of the highlighted
/// part: 16×16 occupancy, 8×8 mean normalised depth, 8×8 mean intensity.
#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinBackend;

impl FeatureBackend for BuiltinBackend {
    fn dim(&self) -> usize {
        VIEW_FEATURE_DIM
    }

    fn extract(&self, fb: &FrameBuffer, _role: ViewRole) -> Vec<f32> {
        extract_view_feature(fb)
    }
}

fn cell_of(i: usize, n: usize, cells: usize) -> usize {
    (i * cells / n).min(cells - 1)
}

pub fn extract_view_feature(fb: &FrameBuffer) -> Vec<f32> {
    let mut out = vec![0f32; VIEW_FEATURE_DIM];
    let is_part = |p: i32| match fb.highlight {
        Some(h) => p == h as i32,
        None => p >= 0,
    };

    let (mut dmin, mut dmax) = (f64::INFINITY, f64::NEG_INFINITY);
    let mut any = false;
    for (i, &p) in fb.part_id.iter().enumerate() {
        if is_part(p) {
            any = true;
            let d = fb.depth[i] as f64;
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
    }
    if !any {
        return out;
    }
    let span = dmax - dmin;

    let mut occ = vec![0usize; OCC_GRID * OCC_GRID];
    let mut occ_total = vec![0usize; OCC_GRID * OCC_GRID];
    let mut depth_sum = vec![0f64; COARSE_GRID * COARSE_GRID];
    let mut shade_sum = vec![0f64; COARSE_GRID * COARSE_GRID];
    let mut coarse_n = vec![0usize; COARSE_GRID * COARSE_GRID];
    for y in 0..fb.height {
        let oy = cell_of(y, fb.height, OCC_GRID);
        let cy = cell_of(y, fb.height, COARSE_GRID);
        for x in 0..fb.width {
            let i = y * fb.width + x;
            let oc = oy * OCC_GRID + cell_of(x, fb.width, OCC_GRID);
            occ_total[oc] += 1;
            if !is_part(fb.part_id[i]) {
                continue;
            }
            occ[oc] += 1;
            let cc = cy * COARSE_GRID + cell_of(x, fb.width, COARSE_GRID);
            let nd = if span > 0.0 {
                (fb.depth[i] as f64 - dmin) / span
            } else {
                0.0
            };
            let [r, g, b] = fb.color[i];
            depth_sum[cc] += nd;
            shade_sum[cc] += (r as f64 + g as f64 + b as f64) / 765.0;
            coarse_n[cc] += 1;
        }
    }
    for c in 0..OCC_GRID * OCC_GRID {
        if occ_total[c] > 0 {
            out[c] = (occ[c] as f64 / occ_total[c] as f64) as f32;
        }
    }
    let base_d = OCC_GRID * OCC_GRID;
    let base_s = base_d + COARSE_GRID * COARSE_GRID;
    for c in 0..COARSE_GRID * COARSE_GRID {
        if coarse_n[c] > 0 {
            out[base_d + c] = (depth_sum[c] / coarse_n[c] as f64) as f32;
            out[base_s + c] = (shade_sum[c] / coarse_n[c] as f64) as f32;
        }
    }
    out
}

/// Which views go into the concatenated embedding, in fixed
/// (isolated, context, full) order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViewMask {
    pub isolated: bool,
    pub context: bool,
    pub full: bool,
}

impl Default for ViewMask {
    fn default() -> Self {
        ViewMask {
            isolated: true,
            context: true,
            full: true,
        }
    }
}

impl ViewMask {
    pub fn roles(&self) -> Vec<ViewRole> {
        ViewRole::ALL
            .into_iter()
            .filter(|r| match r {
                ViewRole::Isolated => self.isolated,
                ViewRole::Context => self.context,
                ViewRole::Full => self.full,
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartEmbedding {
    pub part_id: PartId,
    pub x: Vec<f32>,
}

pub fn embed_part(
    part_id: PartId,
    views: &ViewSet,
    backend: &dyn FeatureBackend,
    mask: ViewMask,
) -> Result<PartEmbedding> {
    let roles = mask.roles();
    let mut x = Vec::with_capacity(roles.len() * backend.dim());
    for role in roles {
        let f = backend.extract(views.get(role), role);
        if f.len() != backend.dim() {
            return Err(Error::Config(format!(
                "backend declared dim {} but produced {} for the {} view",
                backend.dim(),
                f.len(),
                role.as_str()
            )));
        }
        x.extend(f);
    }
    Ok(PartEmbedding { part_id, x })
}

/// Two-layer MLP with ReLU: `u = W2·relu(W1·x + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ProjectionHead {
    /// Uniform(−1/√fan_in, 1/√fan_in) initialisation, drawn in the order
    /// W1, b1, W2, b2 (row-major).
    pub fn init(input: usize, hidden: usize, output: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b_in = 1.0 / (input as f64).sqrt();
        let b_hid = 1.0 / (hidden as f64).sqrt();
        let mut draw = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let w1 = Array2::from_shape_vec((hidden, input), draw(hidden * input, b_in)).expect("shape");
        let b1 = Array1::from(draw(hidden, b_in));
        let w2 = Array2::from_shape_vec((output, hidden), draw(output * hidden, b_hid)).expect("shape");
        let b2 = Array1::from(draw(output, b_hid));
        ProjectionHead { w1, b1, w2, b2 }
    }

    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        ProjectionHead {
            w1: Array2::zeros((hidden, input)),
            b1: Array1::zeros(hidden),
            w2: Array2::zeros((output, hidden)),
            b2: Array1::zeros(output),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w1.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.w2.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + self.b2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    /// All parameters in checkpoint order.
    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.w1
            .iter()
            .chain(self.b1.iter())
            .chain(self.w2.iter())
            .chain(self.b2.iter())
            .copied()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
            .chain(self.b2.iter_mut())
    }

    /// Unnormalised output `u` for one input.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Array1<f64> {
        let h = self.w1.dot(&x) + &self.b1;
        let a = h.mapv(|v| v.max(0.0));
        self.w2.dot(&a) + &self.b2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectedEmbedding {
    pub part_id: PartId,
    pub z: Vec<f64>,
}

/// ℓ2 normalisation; vectors with norm below 1e-12 map to the first basis
/// vector.
pub fn normalize_or_e1(u: &[f64]) -> Vec<f64> {
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm < 1e-12 {
        let mut z = vec![0.0; u.len()];
        if let Some(first) = z.first_mut() {
            *first = 1.0;
        }
        z
    } else {
        u.iter().map(|v| v / norm).collect()
    }
}

pub fn project(x: &PartEmbedding, head: &ProjectionHead) -> Result<ProjectedEmbedding> {
    if x.x.len() != head.input_dim() {
        return Err(Error::Dimension {
            expected: head.input_dim(),
            actual: x.x.len(),
        });
    }
    let input: Array1<f64> = x.x.iter().map(|&v| v as f64).collect();
    let u = head.forward(input.view());
    Ok(ProjectedEmbedding {
        part_id: x.part_id,
        z: normalize_or_e1(u.as_slice().expect("contiguous")),
    })
}
