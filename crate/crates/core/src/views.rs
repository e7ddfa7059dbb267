//! Canonical view selection and rendering: isolated part, part with context,
//! and full object.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::exec::Exec;
use crate::geom::Vec3;
use crate::mesh::{face_part_ids, Mesh, Part, PartId};
use crate::raster::{rasterize, visible_pixel_count, Camera, FrameBuffer, Scene, Visibility};

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum CandidateSampling {
    /// Deterministic Fibonacci spiral.
    #[default]
    Fibonacci,
    /// Uniform random directions on the hemisphere.
    Seeded(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewConfig {
    pub resolution: usize,
    pub candidates: usize,
    pub fov_deg: f64,
    /// Best candidate's visibility ratio below this triggers a zoom step.
    pub occlusion_threshold: f64,
    pub max_zoom_steps: u32,
    /// Fraction of the image height the part's bounding sphere spans.
    pub context_fraction: f64,
    pub isolated_fraction: f64,
    pub full_fraction: f64,
    pub sampling: CandidateSampling,
}

impl Default for ViewConfig {
    fn default() -> Self {
        ViewConfig {
            resolution: crate::raster::DEFAULT_RESOLUTION,
            candidates: 16,
            fov_deg: 45.0,
            occlusion_threshold: 0.3,
            max_zoom_steps: 3,
            context_fraction: 0.25,
            isolated_fraction: 0.5,
            full_fraction: 0.45,
            sampling: CandidateSampling::Fibonacci,
        }
    }
}

impl ViewConfig {
    pub fn fov(&self) -> f64 {
        self.fov_deg.to_radians()
    }
}

/// A mesh with its partition, precomputed for repeated rendering.
#[derive(Debug, Clone)]
pub struct PartScene<'a> {
    pub mesh: &'a Mesh,
    pub parts: &'a [Part],
    pub face_part: Vec<PartId>,
    pub centroid: Vec3,
    pub radius: f64,
}

impl<'a> PartScene<'a> {
    pub fn new(mesh: &'a Mesh, parts: &'a [Part]) -> Self {
        PartScene {
            mesh,
            parts,
            face_part: face_part_ids(mesh, parts),
            centroid: mesh.centroid(),
            radius: mesh.bounding_radius(),
        }
    }

    pub fn scene(&self) -> Scene<'_> {
        Scene {
            mesh: self.mesh,
            face_part: &self.face_part,
        }
    }

    pub fn render(
        &self,
        highlight: Option<PartId>,
        visibility: &Visibility,
        cam: &Camera,
        resolution: usize,
    ) -> Result<FrameBuffer> {
        rasterize(self.scene(), highlight, visibility, cam, resolution, resolution)
    }

    /// Unit vector from the mesh centroid to the part centroid, or +Z when
    /// the two (nearly) coincide.
    pub fn outward_axis(&self, part: &Part) -> Vec3 {
        let d = part.centroid - self.centroid;
        if d.norm() < 1e-9 {
            Vec3::Z
        } else {
            d.normalize()
        }
    }

    fn effective_radius(&self, part: &Part) -> f64 {
        part.max_radial_extent
            .max(self.radius * 1e-3)
            .max(1e-9)
    }

    /// Camera looking at `target` from `target + dir * distance`, with clip
    /// planes enclosing the whole mesh.
    pub fn camera(&self, target: Vec3, dir: Vec3, distance: f64, fov: f64) -> Camera {
        let eye = target + dir * distance;
        let up = if dir.dot(Vec3::Y).abs() > 0.999 {
            Vec3::Z
        } else {
            Vec3::Y
        };
        let reach = eye.distance(self.centroid) + self.radius;
        Camera {
            eye,
            target,
            up,
            vertical_fov: fov,
            near: (distance * 1e-3).max(1e-12),
            far: (reach * 1.01).max(distance * 2.0),
        }
    }
}

/// Camera distance at which a sphere of radius `r` spans `fraction` of the
/// image height.
pub fn framing_distance(r: f64, fraction: f64, fov: f64) -> f64 {
    r / (fraction * (fov * 0.5).tan())
}

/// `n` unit directions on the hemisphere around `axis`. Azimuth is measured
/// from the world-up direction projected onto the plane orthogonal to `axis`,
/// so parts related by a rotation about the vertical get rotated candidates.
pub fn hemisphere_directions(axis: Vec3, n: usize, sampling: CandidateSampling) -> Vec<Vec3> {
    let axis = axis.normalize();
    let up = Vec3::Y - axis * axis.dot(Vec3::Y);
    let u = if up.norm() > 1e-6 {
        up.normalize()
    } else {
        axis.any_orthogonal()
    };
    let v = axis.cross(u);
    let make = |cos_t: f64, phi: f64| {
        let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
        (axis * cos_t + (u * phi.cos() + v * phi.sin()) * sin_t).normalize()
    };
    match sampling {
        CandidateSampling::Fibonacci => (0..n)
            .map(|i| make(1.0 - i as f64 / n as f64, i as f64 * GOLDEN_ANGLE))
            .collect(),
        CandidateSampling::Seeded(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    let cos_t: f64 = rng.random();
                    let phi = rng.random::<f64>() * std::f64::consts::TAU;
                    make(cos_t, phi)
                })
                .collect()
        }
    }
}

/// Candidate context cameras around a part, at framing fraction `fraction`.
pub fn sample_hemisphere_cameras(
    ps: &PartScene<'_>,
    part: &Part,
    cfg: &ViewConfig,
    fraction: f64,
) -> Vec<Camera> {
    let r = ps.effective_radius(part);
    let d = framing_distance(r, fraction, cfg.fov());
    hemisphere_directions(ps.outward_axis(part), cfg.candidates.max(1), cfg.sampling)
        .into_iter()
        .map(|dir| ps.camera(part.centroid, dir, d, cfg.fov()))
        .collect()
}

/// One pass of the context-view search.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchPass {
    pub fraction: f64,
    pub cameras: Vec<Camera>,
    /// Visible part pixels per candidate with the full mesh drawn.
    pub counts: Vec<usize>,
    pub best: usize,
    /// Best candidate's visible pixels ÷ its pixels with everything else hidden.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContextSelection {
    pub camera: Camera,
    pub zoom_level: u32,
    /// Passes in order; the last one is the selected pass.
    pub passes: Vec<SearchPass>,
}

impl ContextSelection {
    /// Candidate indices of the selected pass, by descending visible count
    /// (ties by index).
    pub fn ranked_candidates(&self) -> Vec<usize> {
        let pass = self.passes.last().expect("at least one pass");
        let mut idx: Vec<usize> = (0..pass.counts.len()).collect();
        idx.sort_by(|&a, &b| pass.counts[b].cmp(&pass.counts[a]).then(a.cmp(&b)));
        idx
    }
}

fn argmax_first(xs: &[usize]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Picks the context camera maximising the part's visible pixel count over
/// the hemisphere candidates. While the best candidate's visibility ratio is
/// below the occlusion threshold the camera is moved closer (framing fraction
/// doubled, distance halved), up to `max_zoom_steps` times.
pub fn select_context_view(
    ps: &PartScene<'_>,
    part: &Part,
    cfg: &ViewConfig,
    exec: Exec,
) -> Result<ContextSelection> {
    let res = cfg.resolution;
    let highlight = Some(part.part_id);
    let mut passes = Vec::new();
    if part.max_radial_extent <= 0.0 {
        let d = framing_distance(ps.effective_radius(part), cfg.context_fraction, cfg.fov());
        let camera = ps.camera(part.centroid, ps.outward_axis(part), d, cfg.fov());
        let fb = ps.render(highlight, &Visibility::All, &camera, res)?;
        passes.push(SearchPass {
            fraction: cfg.context_fraction,
            cameras: vec![camera],
            counts: vec![visible_pixel_count(&fb, part.part_id)],
            best: 0,
            ratio: 1.0,
        });
        return Ok(ContextSelection {
            camera,
            zoom_level: 0,
            passes,
        });
    }

    for step in 0..=cfg.max_zoom_steps {
        let fraction = cfg.context_fraction * 2f64.powi(step as i32);
        let cameras = sample_hemisphere_cameras(ps, part, cfg, fraction);
        let counts = exec.try_map(&cameras, |cam| {
            ps.render(highlight, &Visibility::All, cam, res)
                .map(|fb| visible_pixel_count(&fb, part.part_id))
        })?;
        let best = argmax_first(&counts);
        let alone = ps.render(highlight, &Visibility::Only(part.part_id), &cameras[best], res)?;
        let alone = visible_pixel_count(&alone, part.part_id);
        let ratio = if alone == 0 {
            0.0
        } else {
            counts[best] as f64 / alone as f64
        };
        let camera = cameras[best];
        passes.push(SearchPass {
            fraction,
            cameras,
            counts,
            best,
            ratio,
        });
        if ratio >= cfg.occlusion_threshold || step == cfg.max_zoom_steps {
            return Ok(ContextSelection {
                camera,
                zoom_level: step,
                passes,
            });
        }
    }
    unreachable!("loop returns on the final step")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewSet {
    pub isolated: FrameBuffer,
    pub context: FrameBuffer,
    pub full: FrameBuffer,
    pub context_camera: Camera,
    pub zoom_level: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewRole {
    Isolated,
    Context,
    Full,
}

impl ViewRole {
    pub const ALL: [ViewRole; 3] = [ViewRole::Isolated, ViewRole::Context, ViewRole::Full];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewRole::Isolated => "isolated",
            ViewRole::Context => "context",
            ViewRole::Full => "full",
        }
    }

    pub fn parse(s: &str) -> Option<ViewRole> {
        ViewRole::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl ViewSet {
    pub fn get(&self, role: ViewRole) -> &FrameBuffer {
        match role {
            ViewRole::Isolated => &self.isolated,
            ViewRole::Context => &self.context,
            ViewRole::Full => &self.full,
        }
    }
}

/// Renders the three canonical views of `part`.
pub fn render_view_set(
    ps: &PartScene<'_>,
    part: &Part,
    cfg: &ViewConfig,
    exec: Exec,
) -> Result<ViewSet> {
    let selection = select_context_view(ps, part, cfg, exec)?;
    render_from_selection(ps, part, cfg, &selection, 0)
}

/// Renders views using the `rank`-th best candidate of `selection` (0 = the
/// selected camera). Higher ranks give extra viewpoints for augmentation.
pub fn render_from_selection(
    ps: &PartScene<'_>,
    part: &Part,
    cfg: &ViewConfig,
    selection: &ContextSelection,
    rank: usize,
) -> Result<ViewSet> {
    let res = cfg.resolution;
    let fov = cfg.fov();
    let highlight = Some(part.part_id);
    let context_camera = if rank == 0 {
        selection.camera
    } else {
        let pass = selection.passes.last().expect("at least one pass");
        let ranked = selection.ranked_candidates();
        pass.cameras[ranked[rank.min(ranked.len() - 1)]]
    };

    let dir = (context_camera.eye - context_camera.target).normalize();
    let iso_d = framing_distance(ps.effective_radius(part), cfg.isolated_fraction, fov);
    let iso_camera = ps.camera(part.centroid, dir, iso_d, fov);

    let full_r = ps.radius.max(ps.effective_radius(part));
    let full_d = framing_distance(full_r, cfg.full_fraction, fov);
    let full_camera = ps.camera(ps.centroid, ps.outward_axis(part), full_d, fov);

    Ok(ViewSet {
        isolated: ps.render(highlight, &Visibility::Only(part.part_id), &iso_camera, res)?,
        context: ps.render(highlight, &Visibility::All, &context_camera, res)?,
        full: ps.render(highlight, &Visibility::All, &full_camera, res)?,
        context_camera,
        zoom_level: selection.zoom_level,
    })
}
