//! Procedural benchmark meshes with ground-truth material groups.

use std::collections::BTreeMap;
use std::f64::consts::{PI, TAU};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::BenchmarkQuery;
use crate::error::{Error, Result};
use crate::geom::{mat_apply, rotation_axis_angle, Vec3};
use crate::mesh::{segment, Mesh, PartId};

const GOLDEN_ANGLE: f64 = 2.399_963_229_728_653;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Archetype {
    /// Spiral of scales around a trunk.
    Pinecone { scales: usize },
    /// Row of slats between end posts, with optional horizontal rails.
    Fence {
        slats: usize,
        posts: usize,
        rails: usize,
    },
    /// Pot with leaves, each on its own stem.
    Plant { leaves: usize },
}

impl Archetype {
    pub fn name(&self) -> &'static str {
        match self {
            Archetype::Pinecone { .. } => "pinecone",
            Archetype::Fence { .. } => "fence",
            Archetype::Plant { .. } => "plant",
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Archetype::Pinecone { scales } => scales >= 1,
            Archetype::Fence { slats, posts, .. } => slats >= 1 && posts <= 2,
            Archetype::Plant { leaves } => leaves >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid archetype {self:?}")))
        }
    }
}

/// Per-part perturbation ranges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    /// Per-axis scale factor drawn from [1-s, 1+s].
    pub scale: f64,
    /// Rotation about a random axis, up to this many degrees.
    pub rotation_deg: f64,
    /// Per-vertex offset, relative to the part's radius.
    pub noise: f64,
}

impl Default for Jitter {
    fn default() -> Self {
        Jitter {
            scale: 0.2,
            rotation_deg: 15.0,
            noise: 0.01,
        }
    }
}

impl Jitter {
    pub const NONE: Jitter = Jitter {
        scale: 0.0,
        rotation_deg: 0.0,
        noise: 0.0,
    };

    fn is_none(&self) -> bool {
        self.scale == 0.0 && self.rotation_deg == 0.0 && self.noise == 0.0
    }

    fn validate(&self) -> Result<()> {
        let ok = (0.0..1.0).contains(&self.scale)
            && (0.0..=90.0).contains(&self.rotation_deg)
            && (0.0..0.5).contains(&self.noise);
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid jitter {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub meshes: Vec<Archetype>,
    pub jitter: Jitter,
}

impl SynthSpec {
    /// `n` meshes cycling pinecone, fence, plant.
    pub fn standard(n: usize) -> Self {
        let cycle = [
            Archetype::Pinecone { scales: 60 },
            Archetype::Fence {
                slats: 8,
                posts: 2,
                rails: 0,
            },
            Archetype::Plant { leaves: 6 },
        ];
        SynthSpec {
            meshes: (0..n).map(|i| cycle[i % 3]).collect(),
            jitter: Jitter::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.meshes.is_empty() {
            return Err(Error::Config("synthetic spec lists no meshes".into()));
        }
        self.jitter.validate()?;
        self.meshes.iter().try_for_each(Archetype::validate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticMesh {
    pub mesh: Mesh,
    pub queries: Vec<BenchmarkQuery>,
    /// Ground-truth material ID of each part, indexed by part ID.
    pub part_materials: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBenchmark {
    pub meshes: Vec<SyntheticMesh>,
}

type Rot = [[f64; 3]; 3];

const IDENTITY: Rot = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Local-frame geometry of one part.
#[derive(Debug, Clone)]
struct Shape {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
}

impl Shape {
    /// Closed triangle strip between latitude rings, poles on ±y.
    fn ellipsoid(r: Vec3, rings: usize, segments: usize) -> Shape {
        let mut vertices = vec![Vec3::new(0.0, r.y, 0.0)];
        for i in 1..rings {
            let phi = PI * i as f64 / rings as f64;
            for j in 0..segments {
                let th = TAU * j as f64 / segments as f64;
                vertices.push(Vec3::new(
                    r.x * phi.sin() * th.cos(),
                    r.y * phi.cos(),
                    r.z * phi.sin() * th.sin(),
                ));
            }
        }
        vertices.push(Vec3::new(0.0, -r.y, 0.0));
        let bottom = (vertices.len() - 1) as u32;
        let ring = |i: usize, j: usize| (1 + (i - 1) * segments + j % segments) as u32;
        let mut faces = Vec::new();
        for j in 0..segments {
            faces.push([0, ring(1, j + 1), ring(1, j)]);
            faces.push([bottom, ring(rings - 1, j), ring(rings - 1, j + 1)]);
        }
        for i in 1..rings - 1 {
            for j in 0..segments {
                let (a, b) = (ring(i, j), ring(i, j + 1));
                let (c, d) = (ring(i + 1, j), ring(i + 1, j + 1));
                faces.push([a, b, d]);
                faces.push([a, d, c]);
            }
        }
        Shape { vertices, faces }
    }

    /// Capped frustum along y from 0 to `height`.
    fn frustum(r0: f64, r1: f64, height: f64, segments: usize) -> Shape {
        let mut vertices = Vec::with_capacity(2 * segments + 2);
        for (r, y) in [(r0, 0.0), (r1, height)] {
            for j in 0..segments {
                let th = TAU * j as f64 / segments as f64;
                vertices.push(Vec3::new(r * th.cos(), y, r * th.sin()));
            }
        }
        vertices.push(Vec3::new(0.0, 0.0, 0.0));
        vertices.push(Vec3::new(0.0, height, 0.0));
        let n = segments as u32;
        let (cb, ct) = (2 * n, 2 * n + 1);
        let mut faces = Vec::new();
        for j in 0..n {
            let k = (j + 1) % n;
            faces.push([j, k, n + k]);
            faces.push([j, n + k, n + j]);
            faces.push([cb, k, j]);
            faces.push([ct, n + j, n + k]);
        }
        Shape { vertices, faces }
    }

    /// Prism over a convex profile in the xy plane, thickness along z.
    fn prism(profile: &[(f64, f64)], depth: f64) -> Shape {
        let n = profile.len() as u32;
        let mut vertices = Vec::new();
        for z in [-depth / 2.0, depth / 2.0] {
            vertices.extend(profile.iter().map(|&(x, y)| Vec3::new(x, y, z)));
        }
        let mut faces = Vec::new();
        for j in 1..n - 1 {
            faces.push([0, j + 1, j]);
            faces.push([n, n + j, n + j + 1]);
        }
        for j in 0..n {
            let k = (j + 1) % n;
            faces.push([j, k, n + k]);
            faces.push([j, n + k, n + j]);
        }
        Shape { vertices, faces }
    }

    fn cuboid(w: f64, h: f64, d: f64) -> Shape {
        let (x, y) = (w / 2.0, h / 2.0);
        Shape::prism(&[(-x, -y), (x, -y), (x, y), (-x, y)], d)
    }

    fn radius(&self) -> f64 {
        self.vertices.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    fn perturbed(&self, jitter: &Jitter, rng: &mut ChaCha8Rng) -> Shape {
        if jitter.is_none() {
            return self.clone();
        }
        let mut s = || 1.0 + rng.random_range(-1.0..=1.0) * jitter.scale;
        let factors = Vec3::new(s(), s(), s());
        let axis = random_unit(rng);
        let angle = rng.random_range(-1.0..=1.0) * jitter.rotation_deg.to_radians();
        let rot = rotation_axis_angle(axis, angle);
        let amp = jitter.noise * self.radius();
        let vertices = self
            .vertices
            .iter()
            .map(|v| {
                let scaled = Vec3::new(v.x * factors.x, v.y * factors.y, v.z * factors.z);
                let noise = Vec3::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                ) * amp;
                mat_apply(&rot, scaled) + noise
            })
            .collect();
        Shape {
            vertices,
            faces: self.faces.clone(),
        }
    }
}

fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v * (1.0 / n);
        }
    }
}

/// Rotation whose columns are the images of the local x, y, z axes.
fn frame(x: Vec3, y: Vec3, z: Vec3) -> Rot {
    [[x.x, y.x, z.x], [x.y, y.y, z.y], [x.z, y.z, z.z]]
}

#[derive(Default)]
struct Builder {
    vertices: Vec<Vec3>,
    faces: Vec<[u32; 3]>,
    face_material: Vec<u32>,
    materials: BTreeMap<&'static str, u32>,
    material_names: Vec<String>,
    part_materials: Vec<u32>,
}

impl Builder {
    fn material(&mut self, name: &'static str) -> u32 {
        if let Some(&id) = self.materials.get(name) {
            return id;
        }
        let id = self.material_names.len() as u32;
        self.materials.insert(name, id);
        self.material_names.push(name.to_string());
        id
    }

    fn add(&mut self, shape: &Shape, rot: &Rot, offset: Vec3, material: &'static str) {
        let m = self.material(material);
        let base = self.vertices.len() as u32;
        self.vertices
            .extend(shape.vertices.iter().map(|&v| mat_apply(rot, v) + offset));
        for f in &shape.faces {
            self.faces.push([f[0] + base, f[1] + base, f[2] + base]);
            self.face_material.push(m);
        }
        self.part_materials.push(m);
    }

    fn finish(self, name: String) -> Result<(Mesh, Vec<u32>)> {
        let mesh = Mesh::new(
            name,
            self.vertices,
            self.faces,
            self.face_material,
            self.material_names,
        )?;
        Ok((mesh, self.part_materials))
    }
}

fn pinecone(b: &mut Builder, scales: usize, jitter: &Jitter, rng: &mut ChaCha8Rng) {
    let trunk = Shape::frustum(0.12, 0.08, 2.0, 12);
    let t = trunk.perturbed(jitter, rng);
    b.add(&t, &IDENTITY, Vec3::new(0.0, -1.0, 0.0), "trunk");
    // scales shingled over an egg-shaped body
    let (radius, half_height) = (0.45, 1.1);
    let scale = Shape::ellipsoid(Vec3::new(0.18, 0.04, 0.12), 4, 10);
    for i in 0..scales {
        let u = (i as f64 + 0.5) / scales as f64;
        let phi = PI * (0.1 + 0.8 * u);
        let theta = i as f64 * GOLDEN_ANGLE;
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let surface = Vec3::new(radius * sp * ct, half_height * cp, radius * sp * st);
        let normal = Vec3::new(sp * ct / radius, cp / half_height, sp * st / radius).normalize();
        let meridian = Vec3::new(radius * cp * ct, -half_height * sp, radius * cp * st).normalize();
        let azimuth = normal.cross(meridian);
        let s = scale.perturbed(jitter, rng);
        b.add(&s, &frame(meridian, normal, azimuth), surface + normal * 0.03, "scale");
    }
}

fn fence(b: &mut Builder, slats: usize, posts: usize, rails: usize, jitter: &Jitter, rng: &mut ChaCha8Rng) {
    let pitch = 0.35;
    let half = (slats as f64 - 1.0) / 2.0 * pitch;
    let slat = Shape::prism(
        &[(-0.13, -0.75), (0.13, -0.75), (0.13, 0.6), (0.0, 0.75), (-0.13, 0.6)],
        0.05,
    );
    for i in 0..slats {
        let s = slat.perturbed(jitter, rng);
        b.add(&s, &IDENTITY, Vec3::new(i as f64 * pitch - half, 0.0, 0.0), "slat");
    }
    let post = Shape::cuboid(0.28, 2.2, 0.28);
    for k in 0..posts {
        let x = if k == 0 { -half - 0.4 } else { half + 0.4 };
        let p = post.perturbed(jitter, rng);
        b.add(&p, &IDENTITY, Vec3::new(x, 0.1, 0.0), "post");
    }
    let rail = Shape::cuboid(2.0 * half + 0.5, 0.1, 0.05);
    for k in 0..rails {
        let y = -0.5 + k as f64 * 1.0 / rails.max(1) as f64;
        let r = rail.perturbed(jitter, rng);
        b.add(&r, &IDENTITY, Vec3::new(0.0, y, -0.12), "rail");
    }
}

fn plant(b: &mut Builder, leaves: usize, jitter: &Jitter, rng: &mut ChaCha8Rng) {
    let pot = Shape::frustum(0.3, 0.45, 0.6, 16);
    let p = pot.perturbed(jitter, rng);
    b.add(&p, &IDENTITY, Vec3::new(0.0, -0.6, 0.0), "pot");
    let stem = Shape::frustum(0.025, 0.02, 0.7, 6);
    let leaf = Shape::ellipsoid(Vec3::new(0.32, 0.03, 0.12), 5, 10);
    let up = Vec3::Y;
    for k in 0..leaves {
        let theta = TAU * k as f64 / leaves as f64;
        let out = Vec3::new(theta.cos(), 0.0, theta.sin());
        let tangent = Vec3::new(-theta.sin(), 0.0, theta.cos());
        let stem_dir = (up * 0.9 + out * 0.45).normalize();
        let stem_rot = frame(tangent.cross(stem_dir), stem_dir, tangent);
        let base = out * 0.05;
        let s = stem.perturbed(jitter, rng);
        b.add(&s, &stem_rot, base, "stem");
        // blade rises from the stem tip, facing outwards
        let normal = (out + up * 0.2).normalize();
        let length = (up - normal * up.dot(normal)).normalize();
        let tip = base + stem_dir * 0.72;
        let l = leaf.perturbed(jitter, rng);
        b.add(&l, &frame(length, normal, tangent), tip + length * 0.3 + normal * 0.02, "leaf");
    }
}

fn mesh_rng(seed: u64, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One query per material group with at least two parts: a seeded member as
/// the query, the rest as positives.
fn draw_queries(part_materials: &[u32], rng: &mut ChaCha8Rng) -> Vec<BenchmarkQuery> {
    let mut groups: BTreeMap<u32, Vec<PartId>> = BTreeMap::new();
    for (p, &m) in part_materials.iter().enumerate() {
        groups.entry(m).or_default().push(p as PartId);
    }
    groups
        .values()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let &query_part = g.choose(rng).expect("nonempty group");
            BenchmarkQuery {
                query_part,
                positives: g.iter().copied().filter(|&p| p != query_part).collect(),
            }
        })
        .collect()
}

pub fn generate_archetype(
    archetype: Archetype,
    jitter: &Jitter,
    seed: u64,
    index: usize,
) -> Result<SyntheticMesh> {
    archetype.validate()?;
    jitter.validate()?;
    let mut rng = mesh_rng(seed, index);
    let mut b = Builder::default();
    match archetype {
        Archetype::Pinecone { scales } => pinecone(&mut b, scales, jitter, &mut rng),
        Archetype::Fence { slats, posts, rails } => fence(&mut b, slats, posts, rails, jitter, &mut rng),
        Archetype::Plant { leaves } => plant(&mut b, leaves, jitter, &mut rng),
    }
    let expected = b.part_materials.len();
    let (mesh, part_materials) = b.finish(format!("{}_{index}", archetype.name()))?;
    let (_, parts) = segment(&mesh);
    if parts.len() != expected {
        return Err(Error::Config(format!(
            "{} generated {expected} parts but segments into {}",
            mesh.name,
            parts.len()
        )));
    }
    let queries = draw_queries(&part_materials, &mut rng);
    Ok(SyntheticMesh {
        mesh,
        queries,
        part_materials,
    })
}

pub fn generate_synthetic_benchmark(seed: u64, spec: &SynthSpec) -> Result<SyntheticBenchmark> {
    spec.validate()?;
    let meshes = spec
        .meshes
        .iter()
        .enumerate()
        .map(|(i, &a)| generate_archetype(a, &spec.jitter, seed, i))
        .collect::<Result<_>>()?;
    Ok(SyntheticBenchmark { meshes })
}

/// Mesh of `n_base` distinct random parts, each present `1..=max_copies`
/// times under random rigid motions. Returns the mesh and the copy groups
/// as part-ID lists in generation order.
pub fn generate_copy_mesh(
    seed: u64,
    n_base: usize,
    max_copies: usize,
) -> Result<(Mesh, Vec<Vec<PartId>>)> {
    if n_base == 0 || max_copies == 0 {
        return Err(Error::Config("need at least one base part and one copy".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = Builder::default();
    let mut groups = Vec::with_capacity(n_base);
    let mut next: PartId = 0;
    let noisy = Jitter {
        scale: 0.0,
        rotation_deg: 0.0,
        noise: 0.05,
    };
    for _ in 0..n_base {
        let r = Vec3::new(
            rng.random_range(0.2..1.0),
            rng.random_range(0.2..1.0),
            rng.random_range(0.2..1.0),
        );
        let base = match rng.random_range(0..3) {
            0 => Shape::ellipsoid(r, rng.random_range(3..7), rng.random_range(5..12)),
            1 => Shape::frustum(r.x, r.z, 2.0 * r.y, rng.random_range(5..14)),
            _ => Shape::cuboid(r.x, r.y, r.z),
        }
        .perturbed(&noisy, &mut rng);
        let k = rng.random_range(1..=max_copies);
        let mut members = Vec::with_capacity(k);
        for _ in 0..k {
            let rot = rotation_axis_angle(random_unit(&mut rng), rng.random_range(0.0..TAU));
            let offset = Vec3::new(
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
                rng.random_range(-20.0..20.0),
            );
            b.add(&base, &rot, offset, "part");
            members.push(next);
            next += 1;
        }
        groups.push(members);
    }
    let (mesh, _) = b.finish(format!("copies_{seed}"))?;
    Ok((mesh, groups))
}
