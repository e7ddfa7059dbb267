//! Triangle meshes, vertex merging and connected-component segmentation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

pub type PartId = u32;

/// Indexed triangle mesh with one material ID per face.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub name: String,
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[u32; 3]>,
    pub face_material: Vec<u32>,
    /// Material name for each ID, indexed by ID.
    pub material_names: Vec<String>,
}

impl Mesh {
    pub fn new(
        name: impl Into<String>,
        vertices: Vec<Vec3>,
        faces: Vec<[u32; 3]>,
        face_material: Vec<u32>,
        material_names: Vec<String>,
    ) -> Result<Self> {
        let mesh = Mesh {
            name: name.into(),
            vertices,
            faces,
            face_material,
            material_names,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<()> {
        if self.faces.is_empty() {
            return Err(Error::Structure("mesh has no faces".into()));
        }
        if self.face_material.len() != self.faces.len() {
            return Err(Error::Structure(format!(
                "{} faces but {} face materials",
                self.faces.len(),
                self.face_material.len()
            )));
        }
        let n = self.vertices.len();
        for (fi, face) in self.faces.iter().enumerate() {
            if let Some(&bad) = face.iter().find(|&&v| v as usize >= n) {
                return Err(Error::Structure(format!(
                    "face {fi} references vertex {bad}, mesh has {n} vertices"
                )));
            }
        }
        if let Some(v) = self.vertices.iter().position(|v| !v.is_finite()) {
            return Err(Error::Structure(format!("vertex {v} is not finite")));
        }
        Ok(())
    }

    pub fn centroid(&self) -> Vec3 {
        mean(self.vertices.iter().copied())
    }

    /// Radius of the sphere around [`Mesh::centroid`] enclosing every vertex.
    pub fn bounding_radius(&self) -> f64 {
        let c = self.centroid();
        self.vertices
            .iter()
            .map(|v| v.distance(c))
            .fold(0.0, f64::max)
    }

    pub fn material_name(&self, id: u32) -> &str {
        self.material_names
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or("default")
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [
            self.vertices[a as usize],
            self.vertices[b as usize],
            self.vertices[c as usize],
        ]
    }
}

fn mean(points: impl Iterator<Item = Vec3>) -> Vec3 {
    let mut sum = Vec3::ZERO;
    let mut n = 0usize;
    for p in points {
        sum += p;
        n += 1;
    }
    if n == 0 {
        Vec3::ZERO
    } else {
        sum / n as f64
    }
}

/// A connected component of a vertex-merged mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Part {
    pub part_id: PartId,
    /// Sorted ascending.
    pub face_ids: Vec<u32>,
    pub material_id: u32,
    pub centroid: Vec3,
    #[serde(rename = "extent")]
    pub max_radial_extent: f64,
    pub vertex_count: usize,
}

impl Part {
    /// Sorted unique vertex indices touched by the part's faces.
    pub fn vertex_ids(&self, mesh: &Mesh) -> Vec<u32> {
        let mut ids: Vec<u32> = self
            .face_ids
            .iter()
            .flat_map(|&f| mesh.faces[f as usize])
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    fn from_faces(part_id: PartId, face_ids: Vec<u32>, mesh: &Mesh) -> Part {
        let mut part = Part {
            part_id,
            face_ids,
            material_id: 0,
            centroid: Vec3::ZERO,
            max_radial_extent: 0.0,
            vertex_count: 0,
        };
        let verts = part.vertex_ids(mesh);
        let centroid = mean(verts.iter().map(|&v| mesh.vertices[v as usize]));
        part.max_radial_extent = verts
            .iter()
            .map(|&v| mesh.vertices[v as usize].distance(centroid))
            .fold(0.0, f64::max);
        part.centroid = centroid;
        part.vertex_count = verts.len();
        part
    }
}

/// Collapses vertices with bitwise-identical coordinates and drops faces that
/// become degenerate. Unreferenced vertices are kept.
pub fn merge_vertices(mesh: &Mesh) -> Mesh {
    let mut first_index: HashMap<[u64; 3], u32> = HashMap::with_capacity(mesh.vertices.len());
    let mut vertices = Vec::with_capacity(mesh.vertices.len());
    let remap: Vec<u32> = mesh
        .vertices
        .iter()
        .map(|v| {
            *first_index.entry(v.bits()).or_insert_with(|| {
                vertices.push(*v);
                (vertices.len() - 1) as u32
            })
        })
        .collect();

    let mut faces = Vec::with_capacity(mesh.faces.len());
    let mut face_material = Vec::with_capacity(mesh.faces.len());
    for (face, &mat) in mesh.faces.iter().zip(&mesh.face_material) {
        let [a, b, c] = face.map(|v| remap[v as usize]);
        if a != b && b != c && a != c {
            faces.push([a, b, c]);
            face_material.push(mat);
        }
    }
    Mesh {
        name: mesh.name.clone(),
        vertices,
        faces,
        face_material,
        material_names: mesh.material_names.clone(),
    }
}

/// Groups faces that share at least one vertex. Parts are numbered by their
/// smallest face index. Material IDs are left at 0; see
/// [`assign_part_materials`].
pub fn connected_components(mesh: &Mesh) -> Vec<Part> {
    // vertex -> incident faces, CSR layout
    let nv = mesh.vertices.len();
    let mut offsets = vec![0usize; nv + 1];
    for face in &mesh.faces {
        for &v in face {
            offsets[v as usize + 1] += 1;
        }
    }
    for i in 0..nv {
        offsets[i + 1] += offsets[i];
    }
    let mut cursor = offsets.clone();
    let mut incident = vec![0u32; offsets[nv]];
    for (fi, face) in mesh.faces.iter().enumerate() {
        for &v in face {
            incident[cursor[v as usize]] = fi as u32;
            cursor[v as usize] += 1;
        }
    }

    let mut seen_face = vec![false; mesh.faces.len()];
    let mut seen_vertex = vec![false; nv];
    let mut parts = Vec::new();
    let mut stack = Vec::new();
    for start in 0..mesh.faces.len() {
        if seen_face[start] {
            continue;
        }
        seen_face[start] = true;
        stack.push(start as u32);
        let mut faces = Vec::new();
        while let Some(f) = stack.pop() {
            faces.push(f);
            for &v in &mesh.faces[f as usize] {
                if std::mem::replace(&mut seen_vertex[v as usize], true) {
                    continue;
                }
                for &g in &incident[offsets[v as usize]..offsets[v as usize + 1]] {
                    if !seen_face[g as usize] {
                        seen_face[g as usize] = true;
                        stack.push(g);
                    }
                }
            }
        }
        faces.sort_unstable();
        parts.push(Part::from_faces(parts.len() as PartId, faces, mesh));
    }
    parts
}

/// Majority face label per part; ties go to the smallest material ID.
pub fn assign_part_materials(mesh: &Mesh, parts: &[Part]) -> Vec<Part> {
    parts
        .iter()
        .map(|p| {
            let mut counts: HashMap<u32, usize> = HashMap::new();
            for &f in &p.face_ids {
                *counts.entry(mesh.face_material[f as usize]).or_default() += 1;
            }
            let material_id = counts
                .into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(m, _)| m)
                .unwrap_or(0);
            Part {
                material_id,
                ..p.clone()
            }
        })
        .collect()
}

/// Merge, split into components and label parts.
pub fn segment(mesh: &Mesh) -> (Mesh, Vec<Part>) {
    let merged = merge_vertices(mesh);
    let parts = connected_components(&merged);
    let parts = assign_part_materials(&merged, &parts);
    (merged, parts)
}

/// Per-face part IDs for a partition.
pub fn face_part_ids(mesh: &Mesh, parts: &[Part]) -> Vec<u32> {
    let mut out = vec![u32::MAX; mesh.faces.len()];
    for p in parts {
        for &f in &p.face_ids {
            out[f as usize] = p.part_id;
        }
    }
    out
}

/// JSON snapshot of a segmented mesh.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSnapshot {
    pub name: String,
    pub vertices: Vec<f64>,
    pub faces: Vec<u32>,
    pub face_material: Vec<u32>,
    pub material_names: Vec<String>,
    pub parts: Vec<Part>,
}

impl MeshSnapshot {
    pub fn new(mesh: &Mesh, parts: &[Part]) -> Self {
        MeshSnapshot {
            name: mesh.name.clone(),
            vertices: mesh.vertices.iter().flat_map(|v| v.to_array()).collect(),
            faces: mesh.faces.iter().flatten().copied().collect(),
            face_material: mesh.face_material.clone(),
            material_names: mesh.material_names.clone(),
            parts: parts.to_vec(),
        }
    }

    pub fn into_mesh(self) -> Result<(Mesh, Vec<Part>)> {
        if !self.vertices.len().is_multiple_of(3) || !self.faces.len().is_multiple_of(3) {
            return Err(Error::Format("snapshot arrays are not triples".into()));
        }
        let mesh = Mesh::new(
            self.name,
            self.vertices
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect(),
            self.faces.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            self.face_material,
            self.material_names,
        )?;
        Ok((mesh, self.parts))
    }
}
