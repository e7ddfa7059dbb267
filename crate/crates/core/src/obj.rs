//! Wavefront-style text mesh reader and writer.
//!
//! Only `v`, `f` and `usemtl` records are interpreted. Normals, texture
//! coordinates, groups and material libraries are ignored.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::Mesh;

pub const DEFAULT_MATERIAL: &str = "default";

/// Parses a mesh. Faces with more than three corners are fan-triangulated
/// around their first corner. Material names get dense IDs in order of first
/// appearance; faces before any `usemtl` use the implicit `default` material.
pub fn load_obj(bytes: &[u8], name: &str) -> Result<Mesh> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        Error::Parse {
            line,
            message: "invalid UTF-8".into(),
        }
    })?;

    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    let mut face_material = Vec::new();
    let mut material_names: Vec<String> = Vec::new();
    let mut material_ids: HashMap<String, u32> = HashMap::new();
    let mut current: Option<u32> = None;

    let mut intern = |name: &str, names: &mut Vec<String>| -> u32 {
        *material_ids.entry(name.to_string()).or_insert_with(|| {
            names.push(name.to_string());
            (names.len() - 1) as u32
        })
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        let Some(keyword) = tokens.next() else {
            continue;
        };
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        match keyword {
            "v" => {
                let coords: Vec<f64> = tokens
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(format!("bad vertex coordinate: {e}")))?;
                if coords.len() < 3 || coords.len() > 4 {
                    return Err(parse_err(format!(
                        "vertex needs 3 coordinates, found {}",
                        coords.len()
                    )));
                }
                let v = Vec3::new(coords[0], coords[1], coords[2]);
                if !v.is_finite() {
                    return Err(parse_err("non-finite vertex coordinate".into()));
                }
                vertices.push(v);
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in tokens {
                    let first = tok.split('/').next().unwrap_or("");
                    let i: i64 = first
                        .parse()
                        .map_err(|_| parse_err(format!("bad face index `{tok}`")))?;
                    let resolved = match i {
                        0 => return Err(parse_err("face index 0 is invalid".into())),
                        i if i > 0 => i - 1,
                        i => vertices.len() as i64 + i,
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(Error::Structure(format!(
                            "line {line_no}: face index {i} out of range ({} vertices)",
                            vertices.len()
                        )));
                    }
                    corners.push(resolved as u32);
                }
                if corners.len() < 3 {
                    return Err(parse_err(format!(
                        "face needs at least 3 corners, found {}",
                        corners.len()
                    )));
                }
                let mat = match current {
                    Some(m) => m,
                    None => {
                        let m = intern(DEFAULT_MATERIAL, &mut material_names);
                        current = Some(m);
                        m
                    }
                };
                for k in 1..corners.len() - 1 {
                    faces.push([corners[0], corners[k], corners[k + 1]]);
                    face_material.push(mat);
                }
            }
            "usemtl" => {
                let name = tokens.collect::<Vec<_>>().join(" ");
                if name.is_empty() {
                    return Err(parse_err("usemtl without a name".into()));
                }
                current = Some(intern(&name, &mut material_names));
            }
            _ => {}
        }
    }

    if faces.is_empty() {
        return Err(Error::Structure("mesh has no faces".into()));
    }
    Mesh::new(name, vertices, faces, face_material, material_names)
}

/// Writes `mesh` with the per-face material label returned by `label`.
///
/// With `grouped`, faces are reordered so each label forms a single `usemtl`
/// block (labels in order of first appearance); otherwise face order is kept
/// and a `usemtl` record is emitted whenever the label changes.
pub fn write_obj<F>(mesh: &Mesh, label: F, grouped: bool) -> String
where
    F: Fn(usize) -> String,
{
    let mut out = String::new();
    let _ = writeln!(out, "# {}", mesh.name);
    for v in &mesh.vertices {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    let labels: Vec<String> = (0..mesh.faces.len()).map(&label).collect();
    let order: Vec<usize> = if grouped {
        let mut first: HashMap<&str, usize> = HashMap::new();
        for (i, l) in labels.iter().enumerate() {
            first.entry(l.as_str()).or_insert(i);
        }
        let mut order: Vec<usize> = (0..labels.len()).collect();
        order.sort_by_key(|&i| (first[labels[i].as_str()], i));
        order
    } else {
        (0..labels.len()).collect()
    };
    let mut current: Option<&str> = None;
    for i in order {
        if current != Some(labels[i].as_str()) {
            let _ = writeln!(out, "usemtl {}", labels[i]);
            current = Some(labels[i].as_str());
        }
        let [a, b, c] = mesh.faces[i];
        let _ = writeln!(out, "f {} {} {}", a + 1, b + 1, c + 1);
    }
    out
}

/// Writes the mesh with its own material names, preserving face order.
pub fn write_mesh_obj(mesh: &Mesh) -> String {
    write_obj(
        mesh,
        |f| mesh.material_name(mesh.face_material[f]).to_string(),
        false,
    )
}
