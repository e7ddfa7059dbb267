//! Binary geometry payload for viewers.
//!
//! Layout, all little-endian:
//!
//! ```text
//! u32                 header length H
//! H bytes             JSON GeometryHeader, space-padded to a multiple of 4
//! f32 × 3V            vertex positions
//! u32 × 3F            triangle vertex indices
//! u32 × F             part id of every face
//! ```
//!
//! Offsets in the header are absolute byte positions in the payload.

use partgroup::mesh::{Mesh, PartId};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "partgroup-geometry-v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeometryHeader {
    pub format: String,
    pub vertex_count: usize,
    pub face_count: usize,
    pub part_count: usize,
    pub vertices_offset: usize,
    pub indices_offset: usize,
    pub face_parts_offset: usize,
    pub byte_length: usize,
}

pub fn encode_geometry(mesh: &Mesh, face_part: &[PartId], part_count: usize) -> Vec<u8> {
    let v = mesh.vertices.len();
    let f = mesh.faces.len();
    // Offsets depend on the header length, which depends on the offsets'
    // digit counts; iterate until stable.
    let mut header_len = 0;
    let (header, json) = loop {
        let start = 4 + header_len;
        let header = GeometryHeader {
            format: FORMAT.into(),
            vertex_count: v,
            face_count: f,
            part_count,
            vertices_offset: start,
            indices_offset: start + 12 * v,
            face_parts_offset: start + 12 * v + 12 * f,
            byte_length: start + 12 * v + 16 * f,
        };
        let mut json = serde_json::to_vec(&header).expect("header serializes");
        while !json.len().is_multiple_of(4) {
            json.push(b' ');
        }
        if json.len() == header_len {
            break (header, json);
        }
        header_len = json.len();
    };
    let mut out = Vec::with_capacity(header.byte_length);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for p in &mesh.vertices {
        for c in p.to_array() {
            out.extend_from_slice(&(c as f32).to_le_bytes());
        }
    }
    for face in &mesh.faces {
        for &i in face {
            out.extend_from_slice(&i.to_le_bytes());
        }
    }
    for &p in face_part {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}
