//! Deterministic software rasterizer.
//!
//! Perspective projection, z-buffered triangle fill with a top-left fill rule
//! evaluated at pixel centres, flat headlight shading. Back faces are drawn
//! darker, never culled. Coverage and depth are computed in `f64` from scratch
//! for every pixel, so output is bit-for-bit reproducible.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::mesh::{Mesh, PartId};

pub const DEFAULT_RESOLUTION: usize = 512;
pub const BASE_ALBEDO: [u8; 3] = [180, 180, 180];
pub const HIGHLIGHT_COLOR: [u8; 3] = [230, 60, 30];
pub const BACKGROUND_COLOR: [u8; 3] = [255, 255, 255];
const AMBIENT: f64 = 0.25;
const DIFFUSE: f64 = 0.75;
const BACKFACE_FACTOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Camera {
    pub eye: Vec3,
    pub target: Vec3,
    pub up: Vec3,
    /// Radians.
    pub vertical_fov: f64,
    pub near: f64,
    pub far: f64,
}

impl Camera {
    pub fn validate(&self) -> Result<()> {
        if !(self.eye.is_finite() && self.target.is_finite() && self.up.is_finite()) {
            return Err(Error::Camera("non-finite camera vectors".into()));
        }
        if !(self.vertical_fov > 0.0 && self.vertical_fov < std::f64::consts::PI) {
            return Err(Error::Camera(format!("fov {} outside (0, π)", self.vertical_fov)));
        }
        if !(self.near > 0.0 && self.near < self.far) {
            return Err(Error::Camera(format!(
                "need 0 < near < far, got near={} far={}",
                self.near, self.far
            )));
        }
        let forward = self.target - self.eye;
        if forward.norm() == 0.0 {
            return Err(Error::Camera("eye equals target".into()));
        }
        if forward.cross(self.up).norm() <= 1e-12 * forward.norm() * self.up.norm() {
            return Err(Error::Camera("up vector parallel to view direction".into()));
        }
        Ok(())
    }

    pub fn frame(&self) -> Result<CameraFrame> {
        self.validate()?;
        let forward = (self.target - self.eye).normalize();
        let right = forward.cross(self.up).normalize();
        let up = right.cross(forward);
        Ok(CameraFrame {
            eye: self.eye,
            right,
            up,
            forward,
            tan_half: (self.vertical_fov * 0.5).tan(),
            near: self.near,
            far: self.far,
        })
    }
}

/// Orthonormal camera basis. Camera space is (right, up, forward) with depth
/// measured along `forward`.
#[derive(Debug, Clone, Copy)]
pub struct CameraFrame {
    pub eye: Vec3,
    pub right: Vec3,
    pub up: Vec3,
    pub forward: Vec3,
    pub tan_half: f64,
    pub near: f64,
    pub far: f64,
}

impl CameraFrame {
    pub fn to_camera(&self, p: Vec3) -> Vec3 {
        let d = p - self.eye;
        Vec3::new(d.dot(self.right), d.dot(self.up), d.dot(self.forward))
    }

    /// Screen position in pixels (y down) of a camera-space point with z > 0.
    pub fn project(&self, c: Vec3, width: usize, height: usize) -> (f64, f64) {
        let aspect = width as f64 / height as f64;
        let sx = (c.x / (c.z * self.tan_half * aspect) + 1.0) * 0.5 * width as f64;
        let sy = (1.0 - c.y / (c.z * self.tan_half)) * 0.5 * height as f64;
        (sx, sy)
    }

    /// World-space direction of the ray through screen point (sx, sy).
    pub fn ray_direction(&self, sx: f64, sy: f64, width: usize, height: usize) -> Vec3 {
        let aspect = width as f64 / height as f64;
        let ndc_x = 2.0 * sx / width as f64 - 1.0;
        let ndc_y = 1.0 - 2.0 * sy / height as f64;
        self.forward + self.right * (ndc_x * self.tan_half * aspect) + self.up * (ndc_y * self.tan_half)
    }
}

/// Which parts are drawn.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum Visibility {
    #[default]
    All,
    /// Only this part; everything else hidden.
    Only(PartId),
    Hide(BTreeSet<PartId>),
}

impl Visibility {
    fn shows(&self, part: PartId) -> bool {
        match self {
            Visibility::All => true,
            Visibility::Only(p) => *p == part,
            Visibility::Hide(set) => !set.contains(&part),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameBuffer {
    pub width: usize,
    pub height: usize,
    /// Row-major RGB.
    pub color: Vec<[u8; 3]>,
    /// Camera-space depth, +∞ where empty.
    pub depth: Vec<f32>,
    /// −1 for background.
    pub part_id: Vec<i32>,
    pub highlight: Option<PartId>,
}

impl FrameBuffer {
    pub fn empty(width: usize, height: usize, highlight: Option<PartId>) -> Self {
        let n = width * height;
        FrameBuffer {
            width,
            height,
            color: vec![BACKGROUND_COLOR; n],
            depth: vec![f32::INFINITY; n],
            part_id: vec![-1; n],
            highlight,
        }
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes = self.png_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<u8> = self.color.iter().flatten().copied().collect();
        let img = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("color plane matches dimensions");
        let mut out = std::io::Cursor::new(Vec::new());
        img.write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }

    /// Part-id plane as little-endian i32, row-major.
    pub fn part_id_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.part_id.len() * 4);
        for &p in &self.part_id {
            out.write_all(&p.to_le_bytes()).expect("vec write");
        }
        out
    }
}

pub fn visible_pixel_count(fb: &FrameBuffer, part: PartId) -> usize {
    let p = part as i32;
    fb.part_id.iter().filter(|&&x| x == p).count()
}

/// Mesh plus per-face part ids.
#[derive(Debug, Clone, Copy)]
pub struct Scene<'a> {
    pub mesh: &'a Mesh,
    pub face_part: &'a [PartId],
}

#[derive(Clone, Copy)]
struct ScreenVertex {
    x: f64,
    y: f64,
    z: f64,
}

fn clip_near(tri: [Vec3; 3], near: f64) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(4);
    for i in 0..3 {
        let a = tri[i];
        let b = tri[(i + 1) % 3];
        let a_in = a.z >= near;
        let b_in = b.z >= near;
        if a_in {
            out.push(a);
        }
        if a_in != b_in {
            let t = (near - a.z) / (b.z - a.z);
            let mut p = a + (b - a) * t;
            p.z = near;
            out.push(p);
        }
    }
    out
}

/// Edge function, evaluated from the lexicographically smaller endpoint so
/// that `edge(a, b, p) == -edge(b, a, p)` holds exactly for shared edges.
fn edge(a: ScreenVertex, b: ScreenVertex, px: f64, py: f64) -> f64 {
    let raw = |a: ScreenVertex, b: ScreenVertex| (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
    if (a.x, a.y) > (b.x, b.y) {
        -raw(b, a)
    } else {
        raw(a, b)
    }
}

fn is_top_left(a: ScreenVertex, b: ScreenVertex) -> bool {
    let dy = b.y - a.y;
    let dx = b.x - a.x;
    (dy == 0.0 && dx > 0.0) || dy < 0.0
}

fn shade(albedo: [u8; 3], intensity: f64) -> [u8; 3] {
    albedo.map(|c| (c as f64 * intensity).round().clamp(0.0, 255.0) as u8)
}

struct Target<'a> {
    fb: &'a mut FrameBuffer,
    zbuf: Vec<f64>,
}

impl Target<'_> {
    fn fill(&mut self, tri: [ScreenVertex; 3], far: f64, part: i32, color: [u8; 3]) {
        let [v0, mut v1, mut v2] = tri;
        let mut area = edge(v0, v1, v2.x, v2.y);
        if area == 0.0 || !area.is_finite() {
            return;
        }
        if area < 0.0 {
            std::mem::swap(&mut v1, &mut v2);
            area = -area;
        }
        let (w, h) = (self.fb.width, self.fb.height);
        let min_x = v0.x.min(v1.x).min(v2.x);
        let max_x = v0.x.max(v1.x).max(v2.x);
        let min_y = v0.y.min(v1.y).min(v2.y);
        let max_y = v0.y.max(v1.y).max(v2.y);
        let x0 = (min_x - 0.5).ceil().max(0.0);
        let x1 = (max_x - 0.5).floor().min(w as f64 - 1.0);
        let y0 = (min_y - 0.5).ceil().max(0.0);
        let y1 = (max_y - 0.5).floor().min(h as f64 - 1.0);
        if x0 > x1 || y0 > y1 {
            return;
        }
        let tl = [is_top_left(v1, v2), is_top_left(v2, v0), is_top_left(v0, v1)];
        for py in y0 as usize..=y1 as usize {
            let cy = py as f64 + 0.5;
            for px in x0 as usize..=x1 as usize {
                let cx = px as f64 + 0.5;
                let e = [edge(v1, v2, cx, cy), edge(v2, v0, cx, cy), edge(v0, v1, cx, cy)];
                let inside = e
                    .iter()
                    .zip(tl)
                    .all(|(&ei, top_left)| ei > 0.0 || (ei == 0.0 && top_left));
                if !inside {
                    continue;
                }
                let inv_z = (e[0] / v0.z + e[1] / v1.z + e[2] / v2.z) / area;
                let z = 1.0 / inv_z;
                if !(z <= far) {
                    continue;
                }
                let idx = py * w + px;
                if z < self.zbuf[idx] {
                    self.zbuf[idx] = z;
                    self.fb.depth[idx] = z as f32;
                    self.fb.part_id[idx] = part;
                    self.fb.color[idx] = color;
                }
            }
        }
    }
}

/// Renders `scene` from `cam`. Faces of hidden parts are skipped; the
/// highlighted part is drawn in [`HIGHLIGHT_COLOR`].
pub fn rasterize(
    scene: Scene<'_>,
    highlight: Option<PartId>,
    visibility: &Visibility,
    cam: &Camera,
    width: usize,
    height: usize,
) -> Result<FrameBuffer> {
    if width == 0 || height == 0 {
        return Err(Error::Camera(format!("resolution {width}x{height}")));
    }
    let frame = cam.frame()?;
    let mesh = scene.mesh;
    let cam_verts: Vec<Vec3> = mesh.vertices.iter().map(|&v| frame.to_camera(v)).collect();
    let mut fb = FrameBuffer::empty(width, height, highlight);
    let mut target = Target {
        zbuf: vec![f64::INFINITY; width * height],
        fb: &mut fb,
    };

    for (fi, face) in mesh.faces.iter().enumerate() {
        let part = scene.face_part[fi];
        if !visibility.shows(part) {
            continue;
        }
        let [a, b, c] = mesh.triangle(fi);
        let Some(normal) = (b - a).cross(c - a).try_normalize() else {
            continue;
        };
        let centre = (a + b + c) / 3.0;
        let to_eye = (frame.eye - centre).normalize();
        let cos = normal.dot(to_eye);
        let mut intensity = AMBIENT + DIFFUSE * cos.abs();
        if cos < 0.0 {
            intensity *= BACKFACE_FACTOR;
        }
        let albedo = if highlight == Some(part) {
            HIGHLIGHT_COLOR
        } else {
            BASE_ALBEDO
        };
        let color = shade(albedo, intensity);

        let tri = face.map(|v| cam_verts[v as usize]);
        if tri.iter().all(|p| p.z < frame.near) || tri.iter().all(|p| p.z > frame.far) {
            continue;
        }
        let poly = if tri.iter().all(|p| p.z >= frame.near) {
            tri.to_vec()
        } else {
            clip_near(tri, frame.near)
        };
        if poly.len() < 3 {
            continue;
        }
        let screen: Vec<ScreenVertex> = poly
            .iter()
            .map(|&p| {
                let (x, y) = frame.project(p, width, height);
                ScreenVertex { x, y, z: p.z }
            })
            .collect();
        for k in 1..screen.len() - 1 {
            target.fill(
                [screen[0], screen[k], screen[k + 1]],
                frame.far,
                part as i32,
                color,
            );
        }
    }
    Ok(fb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_mesh(z: f64, half: f64) -> Mesh {
        Mesh::new(
            "quad",
            vec![
                Vec3::new(-half, -half, z),
                Vec3::new(half, -half, z),
                Vec3::new(half, half, z),
                Vec3::new(-half, half, z),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![0, 0],
            vec![],
        )
        .unwrap()
    }

    fn camera() -> Camera {
        Camera {
            eye: Vec3::new(0.0, 0.0, 5.0),
            target: Vec3::ZERO,
            up: Vec3::Y,
            vertical_fov: 60f64.to_radians(),
            near: 0.1,
            far: 100.0,
        }
    }

    #[test]
    fn full_viewport_quad() {
        let mesh = quad_mesh(0.0, 10.0);
        let fp = vec![3, 3];
        let fb = rasterize(
            Scene { mesh: &mesh, face_part: &fp },
            None,
            &Visibility::All,
            &camera(),
            64,
            64,
        )
        .unwrap();
        assert!(fb.part_id.iter().all(|&p| p == 3));
        assert!(fb.depth.iter().all(|&d| d == 5.0));
        assert_eq!(visible_pixel_count(&fb, 3), 4096);
        assert_eq!(visible_pixel_count(&fb, 0), 0);
    }

    #[test]
    fn nearer_triangle_hides_farther() {
        let mut mesh = quad_mesh(1.0, 1.0);
        let far = quad_mesh(-1.0, 1.0);
        mesh.vertices.extend(far.vertices);
        mesh.faces.extend(far.faces.iter().map(|f| f.map(|i| i + 4)));
        mesh.face_material.extend([0, 0]);
        // draw the far quad first to exercise the depth test
        mesh.faces.rotate_left(2);
        let fp = vec![1, 1, 0, 0];
        let fb = rasterize(
            Scene { mesh: &mesh, face_part: &fp },
            Some(0),
            &Visibility::All,
            &camera(),
            64,
            64,
        )
        .unwrap();
        assert_eq!(visible_pixel_count(&fb, 1), 0);
        assert!(visible_pixel_count(&fb, 0) > 0);
        let hidden = rasterize(
            Scene { mesh: &mesh, face_part: &fp },
            Some(0),
            &Visibility::Hide([0].into()),
            &camera(),
            64,
            64,
        )
        .unwrap();
        assert_eq!(visible_pixel_count(&hidden, 0), 0);
        assert!(visible_pixel_count(&hidden, 1) > 0);
    }

    #[test]
    fn shared_edge_pixels_counted_once() {
        // two triangles of a quad: no pixel left uncovered along the diagonal
        // and pixel counts add up exactly
        let mesh = quad_mesh(0.0, 1.3);
        let fp = vec![0, 1];
        let fb = rasterize(
            Scene { mesh: &mesh, face_part: &fp },
            None,
            &Visibility::All,
            &camera(),
            37,
            29,
        )
        .unwrap();
        let whole = rasterize(
            Scene { mesh: &mesh, face_part: &[0, 0] },
            None,
            &Visibility::All,
            &camera(),
            37,
            29,
        )
        .unwrap();
        assert_eq!(
            visible_pixel_count(&fb, 0) + visible_pixel_count(&fb, 1),
            visible_pixel_count(&whole, 0)
        );
        let bg = fb.part_id.iter().filter(|&&p| p == -1).count();
        assert_eq!(bg + visible_pixel_count(&whole, 0), 37 * 29);
    }

    #[test]
    fn backfaces_are_darker_not_culled() {
        let mesh = quad_mesh(0.0, 10.0);
        let mut flipped = mesh.clone();
        for f in &mut flipped.faces {
            f.swap(1, 2);
        }
        let fp = vec![0, 0];
        let front = rasterize(Scene { mesh: &mesh, face_part: &fp }, None, &Visibility::All, &camera(), 8, 8).unwrap();
        let back = rasterize(Scene { mesh: &flipped, face_part: &fp }, None, &Visibility::All, &camera(), 8, 8).unwrap();
        assert_eq!(visible_pixel_count(&back, 0), 64);
        assert!(back.color[0][0] < front.color[0][0]);
    }

    #[test]
    fn highlight_color_applied() {
        let mesh = quad_mesh(0.0, 10.0);
        let fb = rasterize(Scene { mesh: &mesh, face_part: &[2, 2] }, Some(2), &Visibility::All, &camera(), 4, 4).unwrap();
        let c = fb.color[5];
        assert!(c[0] > c[1] && c[1] > c[2]);
    }

    #[test]
    fn near_plane_clipping_keeps_visible_part() {
        // triangle straddling the eye plane
        let mesh = Mesh::new(
            "clip",
            vec![Vec3::new(-1.0, -1.0, 10.0), Vec3::new(1.0, -1.0, 10.0), Vec3::new(0.0, 0.5, 0.0)],
            vec![[0, 1, 2]],
            vec![0],
            vec![],
        )
        .unwrap();
        let fb = rasterize(Scene { mesh: &mesh, face_part: &[0] }, None, &Visibility::All, &camera(), 32, 32).unwrap();
        let covered: Vec<f32> = fb.depth.iter().copied().filter(|d| d.is_finite()).collect();
        assert!(!covered.is_empty());
        assert!(covered.iter().all(|&d| d >= 0.1 - 1e-6));
    }

    #[test]
    fn degenerate_cameras_rejected() {
        let mut cam = camera();
        cam.target = cam.eye;
        assert!(cam.validate().is_err());
        let mut cam = camera();
        cam.near = 200.0;
        assert!(cam.validate().is_err());
        let mut cam = camera();
        cam.vertical_fov = std::f64::consts::PI;
        assert!(cam.validate().is_err());
        let mut cam = camera();
        cam.up = Vec3::Z;
        assert!(cam.validate().is_err());
        let mesh = quad_mesh(0.0, 1.0);
        assert!(rasterize(Scene { mesh: &mesh, face_part: &[0, 0] }, None, &Visibility::All, &camera(), 0, 4).is_err());
    }

    #[test]
    fn png_and_raw_exports() {
        let mesh = quad_mesh(0.0, 1.0);
        let fb = rasterize(Scene { mesh: &mesh, face_part: &[0, 0] }, None, &Visibility::All, &camera(), 16, 8).unwrap();
        let png = fb.png_bytes().unwrap();
        assert_eq!(&png[1..4], b"PNG");
        let raw = fb.part_id_raw();
        assert_eq!(raw.len(), 16 * 8 * 4);
        assert_eq!(i32::from_le_bytes(raw[0..4].try_into().unwrap()), fb.part_id[0]);
    }
}
