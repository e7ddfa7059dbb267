//! Independent reference implementations used by the integration tests.
//! Nothing here calls into the code under test except for plain data types.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use partgroup::mesh::PartId;
use partgroup::raster::Camera;
use partgroup::train::balance::{InventoryPart, MeshInventory};
use partgroup::{Mesh, Vec3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------- geometry

/// Axis-aligned box as 12 triangles, rotated about Y by `yaw`.
pub fn push_box(
    verts: &mut Vec<Vec3>,
    faces: &mut Vec<[u32; 3]>,
    centre: Vec3,
    half: Vec3,
    yaw: f64,
) {
    let base = verts.len() as u32;
    let (s, c) = yaw.sin_cos();
    for i in 0..8 {
        let lx = if i & 1 == 0 { -half.x } else { half.x };
        let ly = if i & 2 == 0 { -half.y } else { half.y };
        let lz = if i & 4 == 0 { -half.z } else { half.z };
        verts.push(centre + Vec3::new(c * lx + s * lz, ly, -s * lx + c * lz));
    }
    const QUADS: [[u32; 4]; 6] = [
        [0, 2, 3, 1],
        [4, 5, 7, 6],
        [0, 1, 5, 4],
        [2, 6, 7, 3],
        [0, 4, 6, 2],
        [1, 3, 7, 5],
    ];
    for q in QUADS {
        faces.push([base + q[0], base + q[1], base + q[2]]);
        faces.push([base + q[0], base + q[2], base + q[3]]);
    }
}

/// Mesh made of disjoint boxes, one material per box index modulo `materials`.
pub fn box_mesh(name: &str, boxes: &[(Vec3, Vec3, f64)], materials: u32) -> Mesh {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    let mut mats = Vec::new();
    for (i, &(c, h, yaw)) in boxes.iter().enumerate() {
        push_box(&mut verts, &mut faces, c, h, yaw);
        mats.extend(std::iter::repeat_n(i as u32 % materials, 12));
    }
    let names = (0..materials).map(|m| format!("m{m}")).collect();
    Mesh::new(name, verts, faces, mats, names).unwrap()
}

pub fn random_unit(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 0.1 && n <= 1.0 {
            return v / n;
        }
    }
}

// ---------------------------------------------------------------- union-find

pub struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Face sets of the shared-vertex components, ordered by smallest face.
pub fn union_find_components(mesh: &Mesh) -> Vec<Vec<u32>> {
    let mut uf = UnionFind::new(mesh.faces.len());
    let mut first_face: BTreeMap<u32, usize> = BTreeMap::new();
    for (f, face) in mesh.faces.iter().enumerate() {
        for &v in face {
            match first_face.get(&v) {
                Some(&g) => uf.union(g, f),
                None => {
                    first_face.insert(v, f);
                }
            }
        }
    }
    let mut comps: BTreeMap<usize, Vec<u32>> = BTreeMap::new();
    for f in 0..mesh.faces.len() {
        let r = uf.find(f);
        comps.entry(r).or_default().push(f as u32);
    }
    let mut out: Vec<Vec<u32>> = comps.into_values().collect();
    out.sort_by_key(|c| c[0]);
    out
}

/// Majority label by brute counting, ties to the smallest label.
pub fn majority_oracle(labels: &[u32]) -> u32 {
    let max_label = *labels.iter().max().unwrap();
    let mut best = (0usize, 0u32);
    for l in 0..=max_label {
        let c = labels.iter().filter(|&&x| x == l).count();
        if c > best.0 {
            best = (c, l);
        }
    }
    best.1
}

// ---------------------------------------------------------------- ray casting

pub struct RayHit {
    pub depth: f64,
    pub face: usize,
}

pub enum Pixel {
    Background,
    Hit(RayHit),
    /// Within tolerance of a triangle boundary or a depth tie.
    Ambiguous,
}

/// Casts one ray per pixel centre and classifies each pixel. Depth is the
/// distance along the viewing axis, matching a z-buffer.
pub fn raycast(mesh: &Mesh, cam: &Camera, width: usize, height: usize) -> Vec<Pixel> {
    let forward = (cam.target - cam.eye).normalize();
    let right = forward.cross(cam.up).normalize();
    let up = right.cross(forward);
    let t = (cam.vertical_fov / 2.0).tan();
    let aspect = width as f64 / height as f64;
    let tris: Vec<[Vec3; 3]> = mesh
        .faces
        .iter()
        .map(|f| f.map(|v| mesh.vertices[v as usize]))
        .collect();
    let edge_eps = 1e-7;
    let depth_eps = 1e-7;

    let mut out = Vec::with_capacity(width * height);
    for py in 0..height {
        for px in 0..width {
            let nx = (px as f64 + 0.5) / width as f64 * 2.0 - 1.0;
            let ny = 1.0 - (py as f64 + 0.5) / height as f64 * 2.0;
            let dir = forward + right * (nx * t * aspect) + up * (ny * t);
            let mut hits: Vec<(f64, usize)> = Vec::new();
            let mut ambiguous = false;
            for (fi, tri) in tris.iter().enumerate() {
                // Möller–Trumbore; `dir` has unit forward component, so the
                // ray parameter is the view-axis depth.
                let e1 = tri[1] - tri[0];
                let e2 = tri[2] - tri[0];
                let p = dir.cross(e2);
                let det = e1.dot(p);
                if det.abs() < 1e-14 {
                    continue;
                }
                let inv = 1.0 / det;
                let s = cam.eye - tri[0];
                let u = s.dot(p) * inv;
                let q = s.cross(e1);
                let v = dir.dot(q) * inv;
                let depth = e2.dot(q) * inv;
                if depth <= cam.near || depth > cam.far {
                    continue;
                }
                let w = 1.0 - u - v;
                let margin = u.min(v).min(w);
                if margin.abs() < edge_eps {
                    ambiguous = true;
                } else if margin > 0.0 {
                    hits.push((depth, fi));
                }
            }
            hits.sort_by(|a, b| a.0.total_cmp(&b.0));
            if hits.len() >= 2 && hits[1].0 - hits[0].0 < depth_eps * hits[0].0 {
                ambiguous = true;
            }
            out.push(if ambiguous {
                Pixel::Ambiguous
            } else if let Some(&(depth, face)) = hits.first() {
                Pixel::Hit(RayHit { depth, face })
            } else {
                Pixel::Background
            });
        }
    }
    out
}

/// Random triangle soup in front of a random camera. Every triangle is its
/// own vertex triple; part ids are assigned at random.
pub fn random_triangle_scene(rng: &mut ChaCha8Rng, max_tris: usize) -> (Mesh, Vec<PartId>, Camera) {
    let n = rng.random_range(1..=max_tris);
    let mut verts = Vec::with_capacity(3 * n);
    let mut faces = Vec::with_capacity(n);
    for i in 0..n {
        let c = Vec3::new(
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
            rng.random_range(-1.5..1.5),
        );
        let size = rng.random_range(0.2..1.5);
        for _ in 0..3 {
            verts.push(c + random_unit(rng) * size);
        }
        let b = 3 * i as u32;
        faces.push([b, b + 1, b + 2]);
    }
    let parts: Vec<PartId> = (0..n).map(|_| rng.random_range(0..6)).collect();
    let mesh = Mesh::new("soup", verts, faces, vec![0; n], vec![]).unwrap();
    let eye = random_unit(rng) * rng.random_range(5.0..8.0);
    let cam = Camera {
        eye,
        target: Vec3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        ),
        up: if eye.normalize().dot(Vec3::Y).abs() > 0.95 { Vec3::Z } else { Vec3::Y },
        vertical_fov: rng.random_range(35.0f64..70.0).to_radians(),
        near: 0.05,
        far: 50.0,
    };
    (mesh, parts, cam)
}

// ---------------------------------------------------------------- metrics

pub fn ap_oracle(ranking: &[PartId], positives: &BTreeSet<PartId>) -> f64 {
    let mut total = 0.0;
    for p in positives {
        if let Some(r) = ranking.iter().position(|x| x == p) {
            let hits = ranking[..=r].iter().filter(|x| positives.contains(x)).count();
            total += hits as f64 / (r + 1) as f64;
        }
    }
    total / positives.len() as f64
}

pub fn r_precision_oracle(ranking: &[PartId], positives: &BTreeSet<PartId>) -> f64 {
    let r = positives.len();
    let top: BTreeSet<PartId> = ranking.iter().take(r).copied().collect();
    top.intersection(positives).count() as f64 / r as f64
}

pub fn recall_oracle(ranking: &[PartId], positives: &BTreeSet<PartId>, k: usize) -> f64 {
    let top: BTreeSet<PartId> = ranking.iter().take(k).copied().collect();
    top.intersection(positives).count() as f64 / positives.len() as f64
}

/// Random ranking over `0..n` plus a nonempty positive subset; some positives
/// may be left out of the ranking.
pub fn random_ranking(rng: &mut ChaCha8Rng, max_items: usize) -> (Vec<PartId>, BTreeSet<PartId>) {
    let n = rng.random_range(1..=max_items);
    let mut ids: Vec<PartId> = (0..n as PartId).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        ids.swap(i, j);
    }
    let mut positives: BTreeSet<PartId> = ids.iter().copied().filter(|_| rng.random_bool(0.3)).collect();
    if positives.is_empty() {
        positives.insert(ids[rng.random_range(0..n)]);
    }
    if n > 2 && rng.random_bool(0.2) {
        ids.truncate(n - 1);
    }
    (ids, positives)
}

// ---------------------------------------------------------------- balancing

/// Per-material sample counts the balancing rules must produce, computed by
/// applying the rules to counts only: floor by instances then views, cap,
/// drop materials below two, then repeat the ratio limit until nothing moves.
pub fn balance_count_oracle(mesh: &MeshInventory, min: usize, cap: usize, ratio: f64) -> BTreeMap<u32, usize> {
    let mut by_material: BTreeMap<u32, Vec<&InventoryPart>> = BTreeMap::new();
    for p in &mesh.parts {
        by_material.entry(p.material_id).or_default().push(p);
    }
    let mut counts = BTreeMap::new();
    for (m, parts) in by_material {
        let mut groups: BTreeMap<usize, Vec<&InventoryPart>> = BTreeMap::new();
        for p in parts {
            groups.entry(p.group).or_default().push(p);
        }
        let base = groups.len();
        let instances: usize = groups.values().map(|g| g.len() - 1).sum();
        let views: usize = groups
            .values()
            .map(|g| g.iter().min_by_key(|p| p.part_id).unwrap().extra_views)
            .sum();
        let mut c = base;
        if c < min {
            c = (base + instances).min(min);
        }
        if c < min {
            c = (base + instances + views).min(min);
        }
        if c >= 2 {
            counts.insert(m, c.min(cap));
        }
    }
    while let Some(&lo) = counts.values().min() {
        let limit = (ratio * lo as f64).floor() as usize;
        let mut moved = false;
        for c in counts.values_mut() {
            if *c > limit {
                *c = limit;
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    counts
}

/// Outcome of comparing one rasterized frame against the ray caster.
#[derive(Debug, Default, Clone, Copy)]
pub struct RasterComparison {
    pub compared: usize,
    pub covered: usize,
    pub mismatches: usize,
}

/// Renders `mesh` with the library rasterizer and checks every unambiguous
/// pixel: part id must match exactly and depth must equal the ray-cast depth
/// rounded to `f32` (one ulp of slack for the differing evaluation order).
pub fn compare_with_raycast(mesh: &Mesh, face_part: &[PartId], cam: &Camera, res: usize) -> RasterComparison {
    use partgroup::raster::{rasterize, Scene, Visibility};
    let fb = rasterize(Scene { mesh, face_part }, None, &Visibility::All, cam, res, res).unwrap();
    let oracle = raycast(mesh, cam, res, res);
    let mut out = RasterComparison::default();
    for (i, px) in oracle.iter().enumerate() {
        match px {
            Pixel::Ambiguous => {}
            Pixel::Background => {
                out.compared += 1;
                if fb.part_id[i] != -1 || fb.depth[i] != f32::INFINITY {
                    out.mismatches += 1;
                }
            }
            Pixel::Hit(h) => {
                out.compared += 1;
                out.covered += 1;
                let expect = h.depth as f32;
                let ulp = f32::from_bits(expect.to_bits() + 1) - expect;
                if fb.part_id[i] != face_part[h.face] as i32 || (fb.depth[i] - expect).abs() > ulp {
                    out.mismatches += 1;
                }
            }
        }
    }
    out
}

// ---------------------------------------------------------------- view selection

/// Random box scene around a target box (part 0). Roughly half the scenes
/// enclose the target in a cage of plates so that zooming is needed.
pub fn random_view_scene(rng: &mut ChaCha8Rng) -> Mesh {
    let target = Vec3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let th = Vec3::new(rng.random_range(0.2..0.5), rng.random_range(0.2..0.5), rng.random_range(0.2..0.5));
    let mut boxes = vec![(target, th, rng.random_range(0.0..3.0))];
    if rng.random_bool(0.5) {
        let d = 1.6 * th.norm();
        let gap = rng.random_range(0.0..0.6);
        for axis in 0..3 {
            for sign in [-1.0, 1.0] {
                let mut c = [0.0; 3];
                c[axis] = sign * d;
                let mut h = [d * (1.0 - gap * 0.5); 3];
                h[axis] = 0.05;
                boxes.push((target + Vec3::from(c), Vec3::from(h), 0.0));
            }
        }
    }
    for _ in 0..rng.random_range(0..8) {
        let c = target + random_unit(rng) * rng.random_range(0.8..4.0);
        let h = Vec3::new(rng.random_range(0.1..0.8), rng.random_range(0.1..0.8), rng.random_range(0.1..0.8));
        boxes.push((c, h, rng.random_range(0.0..3.0)));
    }
    box_mesh("viewscene", &boxes, 2)
}

#[derive(Debug, Default, Clone, Copy)]
pub struct ViewCheck {
    pub argmax_ok: bool,
    pub zoom_ok: bool,
    pub zoomed: bool,
}

/// Re-renders every candidate of every pass, takes the first argmax of the
/// visible-pixel count, and checks the zoom decision of the first pass.
pub fn check_view_selection(mesh: &Mesh, part: PartId, cfg: &partgroup::views::ViewConfig) -> ViewCheck {
    use partgroup::raster::Visibility;
    use partgroup::views::{sample_hemisphere_cameras, select_context_view, PartScene};
    let (merged, parts) = partgroup::mesh::segment(mesh);
    let ps = PartScene::new(&merged, &parts);
    let p = &parts[part as usize];
    let sel = select_context_view(&ps, p, cfg, partgroup::Exec::Sequential).unwrap();
    let count = |fb: &partgroup::raster::FrameBuffer| fb.part_id.iter().filter(|&&x| x == part as i32).count();

    let mut argmax_ok = true;
    let mut first_ratio = None;
    for (k, pass) in sel.passes.iter().enumerate() {
        let fraction = cfg.context_fraction * 2f64.powi(k as i32);
        let cams = sample_hemisphere_cameras(&ps, p, cfg, fraction);
        argmax_ok &= cams.len() == cfg.candidates && pass.cameras == cams;
        let counts: Vec<usize> = cams
            .iter()
            .map(|c| count(&ps.render(Some(part), &Visibility::All, c, cfg.resolution).unwrap()))
            .collect();
        let mut best = 0;
        for i in 1..counts.len() {
            if counts[i] > counts[best] {
                best = i;
            }
        }
        argmax_ok &= pass.best == best && pass.counts == counts;
        if k + 1 == sel.passes.len() {
            argmax_ok &= sel.camera == cams[best];
        }
        if k == 0 {
            let alone = count(&ps.render(Some(part), &Visibility::Only(part), &cams[best], cfg.resolution).unwrap());
            first_ratio = Some(if alone == 0 { 0.0 } else { counts[best] as f64 / alone as f64 });
        }
    }
    let zoomed = sel.zoom_level > 0;
    let should = first_ratio.unwrap() < cfg.occlusion_threshold;
    ViewCheck { argmax_ok, zoom_ok: zoomed == should, zoomed }
}

/// Macro and micro PR AUC computed by brute force: thresholds at the
/// nearest-rank quantiles of the pooled distances, selection by counting.
pub fn pr_auc_oracle(queries: &[(Vec<(PartId, f64)>, BTreeSet<PartId>)], n: usize, micro: bool) -> f64 {
    let mut pooled: Vec<f64> = queries.iter().flat_map(|(r, _)| r.iter().map(|s| s.1)).collect();
    pooled.sort_by(f64::total_cmp);
    let m = pooled.len();
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for k in 0..n {
        let t = pooled[((k as f64 * (m - 1) as f64 / (n - 1) as f64).round() as usize).min(m - 1)];
        let (mut rs, mut ps, mut tp_all, mut sel_all, mut pos_all) = (0.0, 0.0, 0, 0, 0);
        for (ranking, pos) in queries {
            let sel: Vec<PartId> = ranking.iter().filter(|s| s.1 <= t).map(|s| s.0).collect();
            let tp = sel.iter().filter(|p| pos.contains(p)).count();
            rs += tp as f64 / pos.len() as f64;
            ps += if sel.is_empty() { 1.0 } else { tp as f64 / sel.len() as f64 };
            tp_all += tp;
            sel_all += sel.len();
            pos_all += pos.len();
        }
        let q = queries.len() as f64;
        pts.push(if micro {
            (tp_all as f64 / pos_all as f64, if sel_all == 0 { 1.0 } else { tp_all as f64 / sel_all as f64 })
        } else {
            (rs / q, ps / q)
        });
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(b.1.total_cmp(&a.1)));
    let mut area = 0.0;
    let mut prev = (0.0, pts[0].1);
    for &p in &pts {
        area += (p.0 - prev.0) * (p.1 + prev.1) / 2.0;
        prev = p;
    }
    if prev.0 < 1.0 {
        area += (1.0 - prev.0) * prev.1 / 2.0;
    }
    area
}

// ---------------------------------------------------------------- training

/// SupCon loss through the head and ℓ2 normalisation, written with plain
/// loops. `x` rows are samples.
pub fn supcon_oracle_loss(head: &partgroup::encode::ProjectionHead, x: &[Vec<f64>], labels: &[u32], tau: f64) -> f64 {
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|xi| {
            let hidden: Vec<f64> = (0..head.hidden_dim())
                .map(|j| {
                    let s: f64 = (0..xi.len()).map(|k| head.w1[[j, k]] * xi[k]).sum::<f64>() + head.b1[j];
                    s.max(0.0)
                })
                .collect();
            let u: Vec<f64> = (0..head.output_dim())
                .map(|o| (0..hidden.len()).map(|j| head.w2[[o, j]] * hidden[j]).sum::<f64>() + head.b2[o])
                .collect();
            let n = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            u.iter().map(|v| v / n).collect()
        })
        .collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>() / tau;
    let n = z.len();
    let mut total = 0.0;
    let mut anchors = 0;
    for i in 0..n {
        let pos: Vec<usize> = (0..n).filter(|&j| j != i && labels[j] == labels[i]).collect();
        if pos.is_empty() {
            continue;
        }
        anchors += 1;
        let denom: f64 = (0..n).filter(|&a| a != i).map(|a| dot(&z[i], &z[a]).exp()).sum();
        let term: f64 = pos.iter().map(|&j| denom.ln() - dot(&z[i], &z[j])).sum::<f64>() / pos.len() as f64;
        total += term;
    }
    total / anchors as f64
}

/// Largest relative error between the analytic gradient and central finite
/// differences of [`supcon_oracle_loss`] over the listed parameter indices.
/// The denominator is floored at `floor` so that vanishing entries compare
/// on absolute error.
pub fn gradient_check(
    head: &partgroup::encode::ProjectionHead,
    x: &[Vec<f64>],
    labels: &[u32],
    tau: f64,
    params: &[usize],
    h: f64,
    floor: f64,
) -> f64 {
    let rows = x.len();
    let cols = x[0].len();
    let xa = ndarray::Array2::from_shape_fn((rows, cols), |(r, c)| x[r][c]);
    let (loss, grad) = partgroup::train::loss_and_grad(head, &xa, labels, tau).unwrap();
    assert!((loss - supcon_oracle_loss(head, x, labels, tau)).abs() < 1e-10);
    let analytic = grad.flatten();
    let mut worst: f64 = 0.0;
    for &i in params {
        let mut plus = head.clone();
        *plus.params_mut().nth(i).unwrap() += h;
        let mut minus = head.clone();
        *minus.params_mut().nth(i).unwrap() -= h;
        let fd = (supcon_oracle_loss(&plus, x, labels, tau) - supcon_oracle_loss(&minus, x, labels, tau)) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
        worst = worst.max(rel);
    }
    worst
}

/// Random batch of `n` rows with labels forming pairs, so every anchor has a
/// positive.
pub fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> (Vec<Vec<f64>>, Vec<u32>) {
    let x = (0..n).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let labels = (0..n as u32).map(|i| i / 2 % 3).collect();
    (x, labels)
}
