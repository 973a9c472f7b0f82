//! Level-set extraction, connected components, surface sampling and the
//! mapping of surface-point gradients back onto the indicator grid.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{PsrError, Result};
use crate::grid::{scatter_trilinear, GridSpec, ScalarGrid};
use crate::Vec3;

/// Grid values exactly equal to the iso level are nudged up by this much
/// so every node has a strict sign.
pub const ZERO_PERTURBATION: f64 = 1e-12;

/// Triangle mesh with counterclockwise triangles seen from the outside.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    face_normals: Vec<Vec3>,
    vertex_normals: Vec<Vec3>,
}

/// Edge-incidence statistics of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EdgeReport {
    pub edges: usize,
    /// Edges with exactly one incident triangle.
    pub boundary: usize,
    /// Edges with more than two incident triangles.
    pub non_manifold: usize,
    /// Two-triangle edges traversed in the same direction by both.
    pub orientation_conflicts: usize,
}

impl EdgeReport {
    pub fn is_watertight(&self) -> bool {
        self.boundary == 0 && self.non_manifold == 0
    }
}

impl TriangleMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let nv = vertices.len();
        if let Some(t) = triangles.iter().find(|t| t.iter().any(|&i| i as usize >= nv)) {
            return Err(PsrError::InvalidParameter(format!(
                "triangle {t:?} references a vertex beyond {nv}"
            )));
        }
        let mut vertex_normals = vec![Vec3::zeros(); nv];
        let face_normals = triangles
            .iter()
            .map(|t| {
                let [a, b, c] = t.map(|i| vertices[i as usize]);
                let cross = (b - a).cross(&(c - a));
                for &i in t {
                    vertex_normals[i as usize] += cross;
                }
                cross.try_normalize(0.0).unwrap_or_else(Vec3::zeros)
            })
            .collect();
        for n in vertex_normals.iter_mut() {
            *n = n.try_normalize(0.0).unwrap_or_else(Vec3::zeros);
        }
        Ok(Self {
            vertices,
            triangles,
            face_normals,
            vertex_normals,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn face_normals(&self) -> &[Vec3] {
        &self.face_normals
    }

    pub fn vertex_normals(&self) -> &[Vec3] {
        &self.vertex_normals
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i as usize]);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Applies `f` to every vertex and recomputes normals.
    pub fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        Self::new(self.vertices.iter().map(f).collect(), self.triangles.clone())
            .expect("connectivity unchanged")
    }

    pub fn edge_report(&self) -> EdgeReport {
        // undirected edge -> (count, directed count along (min, max))
        let mut edges: HashMap<(u32, u32), (u32, i32)> = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = edges.entry(key).or_insert((0, 0));
                e.0 += 1;
                e.1 += if a < b { 1 } else { -1 };
            }
        }
        let mut report = EdgeReport {
            edges: edges.len(),
            boundary: 0,
            non_manifold: 0,
            orientation_conflicts: 0,
        };
        for &(count, dir) in edges.values() {
            match count {
                1 => report.boundary += 1,
                2 if dir != 0 => report.orientation_conflicts += 1,
                2 => {}
                _ => report.non_manifold += 1,
            }
        }
        report
    }

    /// `V - E + F` over the referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_report().edges as i64 + self.triangles.len() as i64
    }
}

// Cube corner k sits at offset (k & 1, (k >> 1) & 1, (k >> 2) & 1).
// Edge e joins corners EDGES[e].0 -> EDGES[e].1 along axis EDGES[e].2.
const EDGES: [(usize, usize, usize); 12] = [
    (0, 1, 0),
    (2, 3, 0),
    (4, 5, 0),
    (6, 7, 0),
    (0, 2, 1),
    (1, 3, 1),
    (4, 6, 1),
    (5, 7, 1),
    (0, 4, 2),
    (1, 5, 2),
    (2, 6, 2),
    (3, 7, 2),
];

// Face corners, counterclockwise when viewed from outside the cube.
const FACES: [[usize; 4]; 6] = [
    [0, 4, 6, 2],
    [1, 3, 7, 5],
    [0, 1, 5, 4],
    [2, 6, 7, 3],
    [0, 2, 3, 1],
    [4, 5, 7, 6],
];

const fn edge_between(a: usize, b: usize) -> usize {
    let mut e = 0;
    while e < 12 {
        let (p, q, _) = EDGES[e];
        if (p == a && q == b) || (p == b && q == a) {
            return e;
        }
        e += 1;
    }
    panic!("corners are not adjacent");
}

const fn face_edges() -> [[usize; 4]; 6] {
    let mut out = [[0; 4]; 6];
    let mut f = 0;
    while f < 6 {
        let mut i = 0;
        while i < 4 {
            out[f][i] = edge_between(FACES[f][i], FACES[f][(i + 1) % 4]);
            i += 1;
        }
        f += 1;
    }
    out
}

const FACE_EDGES: [[usize; 4]; 6] = face_edges();

// Bit f is set when the edge lies on face f.
const fn edge_faces() -> [u8; 12] {
    let mut out = [0u8; 12];
    let mut f = 0;
    while f < 6 {
        let mut i = 0;
        while i < 4 {
            out[FACE_EDGES[f][i]] |= 1 << f;
            i += 1;
        }
        f += 1;
    }
    out
}

const EDGE_FACES: [u8; 12] = edge_faces();

/// A loop vertex to fan from such that no fan triangle has all three
/// corners on one cube face. Such a triangle would lie in the face and be
/// emitted again, reversed, by the neighbouring cell.
fn fan_apex(poly: &[usize]) -> Option<usize> {
    let n = poly.len();
    (0..n).find(|&i| {
        (1..n - 1).all(|j| {
            EDGE_FACES[poly[i]] & EDGE_FACES[poly[(i + j) % n]] & EDGE_FACES[poly[(i + j + 1) % n]] == 0
        })
    })
}

/// Surface loops through the crossed edges of one cell, each oriented
/// counterclockwise around the normal pointing toward positive values.
/// Ambiguous faces are resolved with the asymptotic decider, which depends
/// only on the face's four values so neighbouring cells agree.
fn cell_loops(f: &[f64; 8], loops: &mut Vec<Vec<usize>>) {
    loops.clear();
    let mut next = [usize::MAX; 12];
    for (face, edges) in FACES.iter().zip(&FACE_EDGES) {
        let v = face.map(|c| f[c]);
        let neg = v.map(|x| x < 0.0);
        let mut starts = [0usize; 2];
        let mut ends = [0usize; 2];
        let (mut ns, mut ne) = (0, 0);
        for i in 0..4 {
            let (a, b) = (neg[i], neg[(i + 1) % 4]);
            if !a && b {
                starts[ns] = i;
                ns += 1;
            } else if a && !b {
                ends[ne] = i;
                ne += 1;
            }
        }
        match ns {
            0 => {}
            1 => next[edges[starts[0]]] = edges[ends[0]],
            _ => {
                // Ambiguous face: two diagonal negative corners.
                let saddle = (v[0] * v[2] - v[1] * v[3]) / (v[0] + v[2] - v[1] - v[3]);
                let negatives_joined = saddle < 0.0;
                for &s in &starts {
                    // s enters the negative corner s + 1
                    let e = if negatives_joined {
                        // leave from the edge entering the next positive corner
                        (s + 3) % 4
                    } else {
                        (s + 1) % 4
                    };
                    next[edges[s]] = edges[e];
                }
            }
        }
    }
    let mut visited = [false; 12];
    for start in 0..12 {
        if next[start] == usize::MAX || visited[start] {
            continue;
        }
        let mut poly = Vec::with_capacity(6);
        let mut e = start;
        while !visited[e] {
            visited[e] = true;
            poly.push(e);
            e = next[e];
        }
        loops.push(poly);
    }
}

/// Extracts the `iso` level set by marching cubes over the `(r-1)^3`
/// interior cells (no wrap across the periodic seam). Vertices are
/// linearly interpolated along grid edges and shared between cells;
/// triangle normals point toward values above `iso`.
pub fn marching_cubes(chi: &ScalarGrid, iso: f64) -> Result<TriangleMesh> {
    let spec = chi.spec();
    let r = spec.resolution();
    let h = spec.voxel_size();
    let vals: Vec<f64> = chi
        .values()
        .iter()
        .map(|&x| {
            if !x.is_finite() {
                f64::NAN
            } else if x == iso {
                ZERO_PERTURBATION
            } else {
                x - iso
            }
        })
        .collect();
    if vals.iter().any(|x| x.is_nan()) {
        return Err(PsrError::NonFinite("indicator grid"));
    }

    let rr = r * r;
    // vertex ids of x/y edges on the lower and upper node layers of the
    // current cell slab, and of z edges inside the slab
    let mut lower = vec![u32::MAX; 2 * rr];
    let mut upper = vec![u32::MAX; 2 * rr];
    let mut vertical = vec![u32::MAX; rr];
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();
    let mut loops = Vec::new();

    for z in 0..r - 1 {
        for y in 0..r - 1 {
            for x in 0..r - 1 {
                let base = x + r * y + rr * z;
                let f: [f64; 8] =
                    std::array::from_fn(|k| vals[base + (k & 1) + r * ((k >> 1) & 1) + rr * (k >> 2)]);
                let negatives = f.iter().filter(|&&v| v < 0.0).count();
                if negatives == 0 || negatives == 8 {
                    continue;
                }
                cell_loops(&f, &mut loops);
                let mut vertex_of = |e: usize| -> u32 {
                    let (a, b, axis) = EDGES[e];
                    let (ax, ay, az) = (x + (a & 1), y + ((a >> 1) & 1), (a >> 2) & 1);
                    let plane = ax + r * ay;
                    let slot = match axis {
                        0 | 1 => {
                            let layer = if az == 0 { &mut lower } else { &mut upper };
                            &mut layer[2 * plane + axis]
                        }
                        _ => &mut vertical[plane],
                    };
                    if *slot == u32::MAX {
                        let t = f[a] / (f[a] - f[b]);
                        let mut p = Vec3::new(ax as f64 * h, ay as f64 * h, (z + az) as f64 * h);
                        p[axis] += t * h;
                        *slot = vertices.len() as u32;
                        vertices.push(p);
                    }
                    *slot
                };
                let loop_ids: Vec<Vec<u32>> = loops
                    .iter()
                    .map(|poly| poly.iter().map(|&e| vertex_of(e)).collect())
                    .collect();
                for (poly, ids) in loops.iter().zip(&loop_ids) {
                    let n = ids.len();
                    match fan_apex(poly) {
                        Some(a) => {
                            for k in 1..n - 1 {
                                triangles.push([ids[a], ids[(a + k) % n], ids[(a + k + 1) % n]]);
                            }
                        }
                        None => {
                            // fan from the loop centroid, which lies on no face
                            let c = ids.iter().map(|&i| vertices[i as usize]).sum::<Vec3>() / n as f64;
                            let ci = vertices.len() as u32;
                            vertices.push(c);
                            for k in 0..n {
                                triangles.push([ci, ids[k], ids[(k + 1) % n]]);
                            }
                        }
                    }
                }
            }
        }
        std::mem::swap(&mut lower, &mut upper);
        upper.fill(u32::MAX);
        vertical.fill(u32::MAX);
    }
    TriangleMesh::new(vertices, triangles)
}

/// Per-triangle component label (the lowest triangle index of the
/// component), joining triangles that share an edge.
fn triangle_components(mesh: &TriangleMesh) -> Vec<usize> {
    let nt = mesh.triangles.len();
    let mut parent: Vec<usize> = (0..nt).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut first_on_edge: HashMap<(u32, u32), usize> = HashMap::with_capacity(3 * nt / 2);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            match first_on_edge.entry((a.min(b), a.max(b))) {
                std::collections::hash_map::Entry::Occupied(o) => {
                    let (ra, rb) = (find(&mut parent, *o.get()), find(&mut parent, t));
                    if ra != rb {
                        parent[ra.max(rb)] = ra.min(rb);
                    }
                }
                std::collections::hash_map::Entry::Vacant(v) => {
                    v.insert(t);
                }
            }
        }
    }
    (0..nt).map(|t| find(&mut parent, t)).collect()
}

/// Number of edge-connected triangle components.
pub fn component_count(mesh: &TriangleMesh) -> usize {
    triangle_components(mesh)
        .iter()
        .enumerate()
        .filter(|(t, r)| t == *r)
        .count()
}

/// The connected component (triangles sharing edges) with the largest
/// surface area. Vertex order of the kept vertices is preserved.
pub fn largest_component(mesh: &TriangleMesh) -> TriangleMesh {
    let nt = mesh.triangles.len();
    if nt == 0 {
        return TriangleMesh::empty();
    }
    let roots = triangle_components(mesh);
    let mut area = vec![0.0; nt];
    for t in 0..nt {
        area[roots[t]] += mesh.triangle_area(t);
    }
    // ties go to the component containing the lowest triangle index
    let mut best = roots[0];
    for t in 0..nt {
        if roots[t] == t && area[t] > area[best] {
            best = t;
        }
    }
    let kept: Vec<[u32; 3]> = (0..nt)
        .filter(|&t| roots[t] == best)
        .map(|t| mesh.triangles[t])
        .collect();
    let mut used = vec![false; mesh.vertices.len()];
    for t in &kept {
        for &i in t {
            used[i as usize] = true;
        }
    }
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut vertices = Vec::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        if used[i] {
            remap[i] = vertices.len() as u32;
            vertices.push(*v);
        }
    }
    let triangles = kept.iter().map(|t| t.map(|i| remap[i as usize])).collect();
    TriangleMesh::new(vertices, triangles).expect("remapped indices are valid")
}

/// Points sampled uniformly by area on a mesh, with the owning triangle's
/// face normal.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceSamples {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub triangles: Vec<usize>,
}

impl SurfaceSamples {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

pub fn sample_surface(mesh: &TriangleMesh, count: usize, seed: u64) -> Result<SurfaceSamples> {
    sample_surface_with(mesh, count, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// [`sample_surface`] drawing from a caller-owned generator.
pub fn sample_surface_with<R: Rng>(
    mesh: &TriangleMesh,
    count: usize,
    rng: &mut R,
) -> Result<SurfaceSamples> {
    if mesh.is_empty() {
        return Err(PsrError::EmptyMesh);
    }
    if count == 0 {
        return Err(PsrError::InvalidParameter("sample count must be at least 1".into()));
    }
    let mut cumulative = Vec::with_capacity(mesh.triangles.len());
    let mut total = 0.0;
    for t in 0..mesh.triangles.len() {
        total += mesh.triangle_area(t);
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(PsrError::EmptyMesh);
    }
    let mut out = SurfaceSamples {
        points: Vec::with_capacity(count),
        normals: Vec::with_capacity(count),
        triangles: Vec::with_capacity(count),
    };
    for _ in 0..count {
        let target = rng.random::<f64>() * total;
        let t = cumulative
            .partition_point(|&c| c <= target)
            .min(cumulative.len() - 1);
        let [a, b, c] = mesh.triangles[t].map(|i| mesh.vertices[i as usize]);
        let su = rng.random::<f64>().sqrt();
        let v = rng.random::<f64>();
        let p = a * (1.0 - su) + b * (su * (1.0 - v)) + c * (su * v);
        out.points.push(p);
        out.normals.push(mesh.face_normals[t]);
        out.triangles.push(t);
    }
    Ok(out)
}

/// Maps `dL/dp` at surface samples to `dL/dchi` on the grid. Each sample
/// contributes `g = dL/dp . (-n)`, moving a surface point along `-n` per
/// unit increase of the indicator, scattered with trilinear weights.
pub fn mesh_grad_to_grid(
    samples: &SurfaceSamples,
    grad_points: &[Vec3],
    spec: GridSpec,
) -> Result<ScalarGrid> {
    if grad_points.len() != samples.len() || samples.normals.len() != samples.len() {
        return Err(PsrError::LengthMismatch {
            what: "sample gradients",
            expected: samples.len(),
            actual: grad_points.len(),
        });
    }
    let scalars: Vec<f64> = grad_points
        .iter()
        .zip(&samples.normals)
        .map(|(g, n)| -g.dot(n))
        .collect();
    scatter_trilinear(spec, &samples.points, &scalars)
}
