//! Watertight triangle meshes: construction, validation, and ray queries.
//!
//! A [`TriangleMesh`] is immutable once built. Construction computes face
//! adjacency, bounds, a BVH for ray casting, and a [`SolidityReport`].
//! Volume queries ([`TriangleMesh::point_in_solid`] and everything in
//! [`crate::volume`]) refuse meshes that are not closed, consistently
//! oriented solids.

mod bvh;
mod io;

use std::collections::HashMap;

use nalgebra::{Point3, Rotation3, Unit, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use bvh::Aabb;
use bvh::Bvh;
pub use io::{load_mesh, parse_obj, parse_stl_binary, write_obj, MeshFormat};

use crate::error::{Error, Result};

/// Number of deterministic direction perturbations tried before a ray query
/// is declared degenerate.
pub const DEFAULT_RAY_RETRIES: usize = 8;

/// Rotation applied per retry when a ray grazes an edge or vertex.
const PERTURBATION_ANGLE: f64 = 1e-7;

/// Barycentric margin below which a hit counts as grazing an edge.
const GRAZE_EPS: f64 = 1e-9;

/// Fixed, generic direction used for parity tests.
const PARITY_DIRECTION: [f64; 3] = [0.412_310_562_561_766, 0.727_606_875_108_999, 0.548_311_355_616_075];

const PERTURBATION_AXES: [[f64; 3]; 8] = [
    [1.0, 0.0, 0.0],
    [0.0, 1.0, 0.0],
    [0.0, 0.0, 1.0],
    [1.0, 1.0, 0.0],
    [0.0, 1.0, 1.0],
    [1.0, 0.0, 1.0],
    [1.0, 1.0, 1.0],
    [1.0, -1.0, 1.0],
];

/// A ray-surface crossing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayHit {
    /// Distance from the ray origin along the unit direction.
    pub distance: f64,
    /// Unit outward normal of the hit face.
    pub normal: Vector3<f64>,
    pub face_id: usize,
}

/// An edge whose incidence violates the closed-manifold condition.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefectEdge {
    pub a: usize,
    pub b: usize,
    /// Number of faces using the edge (2 on a closed manifold).
    pub face_count: usize,
}

/// Result of [`validate_solid`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolidityReport {
    pub watertight: bool,
    pub consistently_oriented: bool,
    pub signed_volume: f64,
    /// Edges not shared by exactly two faces.
    pub defect_edges: Vec<DefectEdge>,
    /// Edges shared by two faces that traverse it in the same direction.
    pub misoriented_edges: Vec<[usize; 2]>,
}

impl SolidityReport {
    pub fn is_solid(&self) -> bool {
        self.watertight && self.consistently_oriented
    }
}

/// Indexed triangle surface with adjacency and a ray-query index.
#[derive(Clone, Debug)]
pub struct TriangleMesh {
    vertices: Vec<Point3<f64>>,
    faces: Vec<[usize; 3]>,
    face_adjacency: Vec<Vec<usize>>,
    normals: Vec<Vector3<f64>>,
    bounds: Aabb,
    bvh: Bvh,
    report: SolidityReport,
}

impl TriangleMesh {
    /// Builds a mesh, checking index ranges and degenerate index triples.
    /// Watertightness is diagnosed, not required; see [`Self::solidity`].
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        if faces.is_empty() {
            return Err(Error::EmptyMesh);
        }
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= vertices.len() {
                    return Err(Error::IndexOutOfRange {
                        face: fi,
                        index: v,
                        count: vertices.len(),
                    });
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::DegenerateFace { face: fi });
            }
        }

        let bounds = Aabb::from_points(faces.iter().flat_map(|f| f.iter().map(|&v| &vertices[v])));
        let pad = 1e-9 * bounds.diagonal().max(f64::MIN_POSITIVE);
        let face_bounds: Vec<Aabb> = faces
            .iter()
            .map(|f| {
                let mut b = Aabb::from_points(f.iter().map(|&v| &vertices[v]));
                b.min -= Vector3::repeat(pad);
                b.max += Vector3::repeat(pad);
                b
            })
            .collect();
        let normals = faces
            .iter()
            .map(|f| {
                let n = (vertices[f[1]] - vertices[f[0]]).cross(&(vertices[f[2]] - vertices[f[0]]));
                n.try_normalize(0.0).unwrap_or_else(Vector3::zeros)
            })
            .collect();

        let edges = edge_incidence(&faces);
        let face_adjacency = adjacency_from_edges(faces.len(), &edges);
        let report = solidity_from_edges(&vertices, &faces, &edges);
        let bvh = Bvh::build(&face_bounds);

        Ok(Self {
            vertices,
            faces,
            face_adjacency,
            normals,
            bounds,
            bvh,
            report,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Faces sharing an edge with `face`, in ascending order.
    pub fn neighbors(&self, face: usize) -> &[usize] {
        &self.face_adjacency[face]
    }

    pub fn face_adjacency(&self) -> &[Vec<usize>] {
        &self.face_adjacency
    }

    pub fn bounds(&self) -> &Aabb {
        &self.bounds
    }

    /// Length of the bounding-box diagonal.
    pub fn diagonal(&self) -> f64 {
        self.bounds.diagonal()
    }

    pub fn solidity(&self) -> &SolidityReport {
        &self.report
    }

    pub fn is_solid(&self) -> bool {
        self.report.is_solid()
    }

    pub fn triangle(&self, face: usize) -> [Point3<f64>; 3] {
        let f = self.faces[face];
        [self.vertices[f[0]], self.vertices[f[1]], self.vertices[f[2]]]
    }

    pub fn face_normal(&self, face: usize) -> Vector3<f64> {
        self.normals[face]
    }

    pub fn face_centroid(&self, face: usize) -> Point3<f64> {
        let [a, b, c] = self.triangle(face);
        Point3::from((a.coords + b.coords + c.coords) / 3.0)
    }

    pub fn face_area(&self, face: usize) -> f64 {
        let [a, b, c] = self.triangle(face);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Vertex positions used by `faces`, each vertex once, in ascending
    /// vertex-index order.
    pub fn face_vertices(&self, faces: &[usize]) -> Vec<Point3<f64>> {
        let mut ids: Vec<usize> = faces.iter().flat_map(|&f| self.faces[f]).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.into_iter().map(|v| self.vertices[v]).collect()
    }

    /// Hex SHA-256 over the vertex coordinates and face indices.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for k in 0..3 {
                hasher.update(v[k].to_le_bytes());
            }
        }
        hasher.update((self.faces.len() as u64).to_le_bytes());
        for f in &self.faces {
            for &i in f {
                hasher.update((i as u64).to_le_bytes());
            }
        }
        hasher
            .finalize()
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    /// All crossings of the segment `origin + t * dir`, `t` in `[0, max_dist]`,
    /// sorted by distance. Coincident crossings of the same sense (a ray
    /// through an edge shared by two faces) are reported once.
    pub fn ray_intersections(&self, origin: &Point3<f64>, dir: &Vector3<f64>, max_dist: f64) -> Vec<RayHit> {
        let (hits, _) = self.cast_raw(origin, dir, None, max_dist);
        let tol = 1e-9 * self.diagonal();
        let mut out: Vec<RayHit> = Vec::with_capacity(hits.len());
        for h in hits {
            if let Some(last) = out.last() {
                let same_sense = (last.normal.dot(dir) > 0.0) == (h.normal.dot(dir) > 0.0);
                if same_sense && h.distance - last.distance <= tol {
                    continue;
                }
            }
            out.push(h);
        }
        out
    }

    /// Hits along the segment, retrying with deterministic direction
    /// perturbations while any hit grazes an edge or vertex.
    pub fn ray_crossings(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        max_dist: f64,
        max_retry: usize,
    ) -> Result<Vec<RayHit>> {
        self.crossings_between(origin, dir, None, max_dist, max_retry)
    }

    /// Like [`TriangleMesh::ray_crossings`], but ignores everything closer
    /// than `min_dist`, including grazing contacts there. Used for rays that
    /// start on the surface itself.
    pub fn ray_crossings_after(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        min_dist: f64,
        max_dist: f64,
        max_retry: usize,
    ) -> Result<Vec<RayHit>> {
        self.crossings_between(origin, dir, Some(min_dist), max_dist, max_retry)
    }

    fn crossings_between(
        &self,
        origin: &Point3<f64>,
        dir: &Vector3<f64>,
        min_dist: Option<f64>,
        max_dist: f64,
        max_retry: usize,
    ) -> Result<Vec<RayHit>> {
        let mut d = *dir;
        for attempt in 0..=max_retry {
            let (hits, grazing) = self.cast_raw(origin, &d, min_dist, max_dist);
            if !grazing {
                return Ok(hits);
            }
            d = perturb_direction(dir, attempt);
        }
        Err(Error::DegenerateRay { retries: max_retry })
    }

    /// Inside test by crossing parity. Points on the surface count as inside.
    pub fn point_in_solid(&self, p: &Point3<f64>) -> Result<bool> {
        if !self.is_solid() {
            return Err(Error::NotSolid);
        }
        let surface_tol = 1e-10 * self.diagonal();
        if !self.bounds.contains(p, surface_tol) {
            return Ok(false);
        }
        let max_dist = (p - self.bounds.center()).norm() + self.diagonal();
        let base = Vector3::from(PARITY_DIRECTION).normalize();
        let mut d = base;
        for attempt in 0..=DEFAULT_RAY_RETRIES {
            let (hits, grazing) = self.cast_raw(p, &d, None, max_dist);
            if hits.first().is_some_and(|h| h.distance <= surface_tol) {
                return Ok(true);
            }
            if !grazing {
                return Ok(hits.len() % 2 == 1);
            }
            d = perturb_direction(&base, attempt);
        }
        Err(Error::DegenerateRay {
            retries: DEFAULT_RAY_RETRIES,
        })
    }

    /// True when `p` lies on the surface, within `1e-10` of the diagonal.
    pub fn on_surface(&self, p: &Point3<f64>) -> bool {
        let surface_tol = 1e-10 * self.diagonal();
        if !self.bounds.contains(p, surface_tol) {
            return false;
        }
        let d = Vector3::from(PARITY_DIRECTION).normalize();
        let (hits, _) = self.cast_raw(p, &d, None, surface_tol);
        !hits.is_empty()
    }

    /// Sorted hits plus a flag telling whether any hit lies within the
    /// grazing margin of a triangle edge.
    fn cast_raw(&self, origin: &Point3<f64>, dir: &Vector3<f64>, min_dist: Option<f64>, max_dist: f64) -> (Vec<RayHit>, bool) {
        let mut hits = Vec::new();
        let mut grazing = false;
        let t_tol = 1e-12 * self.diagonal();
        let t_min = min_dist.unwrap_or(-t_tol);
        self.bvh.for_each_candidate(origin, dir, max_dist + t_tol, |f| {
            let [a, b, c] = self.triangle(f);
            if let Some((t, graze)) = intersect_triangle(origin, dir, &a, &b, &c) {
                if t >= t_min && t <= max_dist {
                    grazing |= graze;
                    hits.push(RayHit {
                        distance: t.max(0.0),
                        normal: self.normals[f],
                        face_id: f,
                    });
                }
            }
        });
        hits.sort_by(|x, y| x.distance.total_cmp(&y.distance).then(x.face_id.cmp(&y.face_id)));
        (hits, grazing)
    }
}

/// Runs the solidity diagnosis of a mesh.
pub fn validate_solid(mesh: &TriangleMesh) -> SolidityReport {
    mesh.solidity().clone()
}

/// Signed volume enclosed by the surface (divergence theorem).
pub fn signed_volume(vertices: &[Point3<f64>], faces: &[[usize; 3]]) -> f64 {
    faces
        .iter()
        .map(|f| {
            let (a, b, c) = (vertices[f[0]].coords, vertices[f[1]].coords, vertices[f[2]].coords);
            a.dot(&b.cross(&c))
        })
        .sum::<f64>()
        / 6.0
}

/// Möller-Trumbore. Returns the ray parameter and whether the hit is within
/// the grazing margin of an edge; hits slightly outside the triangle (within
/// the margin) are reported as grazing so no crossing slips through a seam.
#[inline]
fn intersect_triangle(
    origin: &Point3<f64>,
    dir: &Vector3<f64>,
    a: &Point3<f64>,
    b: &Point3<f64>,
    c: &Point3<f64>,
) -> Option<(f64, bool)> {
    let e1 = b - a;
    let e2 = c - a;
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() <= 1e-14 * e1.norm() * e2.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = origin - a;
    let u = s.dot(&p) * inv;
    if !(-GRAZE_EPS..=1.0 + GRAZE_EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    if v < -GRAZE_EPS || u + v > 1.0 + GRAZE_EPS {
        return None;
    }
    let t = e2.dot(&q) * inv;
    let w = 1.0 - u - v;
    let graze = u < GRAZE_EPS || v < GRAZE_EPS || w < GRAZE_EPS;
    Some((t, graze))
}

fn perturb_direction(base: &Vector3<f64>, attempt: usize) -> Vector3<f64> {
    let angle = PERTURBATION_ANGLE * (attempt + 1) as f64;
    for k in 0..PERTURBATION_AXES.len() {
        let axis = Vector3::from(PERTURBATION_AXES[(attempt + k) % PERTURBATION_AXES.len()]);
        let cross = base.cross(&axis);
        if cross.norm() > 1e-3 {
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(cross), angle);
            return (rot * base).normalize();
        }
    }
    *base
}

type EdgeMap = HashMap<(usize, usize), Vec<(usize, bool)>>;

/// Undirected edge -> incident faces, each with whether the face traverses
/// the edge from the lower to the higher vertex index.
fn edge_incidence(faces: &[[usize; 3]]) -> EdgeMap {
    let mut map: EdgeMap = HashMap::with_capacity(faces.len() * 3 / 2);
    for (fi, f) in faces.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (f[k], f[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            map.entry(key).or_default().push((fi, a < b));
        }
    }
    map
}

fn adjacency_from_edges(face_count: usize, edges: &EdgeMap) -> Vec<Vec<usize>> {
    let mut adjacency = vec![Vec::new(); face_count];
    for incident in edges.values() {
        for (i, &(fa, _)) in incident.iter().enumerate() {
            for &(fb, _) in &incident[i + 1..] {
                if fa != fb {
                    adjacency[fa].push(fb);
                    adjacency[fb].push(fa);
                }
            }
        }
    }
    for list in &mut adjacency {
        list.sort_unstable();
        list.dedup();
    }
    adjacency
}

fn solidity_from_edges(vertices: &[Point3<f64>], faces: &[[usize; 3]], edges: &EdgeMap) -> SolidityReport {
    let mut defect_edges = Vec::new();
    let mut misoriented_edges = Vec::new();
    for (&(a, b), incident) in edges {
        if incident.len() != 2 {
            defect_edges.push(DefectEdge {
                a,
                b,
                face_count: incident.len(),
            });
        } else if incident[0].1 == incident[1].1 {
            misoriented_edges.push([a, b]);
        }
    }
    defect_edges.sort_by_key(|e| (e.a, e.b));
    misoriented_edges.sort_unstable();
    let signed_volume = signed_volume(vertices, faces);
    let watertight = defect_edges.is_empty();
    SolidityReport {
        watertight,
        consistently_oriented: watertight && misoriented_edges.is_empty() && signed_volume > 0.0,
        signed_volume,
        defect_edges,
        misoriented_edges,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn cube_is_a_unit_solid() {
        let cube = fixtures::cube(1.0);
        assert_eq!(cube.face_count(), 12);
        assert_eq!(cube.bounds().min, Point3::new(-0.5, -0.5, -0.5));
        assert_eq!(cube.bounds().max, Point3::new(0.5, 0.5, 0.5));
        let report = validate_solid(&cube);
        assert!(report.watertight);
        assert!(report.consistently_oriented);
        assert!((report.signed_volume - 1.0).abs() < 1e-12);
        assert!(cube.face_adjacency().iter().all(|n| n.len() == 3));
    }

    #[test]
    fn missing_quad_leaves_four_boundary_edges() {
        let cube = fixtures::cube(1.0);
        let faces: Vec<[usize; 3]> = cube.faces()[2..].to_vec();
        let holed = TriangleMesh::new(cube.vertices().to_vec(), faces).unwrap();
        let report = validate_solid(&holed);
        assert!(!report.watertight);
        assert_eq!(report.defect_edges.len(), 4);
        assert!(report.defect_edges.iter().all(|e| e.face_count == 1));
        assert!(matches!(holed.point_in_solid(&Point3::origin()), Err(Error::NotSolid)));
    }

    #[test]
    fn flipped_triangle_breaks_orientation() {
        let cube = fixtures::cube(1.0);
        let mut faces = cube.faces().to_vec();
        faces[5].swap(1, 2);
        let flipped = TriangleMesh::new(cube.vertices().to_vec(), faces).unwrap();
        let report = validate_solid(&flipped);
        assert!(report.watertight);
        assert!(!report.consistently_oriented);
        assert_eq!(report.misoriented_edges.len(), 3);
    }

    #[test]
    fn construction_rejects_bad_indices() {
        let cube = fixtures::cube(1.0);
        let mut faces = cube.faces().to_vec();
        faces[0] = [0, 1, 99];
        assert!(matches!(
            TriangleMesh::new(cube.vertices().to_vec(), faces),
            Err(Error::IndexOutOfRange { index: 99, .. })
        ));
        let mut faces = cube.faces().to_vec();
        faces[3] = [4, 4, 2];
        assert!(matches!(
            TriangleMesh::new(cube.vertices().to_vec(), faces),
            Err(Error::DegenerateFace { face: 3 })
        ));
        assert!(matches!(
            TriangleMesh::new(cube.vertices().to_vec(), Vec::new()),
            Err(Error::EmptyMesh)
        ));
    }

    #[test]
    fn point_in_solid_on_cube() {
        let cube = fixtures::cube(1.0);
        assert!(cube.point_in_solid(&Point3::origin()).unwrap());
        assert!(!cube.point_in_solid(&Point3::new(10.0, 0.0, 0.0)).unwrap());
        assert!(cube.point_in_solid(&Point3::new(0.5, 0.0, 0.0)).unwrap());
        assert!(cube.point_in_solid(&Point3::new(0.5, 0.5, 0.5)).unwrap());
        assert!(!cube.point_in_solid(&Point3::new(0.5 + 1e-6, 0.0, 0.0)).unwrap());
    }

    #[test]
    fn ray_queries_on_cube() {
        let cube = fixtures::cube(1.0);
        let hits = cube.ray_intersections(&Point3::origin(), &Vector3::x(), 10.0);
        assert_eq!(hits.len(), 1);
        assert!((hits[0].distance - 0.5).abs() < 1e-12);
        assert!((hits[0].normal - Vector3::x()).norm() < 1e-12);

        let hits = cube.ray_intersections(&Point3::new(-5.0, 0.0, 0.0), &Vector3::x(), 10.0);
        let d: Vec<f64> = hits.iter().map(|h| h.distance).collect();
        assert_eq!(d.len(), 2);
        assert!((d[0] - 4.5).abs() < 1e-12 && (d[1] - 5.5).abs() < 1e-12);

        assert!(cube.ray_intersections(&Point3::origin(), &Vector3::x(), 0.25).is_empty());
    }

    #[test]
    fn icosphere_volume_below_ball() {
        let sphere = fixtures::icosphere(3, 1.0);
        assert_eq!(sphere.face_count(), 1280);
        let v = validate_solid(&sphere).signed_volume;
        let ball = 4.0 / 3.0 * std::f64::consts::PI;
        assert!(v < ball && v > 0.98 * ball, "{v}");
    }

    #[test]
    fn content_hash_is_stable_and_sensitive() {
        let a = fixtures::cube(1.0);
        let b = fixtures::cube(1.0);
        let c = fixtures::cube(1.5);
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
        assert_eq!(a.content_hash().len(), 64);
    }
}
