//! Outside-of-solid volume of a box.
//!
//! The volume of a box that lies outside the solid is integrated over
//! direction cones emanating from the box center. Each of the `6 * m * m`
//! cells of a cube map around the center is one cone with an exact solid
//! angle `dw`. Along the cell's central direction the ray from the center to
//! the box boundary is split into intervals outside the solid, and each
//! interval `(a, b)` contributes the cone-shell volume `dw / 3 * (b^3 - a^3)`.
//!
//! The cube map rides in box-local coordinates, so the estimate is invariant
//! under rigid motions of mesh and box together.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{TriangleMesh, DEFAULT_RAY_RETRIES};
use crate::obb::{exit_distance_local, fit_tight, FitMode, Obb, ObbParams};

/// Knobs for the outside-volume estimator.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    /// Cells per cube-face edge.
    pub m: usize,
    /// Perturbation retries for rays grazing an edge or vertex.
    pub max_retry: usize,
    /// Length quantum for cache keys (centers and extents).
    pub cache_quantum: f64,
    /// Angle quantum for cache keys, radians.
    pub rotation_quantum: f64,
}

impl EstimatorConfig {
    pub const DEFAULT_M: usize = 32;

    /// Defaults scaled to a mesh: length quantum `1e-4` of its diagonal.
    pub fn for_mesh(mesh: &TriangleMesh) -> Self {
        Self {
            m: Self::DEFAULT_M,
            max_retry: DEFAULT_RAY_RETRIES,
            cache_quantum: 1e-4 * mesh.diagonal(),
            rotation_quantum: 1e-4,
        }
    }

    pub fn with_m(mut self, m: usize) -> Self {
        self.m = m;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 4 {
            return Err(Error::Config(format!("m must be at least 4, got {}", self.m)));
        }
        if !(self.cache_quantum > 0.0 && self.rotation_quantum > 0.0) {
            return Err(Error::Config("cache quanta must be positive".into()));
        }
        Ok(())
    }
}

/// Cube-map directions with exact per-cell solid angles.
#[derive(Clone, Debug)]
pub struct DirectionGrid {
    m: usize,
    directions: Vec<Vector3<f64>>,
    solid_angles: Vec<f64>,
}

/// Solid angle subtended by the rectangle `[0, u] x [0, v]` on the plane at
/// unit distance, measured from the foot of the perpendicular.
fn corner_solid_angle(u: f64, v: f64) -> f64 {
    (u * v / (1.0 + u * u + v * v).sqrt()).atan()
}

/// Maps cube-face coordinates to a direction for face `face` (0..6 as
/// +x, -x, +y, -y, +z, -z).
fn face_direction(face: usize, u: f64, v: f64) -> Vector3<f64> {
    let s = if face.is_multiple_of(2) { 1.0 } else { -1.0 };
    let d = match face / 2 {
        0 => Vector3::new(s, u, v),
        1 => Vector3::new(v, s, u),
        _ => Vector3::new(u, v, s),
    };
    d.normalize()
}

impl DirectionGrid {
    pub fn new(m: usize) -> Result<Self> {
        if m < 4 {
            return Err(Error::Config(format!("direction grid needs m >= 4, got {m}")));
        }
        let step = 2.0 / m as f64;
        let mut directions = Vec::with_capacity(6 * m * m);
        let mut solid_angles = Vec::with_capacity(6 * m * m);
        for face in 0..6 {
            for i in 0..m {
                let (u0, u1) = (-1.0 + i as f64 * step, -1.0 + (i + 1) as f64 * step);
                for j in 0..m {
                    let (v0, v1) = (-1.0 + j as f64 * step, -1.0 + (j + 1) as f64 * step);
                    let omega = corner_solid_angle(u1, v1) - corner_solid_angle(u0, v1) - corner_solid_angle(u1, v0)
                        + corner_solid_angle(u0, v0);
                    directions.push(face_direction(face, 0.5 * (u0 + u1), 0.5 * (v0 + v1)));
                    solid_angles.push(omega);
                }
            }
        }
        Ok(Self {
            m,
            directions,
            solid_angles,
        })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> &[Vector3<f64>] {
        &self.directions
    }

    pub fn solid_angles(&self) -> &[f64] {
        &self.solid_angles
    }

    /// A direction inside cell `index`, offset from the cell center by a
    /// quarter cell along both face coordinates.
    fn shifted_direction(&self, index: usize) -> Vector3<f64> {
        let m = self.m;
        let face = index / (m * m);
        let i = (index / m) % m;
        let j = index % m;
        let step = 2.0 / m as f64;
        let u = -1.0 + (i as f64 + 0.75) * step;
        let v = -1.0 + (j as f64 + 0.75) * step;
        face_direction(face, u, v)
    }
}

pub fn build_direction_grid(m: usize) -> Result<DirectionGrid> {
    DirectionGrid::new(m)
}

/// Sub-intervals of `[0, t_exit]` along `dir` (world frame, from the box
/// center) on which points are outside the solid.
pub fn outer_length_profile(mesh: &TriangleMesh, obb: &Obb, dir: &Vector3<f64>) -> Result<Vec<(f64, f64)>> {
    if !mesh.is_solid() {
        return Err(Error::NotSolid);
    }
    let world = obb.center;
    let origin = Origin { local: Vector3::zeros(), world, state: CenterState::of(mesh, &world)? };
    let local = obb.axes.tr_mul(dir);
    cell_intervals(mesh, obb, &local, &origin, DEFAULT_RAY_RETRIES)
}

/// Where the integration origin sits relative to the solid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CenterState {
    Inside,
    Outside,
    /// On the surface: every ray touches it at distance zero, so the state
    /// just past the origin is probed per ray instead.
    Surface,
}

impl CenterState {
    fn of(mesh: &TriangleMesh, p: &Point3<f64>) -> Result<Self> {
        if mesh.on_surface(p) {
            Ok(CenterState::Surface)
        } else if mesh.point_in_solid(p)? {
            Ok(CenterState::Inside)
        } else {
            Ok(CenterState::Outside)
        }
    }
}

fn outside_intervals(
    center_inside: bool,
    dir: &Vector3<f64>,
    t_exit: f64,
    hits: &[crate::mesh::RayHit],
) -> Vec<(f64, f64)> {
    let mut intervals = Vec::new();
    let mut outside = !center_inside;
    let mut start = 0.0;
    for h in hits {
        let exiting = h.normal.dot(dir) > 0.0;
        if exiting && !outside {
            outside = true;
            start = h.distance;
        } else if !exiting && outside {
            if h.distance > start {
                intervals.push((start, h.distance));
            }
            outside = false;
        }
    }
    if outside && t_exit > start {
        intervals.push((start, t_exit));
    }
    intervals
}

/// Outside volume of `obb` by cone quadrature over `grid`.
///
/// The quadrature sum is capped at the exact box volume; the cap only binds
/// when almost all of the box is outside the solid and the angular
/// discretization of the box itself overshoots.
pub fn estimate_obv(mesh: &TriangleMesh, obb: &Obb, grid: &DirectionGrid) -> Result<f64> {
    estimate_obv_with_retry(mesh, obb, grid, DEFAULT_RAY_RETRIES)
}

/// Cone quadrature is exact from any interior point of the box, so when a
/// center sits within ray-precision of the surface and every perturbed ray
/// still grazes, the estimate is redone from origins moved slightly inward.
const ORIGIN_NUDGES: [f64; 3] = [1e-6, 1e-5, 1e-4];

fn estimate_obv_with_retry(mesh: &TriangleMesh, obb: &Obb, grid: &DirectionGrid, max_retry: usize) -> Result<f64> {
    if !mesh.is_solid() {
        return Err(Error::NotSolid);
    }
    let mut result = estimate_from(mesh, obb, grid, &Vector3::zeros(), max_retry);
    // Irrational-ish direction so the nudge is unlikely to follow an edge.
    let generic = Vector3::new(0.5773, -0.3141, 0.7071).normalize();
    for scale in ORIGIN_NUDGES {
        if !matches!(result, Err(Error::DegenerateRay { .. })) {
            break;
        }
        let len = (scale * mesh.diagonal()).min(0.25 * obb.half_extents.min());
        let origin = generic * len;
        log::debug!("degenerate rays from box center, retrying from offset {len:e}");
        result = estimate_from(mesh, obb, grid, &origin, max_retry);
    }
    result
}

fn estimate_from(
    mesh: &TriangleMesh,
    obb: &Obb,
    grid: &DirectionGrid,
    origin: &Vector3<f64>,
    max_retry: usize,
) -> Result<f64> {
    let world = obb.to_world(origin);
    let center = CenterState::of(mesh, &world)?;
    let ray = Origin { local: *origin, world, state: center };
    let mut total = 0.0;
    for (index, (local, omega)) in grid.directions.iter().zip(&grid.solid_angles).enumerate() {
        let intervals = match cell_intervals(mesh, obb, local, &ray, max_retry) {
            Ok(iv) => iv,
            Err(Error::DegenerateRay { .. }) => {
                cell_intervals(mesh, obb, &grid.shifted_direction(index), &ray, max_retry)?
            }
            Err(e) => return Err(e),
        };
        let cubic: f64 = intervals.iter().map(|&(a, b)| b * b * b - a * a * a).sum();
        total += omega / 3.0 * cubic;
    }
    Ok(total.clamp(0.0, obb.volume()))
}

struct Origin {
    local: Vector3<f64>,
    world: Point3<f64>,
    state: CenterState,
}

fn cell_intervals(
    mesh: &TriangleMesh,
    obb: &Obb,
    local: &Vector3<f64>,
    origin: &Origin,
    max_retry: usize,
) -> Result<Vec<(f64, f64)>> {
    let t_exit = exit_distance_local(&origin.local, local, &obb.half_extents);
    let dir = obb.axes * local;
    let (hits, inside) = match origin.state {
        CenterState::Surface => {
            let contact = 1e-9 * mesh.diagonal();
            let hits = mesh.ray_crossings_after(&origin.world, &dir, contact, t_exit, max_retry)?;
            let next = hits.first().map_or(t_exit, |h| h.distance);
            let probe = origin.world + dir * (0.5 * next).min(1e-6 * mesh.diagonal());
            (hits, mesh.point_in_solid(&probe)?)
        }
        state => (
            mesh.ray_crossings(&origin.world, &dir, t_exit, max_retry)?,
            state == CenterState::Inside,
        ),
    };
    Ok(outside_intervals(inside, &dir, t_exit, &hits))
}

/// Result of the sampling oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BruteForceObv {
    pub volume: f64,
    pub outside_samples: usize,
    pub total_samples: usize,
}

/// Stratified sampling oracle: `n^3` cell centers of the box, each tested
/// with [`TriangleMesh::point_in_solid`].
pub fn brute_force_obv(mesh: &TriangleMesh, obb: &Obb, n: usize) -> Result<BruteForceObv> {
    if n < 16 {
        return Err(Error::Config(format!("sampling resolution must be at least 16, got {n}")));
    }
    let coord = |i: usize, k: usize| ((i as f64 + 0.5) / n as f64 * 2.0 - 1.0) * obb.half_extents[k];
    let outside: usize = (0..n * n)
        .into_par_iter()
        .map(|ij| -> Result<usize> {
            let (i, j) = (ij / n, ij % n);
            let mut count = 0;
            for k in 0..n {
                let p = obb.to_world(&Vector3::new(coord(i, 0), coord(j, 1), coord(k, 2)));
                if !mesh.point_in_solid(&p)? {
                    count += 1;
                }
            }
            Ok(count)
        })
        .collect::<Result<Vec<usize>>>()?
        .into_iter()
        .sum();
    let total = n * n * n;
    Ok(BruteForceObv {
        volume: obb.volume() * outside as f64 / total as f64,
        outside_samples: outside,
        total_samples: total,
    })
}

type CacheKey = [i64; 9];

/// Memo of outside volumes keyed by quantized box parameters and extents.
/// Safe for concurrent use; values are deterministic, so racing inserts of
/// the same key store the same value.
#[derive(Debug)]
pub struct ObvCache {
    length_quantum: f64,
    rotation_quantum: f64,
    map: RwLock<HashMap<CacheKey, f64>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl ObvCache {
    pub fn new(length_quantum: f64, rotation_quantum: f64) -> Self {
        Self {
            length_quantum,
            rotation_quantum,
            map: RwLock::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn from_config(config: &EstimatorConfig) -> Self {
        Self::new(config.cache_quantum, config.rotation_quantum)
    }

    fn key(&self, params: &ObbParams, half_extents: &Vector3<f64>) -> CacheKey {
        let ql = |x: f64| (x / self.length_quantum).round() as i64;
        let qr = |x: f64| (x / self.rotation_quantum).round() as i64;
        [
            ql(params.center.x),
            ql(params.center.y),
            ql(params.center.z),
            qr(params.rotation.x),
            qr(params.rotation.y),
            qr(params.rotation.z),
            ql(half_extents.x),
            ql(half_extents.y),
            ql(half_extents.z),
        ]
    }

    pub fn get_or_compute(
        &self,
        params: &ObbParams,
        obb: &Obb,
        compute: impl FnOnce() -> Result<f64>,
    ) -> Result<f64> {
        let key = self.key(params, &obb.half_extents);
        if let Some(&v) = self.map.read().expect("cache lock").get(&key) {
            self.hits.fetch_add(1, Ordering::Relaxed);
            return Ok(v);
        }
        self.misses.fetch_add(1, Ordering::Relaxed);
        let v = compute()?;
        self.map.write().expect("cache lock").insert(key, v);
        Ok(v)
    }

    pub fn length_quantum(&self) -> f64 {
        self.length_quantum
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::Relaxed)
    }

    /// Number of lookups that ran the estimator.
    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything needed to evaluate outside volumes of candidate boxes over
/// one mesh: the estimator grid, the memo, and the flat-box inflation.
pub struct ObvEvaluator<'a> {
    pub mesh: &'a TriangleMesh,
    pub grid: &'a DirectionGrid,
    pub cache: &'a ObvCache,
    pub max_retry: usize,
    /// Floor on half-extents, `1e-6` of the mesh diagonal by default.
    pub min_half_extent: f64,
}

impl<'a> ObvEvaluator<'a> {
    pub fn new(mesh: &'a TriangleMesh, grid: &'a DirectionGrid, cache: &'a ObvCache) -> Self {
        Self {
            mesh,
            grid,
            cache,
            max_retry: DEFAULT_RAY_RETRIES,
            min_half_extent: 1e-6 * mesh.diagonal(),
        }
    }

    /// Outside volume of a box whose orientation and center are `params`.
    pub fn obv(&self, params: &ObbParams, obb: &Obb) -> Result<f64> {
        self.cache
            .get_or_compute(params, obb, || estimate_obv_with_retry(self.mesh, obb, self.grid, self.max_retry))
    }

    /// Tight centered box around `points` for `params`.
    pub fn fit(&self, points: &[Point3<f64>], params: &ObbParams) -> Result<Obb> {
        fit_tight(points, params, FitMode::Centered, self.min_half_extent)
    }

    pub fn fit_and_obv(&self, points: &[Point3<f64>], params: &ObbParams) -> Result<(Obb, f64)> {
        let obb = self.fit(points, params)?;
        let v = self.obv(params, &obb)?;
        Ok((obb, v))
    }
}

/// Fits the tight box of `faces` for `params` and returns its outside volume,
/// reusing the cache when the quantized box was seen before.
pub fn obv_cached(
    mesh: &TriangleMesh,
    params: &ObbParams,
    faces: &[usize],
    grid: &DirectionGrid,
    cache: &ObvCache,
) -> Result<f64> {
    if faces.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let eval = ObvEvaluator::new(mesh, grid, cache);
    let points = mesh.face_vertices(faces);
    eval.fit_and_obv(&points, params).map(|(_, v)| v)
}
