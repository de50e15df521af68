//! Tree-vs-tree collision queries with box and triangle test counters, and
//! a randomized pose benchmark comparing two pairs of trees.

use nalgebra::{Matrix3, Point3, Quaternion, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use robust::{orient2d, orient3d, Coord, Coord3D};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::obb::Obb;
use crate::tree::ObbTree;

pub const BENCH_FORMAT_VERSION: u32 = 1;

/// Smallest triangle area accepted by [`tri_tri_intersect`].
pub const MIN_TRIANGLE_AREA: f64 = 1e-12;

fn c3(p: &Point3<f64>) -> Coord3D<f64> {
    Coord3D { x: p.x, y: p.y, z: p.z }
}

fn o3(a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>, d: &Point3<f64>) -> f64 {
    orient3d(c3(a), c3(b), c3(c), c3(d))
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// 2D orientation after dropping coordinate `drop`.
fn o2(drop: usize, a: &Point3<f64>, b: &Point3<f64>, c: &Point3<f64>) -> i8 {
    let (i, j) = match drop {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    let p = |q: &Point3<f64>| Coord { x: q[i], y: q[j] };
    sign(orient2d(p(a), p(b), p(c)))
}

fn on_segment_2d(drop: usize, p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> bool {
    let (i, j) = match drop {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    p[i] >= a[i].min(b[i]) && p[i] <= a[i].max(b[i]) && p[j] >= a[j].min(b[j]) && p[j] <= a[j].max(b[j])
}

fn segments_meet_2d(drop: usize, p: &Point3<f64>, q: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> bool {
    let d1 = o2(drop, a, b, p);
    let d2 = o2(drop, a, b, q);
    let d3 = o2(drop, p, q, a);
    let d4 = o2(drop, p, q, b);
    if d1 * d2 < 0 && d3 * d4 < 0 {
        return true;
    }
    (d1 == 0 && on_segment_2d(drop, p, a, b))
        || (d2 == 0 && on_segment_2d(drop, q, a, b))
        || (d3 == 0 && on_segment_2d(drop, a, p, q))
        || (d4 == 0 && on_segment_2d(drop, b, p, q))
}

fn point_in_triangle_2d(drop: usize, p: &Point3<f64>, t: &[Point3<f64>; 3]) -> bool {
    let s = [o2(drop, &t[0], &t[1], p), o2(drop, &t[1], &t[2], p), o2(drop, &t[2], &t[0], p)];
    !(s.contains(&1) && s.contains(&-1))
}

/// Closed segment against closed triangle.
fn segment_meets_triangle(p: &Point3<f64>, q: &Point3<f64>, t: &[Point3<f64>; 3], drop: usize) -> bool {
    let sp = sign(o3(&t[0], &t[1], &t[2], p));
    let sq = sign(o3(&t[0], &t[1], &t[2], q));
    if sp * sq > 0 {
        return false;
    }
    if sp == 0 && sq == 0 {
        return point_in_triangle_2d(drop, p, t)
            || point_in_triangle_2d(drop, q, t)
            || (0..3).any(|k| segments_meet_2d(drop, p, q, &t[k], &t[(k + 1) % 3]));
    }
    let s = [o3(p, q, &t[0], &t[1]), o3(p, q, &t[1], &t[2]), o3(p, q, &t[2], &t[0])].map(sign);
    !(s.contains(&1) && s.contains(&-1))
}

fn area_and_drop(t: &[Point3<f64>; 3]) -> Result<usize> {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    let area = 0.5 * n.norm();
    if !(area > MIN_TRIANGLE_AREA) {
        return Err(Error::DegenerateTriangle { area });
    }
    Ok(n.abs().imax())
}

/// Exact test for closed triangles: touching, including a shared vertex,
/// counts as intersecting. Two triangles meet exactly when an edge of one
/// meets the other.
pub fn tri_tri_intersect(a: &[Point3<f64>; 3], b: &[Point3<f64>; 3]) -> Result<bool> {
    let da = area_and_drop(a)?;
    let db = area_and_drop(b)?;
    for k in 0..3 {
        if segment_meets_triangle(&a[k], &a[(k + 1) % 3], b, db) || segment_meets_triangle(&b[k], &b[(k + 1) % 3], a, da) {
            return Ok(true);
        }
    }
    Ok(false)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let ortho = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if (rotation.determinant() - 1.0).abs() > 1e-9 || ortho > 1e-9 {
            return Err(Error::Config("rotation is not a proper orthonormal matrix".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn translation(t: Vector3<f64>) -> Self {
        Self {
            translation: t,
            ..Self::identity()
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub c_v: f64,
    pub c_p: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { c_v: 1.0, c_p: 5.0 }
    }
}

impl CostModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_v > 0.0 && self.c_p > 0.0) {
            return Err(Error::Config("cost weights must be positive".into()));
        }
        Ok(())
    }

    pub fn cost(&self, n_v: u64, n_p: u64) -> f64 {
        n_v as f64 * self.c_v + n_p as f64 * self.c_p
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CollisionStats {
    pub n_v: u64,
    pub n_p: u64,
    pub hit: bool,
    pub cost: f64,
}

/// A tree with its mesh, as one side of a query.
#[derive(Clone, Copy)]
pub struct Collider<'a> {
    pub tree: &'a ObbTree,
    pub mesh: &'a TriangleMesh,
}

impl<'a> Collider<'a> {
    pub fn new(tree: &'a ObbTree, mesh: &'a TriangleMesh) -> Result<Self> {
        tree.check_mesh(mesh)?;
        Ok(Self { tree, mesh })
    }
}

fn padded(obb: &Obb, pad: f64) -> Obb {
    Obb::new(obb.center, obb.axes, obb.half_extents.add_scalar(pad))
}

struct Query<'a> {
    a: Collider<'a>,
    b: Collider<'a>,
    boxes_a: Vec<Obb>,
    boxes_b: Vec<Obb>,
    verts_b: Vec<Point3<f64>>,
}

impl<'a> Query<'a> {
    fn new(a: Collider<'a>, b: Collider<'a>, xform: &RigidTransform) -> Self {
        // Boxes are padded so rounding in the moved copies never prunes a
        // touching pair.
        let pad = 1e-9 * (a.mesh.diagonal() + b.mesh.diagonal());
        Self {
            boxes_a: a.tree.nodes.iter().map(|n| padded(&n.obb, pad)).collect(),
            boxes_b: b
                .tree
                .nodes
                .iter()
                .map(|n| padded(&n.obb.transformed(&xform.rotation, &xform.translation), pad))
                .collect(),
            verts_b: b.mesh.vertices().iter().map(|p| xform.apply(p)).collect(),
            a,
            b,
        }
    }

    fn tri_b(&self, f: usize) -> [Point3<f64>; 3] {
        self.b.mesh.faces()[f].map(|v| self.verts_b[v])
    }

    fn faces_meet(&self, fa: &[usize], fb: &[usize], n_p: &mut u64, early_exit: bool) -> Result<bool> {
        let mut hit = false;
        for &i in fa {
            let ta = self.a.mesh.triangle(i);
            for &j in fb {
                *n_p += 1;
                if tri_tri_intersect(&ta, &self.tri_b(j))? {
                    hit = true;
                    if early_exit {
                        return Ok(true);
                    }
                }
            }
        }
        Ok(hit)
    }

    /// Depth-first simultaneous descent. `pruned` sees every disjoint box
    /// pair.
    fn run(&self, early_exit: bool, mut pruned: impl FnMut(usize, usize)) -> Result<(u64, u64, bool)> {
        let (ta, tb) = (self.a.tree, self.b.tree);
        let (mut n_v, mut n_p, mut hit) = (0u64, 0u64, false);
        let mut stack = vec![(0usize, 0usize)];
        while let Some((i, j)) = stack.pop() {
            n_v += 1;
            if !self.boxes_a[i].overlaps(&self.boxes_b[j]) {
                pruned(i, j);
                continue;
            }
            let (na, nb) = (&ta.nodes[i], &tb.nodes[j]);
            match (na.is_leaf(), nb.is_leaf()) {
                (true, true) => {
                    if self.faces_meet(&na.faces, &nb.faces, &mut n_p, early_exit)? {
                        hit = true;
                        if early_exit {
                            break;
                        }
                    }
                }
                (la, lb) => {
                    let descend_a = lb || (!la && na.obb.volume() >= nb.obb.volume());
                    if descend_a {
                        stack.extend(na.children.iter().rev().map(|&c| (c, j)));
                    } else {
                        stack.extend(nb.children.iter().rev().map(|&c| (i, c)));
                    }
                }
            }
        }
        Ok((n_v, n_p, hit))
    }
}

/// Simultaneous descent of two trees with `b` moved by `xform`. Every box
/// pair tested counts toward `n_v` and every triangle pair toward `n_p`;
/// the larger-volume node of an overlapping pair is split.
pub fn traverse_pair(a: Collider, b: Collider, xform: &RigidTransform, cost: &CostModel, early_exit: bool) -> Result<CollisionStats> {
    let (n_v, n_p, hit) = Query::new(a, b, xform).run(early_exit, |_, _| {})?;
    Ok(CollisionStats {
        n_v,
        n_p,
        hit,
        cost: cost.cost(n_v, n_p),
    })
}

/// All-pairs triangle scan.
pub fn brute_force_hit(mesh_a: &TriangleMesh, mesh_b: &TriangleMesh, xform: &RigidTransform) -> Result<bool> {
    let verts: Vec<Point3<f64>> = mesh_b.vertices().iter().map(|p| xform.apply(p)).collect();
    for i in 0..mesh_a.face_count() {
        let ta = mesh_a.triangle(i);
        for f in mesh_b.faces() {
            if tri_tri_intersect(&ta, &f.map(|v| verts[v]))? {
                return Ok(true);
            }
        }
    }
    Ok(false)
}

/// Disjoint box pairs found during traversal under which some triangle pair
/// does intersect; empty when pruning was sound.
pub fn unsound_prunes(a: Collider, b: Collider, xform: &RigidTransform) -> Result<Vec<(usize, usize)>> {
    let q = Query::new(a, b, xform);
    let mut pruned = Vec::new();
    q.run(false, |i, j| pruned.push((i, j)))?;
    let mut bad = Vec::new();
    for (i, j) in pruned {
        let mut n = 0;
        if q.faces_meet(&a.tree.nodes[i].faces, &b.tree.nodes[j].faces, &mut n, true)? {
            bad.push((i, j));
        }
    }
    Ok(bad)
}

/// Uniformly random rotation (Shoemake).
pub fn random_rotation(rng: &mut impl Rng) -> Matrix3<f64> {
    let (u1, u2, u3): (f64, f64, f64) = (rng.gen(), rng.gen(), rng.gen());
    let tau = std::f64::consts::TAU;
    let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
    let q = Quaternion::new(b * (tau * u3).cos(), a * (tau * u2).sin(), a * (tau * u2).cos(), b * (tau * u3).sin());
    *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix()
}

fn random_direction(rng: &mut impl Rng) -> Vector3<f64> {
    let z: f64 = rng.gen_range(-1.0..=1.0);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let r = (1.0 - z * z).max(0.0).sqrt();
    Vector3::new(r * phi.cos(), r * phi.sin(), z)
}

/// Poses place `b`'s bounding-sphere center at a uniform random distance in
/// `[min_scale, shell_scale] * (r_a + r_b)` from `a`'s, in a uniform
/// direction, with a uniform rotation about its own center. With the
/// default range `[0, 2]` the spheres overlap in half the poses.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseSampler {
    pub min_scale: f64,
    pub shell_scale: f64,
}

impl Default for PoseSampler {
    fn default() -> Self {
        Self {
            min_scale: 0.0,
            shell_scale: 2.0,
        }
    }
}

impl PoseSampler {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_scale >= 0.0 && self.shell_scale > 0.0 && self.min_scale <= self.shell_scale) {
            return Err(Error::Config("pose shell needs 0 <= min_scale <= shell_scale, shell_scale > 0".into()));
        }
        Ok(())
    }

    pub fn sample(&self, mesh_a: &TriangleMesh, mesh_b: &TriangleMesh, n: usize, rng_seed: u64) -> Vec<RigidTransform> {
        let sphere = |m: &TriangleMesh| (m.bounds().center(), 0.5 * m.diagonal());
        let ((ca, ra), (cb, rb)) = (sphere(mesh_a), sphere(mesh_b));
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        (0..n)
            .map(|_| {
                let rotation = random_rotation(&mut rng);
                let d = rng.gen_range(self.min_scale * (ra + rb)..=self.shell_scale * (ra + rb));
                let dir = random_direction(&mut rng);
                let translation = ca.coords + dir * d - rotation * cb.coords;
                RigidTransform { rotation, translation }
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub poses: usize,
    pub sampler: PoseSampler,
    pub cost: CostModel,
    pub rng_seed: u64,
    pub early_exit: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            poses: 1000,
            sampler: PoseSampler::default(),
            cost: CostModel::default(),
            rng_seed: 0,
            early_exit: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreeKind {
    Variational,
    Baseline,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub pose: usize,
    pub tree: TreeKind,
    pub n_v: u64,
    pub n_p: u64,
    pub hit: bool,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean_n_v: f64,
    pub median_n_v: f64,
    pub mean_n_p: f64,
    pub median_n_p: f64,
    pub mean_cost: f64,
    pub median_cost: f64,
    pub hits: usize,
}

fn mean_median(mut xs: Vec<f64>) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    xs.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 { xs[n / 2] } else { 0.5 * (xs[n / 2 - 1] + xs[n / 2]) };
    (mean, median)
}

impl Summary {
    fn of(stats: &[CollisionStats]) -> Self {
        let (mean_n_v, median_n_v) = mean_median(stats.iter().map(|s| s.n_v as f64).collect());
        let (mean_n_p, median_n_p) = mean_median(stats.iter().map(|s| s.n_p as f64).collect());
        let (mean_cost, median_cost) = mean_median(stats.iter().map(|s| s.cost).collect());
        Self {
            mean_n_v,
            median_n_v,
            mean_n_p,
            median_n_p,
            mean_cost,
            median_cost,
            hits: stats.iter().filter(|s| s.hit).count(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub format_version: u32,
    pub config: BenchConfig,
    pub variational: Summary,
    pub baseline: Summary,
    /// `1 - mean n_v(variational) / mean n_v(baseline)`.
    pub n_v_reduction: f64,
    pub cost_reduction: f64,
    /// Poses where the two tree pairs disagree on contact; always zero for
    /// sound traversals.
    pub hit_disagreements: usize,
    pub records: Vec<PoseRecord>,
}

impl BenchReport {
    /// One row per pose and tree: pose, tree, n_v, n_p, hit, cost.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.records {
            w.serialize(r).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::io("csv output", e))?;
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::io("csv output", std::io::Error::other(e.to_string()))
}

/// Runs both tree pairs over the same sampled poses. Poses are drawn
/// sequentially from the seed and evaluated in parallel, so reports are
/// identical across runs and thread counts.
pub fn run_bench(variational: (Collider, Collider), baseline: (Collider, Collider), config: &BenchConfig) -> Result<BenchReport> {
    if config.poses == 0 {
        return Err(Error::Config("at least one pose is needed".into()));
    }
    config.cost.validate()?;
    config.sampler.validate()?;
    if variational.0.mesh.content_hash() != baseline.0.mesh.content_hash()
        || variational.1.mesh.content_hash() != baseline.1.mesh.content_hash()
    {
        return Err(Error::Config("both tree pairs must be built over the same meshes".into()));
    }
    let poses = config.sampler.sample(variational.0.mesh, variational.1.mesh, config.poses, config.rng_seed);
    let stats: Vec<(CollisionStats, CollisionStats)> = poses
        .par_iter()
        .map(|x| {
            Ok((
                traverse_pair(variational.0, variational.1, x, &config.cost, config.early_exit)?,
                traverse_pair(baseline.0, baseline.1, x, &config.cost, config.early_exit)?,
            ))
        })
        .collect::<Result<_>>()?;
    let (sv, sb): (Vec<_>, Vec<_>) = stats.iter().copied().unzip();
    let record = |pose: usize, tree: TreeKind, s: &CollisionStats| PoseRecord {
        pose,
        tree,
        n_v: s.n_v,
        n_p: s.n_p,
        hit: s.hit,
        cost: s.cost,
    };
    let records = stats
        .iter()
        .enumerate()
        .flat_map(|(k, (v, b))| [record(k, TreeKind::Variational, v), record(k, TreeKind::Baseline, b)])
        .collect();
    let (v, b) = (Summary::of(&sv), Summary::of(&sb));
    let reduction = |x: f64, y: f64| if y > 0.0 { 1.0 - x / y } else { 0.0 };
    Ok(BenchReport {
        format_version: BENCH_FORMAT_VERSION,
        config: config.clone(),
        n_v_reduction: reduction(v.mean_n_v, b.mean_n_v),
        cost_reduction: reduction(v.mean_cost, b.mean_cost),
        hit_disagreements: stats.iter().filter(|(v, b)| v.hit != b.hit).count(),
        variational: v,
        baseline: b,
        records,
    })
}
