//! Lloyd-style clustering of mesh faces into `N` oriented boxes that
//! minimize the summed outside volume.
//!
//! One iteration floods the faces from per-cluster seeds (a face joins the
//! competing cluster whose box grows the least in outside volume), then
//! refits every box by steepest descent over its center and orientation.
//! When progress stalls the least useful cluster is moved to the worst
//! served face; the move is kept only if it lowers the total.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mesh::{Aabb, TriangleMesh};
use crate::obb::{fit_tight, principal_frame, FitMode, Obb, ObbParams};
use crate::volume::ObvEvaluator;

/// Assignment of a face set to clusters.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Partition {
    /// Sorted, distinct face ids.
    pub faces: Vec<usize>,
    /// Cluster index of `faces[i]`.
    pub assignment: Vec<usize>,
    /// Sorted face ids per cluster.
    pub clusters: Vec<Vec<usize>>,
}

impl Partition {
    pub fn from_assignment(faces: Vec<usize>, assignment: Vec<usize>, n_clusters: usize) -> Self {
        let mut clusters = vec![Vec::new(); n_clusters];
        for (&f, &c) in faces.iter().zip(&assignment) {
            clusters[c].push(f);
        }
        Self {
            faces,
            assignment,
            clusters,
        }
    }

    pub fn cluster_of(&self, face: usize) -> Option<usize> {
        self.faces.binary_search(&face).ok().map(|i| self.assignment[i])
    }

    /// Checks totality, disjointness and non-emptiness against `faces`.
    pub fn check(&self, faces: &[usize]) -> std::result::Result<(), String> {
        let mut expected = faces.to_vec();
        expected.sort_unstable();
        expected.dedup();
        if self.faces != expected {
            return Err("partition face set differs from the input".into());
        }
        let mut seen: Vec<usize> = self.clusters.iter().flatten().copied().collect();
        seen.sort_unstable();
        if seen != expected {
            return Err("clusters do not partition the face set".into());
        }
        if let Some(i) = self.clusters.iter().position(|c| c.is_empty()) {
            return Err(format!("cluster {i} is empty"));
        }
        for (&f, &c) in self.faces.iter().zip(&self.assignment) {
            if self.clusters[c].binary_search(&f).is_err() {
                return Err(format!("face {f} assigned to {c} but listed elsewhere"));
            }
        }
        Ok(())
    }
}

/// One box of a clustering.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterState {
    pub params: ObbParams,
    /// Tight centered fit of the cluster's faces for `params`.
    pub obb: Obb,
    pub obv: f64,
    pub seed_face: usize,
}

/// Finite-difference steepest descent settings for [`refit_cluster`].
#[derive(Clone, Debug, PartialEq)]
pub struct DescentConfig {
    /// Center difference step, as a fraction of the cluster diagonal.
    pub center_step: f64,
    /// Rotation difference step, radians.
    pub rotation_step: f64,
    pub armijo: f64,
    pub max_halvings: usize,
    /// Stop once an accepted step improves by less than this fraction.
    pub min_rel_improvement: f64,
    pub max_steps: usize,
    /// First trial step length in normalized parameter units.
    pub initial_step: f64,
    /// When false only the center moves.
    pub optimize_rotation: bool,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self {
            center_step: 1e-3,
            rotation_step: 1e-3,
            armijo: 0.1,
            max_halvings: 20,
            min_rel_improvement: 1e-4,
            max_steps: 50,
            initial_step: 0.25,
            optimize_rotation: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LloydConfig {
    pub n_clusters: usize,
    pub max_iters: usize,
    /// Consecutive low-progress iterations that trigger an adjustment.
    pub stall_window: usize,
    pub stall_tol: f64,
    pub descent: DescentConfig,
    pub rng_seed: u64,
}

impl Default for LloydConfig {
    fn default() -> Self {
        Self {
            n_clusters: 2,
            max_iters: 20,
            stall_window: 3,
            stall_tol: 1e-3,
            descent: DescentConfig::default(),
            rng_seed: 0,
        }
    }
}

impl LloydConfig {
    pub fn with_clusters(mut self, n: usize) -> Self {
        self.n_clusters = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.descent;
        if self.n_clusters == 0 {
            return Err(Error::Config("n_clusters must be at least 1".into()));
        }
        if self.stall_window == 0 || !(self.stall_tol > 0.0) {
            return Err(Error::Config("stall window and tolerance must be positive".into()));
        }
        let positive = [d.center_step, d.rotation_step, d.armijo, d.min_rel_improvement, d.initial_step];
        if positive.iter().any(|x| !(*x > 0.0)) || d.armijo >= 1.0 {
            return Err(Error::Config("descent steps and tolerances must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EventKind {
    Iteration,
    Adjustment,
}

/// Progress record; `step` is a logical clock shared by all events of a run.
#[derive(Clone, Debug, PartialEq)]
pub struct LloydEvent {
    pub step: usize,
    pub kind: EventKind,
    pub accepted: bool,
    pub total: f64,
    pub cluster_obv: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LloydResult {
    pub clusters: Vec<ClusterState>,
    pub partition: Partition,
    /// Sum of the cluster outside volumes.
    pub error: f64,
    pub trace: Vec<LloydEvent>,
}

fn sorted_faces(faces: &[usize]) -> Vec<usize> {
    let mut f = faces.to_vec();
    f.sort_unstable();
    f.dedup();
    f
}

/// Farthest-point sampling over face centroids; the first seed is drawn from
/// `rng_seed`. Ties go to the lowest face id.
pub fn init_seeds(mesh: &TriangleMesh, faces: &[usize], n: usize, rng_seed: u64) -> Result<Vec<usize>> {
    let faces = sorted_faces(faces);
    if n > faces.len() || n == 0 {
        return Err(Error::TooFewFaces {
            requested: n,
            available: faces.len(),
        });
    }
    let centroids: Vec<Point3<f64>> = faces.iter().map(|&f| mesh.face_centroid(f)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let first = rng.gen_range(0..faces.len());
    let mut seeds = vec![first];
    let mut dist: Vec<f64> = centroids.iter().map(|c| (c - centroids[first]).norm()).collect();
    while seeds.len() < n {
        let mut best = None;
        for (i, &d) in dist.iter().enumerate() {
            if seeds.contains(&i) {
                continue;
            }
            if best.is_none_or(|(_, bd)| d > bd) {
                best = Some((i, d));
            }
        }
        let (next, _) = best.expect("fewer seeds than faces");
        seeds.push(next);
        for (i, d) in dist.iter_mut().enumerate() {
            *d = d.min((centroids[i] - centroids[next]).norm());
        }
    }
    Ok(seeds.into_iter().map(|i| faces[i]).collect())
}

/// Change in outside volume when `face` joins `cluster` with its params held
/// fixed and extents grown to cover the face.
pub fn delta_obv(eval: &ObvEvaluator, cluster: &ClusterState, face: usize) -> Result<f64> {
    grow(eval, cluster, face).map(|(_, v)| (v - cluster.obv).abs())
}

fn grow(eval: &ObvEvaluator, cluster: &ClusterState, face: usize) -> Result<(Obb, f64)> {
    let obb = cluster.obb.grown_centered(&eval.mesh.triangle(face));
    if obb == cluster.obb {
        return Ok((obb, cluster.obv));
    }
    eval.obv(&cluster.params, &obb).map(|v| (obb, v))
}

#[derive(PartialEq)]
struct Pending {
    dist: f64,
    cluster: usize,
    face: usize,
}

impl Eq for Pending {}

impl Ord for Pending {
    // Reversed so the max-heap pops the nearest entry first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .total_cmp(&self.dist)
            .then(other.cluster.cmp(&self.cluster))
            .then(other.face.cmp(&self.face))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Grows clusters over face adjacency from the face nearest each box center.
///
/// Entries are popped by centroid distance to the claiming cluster's center.
/// A popped face goes to the cluster, among those that reached it, whose
/// outside volume changes least (lowest index on ties); faces no cluster can
/// reach go to the nearest center. Returned states carry the grown boxes.
pub fn flood_partition(
    eval: &ObvEvaluator,
    faces: &[usize],
    clusters: &[ClusterState],
) -> Result<(Partition, Vec<ClusterState>)> {
    let faces = sorted_faces(faces);
    let mesh = eval.mesh;
    let n = clusters.len();
    if n == 0 || n > faces.len() {
        return Err(Error::TooFewFaces {
            requested: n,
            available: faces.len(),
        });
    }
    const NONE: usize = usize::MAX;
    // Position of each mesh face within `faces`, or NONE.
    let mut slot = vec![NONE; mesh.face_count()];
    for (i, &f) in faces.iter().enumerate() {
        slot[f] = i;
    }
    let centroids: Vec<Point3<f64>> = faces.iter().map(|&f| mesh.face_centroid(f)).collect();
    let mut assignment = vec![NONE; faces.len()];
    let mut reached: Vec<Vec<usize>> = vec![Vec::new(); faces.len()];
    let mut heap = BinaryHeap::new();
    let mut states: Vec<ClusterState> = Vec::with_capacity(n);

    for (k, c) in clusters.iter().enumerate() {
        let seed = (0..faces.len())
            .filter(|&i| assignment[i] == NONE)
            .min_by(|&a, &b| {
                (centroids[a] - c.params.center)
                    .norm()
                    .total_cmp(&(centroids[b] - c.params.center).norm())
            })
            .expect("more faces than clusters");
        assignment[seed] = k;
        let (obb, obv) = eval.fit_and_obv(&mesh.triangle(faces[seed]), &c.params)?;
        states.push(ClusterState {
            params: c.params,
            obb,
            obv,
            seed_face: faces[seed],
        });
    }

    let push_neighbors = |i: usize, k: usize, assignment: &[usize], reached: &mut [Vec<usize>], heap: &mut BinaryHeap<Pending>, center: &Point3<f64>| {
        for &nb in mesh.neighbors(faces[i]) {
            let j = slot[nb];
            if j == NONE || assignment[j] != NONE || reached[j].contains(&k) {
                continue;
            }
            reached[j].push(k);
            heap.push(Pending {
                dist: (centroids[j] - center).norm(),
                cluster: k,
                face: j,
            });
        }
    };

    for i in 0..faces.len() {
        if assignment[i] != NONE {
            let k = assignment[i];
            push_neighbors(i, k, &assignment, &mut reached, &mut heap, &states[k].params.center);
        }
    }

    while let Some(Pending { face: i, .. }) = heap.pop() {
        if assignment[i] != NONE {
            continue;
        }
        let mut candidates = reached[i].clone();
        candidates.sort_unstable();
        let mut best: Option<(usize, Obb, f64, f64)> = None;
        for &k in &candidates {
            let (obb, v) = grow(eval, &states[k], faces[i])?;
            let d = (v - states[k].obv).abs();
            if best.as_ref().is_none_or(|b| d < b.3) {
                best = Some((k, obb, v, d));
            }
        }
        let (k, obb, v, _) = best.expect("popped faces have a claimant");
        assignment[i] = k;
        states[k].obb = obb;
        states[k].obv = v;
        let center = states[k].params.center;
        push_neighbors(i, k, &assignment, &mut reached, &mut heap, &center);
    }

    // Faces in components no seed touched.
    for i in 0..faces.len() {
        if assignment[i] != NONE {
            continue;
        }
        let k = (0..n)
            .min_by(|&a, &b| {
                (centroids[i] - states[a].params.center)
                    .norm()
                    .total_cmp(&(centroids[i] - states[b].params.center).norm())
            })
            .expect("at least one cluster");
        let (obb, v) = grow(eval, &states[k], faces[i])?;
        assignment[i] = k;
        states[k].obb = obb;
        states[k].obv = v;
    }

    Ok((Partition::from_assignment(faces, assignment, n), states))
}

/// Cluster-local normalized coordinates: center offsets in units of the
/// cluster diagonal, rotation increments in radians.
fn displaced(start: &ObbParams, x: &[f64; 6], scale: f64) -> ObbParams {
    let t = Vector3::new(x[0], x[1], x[2]) * scale;
    let r = Vector3::new(x[3], x[4], x[5]);
    start.compose(&t, &r)
}

/// Steepest descent on the outside volume of the tight centered box of
/// `faces`, starting at `start`. Gradients are central differences; steps
/// are backtracked until the Armijo condition holds, and the result is
/// never worse than the start.
pub fn refit_cluster(
    eval: &ObvEvaluator,
    faces: &[usize],
    start: &ObbParams,
    descent: &DescentConfig,
) -> Result<(ObbParams, Obb, f64)> {
    if faces.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let points = eval.mesh.face_vertices(faces);
    refit_points(eval, &points, start, descent)
}

pub(crate) fn refit_points(
    eval: &ObvEvaluator,
    points: &[Point3<f64>],
    start: &ObbParams,
    descent: &DescentConfig,
) -> Result<(ObbParams, Obb, f64)> {
    let scale = Aabb::from_points(points.iter()).diagonal().max(eval.min_half_extent);
    // A center step below the cache quantum would read back the same entry.
    let hc = (descent.center_step * scale).max(2.0 * eval.cache.length_quantum()) / scale;
    let dims = if descent.optimize_rotation { 6 } else { 3 };
    let f = |p: &ObbParams| eval.fit_and_obv(points, p);

    let mut cur = *start;
    let (mut obb, mut val) = f(&cur)?;
    let mut step = descent.initial_step;
    for _ in 0..descent.max_steps {
        if val <= 1e-12 {
            break;
        }
        let mut g = [0.0f64; 6];
        for (k, gk) in g.iter_mut().enumerate().take(dims) {
            let h = if k < 3 { hc } else { descent.rotation_step };
            let mut x = [0.0; 6];
            x[k] = h;
            let plus = f(&displaced(&cur, &x, scale))?.1;
            x[k] = -h;
            let minus = f(&displaced(&cur, &x, scale))?.1;
            *gk = (plus - minus) / (2.0 * h);
        }
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn == 0.0 || !gn.is_finite() {
            break;
        }
        let dir = g.map(|v| -v / gn);
        let mut alpha = step;
        let mut accepted = None;
        for _ in 0..=descent.max_halvings {
            let cand = displaced(&cur, &dir.map(|v| v * alpha), scale);
            let (o, v) = f(&cand)?;
            if v <= val - descent.armijo * alpha * gn {
                accepted = Some((cand, o, v));
                break;
            }
            alpha *= 0.5;
        }
        let Some((cand, o, v)) = accepted else { break };
        let rel = (val - v) / val;
        cur = cand;
        obb = o;
        val = v;
        step = (2.0 * alpha).min(1.0);
        if rel < descent.min_rel_improvement {
            break;
        }
    }
    Ok((cur, obb, val))
}

/// Picks the best of the current params, their recentered version and the
/// recentered principal frame of the faces, then descends from it.
fn refit_from_state(eval: &ObvEvaluator, faces: &[usize], current: &ObbParams, descent: &DescentConfig) -> Result<(ObbParams, Obb, f64)> {
    let mesh = eval.mesh;
    let points = mesh.face_vertices(faces);
    let recenter = |p: &ObbParams| -> Result<ObbParams> {
        let o = fit_tight(&points, p, FitMode::Recenter, eval.min_half_extent)?;
        Ok(ObbParams { center: o.center, ..*p })
    };
    let mut starts = vec![*current, recenter(current)?];
    if descent.optimize_rotation {
        let (frame, mean, _) = principal_frame(faces.iter().map(|&f| mesh.triangle(f)));
        starts.push(recenter(&ObbParams::new(mean, &frame))?);
    }
    let mut best: Option<(ObbParams, f64)> = None;
    for s in starts {
        let v = eval.fit_and_obv(&points, &s)?.1;
        if best.is_none_or(|(_, bv)| v < bv) {
            best = Some((s, v));
        }
    }
    refit_points(eval, &points, &best.expect("non-empty starts").0, descent)
}

fn refit_all(eval: &ObvEvaluator, partition: &Partition, flooded: &[ClusterState], descent: &DescentConfig) -> Result<Vec<ClusterState>> {
    flooded
        .par_iter()
        .zip(partition.clusters.par_iter())
        .map(|(c, faces)| {
            let (params, obb, obv) = refit_from_state(eval, faces, &c.params, descent)?;
            Ok(ClusterState {
                params,
                obb,
                obv,
                seed_face: c.seed_face,
            })
        })
        .collect()
}

fn total(states: &[ClusterState]) -> f64 {
    states.iter().map(|c| c.obv).sum()
}

/// Fraction-weighted pairwise overlap volume of each box with the others,
/// estimated from `samples` uniform points per box.
fn overlap_volumes(states: &[ClusterState], samples: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    states
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let mut hits = 0usize;
            for _ in 0..samples {
                let local = Vector3::from_fn(|i, _| rng.gen_range(-1.0..=1.0) * c.obb.half_extents[i]);
                let p = c.obb.to_world(&local);
                hits += states
                    .iter()
                    .enumerate()
                    .filter(|&(j, o)| j != k && o.obb.contains_point(&p, 0.0))
                    .count();
            }
            c.obb.volume() * hits as f64 / samples as f64
        })
        .collect()
}

/// Face whose removal would save its cluster the most outside volume,
/// excluding cluster `skip`. Falls back to the face farthest from its
/// cluster center when no single face shrinks any box.
fn worst_served_face(eval: &ObvEvaluator, partition: &Partition, states: &[ClusterState], skip: usize) -> Result<Option<usize>> {
    let mesh = eval.mesh;
    let mut best: Option<(usize, f64)> = None;
    let mut far: Option<(usize, f64)> = None;
    for (k, faces) in partition.clusters.iter().enumerate() {
        if k == skip || faces.len() < 2 {
            continue;
        }
        let c = &states[k];
        for (i, &f) in faces.iter().enumerate() {
            let rest: Vec<usize> = faces.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &g)| g).collect();
            let obb = eval.fit(&mesh.face_vertices(&rest), &c.params)?;
            let saving = if obb == c.obb { 0.0 } else { c.obv - eval.obv(&c.params, &obb)? };
            if saving > 0.0 && best.is_none_or(|(_, b)| saving > b) {
                best = Some((f, saving));
            }
            let d = (mesh.face_centroid(f) - c.params.center).norm();
            if far.is_none_or(|(_, b)| d > b) {
                far = Some((f, d));
            }
        }
    }
    Ok(best.or(far).map(|(f, _)| f))
}

/// Moves the least important cluster to the worst served face and reruns
/// up to three flood and refit passes. Returns the new state and partition when the
/// total outside volume strictly drops, otherwise `None`.
pub fn adjust_clusters(
    eval: &ObvEvaluator,
    faces: &[usize],
    states: &[ClusterState],
    partition: &Partition,
    descent: &DescentConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<(Vec<ClusterState>, Partition)>> {
    let n = states.len();
    if n < 2 {
        return Ok(None);
    }
    let counts: Vec<f64> = partition.clusters.iter().map(|c| c.len() as f64).collect();
    let max_count = counts.iter().cloned().fold(0.0, f64::max).max(1.0);
    let overlaps = overlap_volumes(states, 10_000, rng);
    let max_overlap = overlaps.iter().cloned().fold(0.0, f64::max);
    let importance: Vec<f64> = (0..n)
        .map(|k| {
            let o = if max_overlap > 0.0 { overlaps[k] / max_overlap } else { 0.0 };
            counts[k] / max_count - o
        })
        .collect();
    let victim = (0..n).min_by(|&a, &b| importance[a].total_cmp(&importance[b])).expect("n >= 2");
    let Some(target) = worst_served_face(eval, partition, states, victim)? else {
        return Ok(None);
    };
    let mut moved = states.to_vec();
    moved[victim].params.center = eval.mesh.face_centroid(target);
    // The moved seed usually needs a couple of passes before the other
    // clusters let go of its faces.
    let mut best: Option<(Vec<ClusterState>, Partition)> = None;
    for _ in 0..ADJUST_PASSES {
        let (p, flooded) = flood_partition(eval, faces, &moved)?;
        let refit = refit_all(eval, &p, &flooded, descent)?;
        let unchanged = best.as_ref().is_some_and(|(_, bp)| *bp == p);
        if best.as_ref().is_none_or(|(bs, _)| total(&refit) < total(bs)) {
            best = Some((refit.clone(), p));
        }
        if unchanged {
            break;
        }
        moved = refit;
    }
    Ok(best.filter(|(s, _)| total(s) < total(states)))
}

const ADJUST_PASSES: usize = 3;

/// Clusters `faces` into `config.n_clusters` boxes from farthest-point
/// seeds.
pub fn lloyd_optimize(eval: &ObvEvaluator, faces: &[usize], config: &LloydConfig) -> Result<LloydResult> {
    config.validate()?;
    let mesh = eval.mesh;
    let seeds = init_seeds(mesh, faces, config.n_clusters, config.rng_seed)?;
    let (frame, _, _) = principal_frame(sorted_faces(faces).iter().map(|&f| mesh.triangle(f)));
    let initial: Vec<ClusterState> = seeds
        .iter()
        .map(|&s| {
            let params = ObbParams::new(mesh.face_centroid(s), &frame);
            ClusterState {
                params,
                obb: Obb::new(params.center, *frame.matrix(), Vector3::zeros()),
                obv: 0.0,
                seed_face: s,
            }
        })
        .collect();
    lloyd_from(eval, faces, &initial, config)
}

/// Partition totality and per-cluster containment, checked in debug builds
/// after every accepted change.
fn debug_check(eval: &ObvEvaluator, faces: &[usize], partition: &Partition, states: &[ClusterState]) {
    if cfg!(debug_assertions) {
        if let Err(e) = partition.check(faces) {
            panic!("invalid partition after accepted step: {e}");
        }
        let eps = 1e-9 * eval.mesh.diagonal();
        for (c, members) in states.iter().zip(&partition.clusters) {
            let pts = eval.mesh.face_vertices(members);
            assert!(pts.iter().all(|p| c.obb.contains_point(p, eps)), "cluster box misses a vertex");
        }
    }
}

/// Lloyd iteration from given cluster params (only `params` of `initial`
/// is read). The number of clusters is `initial.len()`.
pub fn lloyd_from(eval: &ObvEvaluator, faces: &[usize], initial: &[ClusterState], config: &LloydConfig) -> Result<LloydResult> {
    config.validate()?;
    let faces = sorted_faces(faces);
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut trace = Vec::new();
    let mut step = 0usize;
    let mut record = |trace: &mut Vec<LloydEvent>, kind, accepted, states: &[ClusterState]| {
        let event = LloydEvent {
            step,
            kind,
            accepted,
            total: total(states),
            cluster_obv: states.iter().map(|c| c.obv).collect(),
        };
        log::debug!(
            "lloyd step {} {:?} accepted={} total={:.6e} clusters={:?}",
            event.step,
            event.kind,
            event.accepted,
            event.total,
            event.cluster_obv
        );
        trace.push(event);
        step += 1;
    };

    let (p, flooded) = flood_partition(eval, &faces, initial)?;
    let mut states = refit_all(eval, &p, &flooded, &config.descent)?;
    let mut partition = p;
    record(&mut trace, EventKind::Iteration, true, &states);
    debug_check(eval, &faces, &partition, &states);
    let mut stalled = 0usize;

    for _ in 1..config.max_iters {
        let before = total(&states);
        let (p, flooded) = flood_partition(eval, &faces, &states)?;
        let next = refit_all(eval, &p, &flooded, &config.descent)?;
        let after = total(&next);
        let accepted = after <= before;
        record(&mut trace, EventKind::Iteration, accepted, &next);
        if accepted {
            let rel = if before > 0.0 { (before - after) / before } else { 0.0 };
            stalled = if rel < config.stall_tol { stalled + 1 } else { 0 };
            states = next;
            partition = p;
            debug_check(eval, &faces, &partition, &states);
        } else {
            // The same state would flood the same way again.
            stalled = config.stall_window;
        }
        if stalled >= config.stall_window {
            match adjust_clusters(eval, &faces, &states, &partition, &config.descent, &mut rng)? {
                Some((s, p)) => {
                    record(&mut trace, EventKind::Adjustment, true, &s);
                    states = s;
                    partition = p;
                    stalled = 0;
                    debug_check(eval, &faces, &partition, &states);
                }
                None => {
                    record(&mut trace, EventKind::Adjustment, false, &states);
                    break;
                }
            }
        }
    }

    let error = total(&states);
    log::info!("lloyd finished: {} clusters, total outside volume {:.6e}", states.len(), error);
    Ok(LloydResult {
        clusters: states,
        partition,
        error,
        trace,
    })
}
