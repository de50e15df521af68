//! Building and improving box hierarchies: top-down decomposition by Lloyd
//! clustering, bottom-up regrouping with boxes as atoms, and the
//! reciprocating schedule that alternates the two.

use nalgebra::Point3;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::obb::{fit_tight, principal_frame, FitMode, Obb, ObbParams};
use crate::partition::{lloyd_from, lloyd_optimize, refit_cluster, ClusterState, LloydConfig};
use crate::tree::{tree_error, ErrorReport, ObbTree, TraceEntry, TreeNode, WeightMode};
use crate::volume::ObvEvaluator;

#[derive(Clone, Debug, PartialEq)]
pub struct HierarchyConfig {
    pub branching: usize,
    pub depth: usize,
    pub weight_mode: WeightMode,
    /// Per-node clustering settings; `n_clusters` is overridden by
    /// `branching` and the seed is mixed with the node's faces.
    pub lloyd: LloydConfig,
    pub max_cycles: usize,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            branching: 2,
            depth: 3,
            weight_mode: WeightMode::LSub,
            lloyd: LloydConfig::default(),
            max_cycles: 3,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branching < 2 {
            return Err(Error::Config("branching must be at least 2".into()));
        }
        if self.depth < 1 {
            return Err(Error::Config("depth must be at least 1".into()));
        }
        self.weight_mode.weights(self.depth)?;
        self.lloyd.clone().with_clusters(self.branching).validate()
    }
}

/// Deterministic per-node seed derived from the configured seed and the
/// node's face set, so results do not depend on evaluation order.
fn node_seed(base: u64, faces: &[usize]) -> u64 {
    let mut h = base ^ 0x243f_6a88_85a3_08d3;
    for x in [faces.len(), faces[0], faces[faces.len() - 1]] {
        h = (h ^ x as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h ^= h >> 29;
    }
    h
}

/// Subtree under construction.
struct Sub {
    obb: Obb,
    faces: Vec<usize>,
    children: Vec<Sub>,
}

fn decompose(
    eval: &ObvEvaluator,
    obb: Obb,
    faces: Vec<usize>,
    level: usize,
    config: &HierarchyConfig,
    warm: Option<&[ObbParams]>,
) -> Result<Sub> {
    if level >= config.depth || faces.len() < config.branching {
        return Ok(Sub {
            obb,
            faces,
            children: Vec::new(),
        });
    }
    let lloyd = LloydConfig {
        n_clusters: config.branching,
        rng_seed: node_seed(config.lloyd.rng_seed, &faces),
        ..config.lloyd.clone()
    };
    let result = match warm {
        Some(params) if params.len() == config.branching => {
            let initial: Vec<ClusterState> = params
                .iter()
                .map(|p| ClusterState {
                    params: *p,
                    obb: Obb::new(p.center, *p.orientation().matrix(), nalgebra::Vector3::zeros()),
                    obv: 0.0,
                    seed_face: faces[0],
                })
                .collect();
            lloyd_from(eval, &faces, &initial, &lloyd)?
        }
        _ => lloyd_optimize(eval, &faces, &lloyd)?,
    };
    let children = result
        .clusters
        .par_iter()
        .zip(result.partition.clusters.par_iter())
        .map(|(c, f)| decompose(eval, c.obb, f.clone(), level + 1, config, None))
        .collect::<Result<Vec<_>>>()?;
    Ok(Sub { obb, faces, children })
}

/// Replaces the descendants of `node` with `sub`'s children.
fn graft(tree: &mut ObbTree, node: usize, sub: Sub) {
    fn attach(tree: &mut ObbTree, parent: usize, sub: Sub) {
        let level = tree.nodes[parent].level + 1;
        let id = tree.nodes.len();
        tree.nodes.push(TreeNode {
            obb: sub.obb,
            level,
            parent: Some(parent),
            children: Vec::new(),
            faces: sub.faces,
        });
        tree.nodes[parent].children.push(id);
        for c in sub.children {
            attach(tree, id, c);
        }
    }
    tree.nodes[node].children.clear();
    for c in sub.children {
        attach(tree, node, c);
    }
    tree.canonicalize();
}

/// Splits `node` by Lloyd clustering into `branching` children and recurses
/// to the configured depth. Existing descendants are discarded; nodes with
/// fewer faces than `branching` stay leaves.
pub fn decompose_top_down(eval: &ObvEvaluator, tree: &ObbTree, node: usize, config: &HierarchyConfig) -> Result<ObbTree> {
    config.validate()?;
    let n = &tree.nodes[node];
    let sub = decompose(eval, n.obb, n.faces.clone(), n.level, config, None)?;
    let mut out = tree.clone();
    graft(&mut out, node, sub);
    Ok(out)
}

/// Largest number of candidate groupings enumerated per merge scope.
const MAX_GROUPINGS: usize = 20_000;

/// All ways to put `atoms` atoms into bins of the given sizes, as bin index
/// per atom, in lexicographic order.
fn groupings(atoms: usize, capacity: &[usize]) -> Vec<Vec<usize>> {
    fn rec(i: usize, left: &mut Vec<usize>, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) -> bool {
        if out.len() > MAX_GROUPINGS {
            return false;
        }
        if i == cur.len() {
            out.push(cur.clone());
            return true;
        }
        for b in 0..left.len() {
            if left[b] > 0 {
                left[b] -= 1;
                cur[i] = b;
                let ok = rec(i + 1, left, cur, out);
                left[b] += 1;
                if !ok {
                    return false;
                }
            }
        }
        true
    }
    let mut out = Vec::new();
    let mut left = capacity.to_vec();
    let mut cur = vec![0; atoms];
    if rec(0, &mut left, &mut cur, &mut out) {
        out
    } else {
        Vec::new()
    }
}

/// Box enclosing the corners of `atoms`, with the lower outside volume of
/// the two candidate orientations (the parent's current one and the
/// principal frame of the atoms' faces), recentered.
fn group_box(eval: &ObvEvaluator, tree: &ObbTree, atoms: &[usize], current: &ObbParams) -> Result<(ObbParams, f64)> {
    let corners: Vec<Point3<f64>> = atoms.iter().flat_map(|&a| tree.nodes[a].obb.corners()).collect();
    let (frame, _, _) = principal_frame(atoms.iter().flat_map(|&a| tree.nodes[a].faces.iter()).map(|&f| eval.mesh.triangle(f)));
    let mut best: Option<(ObbParams, f64)> = None;
    for orientation in [current.orientation(), frame] {
        let p = ObbParams::new(Point3::origin(), &orientation);
        let o = fit_tight(&corners, &p, FitMode::Recenter, eval.min_half_extent)?;
        let p = ObbParams::new(o.center, &orientation);
        let v = eval.obv(&p, &o)?;
        if best.is_none_or(|(_, bv)| v < bv) {
            best = Some((p, v));
        }
    }
    Ok(best.expect("two candidates"))
}

struct Scope {
    parents: Vec<usize>,
    atoms: Vec<usize>,
}

fn scopes(tree: &ObbTree, level: usize) -> Vec<Scope> {
    let internal = |i: &usize| !tree.nodes[*i].is_leaf();
    let make = |parents: Vec<usize>| Scope {
        atoms: parents.iter().flat_map(|&p| tree.nodes[p].children.iter().copied()).collect(),
        parents,
    };
    if level == 0 {
        return Vec::new();
    }
    if level == 1 {
        return if internal(&0) { vec![make(vec![0])] } else { Vec::new() };
    }
    tree.level_nodes(level - 2)
        .into_iter()
        .map(|g| make(tree.nodes[g].children.iter().copied().filter(internal).collect()))
        .filter(|s| !s.parents.is_empty())
        .collect()
}

/// Regroups one scope; returns the candidate tree and the parents whose
/// child sets changed.
fn regroup(eval: &ObvEvaluator, tree: &ObbTree, scope: &Scope, config: &HierarchyConfig) -> Result<Option<(ObbTree, Vec<usize>)>> {
    let capacity: Vec<usize> = scope.parents.iter().map(|&p| tree.nodes[p].children.len()).collect();
    let current: Vec<usize> = scope
        .parents
        .iter()
        .enumerate()
        .flat_map(|(b, &p)| std::iter::repeat_n(b, tree.nodes[p].children.len()))
        .collect();
    let mut options = groupings(scope.atoms.len(), &capacity);
    if options.is_empty() {
        options.push(current.clone());
    }
    let mut memo: std::collections::HashMap<(usize, Vec<usize>), (ObbParams, f64)> = Default::default();
    let mut best: Option<(Vec<usize>, f64)> = None;
    for g in &options {
        let mut cost = 0.0;
        for (b, &p) in scope.parents.iter().enumerate() {
            let members: Vec<usize> = (0..g.len()).filter(|&i| g[i] == b).map(|i| scope.atoms[i]).collect();
            let key = (b, members.clone());
            let entry = match memo.get(&key) {
                Some(e) => *e,
                None => {
                    let e = group_box(eval, tree, &members, &tree.nodes[p].params())?;
                    memo.insert(key, e);
                    e
                }
            };
            cost += entry.1;
        }
        // Ties keep the current grouping, which is enumerated like any other.
        let better = best.as_ref().is_none_or(|(bg, bc)| cost < *bc || (cost == *bc && *g == current && *bg != current));
        if better {
            best = Some((g.clone(), cost));
        }
    }
    let (grouping, _) = best.expect("at least one grouping");

    let mut out = tree.clone();
    let mut changed = Vec::new();
    for (b, &p) in scope.parents.iter().enumerate() {
        let members: Vec<usize> = (0..grouping.len()).filter(|&i| grouping[i] == b).map(|i| scope.atoms[i]).collect();
        let mut faces: Vec<usize> = members.iter().flat_map(|&a| tree.nodes[a].faces.iter().copied()).collect();
        faces.sort_unstable();
        let start = memo[&(b, members.clone())].0;
        let points = eval.mesh.face_vertices(&faces);
        let recentered = fit_tight(&points, &start, FitMode::Recenter, eval.min_half_extent)?;
        let start = ObbParams { center: recentered.center, ..start };
        let (_, obb, v) = refit_cluster(eval, &faces, &start, &config.lloyd.descent)?;
        let same = members == tree.nodes[p].children;
        let keep_old = same && eval.obv(&tree.nodes[p].params(), &tree.nodes[p].obb)? <= v;
        if !same {
            changed.push(p);
        }
        for &a in &members {
            out.nodes[a].parent = Some(p);
        }
        let node = &mut out.nodes[p];
        node.children = members;
        node.faces = faces;
        if !keep_old {
            node.obb = obb;
        }
    }
    out.canonicalize();
    // Parent ids survive canonicalization only when nothing above moved;
    // map them through their face sets instead.
    let changed_faces: Vec<Vec<usize>> = changed.iter().map(|&p| out_faces(tree, scope, &grouping, p)).collect();
    let changed = changed_faces
        .iter()
        .filter_map(|f| out.nodes.iter().position(|n| &n.faces == f))
        .collect();
    Ok(Some((out, changed)))
}

fn out_faces(tree: &ObbTree, scope: &Scope, grouping: &[usize], parent: usize) -> Vec<usize> {
    let b = scope.parents.iter().position(|&p| p == parent).expect("parent in scope");
    let mut faces: Vec<usize> = (0..grouping.len())
        .filter(|&i| grouping[i] == b)
        .flat_map(|i| tree.nodes[scope.atoms[i]].faces.iter().copied())
        .collect();
    faces.sort_unstable();
    faces
}

/// Regroups the boxes at `level` under the nodes one level up, scope by
/// scope (the children of each node two levels up), using box corners as
/// the atoms and keeping every parent's child count. A scope's regrouping
/// is kept only if the weighted tree error strictly drops. Returns the tree
/// and whether anything was accepted.
pub fn merge_bottom_up(eval: &ObvEvaluator, tree: &ObbTree, level: usize, config: &HierarchyConfig) -> Result<(ObbTree, bool)> {
    let (t, _) = merge_level(eval, tree, level, config, &mut Vec::new(), 0)?;
    let improved = t != *tree;
    Ok((t, improved))
}

fn merge_level(
    eval: &ObvEvaluator,
    tree: &ObbTree,
    level: usize,
    config: &HierarchyConfig,
    trace: &mut Vec<TraceEntry>,
    cycle: usize,
) -> Result<(ObbTree, Vec<Vec<usize>>)> {
    let mut current = tree.clone();
    let mut total = tree_error(eval, &current)?.weighted_total;
    let mut changed_sets = Vec::new();
    let n_scopes = scopes(&current, level).len();
    for k in 0..n_scopes {
        // Scopes are recomputed because accepted regroupings renumber nodes.
        let scope = &scopes(&current, level)[k];
        let Some((candidate, changed)) = regroup(eval, &current, scope, config)? else { continue };
        if candidate == current {
            continue;
        }
        let t = tree_error(eval, &candidate)?.weighted_total;
        let accepted = t < total;
        trace.push(TraceEntry {
            step: trace.len(),
            cycle,
            phase: format!("merge level {level}"),
            accepted,
            weighted_total: t,
        });
        if accepted {
            log::info!("cycle {cycle}: merge at level {level} accepted, weighted error {t:.6e}");
            changed_sets.extend(changed.iter().map(|&p| candidate.nodes[p].faces.clone()));
            current = candidate;
            total = t;
            debug_check(&current, eval);
        }
    }
    Ok((current, changed_sets))
}

fn debug_check(tree: &ObbTree, eval: &ObvEvaluator) {
    if cfg!(debug_assertions) {
        if let Err(e) = tree.check(eval.mesh) {
            panic!("invalid tree after accepted step: {e}");
        }
    }
}

/// Full build: a single root box, top-down decomposition to the configured
/// depth, then up to `max_cycles` cycles of bottom-up regrouping (leaf level
/// upward) followed by warm-started re-decomposition of the regrouped
/// subtrees. Every accepted step strictly lowers the weighted error, so the
/// returned tree is the best one seen.
pub fn reciprocate(eval: &ObvEvaluator, config: &HierarchyConfig) -> Result<(ObbTree, ErrorReport)> {
    config.validate()?;
    let mesh = eval.mesh;
    let all: Vec<usize> = (0..mesh.face_count()).collect();
    let root_cfg = LloydConfig {
        n_clusters: 1,
        ..config.lloyd.clone()
    };
    let root = lloyd_optimize(eval, &all, &root_cfg)?;
    let mut tree = ObbTree::single(mesh, root.clusters[0].obb, config.branching, config.depth, config.weight_mode.clone());
    tree = decompose_top_down(eval, &tree, 0, config)?;
    debug_check(&tree, eval);
    let mut total = tree_error(eval, &tree)?.weighted_total;
    let mut trace = vec![TraceEntry {
        step: 0,
        cycle: 0,
        phase: "decompose".into(),
        accepted: true,
        weighted_total: total,
    }];
    log::info!("initial decomposition: weighted error {total:.6e}");

    for cycle in 1..=config.max_cycles {
        let mut any = false;
        for level in (1..=config.depth).rev() {
            let (t, changed) = merge_level(eval, &tree, level, config, &mut trace, cycle)?;
            if t != tree {
                any = true;
                tree = t;
                total = tree_error(eval, &tree)?.weighted_total;
            }
            for faces in changed {
                let Some(node) = tree.nodes.iter().position(|n| n.faces == faces && !n.is_leaf()) else { continue };
                let n = &tree.nodes[node];
                let warm: Vec<ObbParams> = n.children.iter().map(|&c| tree.nodes[c].params()).collect();
                let sub = decompose(eval, n.obb, n.faces.clone(), n.level, config, Some(&warm))?;
                let mut candidate = tree.clone();
                graft(&mut candidate, node, sub);
                let t = tree_error(eval, &candidate)?.weighted_total;
                let accepted = t < total;
                trace.push(TraceEntry {
                    step: trace.len(),
                    cycle,
                    phase: format!("redecompose level {}", n.level),
                    accepted,
                    weighted_total: t,
                });
                if accepted {
                    log::info!("cycle {cycle}: re-decomposition accepted, weighted error {t:.6e}");
                    tree = candidate;
                    total = t;
                    any = true;
                    debug_check(&tree, eval);
                }
            }
        }
        if !any {
            break;
        }
    }
    for (k, e) in trace.iter_mut().enumerate() {
        e.step = k;
    }
    let mut report = tree_error(eval, &tree)?;
    report.trace = trace;
    Ok((tree, report))
}
