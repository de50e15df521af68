//! Box hierarchies over a mesh, their level-weighted error, and the tree
//! file format.

use std::collections::VecDeque;
use std::io;

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::obb::{Obb, ObbParams};
use crate::volume::ObvEvaluator;

pub const TREE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub obb: Obb,
    /// Depth below the root; the root is level 0.
    pub level: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Sorted face ids covered by the node.
    pub faces: Vec<usize>,
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    pub fn params(&self) -> ObbParams {
        ObbParams::from_obb(&self.obb)
    }
}

/// Per-level weights of the tree error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightMode {
    /// Leaves weigh 1 and every level above adds 1.
    LSub,
    /// Explicit weight per level, root first.
    Table(Vec<f64>),
}

impl WeightMode {
    pub fn weights(&self, depth: usize) -> Result<Vec<f64>> {
        match self {
            WeightMode::LSub => Ok((0..=depth).map(|l| (depth - l + 1) as f64).collect()),
            WeightMode::Table(w) => {
                if w.len() != depth + 1 || w.iter().any(|x| !(*x > 0.0)) {
                    return Err(Error::Config(format!(
                        "weight table needs {} positive entries, got {:?}",
                        depth + 1,
                        w
                    )));
                }
                Ok(w.clone())
            }
        }
    }
}

/// A hierarchy of boxes. Nodes are stored breadth first with the root at
/// index 0 (see [`ObbTree::canonicalize`]).
#[derive(Clone, Debug, PartialEq)]
pub struct ObbTree {
    pub nodes: Vec<TreeNode>,
    pub branching: usize,
    pub depth: usize,
    pub weight_mode: WeightMode,
    pub mesh_hash: String,
    /// Nodes with fewer faces than this may stop above `depth`; at least
    /// `branching`.
    pub min_split: usize,
}

impl ObbTree {
    /// A tree with only a root.
    pub fn single(mesh: &TriangleMesh, obb: Obb, branching: usize, depth: usize, weight_mode: WeightMode) -> Self {
        Self {
            nodes: vec![TreeNode {
                obb,
                level: 0,
                parent: None,
                children: Vec::new(),
                faces: (0..mesh.face_count()).collect(),
            }],
            branching,
            depth,
            weight_mode,
            mesh_hash: mesh.content_hash(),
            min_split: branching,
        }
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    /// Node ids at `level`, in storage order.
    pub fn level_nodes(&self, level: usize) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].level == level).collect()
    }

    /// Nodes standing for `level` in the error and cover checks: the nodes
    /// at that level plus shallower leaves, which stay in place for every
    /// deeper level.
    pub fn level_cover(&self, level: usize) -> Vec<usize> {
        (0..self.nodes.len())
            .filter(|&i| {
                let n = &self.nodes[i];
                n.level == level || (n.level < level && n.is_leaf())
            })
            .collect()
    }

    pub fn leaves(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].is_leaf()).collect()
    }

    pub fn max_level(&self) -> usize {
        self.nodes.iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Renumbers nodes breadth first from the root, keeping child order, and
    /// drops nodes the root cannot reach.
    pub fn canonicalize(&mut self) {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            order.push(i);
            queue.extend(self.nodes[i].children.iter().copied());
        }
        let mut new_id = vec![usize::MAX; self.nodes.len()];
        for (k, &old) in order.iter().enumerate() {
            new_id[old] = k;
        }
        let nodes = order
            .iter()
            .map(|&old| {
                let n = &self.nodes[old];
                TreeNode {
                    obb: n.obb,
                    level: n.level,
                    parent: n.parent.map(|p| new_id[p]),
                    children: n.children.iter().map(|&c| new_id[c]).collect(),
                    faces: n.faces.clone(),
                }
            })
            .collect();
        self.nodes = nodes;
    }

    /// Verifies the structural invariants: face partition at the leaves,
    /// internal nodes owning the union of their children, level arithmetic,
    /// leaves at full depth unless face-starved, and containment of every
    /// node's face vertices (tolerance `1e-9` of the mesh diagonal).
    pub fn check(&self, mesh: &TriangleMesh) -> std::result::Result<(), String> {
        if self.nodes.is_empty() {
            return Err("tree has no nodes".into());
        }
        let root = &self.nodes[0];
        if root.level != 0 || root.parent.is_some() {
            return Err("node 0 is not a root".into());
        }
        let eps = 1e-9 * mesh.diagonal();
        let all: Vec<usize> = (0..mesh.face_count()).collect();
        let mut leaf_faces = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            if n.faces.is_empty() {
                return Err(format!("node {i} has no faces"));
            }
            if n.faces.windows(2).any(|w| w[0] >= w[1]) {
                return Err(format!("node {i} face list is not sorted and distinct"));
            }
            if n.level > self.depth {
                return Err(format!("node {i} is below depth {}", self.depth));
            }
            if let Some(v) = mesh.face_vertices(&n.faces).iter().find(|v| !n.obb.contains_point(v, eps)) {
                return Err(format!("node {i} does not contain vertex {v:?}"));
            }
            if n.is_leaf() {
                if n.level < self.depth && n.faces.len() >= self.min_split.max(self.branching) {
                    return Err(format!("leaf {i} at level {} could still be split", n.level));
                }
                leaf_faces.extend_from_slice(&n.faces);
                continue;
            }
            let mut union = Vec::new();
            for &c in &n.children {
                let child = self.nodes.get(c).ok_or_else(|| format!("node {i} has missing child {c}"))?;
                if child.parent != Some(i) {
                    return Err(format!("child {c} does not point back to {i}"));
                }
                if child.level != n.level + 1 {
                    return Err(format!("child {c} level {} under level {}", child.level, n.level));
                }
                union.extend_from_slice(&child.faces);
            }
            union.sort_unstable();
            if union != n.faces {
                return Err(format!("node {i} faces differ from the union of its children"));
            }
        }
        leaf_faces.sort_unstable();
        if leaf_faces != all {
            return Err("leaf face sets do not partition the mesh".into());
        }
        for level in 0..=self.max_level() {
            let mut cover: Vec<usize> = self
                .level_cover(level)
                .iter()
                .flat_map(|&i| self.nodes[i].faces.iter().copied())
                .collect();
            cover.sort_unstable();
            if cover != all {
                return Err(format!("level {level} does not cover the mesh exactly once"));
            }
        }
        Ok(())
    }
}

/// One logged evaluation of the weighted error during a build. `step` is a
/// logical clock, not wall time, so traces are reproducible.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub cycle: usize,
    pub phase: String,
    pub accepted: bool,
    pub weighted_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    /// Sum of box outside volumes per level, root first.
    pub per_level_omv: Vec<f64>,
    pub weights: Vec<f64>,
    pub weighted_total: f64,
    pub trace: Vec<TraceEntry>,
}

/// Outside volume of every node's box, indexed like `tree.nodes`.
pub fn node_obvs(eval: &ObvEvaluator, tree: &ObbTree) -> Result<Vec<f64>> {
    use rayon::prelude::*;
    tree.nodes.par_iter().map(|n| eval.obv(&n.params(), &n.obb)).collect()
}

/// Level-weighted sum of per-box outside volumes. Leaves above the deepest
/// level count at every level below them.
pub fn tree_error(eval: &ObvEvaluator, tree: &ObbTree) -> Result<ErrorReport> {
    let obvs = node_obvs(eval, tree)?;
    let depth = tree.max_level().max(tree.depth);
    let weights = tree.weight_mode.weights(depth)?;
    let levels = tree.max_level() + 1;
    let per_level_omv: Vec<f64> = (0..levels)
        .map(|l| tree.level_cover(l).iter().map(|&i| obvs[i]).sum())
        .collect();
    let weighted_total = per_level_omv.iter().zip(&weights).map(|(v, w)| v * w).sum();
    Ok(ErrorReport {
        per_level_omv,
        weights: weights[..levels].to_vec(),
        weighted_total,
        trace: Vec::new(),
    })
}

#[derive(Serialize, Deserialize)]
struct TreeFile {
    format_version: u32,
    mesh_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
    branching: usize,
    depth: usize,
    weight_mode: WeightMode,
    min_split_faces: usize,
    nodes: Vec<NodeRecord>,
}

#[derive(Serialize, Deserialize)]
struct NodeRecord {
    id: usize,
    parent: Option<usize>,
    level: usize,
    center: [f64; 3],
    /// Row-major.
    axes: [f64; 9],
    half_extents: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    face_ids: Option<Vec<usize>>,
}

/// Pretty JSON with every float written as `{:.16e}`: 17 significant
/// digits, which round-trips any `f64`.
pub(crate) struct ExactFloats<'a>(PrettyFormatter<'a>);

impl ExactFloats<'_> {
    pub(crate) fn new() -> Self {
        ExactFloats(PrettyFormatter::with_indent(b"  "))
    }
}

impl Formatter for ExactFloats<'_> {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }
    fn begin_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + io::Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + io::Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

/// Serializes `value` as pretty JSON with exact floats and a trailing
/// newline.
pub fn to_exact_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, ExactFloats::new());
    value
        .serialize(&mut ser)
        .map_err(|e| Error::TreeFormat(e.to_string()))?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

impl ObbTree {
    /// Tree file text. `config_digest` records the configuration that
    /// produced the tree.
    pub fn to_json(&self, config_digest: Option<&str>) -> Result<String> {
        let nodes = self
            .nodes
            .iter()
            .enumerate()
            .map(|(id, n)| {
                let a = n.obb.axes;
                NodeRecord {
                    id,
                    parent: n.parent,
                    level: n.level,
                    center: [n.obb.center.x, n.obb.center.y, n.obb.center.z],
                    axes: [a[(0, 0)], a[(0, 1)], a[(0, 2)], a[(1, 0)], a[(1, 1)], a[(1, 2)], a[(2, 0)], a[(2, 1)], a[(2, 2)]],
                    half_extents: [n.obb.half_extents.x, n.obb.half_extents.y, n.obb.half_extents.z],
                    face_ids: n.is_leaf().then(|| n.faces.clone()),
                }
            })
            .collect();
        to_exact_json(&TreeFile {
            format_version: TREE_FORMAT_VERSION,
            mesh_hash: self.mesh_hash.clone(),
            config_digest: config_digest.map(str::to_owned),
            branching: self.branching,
            depth: self.depth,
            weight_mode: self.weight_mode.clone(),
            min_split_faces: self.min_split,
            nodes,
        })
    }

    /// Parses a tree file. Internal face sets are rebuilt from the leaves.
    pub fn from_json(text: &str) -> Result<Self> {
        let bad = |m: String| Error::TreeFormat(m);
        let file: TreeFile = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        if file.format_version != TREE_FORMAT_VERSION {
            return Err(bad(format!("unsupported format_version {}", file.format_version)));
        }
        let n = file.nodes.len();
        if n == 0 {
            return Err(bad("tree has no nodes".into()));
        }
        let mut nodes: Vec<TreeNode> = Vec::with_capacity(n);
        for (i, r) in file.nodes.iter().enumerate() {
            if r.id != i {
                return Err(bad(format!("node {i} has id {}", r.id)));
            }
            if r.parent.is_some_and(|p| p >= i) {
                return Err(bad(format!("node {i} lists parent {:?} that does not precede it", r.parent)));
            }
            let a = &r.axes;
            nodes.push(TreeNode {
                obb: Obb::new(
                    Point3::from(r.center),
                    Matrix3::new(a[0], a[1], a[2], a[3], a[4], a[5], a[6], a[7], a[8]),
                    Vector3::from(r.half_extents),
                ),
                level: r.level,
                parent: r.parent,
                children: Vec::new(),
                faces: r.face_ids.clone().unwrap_or_default(),
            });
        }
        for i in 1..n {
            let p = nodes[i].parent.ok_or_else(|| bad(format!("node {i} has no parent")))?;
            nodes[p].children.push(i);
        }
        for (i, r) in file.nodes.iter().enumerate() {
            if nodes[i].children.is_empty() != r.face_ids.is_some() {
                return Err(bad(format!("node {i}: face_ids must be present exactly on leaves")));
            }
        }
        for i in (0..n).rev() {
            if !nodes[i].children.is_empty() {
                let mut faces: Vec<usize> = nodes[i].children.iter().flat_map(|&c| nodes[c].faces.clone()).collect();
                faces.sort_unstable();
                nodes[i].faces = faces;
            }
        }
        Ok(Self {
            nodes,
            branching: file.branching,
            depth: file.depth,
            weight_mode: file.weight_mode,
            mesh_hash: file.mesh_hash,
            min_split: file.min_split_faces,
        })
    }

    /// Fails unless the tree was built for `mesh`.
    pub fn check_mesh(&self, mesh: &TriangleMesh) -> Result<()> {
        let found = mesh.content_hash();
        if found != self.mesh_hash {
            return Err(Error::MeshMismatch {
                expected: self.mesh_hash.clone(),
                found,
            });
        }
        Ok(())
    }
}
