//! Classical top-down box tree: principal-axis frames and mean splits.

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;
use crate::obb::{fit_tight, principal_frame, FitMode, Obb, ObbParams};
use crate::tree::{ObbTree, TreeNode, WeightMode};

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineConfig {
    pub depth: usize,
    /// Nodes with at most this many faces are not split.
    pub min_faces_per_leaf: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            min_faces_per_leaf: 1,
        }
    }
}

impl BaselineConfig {
    /// Depth 0 is accepted and yields a root-only tree.
    pub fn validate(&self) -> Result<()> {
        Ok(())
    }

    fn min_split(&self) -> usize {
        (self.min_faces_per_leaf + 1).max(2)
    }
}

struct Sub {
    obb: Obb,
    faces: Vec<usize>,
    children: Vec<Sub>,
}

fn pca_box(mesh: &TriangleMesh, faces: &[usize]) -> Result<(Obb, ObbParams)> {
    let (frame, mean, _) = principal_frame(faces.iter().map(|&f| mesh.triangle(f)));
    let params = ObbParams::new(mean, &frame);
    let obb = fit_tight(&mesh.face_vertices(faces), &params, FitMode::Recenter, 1e-6 * mesh.diagonal())?;
    Ok((obb, params))
}

/// Splits by centroid against the mean along the first principal axis;
/// falls back to a median split when one side would be empty.
fn split(mesh: &TriangleMesh, faces: &[usize], params: &ObbParams) -> (Vec<usize>, Vec<usize>) {
    let axis = params.orientation() * nalgebra::Vector3::x();
    let proj = |f: usize| (mesh.face_centroid(f) - params.center).dot(&axis);
    let (lo, hi): (Vec<usize>, Vec<usize>) = faces.iter().partition(|&&f| proj(f) < 0.0);
    if !lo.is_empty() && !hi.is_empty() {
        return (lo, hi);
    }
    let mut order: Vec<(f64, usize)> = faces.iter().map(|&f| (proj(f), f)).collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let half = order.len() / 2;
    let mut lo: Vec<usize> = order[..half].iter().map(|p| p.1).collect();
    let mut hi: Vec<usize> = order[half..].iter().map(|p| p.1).collect();
    lo.sort_unstable();
    hi.sort_unstable();
    (lo, hi)
}

fn build(mesh: &TriangleMesh, faces: Vec<usize>, level: usize, config: &BaselineConfig) -> Result<Sub> {
    let (obb, params) = pca_box(mesh, &faces)?;
    if level >= config.depth || faces.len() < config.min_split() {
        return Ok(Sub {
            obb,
            faces,
            children: Vec::new(),
        });
    }
    let (lo, hi) = split(mesh, &faces, &params);
    let (a, b) = rayon::join(|| build(mesh, lo, level + 1, config), || build(mesh, hi, level + 1, config));
    Ok(Sub {
        obb,
        faces,
        children: vec![a?, b?],
    })
}

/// Binary tree whose node boxes use the area-weighted principal frame of
/// their faces, fitted tightly and recentered. Faces are split by centroid
/// at the weighted mean along the dominant axis, down to `depth`.
pub fn build_pca_tree(mesh: &TriangleMesh, config: &BaselineConfig) -> Result<ObbTree> {
    config.validate()?;
    if mesh.face_count() == 0 {
        return Err(Error::EmptyMesh);
    }
    let root = build(mesh, (0..mesh.face_count()).collect(), 0, config)?;
    let mut tree = ObbTree::single(mesh, root.obb, 2, config.depth, WeightMode::LSub);
    tree.min_split = config.min_split();
    fn attach(tree: &mut ObbTree, parent: usize, sub: Sub) {
        let id = tree.nodes.len();
        tree.nodes.push(TreeNode {
            obb: sub.obb,
            level: tree.nodes[parent].level + 1,
            parent: Some(parent),
            children: Vec::new(),
            faces: sub.faces,
        });
        tree.nodes[parent].children.push(id);
        for c in sub.children {
            attach(tree, id, c);
        }
    }
    for c in root.children {
        attach(&mut tree, 0, c);
    }
    tree.canonicalize();
    Ok(tree)
}
