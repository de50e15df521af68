//! Shared setup for the criterion benchmarks.

use vobb_core::{fixtures, BaselineConfig, HierarchyConfig, ObbTree, ObvCache, TriangleMesh};

/// Meshes used across benchmarks, smallest first.
pub fn meshes() -> Vec<(&'static str, TriangleMesh)> {
    vec![
        ("cube", fixtures::cube(1.0)),
        ("dumbbell", fixtures::dumbbell()),
        ("icosphere2", fixtures::icosphere(2, 1.0)),
    ]
}

pub fn cache_for(mesh: &TriangleMesh) -> ObvCache {
    ObvCache::new(1e-4 * mesh.diagonal(), 1e-4)
}

pub fn hierarchy(depth: usize) -> HierarchyConfig {
    HierarchyConfig {
        depth,
        max_cycles: 2,
        ..HierarchyConfig::default()
    }
}

pub fn baseline_tree(mesh: &TriangleMesh, depth: usize) -> ObbTree {
    vobb_core::build_pca_tree(
        mesh,
        &BaselineConfig {
            depth,
            min_faces_per_leaf: 1,
        },
    )
    .expect("fixture meshes build")
}
