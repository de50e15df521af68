//! Variational hierarchical oriented-bounding-box approximation of solid
//! triangle meshes.

pub mod baseline;
pub mod collision;
pub mod error;
pub mod fixtures;
pub mod hierarchy;
pub mod mesh;
pub mod obb;
pub mod partition;
pub mod tree;
pub mod volume;

pub use nalgebra;

pub use error::{Error, Result};
pub use mesh::{load_mesh, validate_solid, MeshFormat, RayHit, SolidityReport, TriangleMesh};
pub use obb::{box_volume, fit_tight, FitMode, Obb, ObbParams};
pub use volume::{
    brute_force_obv, build_direction_grid, estimate_obv, obv_cached, outer_length_profile, DirectionGrid,
    EstimatorConfig, ObvCache, ObvEvaluator,
};
pub use partition::{
    adjust_clusters, delta_obv, flood_partition, init_seeds, lloyd_from, lloyd_optimize, refit_cluster, ClusterState,
    DescentConfig, EventKind, LloydConfig, LloydEvent, LloydResult, Partition,
};
pub use tree::{
    node_obvs, to_exact_json, tree_error, ErrorReport, ObbTree, TraceEntry, TreeNode, WeightMode, TREE_FORMAT_VERSION,
};
pub use hierarchy::{decompose_top_down, merge_bottom_up, reciprocate, HierarchyConfig};
pub use baseline::{build_pca_tree, BaselineConfig};
pub use collision::{
    brute_force_hit, run_bench, traverse_pair, tri_tri_intersect, unsound_prunes, BenchConfig, BenchReport, Collider,
    CollisionStats, CostModel, PoseRecord, PoseSampler, RigidTransform, Summary, TreeKind,
};
