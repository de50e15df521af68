use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vobb_core::{BaselineConfig, BenchConfig, CostModel, HierarchyConfig, LloydConfig, PoseSampler, WeightMode};

use crate::Failure;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Estimator {
    /// Directions per cube face edge.
    pub m: usize,
    /// Cache length quantum, relative to the mesh diagonal.
    pub length_quantum: f64,
    /// Cache rotation quantum in radians.
    pub rotation_quantum: f64,
}

impl Default for Estimator {
    fn default() -> Self {
        Self {
            m: 16,
            length_quantum: 1e-4,
            rotation_quantum: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lloyd {
    pub max_iters: usize,
    pub stall_window: usize,
    pub stall_tol: f64,
    pub rng_seed: u64,
}

impl Default for Lloyd {
    fn default() -> Self {
        let d = LloydConfig::default();
        Self {
            max_iters: d.max_iters,
            stall_window: d.stall_window,
            stall_tol: d.stall_tol,
            rng_seed: d.rng_seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hierarchy {
    pub branching: usize,
    pub depth: usize,
    /// Per-level weights, root first; absent means leaves weigh 1 and each
    /// level above adds 1.
    pub weights: Option<Vec<f64>>,
    pub max_cycles: usize,
}

impl Default for Hierarchy {
    fn default() -> Self {
        let d = HierarchyConfig::default();
        Self {
            branching: d.branching,
            depth: d.depth,
            weights: None,
            max_cycles: d.max_cycles,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Baseline {
    pub min_faces_per_leaf: usize,
}

impl Default for Baseline {
    fn default() -> Self {
        Self { min_faces_per_leaf: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bench {
    pub poses: usize,
    pub c_v: f64,
    pub c_p: f64,
    pub rng_seed: u64,
    /// Pose distance range, in units of the summed bounding radii.
    pub shell_min: f64,
    pub shell_scale: f64,
    pub early_exit: bool,
}

impl Default for Bench {
    fn default() -> Self {
        let d = BenchConfig::default();
        Self {
            poses: d.poses,
            c_v: d.cost.c_v,
            c_p: d.cost.c_p,
            rng_seed: d.rng_seed,
            shell_min: d.sampler.min_scale,
            shell_scale: d.sampler.shell_scale,
            early_exit: d.early_exit,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub meshes: Vec<PathBuf>,
    pub tree: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub level: Option<usize>,
    pub estimator: Estimator,
    pub lloyd: Lloyd,
    pub hierarchy: Hierarchy,
    pub baseline: Baseline,
    pub bench: Bench,
}

impl RunConfig {
    pub fn load(path: &std::path::Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
    }

    /// Range and path checks. The hierarchy section is only checked when
    /// `hierarchy` is set, since the baseline also accepts depth 0.
    pub fn validate(&self, hierarchy: bool) -> Result<(), Failure> {
        let bad = |m: &str| Err(Failure::Config(m.into()));
        if self.estimator.m < 4 {
            return bad("estimator.m must be at least 4");
        }
        if !(self.estimator.length_quantum > 0.0 && self.estimator.rotation_quantum > 0.0) {
            return bad("cache quanta must be positive");
        }
        if self.bench.poses == 0 {
            return bad("bench.poses must be at least 1");
        }
        if hierarchy {
            self.hierarchy_config().validate()?;
        }
        self.bench_config().cost.validate()?;
        self.bench_config().sampler.validate()?;
        for p in self.meshes.iter().chain(&self.tree) {
            if !p.exists() {
                return Err(Failure::Io(format!("{}: no such file", p.display())));
            }
        }
        Ok(())
    }

    pub fn hierarchy_config(&self) -> HierarchyConfig {
        let h = &self.hierarchy;
        HierarchyConfig {
            branching: h.branching,
            depth: h.depth,
            weight_mode: h.weights.clone().map_or(WeightMode::LSub, WeightMode::Table),
            lloyd: LloydConfig {
                n_clusters: h.branching,
                max_iters: self.lloyd.max_iters,
                stall_window: self.lloyd.stall_window,
                stall_tol: self.lloyd.stall_tol,
                rng_seed: self.lloyd.rng_seed,
                ..LloydConfig::default()
            },
            max_cycles: h.max_cycles,
        }
    }

    pub fn baseline_config(&self) -> BaselineConfig {
        BaselineConfig {
            depth: self.hierarchy.depth,
            min_faces_per_leaf: self.baseline.min_faces_per_leaf,
        }
    }

    pub fn bench_config(&self) -> BenchConfig {
        let b = &self.bench;
        BenchConfig {
            poses: b.poses,
            sampler: PoseSampler {
                min_scale: b.shell_min,
                shell_scale: b.shell_scale,
            },
            cost: CostModel { c_v: b.c_v, c_p: b.c_p },
            rng_seed: b.rng_seed,
            early_exit: b.early_exit,
        }
    }

    /// SHA-256 of the effective configuration, output directory excluded.
    pub fn digest(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let json = serde_json::to_string(&c).expect("config serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
