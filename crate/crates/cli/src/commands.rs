use std::path::{Path, PathBuf};

use serde::Serialize;
use vobb_core::fixtures;
use vobb_core::mesh::write_obj;
use vobb_core::nalgebra::Point3;
use vobb_core::{
    build_direction_grid, build_pca_tree, load_mesh, reciprocate, run_bench, to_exact_json, tree_error, validate_solid,
    Collider, MeshFormat, ObbTree, ObvCache, ObvEvaluator, SolidityReport, TriangleMesh,
};

use crate::config::RunConfig;
use crate::Failure;

const FORMAT_VERSION: u32 = 1;

/// Envelope for every JSON artifact.
#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    format_version: u32,
    kind: &'a str,
    config_digest: String,
    body: T,
}

fn document<T: Serialize>(config: &RunConfig, kind: &str, body: T) -> Result<String, Failure> {
    Ok(to_exact_json(&Document {
        format_version: FORMAT_VERSION,
        kind,
        config_digest: config.digest(),
        body,
    })?)
}

fn out_dir(config: &RunConfig) -> Result<&Path, Failure> {
    let dir = config.out.as_deref().ok_or_else(|| Failure::Config("--out is required".into()))?;
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

/// Writes through a temporary file in the same directory and renames it
/// into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    use std::io::Write;
    let io = |e: std::io::Error| Failure::Io(format!("{}: {e}", path.display()));
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(bytes).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn mesh_path(config: &RunConfig, k: usize) -> Result<&PathBuf, Failure> {
    config
        .meshes
        .get(k)
        .ok_or_else(|| Failure::Config(format!("--mesh is required ({} given)", config.meshes.len())))
}

fn read_mesh(path: &Path) -> Result<TriangleMesh, Failure> {
    let format = MeshFormat::from_path(path)
        .ok_or_else(|| Failure::Config(format!("{}: unknown mesh extension (expected .obj or .stl)", path.display())))?;
    Ok(load_mesh(path, format)?)
}

/// Loads a mesh and rejects anything that is not a closed, consistently
/// oriented solid, printing the defects.
fn read_solid(path: &Path) -> Result<TriangleMesh, Failure> {
    let mesh = read_mesh(path)?;
    let report = validate_solid(&mesh);
    if !report.is_solid() {
        eprintln!("{}", to_exact_json(&report)?.trim_end());
        return Err(Failure::Validation(format!(
            "{} is not a solid: {} open or non-manifold edges, {} misoriented edges",
            path.display(),
            report.defect_edges.len(),
            report.misoriented_edges.len()
        )));
    }
    Ok(mesh)
}

fn read_tree(config: &RunConfig) -> Result<ObbTree, Failure> {
    let path = config.tree.as_deref().ok_or_else(|| Failure::Config("--tree is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(ObbTree::from_json(&text)?)
}

fn with_evaluator<T>(config: &RunConfig, mesh: &TriangleMesh, f: impl FnOnce(&ObvEvaluator) -> Result<T, Failure>) -> Result<T, Failure> {
    let grid = build_direction_grid(config.estimator.m)?;
    let cache = ObvCache::new(config.estimator.length_quantum * mesh.diagonal(), config.estimator.rotation_quantum);
    f(&ObvEvaluator::new(mesh, &grid, &cache))
}

pub fn fixtures(config: &RunConfig) -> Result<(), Failure> {
    let dir = out_dir(config)?;
    let meshes = [
        ("cube.obj", fixtures::cube(1.0), "unit cube centered at the origin"),
        ("icosphere.obj", fixtures::icosphere(3, 1.0), "icosphere, radius 1, 3 subdivisions"),
        ("dumbbell.obj", fixtures::dumbbell(), "unit cubes at x = -2 and x = 2 joined by a 0.2 x 0.2 bar"),
    ];
    for (name, mesh, comment) in meshes {
        write_atomic(&dir.join(name), write_obj(&mesh, comment).as_bytes())?;
    }
    Ok(())
}

#[derive(Serialize)]
struct Validation {
    path: String,
    faces: usize,
    vertices: usize,
    solid: bool,
    report: SolidityReport,
}

pub fn validate(config: &RunConfig) -> Result<(), Failure> {
    mesh_path(config, 0)?;
    let mut results = Vec::new();
    for path in &config.meshes {
        let mesh = read_mesh(path)?;
        let report = validate_solid(&mesh);
        results.push(Validation {
            path: path.display().to_string(),
            faces: mesh.face_count(),
            vertices: mesh.vertices().len(),
            solid: report.is_solid(),
            report,
        });
    }
    let text = document(config, "validation", &results)?;
    match &config.out {
        Some(_) => write_atomic(&out_dir(config)?.join("validation.json"), text.as_bytes())?,
        None => print!("{text}"),
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.solid).map(|r| r.path.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Validation(format!("not solid: {}", failed.join(", "))))
    }
}

pub fn build(config: &RunConfig) -> Result<(), Failure> {
    let mesh = read_solid(mesh_path(config, 0)?)?;
    let dir = out_dir(config)?;
    let (tree, report) = with_evaluator(config, &mesh, |eval| Ok(reciprocate(eval, &config.hierarchy_config())?))?;
    tree.check(&mesh).map_err(Failure::Other)?;
    write_atomic(&dir.join("tree.json"), tree.to_json(Some(&config.digest()))?.as_bytes())?;
    write_atomic(&dir.join("error_report.json"), document(config, "error_report", &report)?.as_bytes())?;
    println!(
        "built {} nodes, weighted error {:.6e} after {} logged steps",
        tree.nodes.len(),
        report.weighted_total,
        report.trace.len()
    );
    Ok(())
}

pub fn build_baseline(config: &RunConfig) -> Result<(), Failure> {
    let mesh = read_solid(mesh_path(config, 0)?)?;
    let dir = out_dir(config)?;
    let tree = build_pca_tree(&mesh, &config.baseline_config())?;
    tree.check(&mesh).map_err(Failure::Other)?;
    write_atomic(&dir.join("baseline_tree.json"), tree.to_json(Some(&config.digest()))?.as_bytes())?;
    println!("built {} nodes", tree.nodes.len());
    Ok(())
}

pub fn eval(config: &RunConfig) -> Result<(), Failure> {
    let tree = read_tree(config)?;
    let mesh = read_solid(mesh_path(config, 0)?)?;
    tree.check_mesh(&mesh)?;
    tree.check(&mesh).map_err(Failure::Validation)?;
    let dir = out_dir(config)?;
    let report = with_evaluator(config, &mesh, |eval| Ok(tree_error(eval, &tree)?))?;
    write_atomic(&dir.join("eval.json"), document(config, "error_report", &report)?.as_bytes())?;
    println!("weighted error {:.6e}", report.weighted_total);
    Ok(())
}

pub fn bench(config: &RunConfig) -> Result<(), Failure> {
    let a = read_solid(mesh_path(config, 0)?)?;
    let b = match config.meshes.get(1) {
        Some(p) => read_solid(p)?,
        None => a.clone(),
    };
    let dir = out_dir(config)?;
    let hierarchy = config.hierarchy_config();
    let build = |mesh: &TriangleMesh| -> Result<(ObbTree, ObbTree), Failure> {
        let (v, _) = with_evaluator(config, mesh, |eval| Ok(reciprocate(eval, &hierarchy)?))?;
        Ok((v, build_pca_tree(mesh, &config.baseline_config())?))
    };
    let (va, ba) = build(&a)?;
    let (vb, bb) = build(&b)?;
    let side = |t, m| Collider::new(t, m);
    let report = run_bench((side(&va, &a)?, side(&vb, &b)?), (side(&ba, &a)?, side(&bb, &b)?), &config.bench_config())?;

    let mut csv = Vec::new();
    report.write_csv(&mut csv)?;
    write_atomic(&dir.join("bench_poses.csv"), &csv)?;
    let mut summary = serde_json::to_value(&report).map_err(|e| Failure::Other(e.to_string()))?;
    if let Some(obj) = summary.as_object_mut() {
        obj.remove("records");
        obj.insert("poses_file".into(), "bench_poses.csv".into());
    }
    write_atomic(&dir.join("bench_summary.json"), document(config, "bench_summary", &summary)?.as_bytes())?;
    println!(
        "mean box tests: optimized {:.3}, baseline {:.3} (reduction {:.2}%)",
        report.variational.mean_n_v,
        report.baseline.mean_n_v,
        100.0 * report.n_v_reduction
    );
    Ok(())
}

pub fn export_obj(config: &RunConfig) -> Result<(), Failure> {
    let tree = read_tree(config)?;
    let level = config.level.ok_or_else(|| Failure::Config("--level is required".into()))?;
    if level > tree.depth {
        return Err(Failure::Config(format!("level {level} exceeds tree depth {}", tree.depth)));
    }
    let dir = out_dir(config)?;
    let mut text = format!("# boxes at level {level}\n");
    let mut base = 1;
    for id in tree.level_nodes(level) {
        let obb = &tree.nodes[id].obb;
        let unit = fixtures::box_mesh(Point3::origin(), obb.half_extents);
        text.push_str(&format!("g node_{id}\n"));
        for v in unit.vertices() {
            let p = obb.to_world(&v.coords);
            text.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
        }
        for f in unit.faces() {
            text.push_str(&format!("f {} {} {}\n", f[0] + base, f[1] + base, f[2] + base));
        }
        base += unit.vertices().len();
    }
    write_atomic(&dir.join(format!("boxes_level_{level}.obj")), text.as_bytes())
}
