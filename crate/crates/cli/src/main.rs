mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "vobb", version, about = "Hierarchical oriented bounding boxes for solid meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Input mesh (OBJ or binary STL). `bench` takes two.
    #[arg(long, global = true)]
    mesh: Vec<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Tree file for `eval` and `export-obj`.
    #[arg(long, global = true)]
    tree: Option<PathBuf>,
    /// Direction grid resolution per cube face.
    #[arg(long, global = true)]
    m: Option<usize>,
    #[arg(long, global = true)]
    branching: Option<usize>,
    #[arg(long, global = true)]
    depth: Option<usize>,
    #[arg(long, global = true)]
    cycles: Option<usize>,
    /// Seed for clustering and pose sampling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    poses: Option<usize>,
    #[arg(long, global = true)]
    level: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write the cube, icosphere and dumbbell test meshes as OBJ.
    Fixtures,
    /// Check that meshes are closed, consistently oriented solids.
    Validate,
    /// Build an optimized box tree.
    Build,
    /// Build a principal-axis split tree for comparison.
    BuildBaseline,
    /// Recompute the per-level error of a tree file.
    Eval,
    /// Compare collision query counts of optimized and baseline trees.
    Bench,
    /// Write the boxes of one tree level as OBJ.
    ExportObj,
}

#[derive(Debug)]
pub enum Failure {
    Validation(String),
    Config(String),
    Io(String),
    Other(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Config(_) => 3,
            Failure::Io(_) => 4,
            Failure::Other(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Validation(m) => write!(f, "validation failed: {m}"),
            Failure::Config(m) => write!(f, "configuration error: {m}"),
            Failure::Io(m) => write!(f, "i/o error: {m}"),
            Failure::Other(m) => write!(f, "{m}"),
        }
    }
}

impl From<vobb_core::Error> for Failure {
    fn from(e: vobb_core::Error) -> Self {
        use vobb_core::Error as E;
        let m = e.to_string();
        match e {
            E::Io { .. } => Failure::Io(m),
            E::Config(_) => Failure::Config(m),
            E::Parse { .. }
            | E::EmptyMesh
            | E::IndexOutOfRange { .. }
            | E::DegenerateFace { .. }
            | E::NotSolid
            | E::TreeFormat(_)
            | E::MeshMismatch { .. } => Failure::Validation(m),
            _ => Failure::Other(m),
        }
    }
}

fn effective_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut c = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if !cli.mesh.is_empty() {
        c.meshes = cli.mesh.clone();
    }
    if cli.out.is_some() {
        c.out = cli.out.clone();
    }
    if cli.tree.is_some() {
        c.tree = cli.tree.clone();
    }
    if cli.level.is_some() {
        c.level = cli.level;
    }
    if let Some(m) = cli.m {
        c.estimator.m = m;
    }
    if let Some(b) = cli.branching {
        c.hierarchy.branching = b;
    }
    if let Some(d) = cli.depth {
        c.hierarchy.depth = d;
    }
    if let Some(k) = cli.cycles {
        c.hierarchy.max_cycles = k;
    }
    if let Some(s) = cli.seed {
        c.lloyd.rng_seed = s;
        c.bench.rng_seed = s;
    }
    if let Some(k) = cli.poses {
        c.bench.poses = k;
    }
    Ok(c)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("VOBB_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("VOBB_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Other(e.to_string()))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    configure_threads()?;
    let config = effective_config(cli)?;
    if !matches!(cli.command, Command::Fixtures) {
        config.validate(matches!(cli.command, Command::Build | Command::Bench))?;
    }
    match cli.command {
        Command::Fixtures => commands::fixtures(&config),
        Command::Validate => commands::validate(&config),
        Command::Build => commands::build(&config),
        Command::BuildBaseline => commands::build_baseline(&config),
        Command::Eval => commands::eval(&config),
        Command::Bench => commands::bench(&config),
        Command::ExportObj => commands::export_obj(&config),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 3 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("vobb: {f}");
            ExitCode::from(f.code())
        }
    }
}
