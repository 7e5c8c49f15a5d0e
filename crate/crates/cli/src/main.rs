//! Command-line front end: run, render, mesh, eval, synth.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use g2s::geometry::{Intrinsics, Pose};
use g2s::io::{self, DatasetDescriptor, TumDataset};
use g2s::pipeline::{self, Dataset, Metrics, SlamConfig};
use g2s::render::render;
use g2s::synth::SyntheticScene;

#[derive(Parser)]
#[command(name = "g2s", version, about = "RGB-D SLAM with surface-aligned Gaussian disks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Track and map a sequence, then write the trajectory, map and metrics.
    Run {
        /// TUM-layout directory or a synthetic scene TOML file.
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one view of a saved map to color.png, depth.png and normal.png.
    Render {
        #[arg(long)]
        map: PathBuf,
        /// Camera-to-world pose as "tx ty tz qx qy qz qw".
        #[arg(long, allow_hyphen_values = true)]
        pose: String,
        #[arg(long)]
        out: PathBuf,
        /// "fx,fy,cx,cy,width,height"; defaults to the synthetic room camera.
        #[arg(long)]
        intrinsics: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Fuse depth rendered along a run's trajectory into a mesh.
    Mesh {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        voxel: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute metrics.json of a run against a dataset directory.
    Eval {
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        gt: PathBuf,
    },
    /// Write a synthetic sequence in TUM layout.
    Synth {
        /// Scene TOML; the default room when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<g2s::Error> for Failure {
    fn from(e: g2s::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn deterministic() -> bool {
    std::env::var("G2S_DETERMINISTIC").is_ok_and(|v| v == "1")
}

fn read_config(path: &Path) -> CliResult<SlamConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    SlamConfig::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn read_scene(path: &Path) -> CliResult<SyntheticScene> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read scene {}: {e}", path.display())))?;
    SyntheticScene::from_toml(&text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn open_dataset(path: &Path) -> CliResult<Box<dyn Dataset>> {
    if path.is_dir() {
        Ok(Box::new(TumDataset::open(&DatasetDescriptor::new(path))?))
    } else if path.is_file() {
        Ok(Box::new(read_scene(path)?))
    } else {
        Err(Failure::Usage(format!("dataset {} does not exist", path.display())))
    }
}

fn dataset_intrinsics(data: &dyn Dataset) -> CliResult<Intrinsics> {
    Ok(data.frame(0)?.intrinsics)
}

fn write_metrics(dir: &Path, m: &Metrics) -> CliResult<()> {
    let mut m = *m;
    // Wall-clock rates would make otherwise identical runs differ.
    if deterministic() {
        m.fps = None;
    }
    io::write_metrics(&dir.join("metrics.json"), &m)?;
    Ok(())
}

fn cmd_run(dataset: &Path, config: &Path, out: &Path) -> CliResult<()> {
    let cfg = read_config(config)?;
    let data = open_dataset(dataset)?;
    let k = dataset_intrinsics(data.as_ref())?;
    let res = pipeline::run(data.as_ref(), &cfg)?;
    std::fs::create_dir_all(out).map_err(g2s::Error::from)?;
    io::write_trajectory(&out.join("trajectory.txt"), &res.trajectory)?;
    io::write_map_ply(&out.join("map.ply"), res.map.disks())?;
    io::write_loss_trace(&out.join("loss_trace.csv"), &res.loss_trace)?;
    io::write_intrinsics(&out.join(io::INTRINSICS_FILE), &k)?;
    std::fs::write(out.join("config.toml"), cfg.to_toml()).map_err(g2s::Error::from)?;
    write_metrics(out, &res.metrics)?;
    if let Some(i) = res.lost_at {
        return Err(Failure::Runtime(format!(
            "tracking lost at frame {i}; wrote the {} frames tracked before it",
            res.trajectory.len()
        )));
    }
    log::info!("{:?}", res.metrics);
    Ok(())
}

fn parse_intrinsics(s: &str) -> CliResult<Intrinsics> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("bad intrinsics {s:?}")))?;
    let [fx, fy, cx, cy, w, h] = v[..] else {
        return Err(Failure::Usage("intrinsics need fx,fy,cx,cy,width,height".into()));
    };
    Intrinsics::new(fx, fy, cx, cy, w as usize, h as usize).map_err(|e| Failure::Usage(e.to_string()))
}

fn cmd_render(map: &Path, pose: &str, out: &Path, intrinsics: Option<&str>, config: Option<&Path>) -> CliResult<()> {
    let fields: Vec<&str> = pose.split_whitespace().collect();
    let pose: Pose = io::parse_pose(&fields).map_err(Failure::Usage)?;
    let k = match intrinsics {
        Some(s) => parse_intrinsics(s)?,
        None => SyntheticScene::default().intrinsics()?,
    };
    let cfg = match config {
        Some(p) => read_config(p)?,
        None => SlamConfig::default(),
    };
    let map = io::read_map_ply(map)?;
    let out_img = render(&map.snapshot(), &pose, &k, &cfg.render);
    io::write_render(out, &out_img, k.depth_scale)?;
    Ok(())
}

fn run_config(run_dir: &Path) -> CliResult<SlamConfig> {
    read_config(&run_dir.join("config.toml"))
}

fn cmd_mesh(run_dir: &Path, voxel: f64, out: &Path) -> CliResult<()> {
    let mut cfg = run_config(run_dir)?;
    cfg.eval.voxel_size = voxel;
    cfg.eval.truncation = cfg.eval.truncation.max(2.0 * voxel);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let map = io::read_map_ply(&run_dir.join("map.ply"))?;
    let traj = io::read_trajectory(&run_dir.join("trajectory.txt"))?;
    let k = io::read_intrinsics(&run_dir.join(io::INTRINSICS_FILE))?;
    let mesh = pipeline::fuse_map(&map, &traj, &k, &cfg)?;
    io::write_mesh_ply(out, &mesh)?;
    log::info!("{} vertices, {} triangles", mesh.vertices.len(), mesh.triangles.len());
    Ok(())
}

fn cmd_eval(run_dir: &Path, gt: &Path) -> CliResult<()> {
    let cfg = run_config(run_dir)?;
    let data = open_dataset(gt)?;
    let map = io::read_map_ply(&run_dir.join("map.ply"))?;
    let traj = io::read_trajectory(&run_dir.join("trajectory.txt"))?;
    let mut m = pipeline::evaluate(data.as_ref(), &cfg, &map, &traj)?;
    // The frame rate cannot be recomputed offline; keep the recorded one.
    m.fps = io::read_metrics(&run_dir.join("metrics.json")).ok().and_then(|old| old.fps);
    write_metrics(run_dir, &m)
}

fn cmd_synth(spec: Option<&Path>, out: &Path) -> CliResult<()> {
    let scene = match spec {
        Some(p) => read_scene(p)?,
        None => SyntheticScene::default(),
    };
    io::write_synthetic(out, &scene)?;
    Ok(())
}

fn init_threads() -> CliResult<()> {
    let Ok(v) = std::env::var("G2S_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| Failure::Usage(format!("G2S_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(e.to_string()))
}

fn dispatch(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Run { dataset, config, out } => cmd_run(&dataset, &config, &out),
        Command::Render {
            map,
            pose,
            out,
            intrinsics,
            config,
        } => cmd_render(&map, &pose, &out, intrinsics.as_deref(), config.as_deref()),
        Command::Mesh { run_dir, voxel, out } => cmd_mesh(&run_dir, voxel, &out),
        Command::Eval { run_dir, gt } => cmd_eval(&run_dir, &gt),
        Command::Synth { spec, out } => cmd_synth(spec.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(1);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}\n\nRun `g2s --help` for usage.");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
