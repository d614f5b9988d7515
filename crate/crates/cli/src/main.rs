use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use untangle_core::{Rays, ViewAxis};

mod commands;

/// Detect and remove self-intersections in closed triangle meshes.
#[derive(Debug, Parser)]
#[command(name = "untangle", version)]
struct Cli {
    /// Worker threads; all cores when unset.
    #[arg(long, global = true, env = "UNTANGLE_THREADS")]
    threads: Option<usize>,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a generated mesh to an OBJ file.
    Gen {
        #[command(subcommand)]
        kind: GenKind,
    },
    /// Check that a mesh is closed, consistently oriented and non-degenerate.
    Validate { mesh: PathBuf },
    /// Classify vertices; exits 0 when clean, 2 when intersecting.
    Detect {
        mesh: PathBuf,
        #[command(flatten)]
        view: ViewArgs,
        /// Include per-vertex labels in the report.
        #[arg(long)]
        labels: bool,
        /// Also write `detect.json` here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Move vertices until no intersection remains.
    Remove {
        mesh: PathBuf,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = 10)]
        snapshot_every: usize,
        /// Use the raw area-weighted gradient.
        #[arg(long)]
        no_normalize: bool,
        #[command(flatten)]
        view: ViewArgs,
        /// Directory for the trace and snapshots.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write a fitting scenario: targets, start pose and ground truth.
    Scenario {
        #[arg(value_enum)]
        kind: ScenarioKind,
        /// Noise on the start pose, radians (recovery only).
        #[arg(long, default_value_t = 0.2)]
        sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        body: BodyArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Fit the toy body's pose to 2D joint targets.
    Fit {
        /// Targets JSON.
        #[arg(long)]
        targets: PathBuf,
        /// Start pose JSON; the rest pose when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Include the self-intersection penalty (the default).
        #[arg(long, overrides_with = "no_spt")]
        use_spt: bool,
        /// Fit the joints only.
        #[arg(long, overrides_with = "use_spt")]
        no_spt: bool,
        #[arg(long, default_value_t = untangle_core::optim::FIT_LEARNING_RATE)]
        lr: f64,
        #[arg(long, default_value_t = 500)]
        iters: usize,
        #[arg(long, default_value_t = untangle_core::optim::FIT_SPT_WEIGHT)]
        spt_weight: f64,
        #[arg(long, default_value_t = 25)]
        patience: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 10)]
        snapshot_every: usize,
        #[command(flatten)]
        view: ViewArgs,
        #[command(flatten)]
        body: BodyArgs,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Time detection plus gradient over ray grids and stacked bodies.
    Bench {
        #[arg(long, value_delimiter = ',', default_value = "128,256,512,1024,2048")]
        rays_list: Vec<Rays>,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        bodies_list: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        reps: usize,
        #[arg(long, default_value_t = 3)]
        warmup: usize,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        body: BodyArgs,
        /// Also write `bench.json` and `bench.csv` here.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum GenKind {
    Sphere {
        #[arg(long, default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 3)]
        subdiv: u32,
        #[command(flatten)]
        out: OutFile,
    },
    Box {
        /// Edge lengths `x,y,z`.
        #[arg(long, value_delimiter = ',', default_value = "1,1,1")]
        extents: Vec<f64>,
        #[command(flatten)]
        out: OutFile,
    },
    Capsule {
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        #[arg(long, default_value_t = 1.0)]
        length: f64,
        #[arg(long, default_value_t = 32)]
        segments: usize,
        #[command(flatten)]
        out: OutFile,
    },
    BentTube {
        #[arg(long, default_value_t = 0.2)]
        radius: f64,
        /// Bend angle in degrees; past about 180 the ends collide.
        #[arg(long, default_value_t = 200.0)]
        arc: f64,
        #[arg(long, default_value_t = 64)]
        segments: usize,
        #[command(flatten)]
        out: OutFile,
    },
    /// Two unit spheres along x; a negative gap overlaps them.
    TwoSpheres {
        #[arg(long, default_value_t = -1.0, allow_hyphen_values = true)]
        gap: f64,
        #[arg(long, default_value_t = 3)]
        subdiv: u32,
        #[command(flatten)]
        out: OutFile,
    },
    /// A coarse sphere overlapping a finer, smaller one.
    MixedArea {
        #[command(flatten)]
        out: OutFile,
    },
    /// The articulated toy body, optionally posed.
    ToyBody {
        /// `joint:degrees` about the joint's bend axis, e.g. `elbow:150`.
        /// Names without a side mean the left one.
        #[arg(long, value_delimiter = ',')]
        pose: Vec<String>,
        #[command(flatten)]
        body: BodyArgs,
        #[command(flatten)]
        out: OutFile,
    },
}

#[derive(Debug, Args)]
struct OutFile {
    #[arg(short = 'o', long = "out")]
    path: PathBuf,
}

#[derive(Debug, Args)]
struct ViewArgs {
    /// Ray grid `HxW`, or one number for a square grid.
    #[arg(long, default_value = "512x512")]
    rays: Rays,
    /// View direction: +x, -x, +y, -y, +z or -z.
    #[arg(long, default_value = "+z", allow_hyphen_values = true)]
    axis: ViewAxis,
}

#[derive(Debug, Args)]
struct BodyArgs {
    /// Toy body build settings (JSON); defaults when omitted.
    #[arg(long)]
    body_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScenarioKind {
    /// Targets that reward pushing the left hand into the torso.
    Crafted,
    /// A relaxed pose with a noisy start.
    Recovery,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // Exit 2 is reserved for "intersection found".
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    init_logging(cli.verbose);
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        2 => "debug",
        _ => "trace",
    };
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new(level));
    tracing_subscriber::fmt().with_env_filter(filter).with_writer(std::io::stderr).init();
}
