use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use silrecon::barrier::BarrierConfig;
use silrecon::baselines::carve;
use silrecon::dataset::{default_image_size, gen_data, gen_pool};
use silrecon::io;
use silrecon::losses::ViewSet;
use silrecon::metrics::{average_precision, compare_projectors, export_colored, iou};
use silrecon::projection::{default_depth_range, gs_forward, rp_forward};
use silrecon::solver::{estimate_viewpoint, reconstruct, reconstruct_unconstrained, SolverConfig, ViewpointSearch};
use silrecon::theory::{verify_global_min, DiscreteDist, JointDist};
use silrecon::voxel::{Extent, GridGeometry, ShapeKind};
use silrecon::{Error, Result};

#[derive(Parser)]
#[command(name = "silrecon", version, about = "Voxel reconstruction from silhouettes with a learned shape prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Rp,
    Gs,
}

#[derive(Subcommand)]
enum Command {
    /// Render a random shape from a ring of cameras.
    GenData {
        #[arg(long)]
        shape: ShapeKind,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 24)]
        views: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Image side in pixels (default 4n).
        #[arg(long)]
        image_size: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a pool of random shapes as .vox files.
    GenPool {
        /// Comma-separated shape kinds.
        #[arg(long, value_delimiter = ',', default_value = "cup")]
        shape: Vec<ShapeKind>,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long, default_value_t = 50)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a voxel grid to a mask.
    Project {
        #[arg(long)]
        voxels: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, value_enum, default_value = "rp")]
        method: Method,
        #[arg(long, default_value_t = 64)]
        depth_samples: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Visual hull from silhouettes.
    Carve {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        /// Comma-separated `camera.json:mask.pgm` pairs.
        #[arg(long)]
        views: String,
    },
    /// Reconstruct a grid from silhouettes.
    Reconstruct {
        #[arg(long)]
        views: String,
        /// Directory of .vox shapes used as the unlabeled pool.
        #[arg(long)]
        pool: Option<PathBuf>,
        /// Grid resolution; taken from the pool when omitted.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        iters: usize,
        #[arg(long, default_value_t = 100.0)]
        t: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        /// Colored point cloud of the result.
        #[arg(long)]
        points: Option<PathBuf>,
        /// Optimize the mask loss only.
        #[arg(long)]
        no_barrier: bool,
    },
    /// Compare grid sampling against ray tracing.
    CompareProjectors {
        #[arg(long)]
        voxels: PathBuf,
        #[arg(long)]
        camera: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "8,16,32,64,128")]
        samples: Vec<usize>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Randomized check of the global-minimum bound.
    TheoryCheck {
        #[arg(long, default_value_t = 3)]
        categories: usize,
        #[arg(long, default_value_t = 8)]
        outcomes: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// IOU and AP of a prediction against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = 0.4)]
        tau: f64,
    },
    /// Search for the camera that best explains a mask.
    EstimateViewpoint {
        #[arg(long)]
        mask: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
        /// Write the estimated camera here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_views(list: &str) -> Result<ViewSet> {
    let mut views = Vec::new();
    for item in list.split(',').filter(|s| !s.is_empty()) {
        let (cam, mask) = item
            .rsplit_once(':')
            .ok_or_else(|| Error::Precondition(format!("view `{item}` is not camera.json:mask.pgm")))?;
        let camera = io::read_camera(Path::new(cam))?;
        let mask = io::read_pgm(Path::new(mask))?;
        views.push((camera, mask));
    }
    ViewSet::new(views)
}

fn geometry(n: usize) -> Result<GridGeometry> {
    GridGeometry::new(n, Extent::default())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            shape,
            n,
            views,
            seed,
            image_size,
            out,
        } => {
            let size = image_size.unwrap_or_else(|| default_image_size(n));
            let m = gen_data(shape, geometry(n)?, views, seed, size, &out)?;
            println!("wrote {} views to {}", m.views.len(), out.display());
        }
        Command::GenPool {
            shape,
            n,
            count,
            seed,
            out,
        } => {
            let pool = gen_pool(&shape, geometry(n)?, count, seed, &out)?;
            println!("wrote {} shapes to {}", pool.len(), out.display());
        }
        Command::Project {
            voxels,
            camera,
            method,
            depth_samples,
            out,
        } => {
            let grid = io::read_voxels(&voxels)?;
            let cam = io::read_camera(&camera)?;
            let mask = match method {
                Method::Rp => rp_forward(&grid, &cam),
                Method::Gs => {
                    let range = default_depth_range(grid.geometry(), &cam);
                    gs_forward(&grid, &cam, depth_samples, range)?
                }
            };
            io::write_pgm(&out, &mask)?;
        }
        Command::Carve { out, n, views } => {
            let views = parse_views(&views)?;
            let hull = carve(geometry(n)?, &views)?;
            io::write_voxels(&out, &hull)?;
            println!("occupied={}", hull.occupied_count());
        }
        Command::Reconstruct {
            views,
            pool,
            n,
            iters,
            t,
            seed,
            out,
            log,
            points,
            no_barrier,
        } => {
            let views = parse_views(&views)?;
            let cfg = SolverConfig {
                iterations: iters,
                t,
                seed,
                ..SolverConfig::default()
            };
            let pool = pool.map(|p| io::read_voxel_dir(&p)).transpose()?;
            let result = if no_barrier {
                let n = match (n, pool.as_ref().and_then(|p| p.first())) {
                    (Some(n), _) => n,
                    (None, Some(g)) => g.n(),
                    (None, None) => return Err(Error::Precondition("--n or --pool is required".into())),
                };
                reconstruct_unconstrained(&views, geometry(n)?, &cfg)?
            } else {
                let pool = pool.ok_or_else(|| Error::Precondition("--pool is required unless --no-barrier".into()))?;
                if let (Some(n), Some(g)) = (n, pool.first()) {
                    if g.n() != n {
                        return Err(Error::ShapeMismatch(format!("--n {n} but pool grids have n={}", g.n())));
                    }
                }
                reconstruct(&views, &pool, &cfg, &BarrierConfig { t, ..BarrierConfig::default() })?
            };
            io::write_voxels(&out, &result.grid)?;
            if let Some(log) = log {
                io::write_training_log(&log, &result.log)?;
            }
            if let Some(points) = points {
                io::write_points(&points, &export_colored(&result.grid))?;
            }
            if let Some(last) = result.log.last() {
                println!("reproj_loss={:.6} penalty={:.6}", last.reproj_loss, last.penalty);
            }
        }
        Command::CompareProjectors {
            voxels,
            camera,
            samples,
            report,
        } => {
            let grid = io::read_voxels(&voxels)?;
            let cam = io::read_camera(&camera)?;
            let text = compare_projectors(&grid, &cam, &samples)?.render();
            match report {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Command::TheoryCheck {
            categories,
            outcomes,
            trials,
            seed,
        } => {
            if categories == 0 || outcomes == 0 {
                return Err(Error::Precondition("categories and outcomes must be positive".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = JointDist::random(categories, outcomes, &mut rng);
            let q_c = DiscreteDist::random(categories, &mut rng);
            let report = verify_global_min(&p, &q_c, trials, &mut rng)?;
            print!("{}", report.render());
        }
        Command::Eval { pred, gt, tau } => {
            let pred = io::read_voxels(&pred)?;
            let gt = io::read_voxels(&gt)?;
            println!("iou={:.6} ap={:.6}", iou(&pred, &gt, tau)?, average_precision(&pred, &gt)?);
        }
        Command::EstimateViewpoint {
            mask,
            reference,
            bins,
            out,
        } => {
            let mask = io::read_pgm(&mask)?;
            let reference = io::read_voxels(&reference)?;
            if mask.width() != mask.height() {
                return Err(Error::Precondition("viewpoint search expects a square mask".into()));
            }
            let search = ViewpointSearch::for_dataset(reference.geometry(), mask.width(), bins);
            let est = estimate_viewpoint(&mask, &reference, &search)?;
            println!(
                "azimuth_bin={} elevation_bin={} depth_bin={} score={:.6}",
                est.bin[0], est.bin[1], est.bin[2], est.score
            );
            if let Some(out) = out {
                io::write_camera(&out, &est.camera)?;
            }
        }
    }
    Ok(())
}

fn one_line(text: &str) -> String {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with("Usage:") && !l.starts_with("For more information"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = one_line(&e.to_string());
            eprintln!("{}", msg.strip_prefix("error: ").map(|m| format!("error: usage: {m}")).unwrap_or(msg));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", one_line(&e.to_string()));
            ExitCode::FAILURE
        }
    }
}
