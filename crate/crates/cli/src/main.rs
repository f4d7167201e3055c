//! `isac` — run simulation, selection, reconstruction and dataset export from
//! TOML experiment configs.
//!
//! Exit codes: 0 on a fully successful run, 1 when the run finished but was
//! partial (per-user issues, empty point sets, failed ablation rows), 2 on
//! errors that stop the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use isac_recon::camera::{export_dataset, CameraPose, Intrinsics, View, Weather};
use isac_recon::experiment::*;
use isac_recon::localization::PointSet;
use isac_recon::raytrace::dump_paths;
use isac_recon::selection::{reports_to_toml, select_user, Role, SelectionReport};
use isac_recon::surface::point_set_rmse;
use isac_recon::{Scene, Vec3};

/// `print!` that ends the process quietly when stdout is closed early
/// (e.g. piped into `head`).
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        if let Err(e) = write!(std::io::stdout().lock(), $($arg)*) {
            if e.kind() == std::io::ErrorKind::BrokenPipe {
                std::process::exit(0);
            }
        }
    }};
}

macro_rules! outln {
    ($($arg:tt)*) => {{ out!($($arg)*); out!("\n"); }};
}

#[derive(Parser)]
#[command(name = "isac", version, about = "mmWave ISAC environment reconstruction experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML).
    #[arg(short, long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scene with its tuned settings: default_room or concave_pocket.
    #[arg(short, long)]
    preset: Option<String>,
    /// Root seed [default: the config's, else 1].
    #[arg(long)]
    seed: Option<u64>,
    /// Active factors: all, none, or a `+` list of c, r, p [default: the config's, else all].
    #[arg(short, long)]
    factors: Option<String>,
    /// Output directory [default: the config's; nothing written if unset].
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Trace paths and sweep power maps; prints per-user path counts.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write every power map as `maps/bs{b}_user{u}.pm` (large).
        #[arg(long)]
        save_maps: bool,
    },
    /// Superior-user selection; prints one row per (BS, user).
    Select {
        #[command(flatten)]
        common: Common,
    },
    /// Full pipeline: selection, localization, surface fitting.
    Reconstruct {
        #[command(flatten)]
        common: Common,
    },
    /// All eight factor subsets on one simulation.
    Ablate {
        #[command(flatten)]
        common: Common,
    },
    /// Per-BS and merged reconstruction with wall coverage (needs ≥ 2 BSs).
    MultiBs {
        #[command(flatten)]
        common: Common,
    },
    /// Reconstruct, then render views and write a fusion dataset bundle.
    ExportDataset {
        #[command(flatten)]
        common: Common,
        /// Number of camera views, placed at the first users.
        #[arg(long, default_value_t = 10)]
        views: usize,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
        /// Horizontal field of view, degrees.
        #[arg(long, default_value_t = 90.0)]
        fov: f64,
        /// Comma-separated weathers.
        #[arg(long, default_value = "sunny,rainy,snowy", value_delimiter = ',')]
        weathers: Vec<String>,
    },
    /// Score a point file against the scene's walls.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Point file (`x y z user bs residual` per line).
        #[arg(long)]
        points: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match (&c.config, &c.preset) {
        (Some(path), _) => ExperimentConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        (None, Some(name)) => {
            let preset = match name.as_str() {
                "default_room" => Preset::DefaultRoom,
                "concave_pocket" => Preset::ConcavePocket,
                other => bail!("unknown preset {other:?} (default_room, concave_pocket)"),
            };
            ExperimentConfig::with_preset(preset)
        }
        (None, None) => bail!("give --config or --preset"),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(f) = &c.factors {
        cfg.factors = f.clone();
    }
    if let Some(o) = &c.out {
        cfg.output = Some(o.clone());
    }
    cfg.mask()?;
    Ok(cfg)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(name), text).with_context(|| format!("writing {}", dir.join(name).display()))
}

fn print_issues(issues: &[Issue]) {
    for i in issues {
        let user = i.user.map_or("-".into(), |u| u.to_string());
        let domain = i.domain.map_or("-".into(), |d| d.to_string());
        eprintln!("issue\t{}\tbs={}\tuser={user}\tdomain={domain}\t{}", i.module, i.bs, i.message);
    }
}

fn simulate_cmd(cfg: &ExperimentConfig, save_maps: bool) -> Result<bool> {
    let sim = simulate(cfg)?;
    outln!("bs\tuser\tpaths\tlos\torder1\torder2");
    for (b, link) in sim.links.iter().enumerate() {
        for (u, paths) in link.paths.iter().enumerate() {
            let n = |o: u8| paths.iter().filter(|p| p.order == o).count();
            outln!("{b}\t{u}\t{}\t{}\t{}\t{}", paths.len(), n(0), n(1), n(2));
        }
    }
    if let Some(dir) = &cfg.output {
        write(dir, "config.toml", &cfg.to_toml())?;
        write(dir, "scene.toml", &sim.scene.to_toml()?)?;
        let mut text = String::new();
        for (b, link) in sim.links.iter().enumerate() {
            for (u, paths) in link.paths.iter().enumerate() {
                text.push_str(&format!("# bs {b} user {u}\n"));
                text.push_str(&dump_paths(paths));
            }
        }
        write(dir, "paths.txt", &text)?;
        if save_maps {
            let maps = dir.join("maps");
            fs::create_dir_all(&maps)?;
            for (b, link) in sim.links.iter().enumerate() {
                for (u, pm) in link.maps.iter().enumerate() {
                    pm.save(maps.join(format!("bs{b}_user{u}.pm")))?;
                }
            }
        }
    }
    print_issues(&sim.issues);
    Ok(sim.issues.is_empty())
}

fn select_cmd(cfg: &ExperimentConfig) -> Result<bool> {
    let sim = simulate(cfg)?;
    let mask = cfg.mask()?;
    outln!("bs\tuser\tdomains\ts_los\ts_nlos\tsuperior");
    let mut all: Vec<SelectionReport> = Vec::new();
    let mut superior = 0;
    for (b, link) in sim.links.iter().enumerate() {
        for pm in &link.maps {
            let r = select_user(pm, &sim.codebook, &cfg.selection, mask);
            let passing = r.domains.iter().filter(|(_, d)| d.role != Role::Rejected).count();
            outln!("{b}\t{}\t{passing}/{}\t{}\t{}\t{}", r.user, r.domains.len(), r.s_los, r.s_nlos, r.superior);
            superior += usize::from(r.superior);
            all.push(r);
        }
    }
    if let Some(dir) = &cfg.output {
        write(dir, "selection.toml", &reports_to_toml(&all)?)?;
    }
    eprintln!("{superior} superior of {} (bs, user) pairs", all.len());
    print_issues(&sim.issues);
    Ok(sim.issues.is_empty() && superior > 0)
}

fn reconstruct_cmd(cfg: &ExperimentConfig) -> Result<bool> {
    let sim = simulate(cfg)?;
    let rec = reconstruct(&sim, cfg.mask()?);
    if let Some(dir) = &cfg.output {
        write_reconstruction(dir, &sim, &rec)?;
    }
    outln!("factors\tusers\tsuperior_users\tpoints\tsurfaces\trmse_m");
    let rmse = rec.rmse.map_or("no-points".into(), |v| format!("{v:.6}"));
    outln!(
        "{}\t{}\t{}\t{}\t{}\t{rmse}",
        rec.mask.label(),
        sim.scene.users().len(),
        rec.superior_users(),
        rec.points.len(),
        rec.surfaces.len()
    );
    print_issues(&rec.issues);
    Ok(rec.issues.is_empty() && rec.rmse.is_some())
}

fn ablate_cmd(cfg: &ExperimentConfig) -> Result<bool> {
    let sim = simulate(cfg)?;
    let rows = run_ablation(&sim);
    let table = ablation_table(&rows);
    out!("{table}");
    if let Some(dir) = &cfg.output {
        write(dir, "ablation.tsv", &table)?;
        write(dir, "config.toml", &cfg.to_toml())?;
    }
    print_issues(&sim.issues);
    Ok(sim.issues.is_empty() && rows.iter().all(|r| r.rmse.is_some()))
}

fn multi_bs_cmd(cfg: &ExperimentConfig) -> Result<bool> {
    let sim = simulate(cfg)?;
    let (report, rec) = run_multi_bs(&sim, cfg.mask()?)?;
    outln!("bs\tpoints\tcoverage\tpoint_coverage");
    for (b, ((n, c), pc)) in report
        .per_bs_points
        .iter()
        .zip(&report.per_bs_coverage)
        .zip(&report.per_bs_point_coverage)
        .enumerate()
    {
        outln!("{b}\t{n}\t{c:.6}\t{pc:.6}");
    }
    outln!(
        "merged\t{}\t{:.6}\t{:.6}",
        report.merged_points, report.merged_coverage, report.merged_point_coverage
    );
    if let Some(dir) = &cfg.output {
        write_reconstruction(dir, &sim, &rec)?;
        write(dir, "coverage.toml", &report.to_toml())?;
    }
    print_issues(&rec.issues);
    Ok(rec.issues.is_empty() && rec.rmse.is_some())
}

/// Camera at a user position looking at the scene's horizontal centre.
fn view_pose(scene: &Scene, eye: Vec3, intr: Intrinsics) -> Result<CameraPose> {
    let samples = scene.wall_samples(0.5);
    let centre = if samples.is_empty() {
        Vec3::new(eye.x + 1.0, eye.y, eye.z)
    } else {
        samples.iter().sum::<Vec3>() / samples.len() as f64
    };
    let mut target = Vec3::new(centre.x, centre.y, eye.z);
    if (target - eye).norm() < 0.5 {
        target = eye + Vec3::x();
    }
    Ok(CameraPose::look_at(eye, target, Vec3::z(), intr)?)
}

fn export_cmd(cfg: &ExperimentConfig, views: usize, width: u32, height: u32, fov: f64, weathers: &[String]) -> Result<bool> {
    let Some(out) = &cfg.output else {
        bail!("export-dataset needs --out or an output directory in the config");
    };
    let weathers = weathers
        .iter()
        .map(|w| Weather::parse(w.trim()).map(|w| (w, w.default_params())).with_context(|| format!("unknown weather {w:?}")))
        .collect::<Result<Vec<_>>>()?;
    let sim = simulate(cfg)?;
    let rec = reconstruct(&sim, cfg.mask()?);
    let intr = Intrinsics::with_fov(width, height, fov.to_radians());
    let users = sim.scene.users();
    if users.len() < views {
        bail!("{views} views requested but the scene has {} users", users.len());
    }
    let poses = users[..views].iter().map(|u| view_pose(&sim.scene, *u, intr)).collect::<Result<Vec<_>>>()?;
    let list: Vec<View> = poses
        .iter()
        .map(|pose| View {
            scene: &sim.scene,
            pose: *pose,
            points: &rec.points,
        })
        .collect();
    let manifest = export_dataset(&list, &weathers, cfg.seed, out)?;
    write(out, "config.toml", &cfg.to_toml())?;
    outln!("samples\tviews\tweathers\tpoints\twidth\theight");
    outln!("{}\t{views}\t{}\t{}\t{width}\t{height}", manifest.samples.len(), weathers.len(), rec.points.len());
    print_issues(&rec.issues);
    Ok(rec.issues.is_empty() && !rec.points.is_empty())
}

fn eval_cmd(cfg: &ExperimentConfig, points: &Path) -> Result<bool> {
    let scene = cfg.build_scene()?;
    let ps = PointSet::load(points).with_context(|| format!("reading {}", points.display()))?;
    let truth = scene.wall_samples(cfg.coverage_spacing);
    let cov = coverage(&truth, &ps.positions(), cfg.coverage_radius);
    outln!("points\trmse_m\tpoint_coverage");
    match point_set_rmse(&ps, &scene) {
        Ok(r) => {
            outln!("{}\t{r:.6}\t{cov:.6}", ps.len());
            Ok(true)
        }
        Err(e) => {
            outln!("{}\tno-points\t{cov:.6}", ps.len());
            eprintln!("{e}");
            Ok(false)
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Simulate { common, save_maps } => simulate_cmd(&load_config(&common)?, save_maps),
        Command::Select { common } => select_cmd(&load_config(&common)?),
        Command::Reconstruct { common } => reconstruct_cmd(&load_config(&common)?),
        Command::Ablate { common } => ablate_cmd(&load_config(&common)?),
        Command::MultiBs { common } => multi_bs_cmd(&load_config(&common)?),
        Command::ExportDataset {
            common,
            views,
            width,
            height,
            fov,
            weathers,
        } => export_cmd(&load_config(&common)?, views, width, height, fov, &weathers),
        Command::Eval { common, points } => eval_cmd(&load_config(&common)?, &points),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
