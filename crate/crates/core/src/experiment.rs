//! End-to-end runs: simulate power maps, select users, reconstruct, ablate.
//!
//! [`simulate`] does the expensive part once (ray tracing and beam sweeps for
//! every base station and user); [`reconstruct`] then runs selection,
//! localization and surface fitting for one factor mask, so an ablation
//! reuses the same power maps for all eight masks.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{
    noise_power_for_snr, power_map_from_paths, subcarrier_phases, ArrayConfig, Boresight, ChannelConfig, ChannelError,
    Codebook, CodebookSpec, PowerMap,
};
use crate::geometry::Vec3;
use crate::localization::{build_point_set, merge_point_sets, Link, PhaseSource, PointSet, RangingConfig};
use crate::raytrace::{trace_paths, PathParam, TraceConfig};
use crate::rng::{derive, Stream};
use crate::scene::{box_walls, build_scene, vertical_wall, RegionSpec, Scene, SceneError, SceneSpec, UserSpec};
use crate::selection::{reports_to_toml, select_user, FactorMask, SelectionConfig, SelectionReport};
use crate::surface::{choose_k, fit_surface_auto, kmeans, point_set_rmse, surfaces_to_text, SurfaceModel};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("multi-BS run needs at least 2 base stations, scene has {0}")]
    TooFewBaseStations(usize),
    #[error("output: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    DefaultRoom,
    ConcavePocket,
}

impl Preset {
    pub fn spec(self) -> SceneSpec {
        match self {
            Preset::DefaultRoom => default_room(),
            Preset::ConcavePocket => concave_pocket(),
        }
    }
}

/// 20 × 20 × 5 m room of four walls, one BS near the `x = −10` wall, 200
/// users in front of it below the BS height.
pub fn default_room() -> SceneSpec {
    SceneSpec {
        walls: box_walls([-10.0, -10.0, 0.0], [10.0, 10.0, 5.0]),
        base_stations: vec![[-9.0, 0.0, 3.0]],
        users: UserSpec {
            positions: Vec::new(),
            regions: vec![RegionSpec::Uniform {
                min: [-5.0, -8.0, 1.0],
                max: [8.0, 8.0, 2.0],
                count: 200,
            }],
            seed: 0,
        },
        clearance: 0.1,
    }
}

/// Low 20 × 20 × 2.5 m room whose `y = +10` wall has a recessed pocket, with
/// one BS at each end. Each BS sees the side walls only within its codebook
/// span, so the far half of each side wall (and the pocket) is a blind spot
/// for it.
pub fn concave_pocket() -> SceneSpec {
    let (z0, z1) = (0.0, 2.5);
    let walls = vec![
        vertical_wall([-10.0, -10.0], [10.0, -10.0], z0, z1),
        vertical_wall([10.0, -10.0], [10.0, 10.0], z0, z1),
        vertical_wall([-10.0, 10.0], [-10.0, -10.0], z0, z1),
        // y = +10 wall, broken by a pocket over x ∈ [2, 6] reaching y = 12
        vertical_wall([10.0, 10.0], [6.0, 10.0], z0, z1),
        vertical_wall([6.0, 10.0], [6.0, 12.0], z0, z1),
        vertical_wall([6.0, 12.0], [2.0, 12.0], z0, z1),
        vertical_wall([2.0, 12.0], [2.0, 10.0], z0, z1),
        vertical_wall([2.0, 10.0], [-10.0, 10.0], z0, z1),
    ];
    SceneSpec {
        walls,
        base_stations: vec![[-9.0, 0.0, 2.0], [9.0, 0.0, 2.0]],
        users: UserSpec {
            positions: Vec::new(),
            regions: vec![RegionSpec::Uniform {
                min: [-8.0, -8.0, 0.8],
                max: [8.0, 8.0, 1.6],
                count: 200,
            }],
            seed: 0,
        },
        clearance: 0.1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayShape {
    pub rows: usize,
    pub cols: usize,
    #[serde(default = "half")]
    pub spacing: f64,
}

fn half() -> f64 {
    0.5
}

impl ArrayShape {
    fn facing(self, boresight: Boresight) -> ArrayConfig {
        ArrayConfig {
            rows: self.rows,
            cols: self.cols,
            spacing: self.spacing,
            boresight,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// Scene file, resolved relative to the config file.
    pub scene_path: Option<PathBuf>,
    pub preset: Option<Preset>,
    pub scene: Option<SceneSpec>,
    /// Root seed; overrides the scene's placement seed.
    pub seed: u64,
    pub snr_db: f64,
    pub bs_array: ArrayShape,
    pub user_array: ArrayShape,
    /// Per-BS boresight; inferred from the user layout when empty.
    pub boresights: Vec<Boresight>,
    pub trace: TraceConfig,
    pub channel: ChannelConfig,
    pub codebook: CodebookSpec,
    pub selection: SelectionConfig,
    pub ranging: RangingConfig,
    /// `all`, `none`, or a `+`-separated list such as `c+p`.
    pub factors: String,
    /// Surface clusters; the wall count of the scene when unset.
    pub clusters: Option<usize>,
    pub coverage_radius: f64,
    /// Spacing of the ground-truth wall samples used for coverage.
    pub coverage_spacing: f64,
    pub output: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scene_path: None,
            preset: None,
            scene: None,
            seed: 1,
            snr_db: 20.0,
            bs_array: ArrayShape {
                rows: 8,
                cols: 8,
                spacing: 0.5,
            },
            user_array: ArrayShape {
                rows: 8,
                cols: 8,
                spacing: 0.5,
            },
            boresights: Vec::new(),
            trace: TraceConfig::default(),
            channel: ChannelConfig::default(),
            codebook: CodebookSpec::default(),
            selection: SelectionConfig::default(),
            ranging: RangingConfig::default(),
            factors: "all".into(),
            clusters: None,
            coverage_radius: 0.2,
            coverage_spacing: 0.25,
            output: None,
        }
    }
}

impl ExperimentConfig {
    /// Preset scene with the settings it was tuned for. The pocket keeps
    /// only strong NLOS domains and fits three surfaces, since its point
    /// sets are too small to split over all eight walls.
    pub fn with_preset(preset: Preset) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            preset: Some(preset),
            ..Default::default()
        };
        if preset == Preset::ConcavePocket {
            cfg.selection.thr_pow = 4.0;
            cfg.clusters = Some(3);
        }
        cfg
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    /// Reads a config; a relative `scene_path` is taken from the config's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<ExperimentConfig, ExperimentError> {
        let path = path.as_ref();
        let mut cfg = Self::from_toml(&fs::read_to_string(path)?)?;
        if let (Some(p), Some(dir)) = (&cfg.scene_path, path.parent()) {
            if p.is_relative() {
                cfg.scene_path = Some(dir.join(p));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn mask(&self) -> Result<FactorMask, ExperimentError> {
        FactorMask::parse(&self.factors).ok_or_else(|| ExperimentError::Config(format!("unknown factor list {:?}", self.factors)))
    }

    pub fn scene_spec(&self) -> Result<SceneSpec, ExperimentError> {
        let given = [self.scene_path.is_some(), self.preset.is_some(), self.scene.is_some()];
        if given.iter().filter(|g| **g).count() != 1 {
            return Err(ExperimentError::Config(
                "exactly one of scene_path, preset, scene must be given".into(),
            ));
        }
        let mut spec = if let Some(p) = &self.scene_path {
            SceneSpec::load(p)?
        } else if let Some(p) = self.preset {
            p.spec()
        } else {
            self.scene.clone().unwrap()
        };
        spec.users.seed = derive(self.seed, Stream::Placement, 0);
        Ok(spec)
    }

    pub fn build_scene(&self) -> Result<Scene, ExperimentError> {
        Ok(build_scene(&self.scene_spec()?)?)
    }
}

/// A problem with one user or domain; the run continues without it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub module: String,
    pub bs: usize,
    pub user: Option<usize>,
    pub domain: Option<usize>,
    pub message: String,
}

/// Traced paths and power maps for one base station.
pub struct LinkData {
    pub link: Link,
    pub paths: Vec<Vec<PathParam>>,
    pub noise_power: Vec<f64>,
    pub maps: Vec<PowerMap>,
    seeds: Vec<u64>,
}

pub struct Simulation {
    pub config: ExperimentConfig,
    pub scene: Scene,
    pub codebook: Codebook,
    pub links: Vec<LinkData>,
    pub issues: Vec<Issue>,
}

/// BS faces +x when the users lie mostly on its +x side.
fn infer_boresight(bs: &Vec3, users: &[Vec3]) -> Boresight {
    let ahead = users.iter().filter(|u| u.x > bs.x).count();
    if 2 * ahead >= users.len() {
        Boresight::PlusX
    } else {
        Boresight::MinusX
    }
}

pub fn simulate(cfg: &ExperimentConfig) -> Result<Simulation, ExperimentError> {
    let scene = cfg.build_scene()?;
    simulate_scene(cfg, scene)
}

/// Traces and sweeps every (BS, user) pair of `scene`. User arrays face the
/// serving BS.
pub fn simulate_scene(cfg: &ExperimentConfig, scene: Scene) -> Result<Simulation, ExperimentError> {
    cfg.channel.validate()?;
    let codebook = Codebook::from_spec(&cfg.codebook)?;
    if !cfg.boresights.is_empty() && cfg.boresights.len() != scene.base_stations().len() {
        return Err(ExperimentError::Config(format!(
            "{} boresights for {} base stations",
            cfg.boresights.len(),
            scene.base_stations().len()
        )));
    }
    let mut links = Vec::new();
    let mut issues = Vec::new();
    for (b, bs) in scene.base_stations().iter().enumerate() {
        let bore = cfg.boresights.get(b).copied().unwrap_or_else(|| infer_boresight(bs, scene.users()));
        let link = Link {
            bs_id: b,
            bs: *bs,
            tx: cfg.bs_array.facing(bore),
            rx: cfg.user_array.facing(bore.opposite()),
        };
        let per_user: Vec<_> = scene
            .users()
            .par_iter()
            .enumerate()
            .map(|(u, pos)| {
                let seed = derive(cfg.seed, Stream::Noise, ((b as u64) << 32) | u as u64);
                let paths = trace_paths(&scene, bs, pos, &cfg.trace).map_err(|e| e.to_string())?;
                let noise = noise_power_for_snr(&paths, &link.tx, &link.rx, cfg.snr_db);
                let mut pm = power_map_from_paths(&paths, &cfg.channel, &codebook, &link.tx, &link.rx, noise, seed)
                    .map_err(|e| e.to_string())?;
                pm.user = u;
                Ok::<_, String>((paths, noise, pm, seed))
            })
            .collect();
        let mut data = LinkData {
            link,
            paths: Vec::new(),
            noise_power: Vec::new(),
            maps: Vec::new(),
            seeds: Vec::new(),
        };
        for (u, r) in per_user.into_iter().enumerate() {
            match r {
                Ok((paths, noise, pm, seed)) => {
                    data.paths.push(paths);
                    data.noise_power.push(noise);
                    data.maps.push(pm);
                    data.seeds.push(seed);
                }
                Err(message) => {
                    issues.push(Issue {
                        module: "channel".into(),
                        bs: b,
                        user: Some(u),
                        domain: None,
                        message,
                    });
                    // keep indices aligned with users: an all-zero map selects nothing
                    let shape = codebook.shape();
                    data.paths.push(Vec::new());
                    data.noise_power.push(0.0);
                    data.maps.push(PowerMap {
                        data: ndarray::Array4::zeros(shape),
                        user: u,
                    });
                    data.seeds.push(0);
                }
            }
        }
        links.push(data);
    }
    Ok(Simulation {
        config: cfg.clone(),
        scene,
        codebook,
        links,
        issues,
    })
}

struct SimPhases<'a> {
    sim: &'a Simulation,
    link: &'a LinkData,
}

impl PhaseSource for SimPhases<'_> {
    fn phases(&self, user: usize, quad: [usize; 4]) -> Result<(Vec<f64>, Vec<f64>), ChannelError> {
        let cfg = &self.sim.config;
        subcarrier_phases(
            &self.link.paths[user],
            quad,
            &self.sim.codebook,
            &cfg.channel,
            &self.link.link.tx,
            &self.link.link.rx,
            cfg.ranging.subcarriers,
            self.link.noise_power[user],
            derive(self.link.seeds[user], Stream::Noise, 1),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserStat {
    pub user: usize,
    pub s_los: u32,
    pub s_nlos: u32,
    pub superior: bool,
    pub points: usize,
}

/// Result of one base station's pass.
pub struct BsRun {
    pub bs: usize,
    pub reports: Vec<SelectionReport>,
    pub points: PointSet,
    pub user_estimates: Vec<(usize, Vec3)>,
}

pub struct Reconstruction {
    pub mask: FactorMask,
    pub per_bs: Vec<BsRun>,
    pub points: PointSet,
    pub surfaces: Vec<SurfaceModel>,
    /// `None` with no points.
    pub rmse: Option<f64>,
    pub issues: Vec<Issue>,
}

impl Reconstruction {
    pub fn superior_users(&self) -> usize {
        self.per_bs.iter().map(|b| b.reports.iter().filter(|r| r.superior).count()).sum()
    }

    pub fn user_stats(&self) -> Vec<UserStat> {
        let mut out = Vec::new();
        for b in &self.per_bs {
            for r in &b.reports {
                out.push(UserStat {
                    user: r.user,
                    s_los: r.s_los,
                    s_nlos: r.s_nlos,
                    superior: r.superior,
                    points: b.points.points.iter().filter(|p| p.user == r.user).count(),
                });
            }
        }
        out
    }
}

/// Selection and localization for the base stations in `bs_ids`, merged.
pub fn reconstruct_with(sim: &Simulation, mask: FactorMask, bs_ids: &[usize]) -> Reconstruction {
    let cfg = &sim.config;
    let mut issues = sim.issues.iter().filter(|i| bs_ids.contains(&i.bs)).cloned().collect::<Vec<_>>();
    let mut per_bs = Vec::new();
    for &b in bs_ids {
        let link = &sim.links[b];
        let reports: Vec<SelectionReport> = link
            .maps
            .par_iter()
            .map(|pm| select_user(pm, &sim.codebook, &cfg.selection, mask))
            .collect();
        let loc = build_point_set(&reports, &SimPhases { sim, link }, &link.link, &cfg.ranging);
        for s in loc.skipped {
            issues.push(Issue {
                module: "localization".into(),
                bs: b,
                user: Some(s.user),
                domain: s.domain,
                message: s.error.to_string(),
            });
        }
        per_bs.push(BsRun {
            bs: b,
            reports,
            points: loc.points,
            user_estimates: loc.users,
        });
    }
    let points = merge_point_sets(&per_bs.iter().map(|b| b.points.clone()).collect::<Vec<_>>());
    let rmse = point_set_rmse(&points, &sim.scene).ok();
    let surfaces = fit_clusters(&points, cfg, sim.scene.walls().len(), &mut issues);
    Reconstruction {
        mask,
        per_bs,
        points,
        surfaces,
        rmse,
        issues,
    }
}

pub fn reconstruct(sim: &Simulation, mask: FactorMask) -> Reconstruction {
    let all: Vec<usize> = (0..sim.links.len()).collect();
    reconstruct_with(sim, mask, &all)
}

fn fit_clusters(points: &PointSet, cfg: &ExperimentConfig, walls: usize, issues: &mut Vec<Issue>) -> Vec<SurfaceModel> {
    let pos = points.positions();
    if pos.len() < 10 {
        return Vec::new();
    }
    let mut issue = |message: String| {
        issues.push(Issue {
            module: "surface".into(),
            bs: 0,
            user: None,
            domain: None,
            message,
        })
    };
    let k = match cfg.clusters {
        Some(k) => k,
        None if walls > 0 => walls,
        None => match choose_k(&pos, 8, cfg.seed) {
            Ok(k) => k,
            Err(e) => {
                issue(e.to_string());
                return Vec::new();
            }
        },
    }
    .min(pos.len());
    let km = match kmeans(&pos, k, cfg.seed, 300) {
        Ok(km) => km,
        Err(e) => {
            issue(e.to_string());
            return Vec::new();
        }
    };
    let mut out = Vec::new();
    for c in 0..k {
        let members: Vec<Vec3> = pos.iter().zip(&km.assignment).filter(|(_, a)| **a == c).map(|(p, _)| *p).collect();
        match fit_surface_auto(&members) {
            Ok(m) => out.push(m),
            Err(e) => issue(format!("cluster {c}: {e}")),
        }
    }
    out
}

/// Runs the configured mask and writes artifacts to `cfg.output` if set.
pub fn run_reconstruction(cfg: &ExperimentConfig) -> Result<Reconstruction, ExperimentError> {
    let mask = cfg.mask()?;
    let sim = simulate(cfg)?;
    let rec = reconstruct(&sim, mask);
    if let Some(dir) = &cfg.output {
        write_reconstruction(dir, &sim, &rec)?;
    }
    Ok(rec)
}

#[derive(Serialize)]
struct RunSummary<'a> {
    factors: String,
    users: usize,
    superior_users: usize,
    points: usize,
    /// Absent when there are no points.
    rmse: Option<f64>,
    surfaces: usize,
    issues: &'a [Issue],
}

pub fn write_reconstruction(dir: &Path, sim: &Simulation, rec: &Reconstruction) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), sim.config.to_toml())?;
    fs::write(dir.join("scene.toml"), sim.scene.to_toml()?)?;
    fs::write(dir.join("points.txt"), rec.points.to_text())?;
    fs::write(dir.join("surfaces.txt"), surfaces_to_text(&rec.surfaces))?;
    let reports: Vec<SelectionReport> = rec.per_bs.iter().flat_map(|b| b.reports.iter().cloned()).collect();
    fs::write(
        dir.join("selection.toml"),
        reports_to_toml(&reports).map_err(|e| ExperimentError::Config(e.to_string()))?,
    )?;
    let summary = RunSummary {
        factors: rec.mask.label(),
        users: sim.scene.users().len(),
        superior_users: rec.superior_users(),
        points: rec.points.len(),
        rmse: rec.rmse,
        surfaces: rec.surfaces.len(),
        issues: &rec.issues,
    };
    fs::write(dir.join("report.toml"), toml::to_string(&summary).expect("plain data"))?;
    Ok(())
}

// ---------------------------------------------------------------------------
// ablation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub factors: String,
    pub superior_users: usize,
    pub points: usize,
    /// `None` with no points (row failed).
    pub rmse: Option<f64>,
}

/// All eight factor subsets on the same simulation.
pub fn run_ablation(sim: &Simulation) -> Vec<AblationRow> {
    FactorMask::subsets()
        .iter()
        .map(|&mask| {
            let rec = reconstruct(sim, mask);
            AblationRow {
                factors: mask.label(),
                superior_users: rec.superior_users(),
                points: rec.points.len(),
                rmse: rec.rmse,
            }
        })
        .collect()
}

/// Tab-separated table with a header line; failed rows show `no-points`.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("factors\tsuperior_users\tpoints\trmse_m\n");
    for r in rows {
        let rmse = r.rmse.map_or("no-points".to_string(), |v| format!("{v:.6}"));
        s.push_str(&format!("{}\t{}\t{}\t{}\n", r.factors, r.superior_users, r.points, rmse));
    }
    s
}

// ---------------------------------------------------------------------------
// coverage

/// Fraction of `truth` samples with a point of `points` within `radius`.
pub fn coverage(truth: &[Vec3], points: &[Vec3], radius: f64) -> f64 {
    if truth.is_empty() {
        return 0.0;
    }
    let r2 = radius * radius;
    let hit = truth.par_iter().filter(|t| points.iter().any(|p| (p - *t).norm_squared() <= r2)).count();
    hit as f64 / truth.len() as f64
}

/// Estimated points plus samples of the surfaces fitted to them: the
/// reconstructed environment that coverage is measured against.
pub fn reconstructed_samples(points: &PointSet, surfaces: &[SurfaceModel], spacing: f64) -> Vec<Vec3> {
    let mut out = points.positions();
    for s in surfaces {
        out.extend(s.samples(spacing));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultiBsReport {
    /// Coverage of each BS's reconstruction (points and fitted surfaces).
    pub per_bs_coverage: Vec<f64>,
    pub merged_coverage: f64,
    /// Same, counting estimated points only.
    pub per_bs_point_coverage: Vec<f64>,
    pub merged_point_coverage: f64,
    pub per_bs_points: Vec<usize>,
    pub merged_points: usize,
    pub merged_rmse: Option<f64>,
}

impl MultiBsReport {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("plain data")
    }
}

/// Per-BS and merged reconstructions, with coverage of the ground-truth
/// wall samples (`coverage_spacing` apart) within `coverage_radius`.
pub fn run_multi_bs(sim: &Simulation, mask: FactorMask) -> Result<(MultiBsReport, Reconstruction), ExperimentError> {
    let n = sim.links.len();
    if n < 2 {
        return Err(ExperimentError::TooFewBaseStations(n));
    }
    let cfg = &sim.config;
    let truth = sim.scene.wall_samples(cfg.coverage_spacing);
    let mut merged = reconstruct(sim, mask);
    let walls = sim.scene.walls().len();
    let mut per_bs_coverage = Vec::new();
    let mut per_bs_point_coverage = Vec::new();
    for b in &merged.per_bs {
        let surfaces = fit_clusters(&b.points, cfg, walls, &mut merged.issues);
        let env = reconstructed_samples(&b.points, &surfaces, cfg.coverage_spacing);
        per_bs_coverage.push(coverage(&truth, &env, cfg.coverage_radius));
        per_bs_point_coverage.push(coverage(&truth, &b.points.positions(), cfg.coverage_radius));
    }
    let env = reconstructed_samples(&merged.points, &merged.surfaces, cfg.coverage_spacing);
    let report = MultiBsReport {
        per_bs_coverage,
        merged_coverage: coverage(&truth, &env, cfg.coverage_radius),
        per_bs_point_coverage,
        merged_point_coverage: coverage(&truth, &merged.points.positions(), cfg.coverage_radius),
        per_bs_points: merged.per_bs.iter().map(|b| b.points.len()).collect(),
        merged_points: merged.points.len(),
        merged_rmse: merged.rmse,
    };
    Ok((report, merged))
}
