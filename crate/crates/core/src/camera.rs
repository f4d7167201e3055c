//! Camera frames, depth rendering, weather corruption and dataset export.
//!
//! Conventions: the camera frame has `z` forward, `x` right and `y` down, and
//! a world point maps to `p_cam = R p + T` with `R = Rx(φx)·Ry(φy)·Rz(φz)`.
//! Depth is the camera-frame `z` of the first wall hit, not the ray length.
//! Pixels with no hit, and dropped-out pixels, hold [`SKY`].

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Matrix3, Rotation3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Vec3;
use crate::localization::{EstimatedPoint, PointSet};
use crate::rng::{stream_rng, Stream};
use crate::scene::Scene;

/// No-hit sentinel.
pub const SKY: f32 = f32::MAX;

#[derive(Debug, Error)]
pub enum CameraError {
    #[error("invalid camera: {0}")]
    Pose(String),
    #[error("bad depth file: {0}")]
    Format(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Focal length in pixels.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Centred principal point with horizontal field of view `fov` (radians).
    pub fn with_fov(width: u32, height: u32, fov: f64) -> Intrinsics {
        Intrinsics {
            focal: width as f64 / 2.0 / (fov / 2.0).tan(),
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    /// `(φx, φy, φz)` in radians.
    pub angles: [f64; 3],
    pub translation: [f64; 3],
    pub intrinsics: Intrinsics,
}

pub fn rotation_matrix(angles: [f64; 3]) -> Matrix3<f64> {
    let rx = Rotation3::from_axis_angle(&Vec3::x_axis(), angles[0]);
    let ry = Rotation3::from_axis_angle(&Vec3::y_axis(), angles[1]);
    let rz = Rotation3::from_axis_angle(&Vec3::z_axis(), angles[2]);
    (rx * ry * rz).into_inner()
}

impl CameraPose {
    pub fn validate(&self) -> Result<(), CameraError> {
        let i = &self.intrinsics;
        if i.width < 8 || i.height < 8 {
            return Err(CameraError::Pose(format!("image {}x{} smaller than 8x8", i.width, i.height)));
        }
        if !(i.focal > 0.0 && i.focal.is_finite()) {
            return Err(CameraError::Pose(format!("focal length {}", i.focal)));
        }
        let finite = self.angles.iter().chain(&self.translation).chain(&[i.cx, i.cy]).all(|v| v.is_finite());
        if !finite {
            return Err(CameraError::Pose("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        rotation_matrix(self.angles)
    }

    pub fn world_to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation() * p + Vec3::from(self.translation)
    }

    pub fn camera_to_world(&self, q: &Vec3) -> Vec3 {
        self.rotation().transpose() * (q - Vec3::from(self.translation))
    }

    /// Camera centre in world coordinates.
    pub fn centre(&self) -> Vec3 {
        self.camera_to_world(&Vec3::zeros())
    }

    /// Camera at `eye` looking at `target`, with world `up` pointing to the
    /// top of the image.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, intrinsics: Intrinsics) -> Result<CameraPose, CameraError> {
        let f = target - eye;
        if f.norm() < 1e-12 {
            return Err(CameraError::Pose("eye and target coincide".into()));
        }
        let z = f.normalize();
        let down = -(up - z * up.dot(&z));
        if down.norm() < 1e-9 {
            return Err(CameraError::Pose("up vector parallel to view direction".into()));
        }
        let y = down.normalize();
        let x = y.cross(&z);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        // R = Rx(a)·Ry(b)·Rz(c)
        let b = r[(0, 2)].clamp(-1.0, 1.0).asin();
        let c = (-r[(0, 1)]).atan2(r[(0, 0)]);
        let a = (-r[(1, 2)]).atan2(r[(2, 2)]);
        let angles = [a, b, c];
        let t = -(rotation_matrix(angles) * eye);
        let pose = CameraPose {
            angles,
            translation: [t.x, t.y, t.z],
            intrinsics,
        };
        pose.validate()?;
        Ok(pose)
    }

    /// World-frame direction of the ray through pixel centre `(i, j)`, scaled
    /// so its camera-frame `z` is 1.
    pub fn pixel_ray(&self, i: f64, j: f64) -> Vec3 {
        let k = &self.intrinsics;
        let d = Vec3::new((i - k.cx) / k.focal, (j - k.cy) / k.focal, 1.0);
        self.rotation().transpose() * d
    }

    /// Continuous pixel coordinates of a camera-frame point in front of the
    /// camera.
    pub fn project(&self, q: &Vec3) -> Option<(f64, f64)> {
        if q.z <= 0.0 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.focal * q.x / q.z + k.cx, k.focal * q.y / q.z + k.cy))
    }
}

/// Depth grid, row-major, `width` columns by `height` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub width: u32,
    pub height: u32,
    pub data: Vec<f32>,
    pub pose: Option<CameraPose>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DepthSidecar {
    width: u32,
    height: u32,
    convention: String,
    sentinel: f32,
    pose: Option<CameraPose>,
}

impl DepthMap {
    pub fn filled(width: u32, height: u32, value: f32) -> DepthMap {
        DepthMap {
            width,
            height,
            data: vec![value; width as usize * height as usize],
            pose: None,
        }
    }

    /// Depth at column `i`, row `j`.
    pub fn get(&self, i: u32, j: u32) -> f32 {
        self.data[(j * self.width + i) as usize]
    }

    pub fn is_valid(v: f32) -> bool {
        v != SKY
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|v| Self::is_valid(**v)).count()
    }

    /// RMS difference over pixels valid in both maps; `None` when none are.
    pub fn rmse(&self, other: &DepthMap) -> Option<f64> {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let (mut sum, mut n) = (0.0, 0usize);
        for (a, b) in self.data.iter().zip(&other.data) {
            if Self::is_valid(*a) && Self::is_valid(*b) {
                sum += (*a as f64 - *b as f64).powi(2);
                n += 1;
            }
        }
        (n > 0).then(|| (sum / n as f64).sqrt())
    }

    /// `(W, H)` as little-endian `u32`, then `W·H` little-endian `f32`.
    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<DepthMap, CameraError> {
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let width = u32::from_le_bytes(word);
        r.read_exact(&mut word)?;
        let height = u32::from_le_bytes(word);
        let n = width as usize * height as usize;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != 4 * n {
            return Err(CameraError::Format(format!(
                "{width}x{height} header needs {} payload bytes, found {}",
                4 * n,
                bytes.len()
            )));
        }
        let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(DepthMap {
            width,
            height,
            data,
            pose: None,
        })
    }

    fn sidecar_path(path: &Path) -> PathBuf {
        path.with_extension("toml")
    }

    /// Writes the binary grid at `path` and a TOML sidecar next to it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CameraError> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(8 + 4 * self.data.len());
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        let meta = DepthSidecar {
            width: self.width,
            height: self.height,
            convention: "camera-frame z, meters".into(),
            sentinel: SKY,
            pose: self.pose,
        };
        fs::write(Self::sidecar_path(path), toml::to_string(&meta).expect("plain struct"))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<DepthMap, CameraError> {
        let path = path.as_ref();
        let mut map = Self::read_from(&mut fs::File::open(path)?)?;
        let side = Self::sidecar_path(path);
        if side.exists() {
            let meta: DepthSidecar = toml::from_str(&fs::read_to_string(&side)?).map_err(|e| CameraError::Parse {
                path: side.clone(),
                reason: e.to_string(),
            })?;
            if (meta.width, meta.height) != (map.width, map.height) {
                return Err(CameraError::Format(format!(
                    "sidecar says {}x{}, grid is {}x{}",
                    meta.width, meta.height, map.width, map.height
                )));
            }
            map.pose = meta.pose;
        }
        Ok(map)
    }
}

/// Casts one ray per pixel centre.
pub fn render_depth(scene: &Scene, pose: &CameraPose) -> DepthMap {
    let k = pose.intrinsics;
    let origin = pose.centre();
    let mut data = vec![SKY; k.width as usize * k.height as usize];
    data.par_chunks_mut(k.width as usize).enumerate().for_each(|(j, row)| {
        for (i, px) in row.iter_mut().enumerate() {
            let dir = pose.pixel_ray(i as f64 + 0.5, j as f64 + 0.5);
            // the ray has unit camera-frame z, so the hit parameter is the depth
            if let Some((t, _)) = scene.first_hit(&origin, &dir, 1e-9, f64::INFINITY) {
                *px = t as f32;
            }
        }
    });
    DepthMap {
        width: k.width,
        height: k.height,
        data,
        pose: Some(*pose),
    }
}

// ---------------------------------------------------------------------------
// weather

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weather {
    Sunny,
    Rainy,
    Snowy,
}

impl Weather {
    pub const ALL: [Weather; 3] = [Weather::Sunny, Weather::Rainy, Weather::Snowy];

    pub fn name(self) -> &'static str {
        match self {
            Weather::Sunny => "sunny",
            Weather::Rainy => "rainy",
            Weather::Snowy => "snowy",
        }
    }

    pub fn parse(s: &str) -> Option<Weather> {
        Self::ALL.into_iter().find(|w| w.name() == s)
    }

    pub fn default_params(self) -> Corruption {
        match self {
            Weather::Sunny => Corruption {
                sigma: 0.05,
                dropout: 0.02,
                ..Corruption::NONE
            },
            Weather::Rainy => Corruption {
                sigma: 0.20,
                dropout: 0.10,
                streaks: 0.08,
                ..Corruption::NONE
            },
            Weather::Snowy => Corruption {
                sigma: 0.45,
                dropout: 0.25,
                scale: Some([0.7, 1.3]),
                ..Corruption::NONE
            },
        }
    }
}

/// Degradation applied to a clean depth map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corruption {
    /// Log-normal multiplicative noise: `d · exp(σ n)`.
    pub sigma: f64,
    /// Per-pixel probability of replacement by the sentinel.
    pub dropout: f64,
    /// Fraction of columns crossed by a near-depth streak.
    pub streaks: f64,
    /// Depth range of streak pixels, meters.
    pub streak_depth: [f64; 2],
    /// Global multiplicative bias drawn uniformly from this range.
    pub scale: Option<[f64; 2]>,
}

impl Corruption {
    pub const NONE: Corruption = Corruption {
        sigma: 0.0,
        dropout: 0.0,
        streaks: 0.0,
        streak_depth: [0.3, 1.5],
        scale: None,
    };
}

/// Deterministic under `seed`. Draw order: scale, per-pixel noise and
/// dropout (row-major), then streaks.
pub fn corrupt_depth(d: &DepthMap, params: &Corruption, seed: u64) -> DepthMap {
    let mut rng = stream_rng(seed, Stream::Corruption, 0);
    let scale = match params.scale {
        Some([lo, hi]) if hi > lo => rng.random_range(lo..hi),
        Some([lo, _]) => lo,
        None => 1.0,
    };
    let mut out = d.clone();
    for v in out.data.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        let drop = rng.random::<f64>() < params.dropout;
        if !DepthMap::is_valid(*v) {
            continue;
        }
        *v = if drop {
            SKY
        } else {
            (*v as f64 * scale * (params.sigma * n).exp()) as f32
        };
    }
    let (w, h) = (d.width as usize, d.height as usize);
    let count = (params.streaks * w as f64).round() as usize;
    for _ in 0..count {
        let col = rng.random_range(0..w);
        let len = rng.random_range(h / 8..=h / 2).max(1);
        let top = rng.random_range(0..=h - len);
        let [lo, hi] = params.streak_depth;
        let depth = if hi > lo { rng.random_range(lo..hi) } else { lo };
        for row in top..top + len {
            out.data[row * w + col] = depth as f32;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// dataset bundle
//
// out/
//   manifest.toml
//   sample_00000/
//     gt.depth  gt.toml          clean depth + sidecar
//     vision.depth vision.toml   corrupted "vision estimate" + sidecar
//     points.txt                 camera-frame points, PointSet text format
//     meta.toml                  SampleMeta

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub index: usize,
    pub view: usize,
    pub weather: Weather,
    pub seed: u64,
    pub user_count: usize,
    pub corruption: Corruption,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: u32,
    pub height: u32,
    pub samples: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub gt: DepthMap,
    pub vision: DepthMap,
    pub points: PointSet,
    pub meta: SampleMeta,
}

/// One camera view: a scene, a pose and the reconstructed points to hand to
/// the fusion model.
pub struct View<'a> {
    pub scene: &'a Scene,
    pub pose: CameraPose,
    pub points: &'a PointSet,
}

pub fn points_to_camera(points: &PointSet, pose: &CameraPose) -> PointSet {
    PointSet {
        points: points
            .points
            .iter()
            .map(|p| EstimatedPoint {
                position: pose.world_to_camera(&p.position),
                ..p.clone()
            })
            .collect(),
    }
}

/// Writes `views × weathers` samples; sample `v·|weathers| + w` pairs view
/// `v` with weather `w`.
pub fn export_dataset(
    views: &[View],
    weathers: &[(Weather, Corruption)],
    seed: u64,
    out: impl AsRef<Path>,
) -> Result<Manifest, CameraError> {
    let out = out.as_ref();
    let Some(first) = views.first() else {
        return Err(CameraError::Dataset("no views".into()));
    };
    let size = (first.pose.intrinsics.width, first.pose.intrinsics.height);
    for v in views {
        v.pose.validate()?;
        if (v.pose.intrinsics.width, v.pose.intrinsics.height) != size {
            return Err(CameraError::Dataset("views differ in image size".into()));
        }
    }
    if weathers.is_empty() {
        return Err(CameraError::Dataset("no weathers".into()));
    }
    fs::create_dir_all(out)?;
    let mut names = Vec::new();
    for (vi, view) in views.iter().enumerate() {
        let gt = render_depth(view.scene, &view.pose);
        let cam_points = points_to_camera(view.points, &view.pose);
        let mut users: Vec<usize> = view.points.points.iter().map(|p| p.user).collect();
        users.sort_unstable();
        users.dedup();
        for (wi, (weather, params)) in weathers.iter().enumerate() {
            let index = vi * weathers.len() + wi;
            let sample_seed = crate::rng::derive(seed, Stream::Corruption, index as u64);
            let vision = corrupt_depth(&gt, params, sample_seed);
            let name = format!("sample_{index:05}");
            let dir = out.join(&name);
            fs::create_dir_all(&dir)?;
            gt.save(dir.join("gt.depth"))?;
            vision.save(dir.join("vision.depth"))?;
            fs::write(dir.join("points.txt"), cam_points.to_text())?;
            let meta = SampleMeta {
                index,
                view: vi,
                weather: *weather,
                seed: sample_seed,
                user_count: users.len(),
                corruption: *params,
            };
            fs::write(dir.join("meta.toml"), toml::to_string(&meta).expect("plain struct"))?;
            names.push(name);
        }
    }
    let manifest = Manifest {
        width: size.0,
        height: size.1,
        samples: names,
    };
    fs::write(out.join("manifest.toml"), toml::to_string(&manifest).expect("plain struct"))?;
    Ok(manifest)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>, CameraError> {
    let dir = dir.as_ref();
    let parse = |path: PathBuf| -> Result<String, CameraError> { Ok(fs::read_to_string(path)?) };
    let mpath = dir.join("manifest.toml");
    let manifest: Manifest = toml::from_str(&parse(mpath.clone())?).map_err(|e| CameraError::Parse {
        path: mpath,
        reason: e.to_string(),
    })?;
    manifest
        .samples
        .iter()
        .map(|name| {
            let sdir = dir.join(name);
            let meta_path = sdir.join("meta.toml");
            let meta: SampleMeta = toml::from_str(&parse(meta_path.clone())?).map_err(|e| CameraError::Parse {
                path: meta_path,
                reason: e.to_string(),
            })?;
            let points_path = sdir.join("points.txt");
            let points = PointSet::from_text(&parse(points_path.clone())?).map_err(|e| CameraError::Parse {
                path: points_path,
                reason: e.to_string(),
            })?;
            Ok(Sample {
                gt: DepthMap::load(sdir.join("gt.depth"))?,
                vision: DepthMap::load(sdir.join("vision.depth"))?,
                points,
                meta,
            })
        })
        .collect()
}
