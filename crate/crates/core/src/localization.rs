//! Ranging, user localization and reflection-point triangulation.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{ArrayConfig, ChannelError};
use crate::geometry::{direction, Vec3, SPEED_OF_LIGHT};
use crate::selection::{Role, SelectionReport};

#[derive(Debug, Error)]
pub enum LocalizationError {
    #[error("ranging config: {0}")]
    Config(String),
    #[error("rays are parallel; no reflection point")]
    Parallel,
    #[error("closest approach lies behind a ray origin (bs side {s:.4}, user side {t:.4})")]
    Behind { s: f64, t: f64 },
    #[error("base station and user coincide")]
    Coincident,
    #[error(transparent)]
    Channel(#[from] ChannelError),
    #[error("point set file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("point set file: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RangingConfig {
    pub d_min: f64,
    pub d_max: f64,
    pub step: f64,
    /// Each pass searches ±one previous step at a tenth of it.
    pub passes: usize,
    /// Subcarriers used for ranging.
    pub subcarriers: usize,
}

impl Default for RangingConfig {
    fn default() -> Self {
        RangingConfig {
            d_min: 0.5,
            d_max: 60.0,
            step: 0.05,
            passes: 2,
            subcarriers: 64,
        }
    }
}

/// `|Σ_m exp(j(φ_m − 2π f_m d / c))|`.
pub fn range_objective(phases: &[f64], freqs: &[f64], d: f64) -> f64 {
    phases
        .iter()
        .zip(freqs)
        .map(|(&p, &f)| Complex64::from_polar(1.0, p - 2.0 * PI * f * d / SPEED_OF_LIGHT))
        .sum::<Complex64>()
        .norm()
}

/// Maximizes [`range_objective`] over `[d_min, d_max]`: a grid search (ties
/// to the smallest distance), `passes` local refinements, then a parabolic
/// step that is kept only if it raises the objective.
pub fn estimate_range(phases: &[f64], freqs: &[f64], cfg: &RangingConfig) -> Result<f64, LocalizationError> {
    if phases.len() != freqs.len() || phases.len() < 2 {
        return Err(LocalizationError::Config("need at least two (phase, frequency) pairs".into()));
    }
    if !(cfg.step > 0.0 && cfg.d_min > 0.0 && cfg.d_max - cfg.d_min >= cfg.step) {
        return Err(LocalizationError::Config(format!(
            "window [{}, {}] must be positive and span at least one step ({})",
            cfg.d_min, cfg.d_max, cfg.step
        )));
    }
    let mut sorted = freqs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let df = sorted.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(df > 0.0) {
        return Err(LocalizationError::Config("subcarrier frequencies must be distinct".into()));
    }
    let period = SPEED_OF_LIGHT / df;
    if cfg.d_max - cfg.d_min >= period {
        return Err(LocalizationError::Config(format!(
            "window width {} m is not below the ambiguity period {period:.3} m",
            cfg.d_max - cfg.d_min
        )));
    }
    let j = |d: f64| range_objective(phases, freqs, d);
    let n = ((cfg.d_max - cfg.d_min) / cfg.step).floor() as usize;
    let mut best = (cfg.d_min, j(cfg.d_min));
    for i in 1..=n {
        let d = cfg.d_min + i as f64 * cfg.step;
        let v = j(d);
        if v > best.1 {
            best = (d, v);
        }
    }
    let mut h = cfg.step;
    for _ in 0..cfg.passes {
        let fine = h / 10.0;
        let centre = best.0;
        for k in -10i32..=10 {
            let d = centre + k as f64 * fine;
            if k == 0 || d < cfg.d_min || d > cfg.d_max {
                continue;
            }
            let v = j(d);
            if v > best.1 || (v == best.1 && d < best.0) {
                best = (d, v);
            }
        }
        h = fine;
    }
    let (jm, j0, jp) = (j(best.0 - h), best.1, j(best.0 + h));
    let curv = jm - 2.0 * j0 + jp;
    if curv < 0.0 {
        let delta = 0.5 * h * (jm - jp) / curv;
        if delta.abs() <= h {
            let d = best.0 + delta;
            let v = j(d);
            if d >= cfg.d_min && d <= cfg.d_max && v > best.1 * (1.0 + 1e-12) {
                best = (d, v);
            }
        }
    }
    Ok(best.0)
}

/// User position from the base station along the line-of-sight direction
/// `(az, el)` (global frame, pointing from the base station to the user).
pub fn locate_user(bs: &Vec3, az: f64, el: f64, distance: f64) -> Vec3 {
    bs + direction(az, el) * distance
}

/// Midpoint of the common perpendicular between the departure ray from `bs`
/// and the arrival ray from `user`, with half the gap as residual.
pub fn reflection_point(
    bs: &Vec3,
    user: &Vec3,
    aod: (f64, f64),
    aoa: (f64, f64),
) -> Result<(Vec3, f64), LocalizationError> {
    if (bs - user).norm() == 0.0 {
        return Err(LocalizationError::Coincident);
    }
    let d1 = direction(aod.0, aod.1);
    let d2 = direction(aoa.0, aoa.1);
    let cross = d1.cross(&d2).norm();
    if cross < 1e-9 {
        return Err(LocalizationError::Parallel);
    }
    let w0 = bs - user;
    let b = d1.dot(&d2);
    let d = d1.dot(&w0);
    let e = d2.dot(&w0);
    let denom = 1.0 - b * b;
    let s = (b * e - d) / denom;
    let t = (e - b * d) / denom;
    if s < 0.0 || t < 0.0 {
        return Err(LocalizationError::Behind { s, t });
    }
    let p = bs + d1 * s;
    let q = user + d2 * t;
    Ok(((p + q) / 2.0, (p - q).norm() / 2.0))
}

// ---------------------------------------------------------------------------
// point sets

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatedPoint {
    pub position: Vec3,
    pub user: usize,
    pub bs: usize,
    /// Domain within the user's report; not carried by the text format.
    pub domain: Option<usize>,
    pub residual: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointSet {
    pub points: Vec<EstimatedPoint>,
}

impl PointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn positions(&self) -> Vec<Vec3> {
        self.points.iter().map(|p| p.position).collect()
    }

    /// One point per line: `x y z user_id bs_id residual`.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# x y z user_id bs_id residual\n");
        for p in &self.points {
            writeln!(
                s,
                "{} {} {} {} {} {}",
                p.position.x, p.position.y, p.position.z, p.user, p.bs, p.residual
            )
            .unwrap();
        }
        s
    }

    pub fn from_text(text: &str) -> Result<PointSet, LocalizationError> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let err = |reason: String| LocalizationError::Parse { line: i + 1, reason };
            if f.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", f.len())));
            }
            let num = |k: usize| f[k].parse::<f64>().map_err(|e| err(format!("field {}: {e}", k + 1)));
            let int = |k: usize| f[k].parse::<usize>().map_err(|e| err(format!("field {}: {e}", k + 1)));
            let residual = num(5)?;
            if !(residual >= 0.0) {
                return Err(err("residual must be non-negative".into()));
            }
            points.push(EstimatedPoint {
                position: Vec3::new(num(0)?, num(1)?, num(2)?),
                user: int(3)?,
                bs: int(4)?,
                domain: None,
                residual,
            });
        }
        Ok(PointSet { points })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LocalizationError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<PointSet, LocalizationError> {
        PointSet::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Concatenation preserving provenance; no deduplication.
pub fn merge_point_sets(sets: &[PointSet]) -> PointSet {
    PointSet {
        points: sets.iter().flat_map(|s| s.points.iter().cloned()).collect(),
    }
}

/// Subcarrier phases of a user's channel beamformed on a given quad.
pub trait PhaseSource {
    fn phases(&self, user: usize, quad: [usize; 4]) -> Result<(Vec<f64>, Vec<f64>), ChannelError>;
}

/// A domain that could not be turned into a point, and why.
#[derive(Debug)]
pub struct Skipped {
    pub user: usize,
    pub domain: Option<usize>,
    pub error: LocalizationError,
}

/// Everything one base station's localization pass produced.
#[derive(Debug, Default)]
pub struct Localized {
    pub points: PointSet,
    /// `(user, estimated position)` for each superior user that was ranged.
    pub users: Vec<(usize, Vec3)>,
    pub skipped: Vec<Skipped>,
}

/// Array geometry of one base-station link.
#[derive(Clone, Copy, Debug)]
pub struct Link {
    pub bs_id: usize,
    pub bs: Vec3,
    pub tx: ArrayConfig,
    pub rx: ArrayConfig,
}

impl Link {
    /// Local peak angles `[φ_t, θ_t, φ_r, θ_r]` to global `(aod, aoa)`.
    pub fn global_angles(&self, local: [f64; 4]) -> ((f64, f64), (f64, f64)) {
        let aod = self.tx.boresight.to_local(local[0], local[1]);
        let aoa = self.rx.boresight.to_local(local[2], local[3]);
        (aod, aoa)
    }
}

/// For each superior user: range on its line-of-sight domain, locate the
/// user, and triangulate one point per reflection domain. Failures skip the
/// offending user or domain and are recorded.
pub fn build_point_set(
    reports: &[SelectionReport],
    phases: &dyn PhaseSource,
    link: &Link,
    ranging: &RangingConfig,
) -> Localized {
    let mut out = Localized::default();
    for rep in reports.iter().filter(|r| r.superior) {
        let Some(los) = rep.los else { continue };
        let los_path = &rep.domains[los].1;
        let d = phases
            .phases(rep.user, los_path.peak)
            .map_err(LocalizationError::from)
            .and_then(|(ph, f)| estimate_range(&ph, &f, ranging));
        let d = match d {
            Ok(d) => d,
            Err(error) => {
                out.skipped.push(Skipped {
                    user: rep.user,
                    domain: Some(los),
                    error,
                });
                continue;
            }
        };
        let (aod, _) = link.global_angles(los_path.angles);
        let user = locate_user(&link.bs, aod.0, aod.1, d);
        out.users.push((rep.user, user));
        for (k, (_, dp)) in rep.domains.iter().enumerate() {
            if dp.role != Role::Nlos {
                continue;
            }
            let (aod, aoa) = link.global_angles(dp.angles);
            match reflection_point(&link.bs, &user, aod, aoa) {
                Ok((p, residual)) => out.points.points.push(EstimatedPoint {
                    position: p,
                    user: rep.user,
                    bs: link.bs_id,
                    domain: Some(k),
                    residual,
                }),
                Err(error) => out.skipped.push(Skipped {
                    user: rep.user,
                    domain: Some(k),
                    error,
                }),
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn broadside_user() {
        let u = locate_user(&Vec3::zeros(), 0.0, PI / 2.0, 10.0);
        assert!((u - Vec3::new(10.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn perpendicular_rays_meet() {
        // from (0,0,0) along +x and from (2,2,0) along −y: meet at (2,0,0)
        let (p, r) = reflection_point(
            &Vec3::zeros(),
            &Vec3::new(2.0, 2.0, 0.0),
            (0.0, PI / 2.0),
            (-PI / 2.0, PI / 2.0),
        )
        .unwrap();
        assert!((p - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert!(r < 1e-12);
    }

    #[test]
    fn parallel_and_behind_rays_rejected() {
        let r = reflection_point(&Vec3::zeros(), &Vec3::new(0.0, 1.0, 0.0), (0.0, 1.0), (0.0, 1.0));
        assert!(matches!(r, Err(LocalizationError::Parallel)));
        let r = reflection_point(&Vec3::zeros(), &Vec3::new(2.0, 2.0, 0.0), (PI, PI / 2.0), (-PI / 2.0, PI / 2.0));
        assert!(matches!(r, Err(LocalizationError::Behind { .. })));
    }

    #[test]
    fn window_must_fit_inside_one_period() {
        let f: Vec<f64> = (0..64).map(|m| 28e9 + m as f64 * 625e3).collect();
        let ph = vec![0.0; 64];
        let cfg = RangingConfig {
            d_min: 1.0,
            d_max: 600.0,
            ..Default::default()
        };
        assert!(matches!(estimate_range(&ph, &f, &cfg), Err(LocalizationError::Config(_))));
        let cfg = RangingConfig {
            d_min: 1.0,
            d_max: 1.01,
            step: 0.05,
            ..Default::default()
        };
        assert!(matches!(estimate_range(&ph, &f, &cfg), Err(LocalizationError::Config(_))));
    }

    #[test]
    fn point_text_round_trip() {
        let ps = PointSet {
            points: vec![EstimatedPoint {
                position: Vec3::new(0.1, -2.0 / 3.0, 1e-17),
                user: 3,
                bs: 1,
                domain: None,
                residual: 0.25,
            }],
        };
        let back = PointSet::from_text(&ps.to_text()).unwrap();
        assert_eq!(back, ps);
        assert!(PointSet::from_text("1 2 3 4 5").is_err());
        assert!(PointSet::from_text("1 2 3 4 5 -1").is_err());
    }

    #[test]
    fn merge_counts() {
        let a = PointSet::from_text("0 0 0 1 0 0\n1 1 1 2 0 0\n").unwrap();
        let b = PointSet::from_text("5 5 5 1 1 0.5\n").unwrap();
        assert_eq!(merge_point_sets(&[PointSet::default(), a.clone()]), a);
        let m = merge_point_sets(&[a.clone(), b.clone()]);
        assert_eq!(m.len(), 3);
        assert_eq!(m.points[2].bs, 1);
    }
}
