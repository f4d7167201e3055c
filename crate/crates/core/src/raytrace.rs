//! Specular path tracing (LOS, first and second order).
//!
//! Planar walls use the mirror-image method. First-order reflections off
//! polynomial walls are found as stationary points of the total path length
//! over the wall's parameter domain; second-order paths are traced between
//! planar walls only.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{angles_of, Vec3, SPEED_OF_LIGHT};
use crate::scene::{PlanarWall, PolynomialWall, Scene, Wall};

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("transmitter and receiver coincide")]
    Coincident,
    #[error("max_order must be 0, 1 or 2, got {0}")]
    Order(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceConfig {
    pub carrier_hz: f64,
    /// Amplitude reflection coefficient applied once per bounce.
    pub reflection_coefficient: f64,
    pub max_order: u8,
}

impl Default for TraceConfig {
    fn default() -> Self {
        TraceConfig {
            carrier_hz: 28e9,
            reflection_coefficient: 0.6,
            max_order: 2,
        }
    }
}

/// One multipath component.
///
/// Departure angles are measured at the transmitter, arrival angles at the
/// receiver pointing back along the incoming ray, both in the global frame.
#[derive(Clone, Debug, PartialEq)]
pub struct PathParam {
    pub gain: Complex64,
    /// Seconds.
    pub delay: f64,
    pub aod_az: f64,
    pub aod_el: f64,
    pub aoa_az: f64,
    pub aoa_el: f64,
    pub order: u8,
    pub reflection_points: Vec<Vec3>,
}

impl PathParam {
    pub fn length(&self) -> f64 {
        self.delay * SPEED_OF_LIGHT
    }

    fn from_vertices(tx: &Vec3, rx: &Vec3, points: Vec<Vec3>, cfg: &TraceConfig) -> PathParam {
        let mut length = 0.0;
        let mut prev = *tx;
        for p in points.iter().chain(std::iter::once(rx)) {
            length += (p - prev).norm();
            prev = *p;
        }
        let first = points.first().unwrap_or(rx);
        let last = points.last().unwrap_or(tx);
        let (aod_az, aod_el) = angles_of(&(first - tx));
        let (aoa_az, aoa_el) = angles_of(&(last - rx));
        let lambda = SPEED_OF_LIGHT / cfg.carrier_hz;
        let order = points.len() as u8;
        let amp = cfg.reflection_coefficient.powi(order as i32) * lambda / (4.0 * PI * length);
        PathParam {
            gain: Complex64::from_polar(amp, -2.0 * PI * (length / lambda).fract()),
            delay: length / SPEED_OF_LIGHT,
            aod_az,
            aod_el,
            aoa_az,
            aoa_el,
            order,
            reflection_points: points,
        }
    }
}

/// All specular paths from `tx` to `rx` up to `cfg.max_order`, sorted by
/// order then length. An empty list means the link is fully blocked.
pub fn trace_paths(scene: &Scene, tx: &Vec3, rx: &Vec3, cfg: &TraceConfig) -> Result<Vec<PathParam>, TraceError> {
    if cfg.max_order > 2 {
        return Err(TraceError::Order(cfg.max_order));
    }
    if (tx - rx).norm() == 0.0 {
        return Err(TraceError::Coincident);
    }
    let mut chains: Vec<Vec<Vec3>> = Vec::new();
    if !scene.segment_blocked(tx, rx) {
        chains.push(Vec::new());
    }
    if cfg.max_order >= 1 {
        for wall in scene.walls() {
            let candidates = match wall {
                Wall::Planar(w) => planar_first_order(w, tx, rx).into_iter().collect(),
                Wall::Polynomial(w) => polynomial_first_order(w, tx, rx),
            };
            for r in candidates {
                if legs_clear(scene, tx, rx, &[r]) {
                    chains.push(vec![r]);
                }
            }
        }
    }
    if cfg.max_order >= 2 {
        for (i, a) in scene.walls().iter().enumerate() {
            for (j, b) in scene.walls().iter().enumerate() {
                if i == j {
                    continue;
                }
                if let (Wall::Planar(a), Wall::Planar(b)) = (a, b) {
                    if let Some(pts) = planar_second_order(a, b, tx, rx) {
                        if legs_clear(scene, tx, rx, &pts) {
                            chains.push(pts.to_vec());
                        }
                    }
                }
            }
        }
    }
    let mut paths: Vec<PathParam> = chains
        .into_iter()
        .map(|pts| PathParam::from_vertices(tx, rx, pts, cfg))
        .collect();
    paths.sort_by(|a, b| a.order.cmp(&b.order).then(a.delay.total_cmp(&b.delay)));
    Ok(paths)
}

fn legs_clear(scene: &Scene, tx: &Vec3, rx: &Vec3, pts: &[Vec3]) -> bool {
    let mut prev = *tx;
    for p in pts.iter().chain(std::iter::once(rx)) {
        if scene.segment_blocked(&prev, p) {
            return false;
        }
        prev = *p;
    }
    true
}

/// Point where the segment `a → b` crosses the wall's plane, strictly inside.
fn plane_crossing(w: &PlanarWall, a: &Vec3, b: &Vec3) -> Option<Vec3> {
    let da = w.signed_distance(a);
    let db = w.signed_distance(b);
    if !(da * db < 0.0) {
        return None;
    }
    let t = da / (da - db);
    let p = a + (b - a) * t;
    w.contains(&p).then_some(p)
}

fn planar_first_order(w: &PlanarWall, tx: &Vec3, rx: &Vec3) -> Option<Vec3> {
    plane_crossing(w, tx, &w.mirror(rx))
}

fn planar_second_order(a: &PlanarWall, b: &PlanarWall, tx: &Vec3, rx: &Vec3) -> Option<[Vec3; 2]> {
    // tx → a → b → rx: image of rx in b, then of that image in a
    let rx_b = b.mirror(rx);
    let rx_ab = a.mirror(&rx_b);
    let r1 = plane_crossing(a, tx, &rx_ab)?;
    let r2 = plane_crossing(b, &r1, &rx_b)?;
    Some([r1, r2])
}

/// Stationary points of `|tx - S(u,v)| + |S(u,v) - rx|` inside the domain.
fn polynomial_first_order(w: &PolynomialWall, tx: &Vec3, rx: &Vec3) -> Vec<Vec3> {
    const SEEDS: usize = 24;
    let [u0, u1] = w.u_range();
    let [v0, v1] = w.v_range();
    let len = |u: f64, v: f64| {
        let s = w.point(u, v);
        (s - tx).norm() + (s - rx).norm()
    };
    let grad = |u: f64, v: f64| {
        let s = w.point(u, v);
        let e = (s - tx).normalize() + (s - rx).normalize();
        let (fu, fv) = w.cubic().grad(u, v);
        let su = w.axis().join(1.0, 0.0, fu);
        let sv = w.axis().join(0.0, 1.0, fv);
        (e.dot(&su), e.dot(&sv))
    };
    let mut out: Vec<Vec3> = Vec::new();
    let hu = (u1 - u0) / SEEDS as f64;
    let hv = (v1 - v0) / SEEDS as f64;
    for i in 0..SEEDS {
        for j in 0..SEEDS {
            let (mut u, mut v) = (u0 + (i as f64 + 0.5) * hu, v0 + (j as f64 + 0.5) * hv);
            let mut converged = false;
            for _ in 0..50 {
                let (gu, gv) = grad(u, v);
                if gu.abs() < 1e-13 && gv.abs() < 1e-13 {
                    converged = true;
                    break;
                }
                // finite-difference Jacobian of the gradient
                let e = 1e-6 * (1.0 + u.abs().max(v.abs()));
                let (a1, b1) = grad(u + e, v);
                let (a0, b0) = grad(u - e, v);
                let (c1, d1) = grad(u, v + e);
                let (c0, d0) = grad(u, v - e);
                let (huu, hvu) = ((a1 - a0) / (2.0 * e), (b1 - b0) / (2.0 * e));
                let (huv, hvv) = ((c1 - c0) / (2.0 * e), (d1 - d0) / (2.0 * e));
                let det = huu * hvv - huv * hvu;
                if det.abs() < 1e-18 {
                    break;
                }
                let du = -(hvv * gu - huv * gv) / det;
                let dv = -(huu * gv - hvu * gu) / det;
                u += du;
                v += dv;
                if !w.in_domain(u, v) {
                    break;
                }
                if du.abs() < 1e-14 * (1.0 + u.abs()) && dv.abs() < 1e-14 * (1.0 + v.abs()) {
                    converged = true;
                    break;
                }
            }
            if !converged || !w.in_domain(u, v) {
                continue;
            }
            let (gu, gv) = grad(u, v);
            if gu.abs().max(gv.abs()) > 1e-9 || !len(u, v).is_finite() {
                continue;
            }
            let p = w.point(u, v);
            // both ends on the same side of the tangent plane
            let n = w.normal(u, v);
            if (tx - p).dot(&n) * (rx - p).dot(&n) <= 0.0 {
                continue;
            }
            if out.iter().all(|q| (q - p).norm() > 1e-6) {
                out.push(p);
            }
        }
    }
    out
}

/// Debug dump, one path per line:
/// `order length aod_az aod_el aoa_az aoa_el [x y z]...`.
pub fn dump_paths(paths: &[PathParam]) -> String {
    let mut s = String::new();
    for p in paths {
        write!(
            s,
            "{} {:.9} {:.9} {:.9} {:.9} {:.9}",
            p.order,
            p.length(),
            p.aod_az,
            p.aod_el,
            p.aoa_az,
            p.aoa_el
        )
        .unwrap();
        for r in &p.reflection_points {
            write!(s, " {:.9} {:.9} {:.9}", r.x, r.y, r.z).unwrap();
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::direction;
    use crate::scene::{build_scene, box_walls, SceneSpec, WallSpec};

    fn free_space() -> Scene {
        build_scene(&SceneSpec::default()).unwrap()
    }

    fn floor_scene() -> Scene {
        build_scene(&SceneSpec {
            walls: vec![WallSpec::Planar {
                vertices: vec![[-10.0, -10.0, 0.0], [10.0, -10.0, 0.0], [10.0, 10.0, 0.0], [-10.0, 10.0, 0.0]],
            }],
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn free_space_los_on_axis() {
        let paths = trace_paths(
            &free_space(),
            &Vec3::zeros(),
            &Vec3::new(10.0, 0.0, 0.0),
            &TraceConfig::default(),
        )
        .unwrap();
        assert_eq!(paths.len(), 1);
        let p = &paths[0];
        assert_eq!(p.order, 0);
        assert!((p.delay - 10.0 / SPEED_OF_LIGHT).abs() < 1e-12 * p.delay);
        assert_eq!(p.aod_az, 0.0);
        assert!((p.aoa_az - PI).abs() < 1e-15);
    }

    #[test]
    fn coincident_endpoints_rejected() {
        let r = trace_paths(&free_space(), &Vec3::zeros(), &Vec3::zeros(), &TraceConfig::default());
        assert_eq!(r, Err(TraceError::Coincident));
    }

    #[test]
    fn floor_bounce_matches_exhaustive_search() {
        let tx = Vec3::new(0.0, 0.0, 2.0);
        let rx = Vec3::new(4.0, 0.0, 2.0);
        let paths = trace_paths(&floor_scene(), &tx, &rx, &TraceConfig::default()).unwrap();
        let p = paths.iter().find(|p| p.order == 1).unwrap();
        let r = p.reflection_points[0];
        assert!((r - Vec3::new(2.0, 0.0, 0.0)).norm() < 1e-12);
        assert!((p.length() - 2.0 * 8f64.sqrt()).abs() < 1e-12);
        // exhaustive 100×100 grid of candidate points on the wall
        let mut best = (f64::INFINITY, Vec3::zeros());
        for i in 0..100 {
            for j in 0..100 {
                let c = Vec3::new(-10.0 + 20.0 * i as f64 / 99.0, -10.0 + 20.0 * j as f64 / 99.0, 0.0);
                let l = (c - tx).norm() + (rx - c).norm();
                if l < best.0 {
                    best = (l, c);
                }
            }
        }
        assert!(p.length() <= best.0 + 1e-12);
        assert!((best.1 - r).norm() < 0.3);
    }

    #[test]
    fn occluded_user_has_no_los() {
        let spec = SceneSpec {
            walls: vec![
                crate::scene::vertical_wall([5.0, -2.0], [5.0, 2.0], 0.0, 5.0),
                crate::scene::vertical_wall([-10.0, 6.0], [20.0, 6.0], 0.0, 5.0),
            ],
            ..Default::default()
        };
        let scene = build_scene(&spec).unwrap();
        let paths = trace_paths(&scene, &Vec3::new(0.0, 0.0, 2.0), &Vec3::new(10.0, 0.0, 2.0), &TraceConfig::default()).unwrap();
        assert!(paths.iter().all(|p| p.order > 0));
        // the side wall at y = 6 is visible, the blocker is not
        assert!(paths.iter().any(|p| p.order == 1 && (p.reflection_points[0].y - 6.0).abs() < 1e-12));
    }

    #[test]
    fn room_has_second_order_paths_with_consistent_geometry() {
        let scene = build_scene(&SceneSpec {
            walls: box_walls([-10.0, -10.0, 0.0], [10.0, 10.0, 5.0]),
            ..Default::default()
        })
        .unwrap();
        let tx = Vec3::new(0.0, 0.0, 3.0);
        let rx = Vec3::new(5.0, 3.0, 1.5);
        let paths = trace_paths(&scene, &tx, &rx, &TraceConfig::default()).unwrap();
        assert_eq!(paths.iter().filter(|p| p.order == 0).count(), 1);
        assert_eq!(paths.iter().filter(|p| p.order == 1).count(), 4);
        assert!(paths.iter().any(|p| p.order == 2));
        for p in &paths {
            assert_eq!(p.order as usize, p.reflection_points.len());
            let first = p.reflection_points.first().unwrap_or(&rx);
            assert!((direction(p.aod_az, p.aod_el) - (first - tx).normalize()).norm() < 1e-12);
            assert!(p.gain.norm() > 0.0);
        }
    }

    #[test]
    fn polynomial_wall_reflection_is_specular() {
        // curved wall y = 6 + 0.05 x² over x ∈ [-8, 8], z ∈ [0, 5]
        let scene = build_scene(&SceneSpec {
            walls: vec![WallSpec::Polynomial {
                axis: crate::geometry::Axis::Y,
                coefficients: [6.0, 0.0, 0.0, 0.05, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
                u_range: [-8.0, 8.0],
                v_range: [0.0, 5.0],
            }],
            ..Default::default()
        })
        .unwrap();
        let tx = Vec3::new(-2.0, 0.0, 3.0);
        let rx = Vec3::new(4.0, 1.0, 1.5);
        let paths = trace_paths(&scene, &tx, &rx, &TraceConfig::default()).unwrap();
        let refl: Vec<_> = paths.iter().filter(|p| p.order == 1).collect();
        assert_eq!(refl.len(), 1);
        let r = refl[0].reflection_points[0];
        let Wall::Polynomial(w) = &scene.walls()[0] else { unreachable!() };
        let n = w.normal(r.x, r.z);
        let a = (tx - r).normalize();
        let b = (rx - r).normalize();
        assert!((a.dot(&n) - b.dot(&n)).abs() < 1e-9);
        assert!((a + b).cross(&n).norm() < 1e-9);
    }

    #[test]
    fn dump_has_one_line_per_path() {
        let tx = Vec3::new(0.0, 0.0, 2.0);
        let rx = Vec3::new(4.0, 0.0, 2.0);
        let paths = trace_paths(&floor_scene(), &tx, &rx, &TraceConfig::default()).unwrap();
        let text = dump_paths(&paths);
        assert_eq!(text.lines().count(), paths.len());
        assert!(text.lines().nth(1).unwrap().starts_with("1 5.656854"));
    }
}
