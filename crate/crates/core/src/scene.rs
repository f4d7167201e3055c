//! Synthetic environments: walls, base stations and users.
//!
//! A scene is described by a TOML file ([`SceneSpec`]). Units are meters
//! throughout. Walls are either convex planar polygons or bounded cubic
//! height-fields `w = f(u, v)` along one axis (see [`Axis::split`]). Walls
//! reflect from both faces.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{closest_on_segment, to_array, vec3, Axis, Cubic, Vec3};

/// Coplanarity tolerance for polygon vertices, meters.
pub const COPLANAR_TOL: f64 = 1e-9;

/// Minimum segment length fraction treated as a genuine crossing; keeps
/// reflection points on a wall from occluding their own legs.
const SEGMENT_EPS: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("wall {index}: {reason}")]
    InvalidWall { index: usize, reason: String },
    #[error("user {index} at {position:?} lies within {distance:.4} m of wall {wall}")]
    UserInsideWall {
        index: usize,
        position: [f64; 3],
        wall: usize,
        distance: f64,
    },
    #[error("user {index} coincides with base station {bs}")]
    UserAtBaseStation { index: usize, bs: usize },
    #[error("{what} {index} has a non-finite coordinate")]
    NonFinite { what: &'static str, index: usize },
    #[error("user region {region}: {reason}")]
    Placement { region: usize, reason: String },
    #[error("scene has no surfaces")]
    NoSurface,
    #[error("scene file: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("scene file: {0}")]
    Serialize(#[from] toml::ser::Error),
    #[error("scene file: {0}")]
    Io(#[from] std::io::Error),
}

// ---------------------------------------------------------------------------
// file schema

/// Wall entry of a scene file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WallSpec {
    /// Convex polygon; vertices in order around the boundary.
    Planar { vertices: Vec<[f64; 3]> },
    /// `axis` coordinate as a cubic in the two remaining coordinates,
    /// valid over `u_range × v_range`.
    Polynomial {
        axis: Axis,
        coefficients: [f64; 10],
        u_range: [f64; 2],
        v_range: [f64; 2],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegionSpec {
    Uniform {
        min: [f64; 3],
        max: [f64; 3],
        count: usize,
    },
    /// Gaussian blobs with centers drawn uniformly in the box; samples outside
    /// the box are redrawn.
    Clustered {
        min: [f64; 3],
        max: [f64; 3],
        count: usize,
        clusters: usize,
        spread: f64,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UserSpec {
    #[serde(default)]
    pub positions: Vec<[f64; 3]>,
    #[serde(default)]
    pub regions: Vec<RegionSpec>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    #[serde(default)]
    pub walls: Vec<WallSpec>,
    #[serde(default)]
    pub base_stations: Vec<[f64; 3]>,
    #[serde(default)]
    pub users: UserSpec,
    /// Users closer than this to any wall are rejected (explicit) or redrawn (sampled).
    #[serde(default = "default_clearance")]
    pub clearance: f64,
}

fn default_clearance() -> f64 {
    0.1
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            walls: Vec::new(),
            base_stations: Vec::new(),
            users: UserSpec::default(),
            clearance: default_clearance(),
        }
    }
}

impl SceneSpec {
    pub fn from_toml(text: &str) -> Result<Self, SceneError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SceneError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, SceneError> {
        Ok(toml::to_string(self)?)
    }
}

/// Four vertical walls bounding the box `[min, max]` (no floor or ceiling).
pub fn box_walls(min: [f64; 3], max: [f64; 3]) -> Vec<WallSpec> {
    let [x0, y0, z0] = min;
    let [x1, y1, z1] = max;
    let quad = |a: [f64; 2], b: [f64; 2]| WallSpec::Planar {
        vertices: vec![
            [a[0], a[1], z0],
            [b[0], b[1], z0],
            [b[0], b[1], z1],
            [a[0], a[1], z1],
        ],
    };
    vec![
        quad([x0, y0], [x1, y0]),
        quad([x1, y0], [x1, y1]),
        quad([x1, y1], [x0, y1]),
        quad([x0, y1], [x0, y0]),
    ]
}

/// Vertical rectangle from `(a, z0)` to `(b, z1)` in plan view.
pub fn vertical_wall(a: [f64; 2], b: [f64; 2], z0: f64, z1: f64) -> WallSpec {
    WallSpec::Planar {
        vertices: vec![[a[0], a[1], z0], [b[0], b[1], z0], [b[0], b[1], z1], [a[0], a[1], z1]],
    }
}

// ---------------------------------------------------------------------------
// walls

#[derive(Clone, Debug, PartialEq)]
pub struct PlanarWall {
    vertices: Vec<Vec3>,
    normal: Vec3,
    offset: f64,
}

impl PlanarWall {
    pub fn new(vertices: Vec<Vec3>) -> Result<Self, String> {
        if vertices.len() < 3 {
            return Err(format!("polygon needs at least 3 vertices, got {}", vertices.len()));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err("non-finite vertex".into());
        }
        // Newell's method
        let mut n = Vec3::zeros();
        for (i, a) in vertices.iter().enumerate() {
            let b = &vertices[(i + 1) % vertices.len()];
            n.x += (a.y - b.y) * (a.z + b.z);
            n.y += (a.z - b.z) * (a.x + b.x);
            n.z += (a.x - b.x) * (a.y + b.y);
        }
        let area = n.norm() / 2.0;
        if !(area > 1e-12) {
            return Err("degenerate polygon (zero area)".into());
        }
        let normal = n / n.norm();
        let offset = normal.dot(&vertices[0]);
        for (i, v) in vertices.iter().enumerate() {
            let d = (normal.dot(v) - offset).abs();
            if d > COPLANAR_TOL {
                return Err(format!("vertex {i} is {d:e} m off the polygon plane"));
            }
        }
        let m = vertices.len();
        let mut turning = 0.0;
        for i in 0..m {
            let e0 = vertices[(i + 1) % m] - vertices[i];
            let e1 = vertices[(i + 2) % m] - vertices[(i + 1) % m];
            if e0.norm() == 0.0 {
                return Err(format!("repeated vertex {i}"));
            }
            let cross = e0.cross(&e1).dot(&normal);
            if cross < -1e-12 * e0.norm() * e1.norm() {
                return Err(format!("polygon is not convex at vertex {}", (i + 1) % m));
            }
            turning += cross.atan2(e0.dot(&e1));
        }
        if (turning - 2.0 * std::f64::consts::PI).abs() > 1e-6 {
            return Err("polygon is self-intersecting".into());
        }
        Ok(PlanarWall {
            vertices,
            normal,
            offset,
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    /// Mirror image of `p` across the wall's plane.
    pub fn mirror(&self, p: &Vec3) -> Vec3 {
        p - self.normal * (2.0 * self.signed_distance(p))
    }

    /// True if `p` (assumed on the plane) lies inside the polygon.
    pub fn contains(&self, p: &Vec3) -> bool {
        let m = self.vertices.len();
        (0..m).all(|i| {
            let a = &self.vertices[i];
            let b = &self.vertices[(i + 1) % m];
            let e = b - a;
            let tol = 1e-9 * e.norm();
            e.cross(&(p - a)).dot(&self.normal) >= -tol
        })
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        let d = self.signed_distance(p);
        let proj = p - self.normal * d;
        if self.contains(&proj) {
            return d.abs();
        }
        let m = self.vertices.len();
        (0..m)
            .map(|i| {
                let q = closest_on_segment(p, &self.vertices[i], &self.vertices[(i + 1) % m]);
                (p - q).norm()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Parameter `t ∈ [0, t_max]` where `origin + t·dir` crosses the polygon.
    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        let denom = self.normal.dot(dir);
        if denom.abs() < 1e-15 {
            return None;
        }
        let t = (self.offset - self.normal.dot(origin)) / denom;
        if t <= t_min || t >= t_max {
            return None;
        }
        let hit = origin + dir * t;
        self.contains(&hit).then_some(t)
    }

    /// Evenly spaced sample points covering the polygon.
    pub fn samples(&self, spacing: f64) -> Vec<Vec3> {
        let e0 = (self.vertices[1] - self.vertices[0]).normalize();
        let e1 = self.normal.cross(&e0);
        let o = self.vertices[0];
        let (mut a0, mut a1, mut b0, mut b1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for v in &self.vertices {
            let a = (v - o).dot(&e0);
            let b = (v - o).dot(&e1);
            a0 = a0.min(a);
            a1 = a1.max(a);
            b0 = b0.min(b);
            b1 = b1.max(b);
        }
        let na = ((a1 - a0) / spacing).floor() as usize;
        let nb = ((b1 - b0) / spacing).floor() as usize;
        let (pa, pb) = ((a1 - a0 - na as f64 * spacing) / 2.0, (b1 - b0 - nb as f64 * spacing) / 2.0);
        let mut out = Vec::new();
        for i in 0..=na {
            for j in 0..=nb {
                let p = o + e0 * (a0 + pa + i as f64 * spacing) + e1 * (b0 + pb + j as f64 * spacing);
                if self.contains(&p) {
                    out.push(p);
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialWall {
    axis: Axis,
    cubic: Cubic,
    u_range: [f64; 2],
    v_range: [f64; 2],
}

impl PolynomialWall {
    pub fn new(axis: Axis, coefficients: [f64; 10], u_range: [f64; 2], v_range: [f64; 2]) -> Result<Self, String> {
        if coefficients.iter().any(|c| !c.is_finite()) {
            return Err("non-finite coefficient".into());
        }
        for (name, r) in [("u_range", u_range), ("v_range", v_range)] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(format!("{name} must be finite with min < max, got {r:?}"));
            }
        }
        Ok(PolynomialWall {
            axis,
            cubic: Cubic(coefficients),
            u_range,
            v_range,
        })
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn cubic(&self) -> &Cubic {
        &self.cubic
    }

    pub fn u_range(&self) -> [f64; 2] {
        self.u_range
    }

    pub fn v_range(&self) -> [f64; 2] {
        self.v_range
    }

    pub fn point(&self, u: f64, v: f64) -> Vec3 {
        self.axis.join(u, v, self.cubic.eval(u, v))
    }

    pub fn in_domain(&self, u: f64, v: f64) -> bool {
        let tol = 1e-12;
        u >= self.u_range[0] - tol && u <= self.u_range[1] + tol && v >= self.v_range[0] - tol && v <= self.v_range[1] + tol
    }

    /// Unit normal at domain point `(u, v)`.
    pub fn normal(&self, u: f64, v: f64) -> Vec3 {
        let (fu, fv) = self.cubic.grad(u, v);
        self.axis.join(-fu, -fv, 1.0).normalize()
    }

    /// Squared distance from `p` to the surface point at `(u, v)`.
    fn dist2(&self, p: &Vec3, u: f64, v: f64) -> f64 {
        (self.point(u, v) - p).norm_squared()
    }

    /// Nearest point: 100×100 grid, then box-constrained Newton refinement
    /// from the three best grid nodes.
    pub fn closest(&self, p: &Vec3) -> (f64, f64) {
        const N: usize = 100;
        let [u0, u1] = self.u_range;
        let [v0, v1] = self.v_range;
        let mut best: Vec<(f64, f64, f64)> = Vec::with_capacity(N * N);
        for i in 0..N {
            let u = u0 + (u1 - u0) * i as f64 / (N - 1) as f64;
            for j in 0..N {
                let v = v0 + (v1 - v0) * j as f64 / (N - 1) as f64;
                best.push((self.dist2(p, u, v), u, v));
            }
        }
        best.sort_by(|a, b| a.0.total_cmp(&b.0));
        best.iter()
            .take(3)
            .map(|&(_, u, v)| self.refine(p, u, v))
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, u, v)| (u, v))
            .unwrap()
    }

    fn refine(&self, p: &Vec3, mut u: f64, mut v: f64) -> (f64, f64, f64) {
        let (pu, pv, pw) = self.axis.split(p);
        let clamp = |u: f64, v: f64| {
            (
                u.clamp(self.u_range[0], self.u_range[1]),
                v.clamp(self.v_range[0], self.v_range[1]),
            )
        };
        let mut d = self.dist2(p, u, v);
        for _ in 0..60 {
            let f = self.cubic.eval(u, v);
            let (fu, fv) = self.cubic.grad(u, v);
            let (fuu, fuv, fvv) = self.cubic.hessian(u, v);
            let r = f - pw;
            let gu = (u - pu) + r * fu;
            let gv = (v - pv) + r * fv;
            let huu = 1.0 + fu * fu + r * fuu;
            let huv = fu * fv + r * fuv;
            let hvv = 1.0 + fv * fv + r * fvv;
            let det = huu * hvv - huv * huv;
            // active set: a coordinate held at its bound by an outward gradient
            let pinned = |x: f64, g: f64, r: [f64; 2]| (x <= r[0] && g > 0.0) || (x >= r[1] && g < 0.0);
            let (pu_, pv_) = (pinned(u, gu, self.u_range), pinned(v, gv, self.v_range));
            let newton1 = |g: f64, h: f64| if h > 0.0 { -g / h } else { -g };
            let (mut su, mut sv) = match (pu_, pv_) {
                (true, true) => break,
                (true, false) => (0.0, newton1(gv, hvv)),
                (false, true) => (newton1(gu, huu), 0.0),
                _ if huu > 0.0 && det > 1e-14 => (-(hvv * gu - huv * gv) / det, -(huu * gv - huv * gu) / det),
                _ => (-gu, -gv),
            };
            let mut improved = false;
            for _ in 0..30 {
                let (nu, nv) = clamp(u + su, v + sv);
                let nd = self.dist2(p, nu, nv);
                if nd < d {
                    let moved = (nu - u).abs() + (nv - v).abs();
                    u = nu;
                    v = nv;
                    d = nd;
                    improved = moved > 1e-15;
                    break;
                }
                su *= 0.5;
                sv *= 0.5;
            }
            if !improved {
                break;
            }
        }
        (d, u, v)
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        let (u, v) = self.closest(p);
        self.dist2(p, u, v).sqrt()
    }

    /// Smallest `t ∈ (t_min, t_max)` where the ray crosses the surface inside its domain.
    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        // Along a line the implicit function w - f(u, v) is a cubic in t.
        let g = |t: f64| {
            let p = origin + dir * t;
            let (u, v, w) = self.axis.split(&p);
            w - self.cubic.eval(u, v)
        };
        let valid = |t: f64| {
            let p = origin + dir * t;
            let (u, v, _) = self.axis.split(&p);
            self.in_domain(u, v)
        };
        // clip to the slab over the domain so the sampled span stays finite
        let (ou, ov, ow) = self.axis.split(origin);
        let (du, dv, dw) = self.axis.split(dir);
        let (mut lo, mut hi) = (t_min, t_max);
        for (o, d, r) in [(ou, du, self.u_range), (ov, dv, self.v_range)] {
            if d == 0.0 {
                if o < r[0] || o > r[1] {
                    return None;
                }
            } else {
                let (a, b) = ((r[0] - o) / d, (r[1] - o) / d);
                let pad = 1e-9 * (1.0 + a.abs().max(b.abs()));
                lo = lo.max(a.min(b) - pad);
                hi = hi.min(a.max(b) + pad);
            }
        }
        if !(hi > lo) {
            return None;
        }
        if !hi.is_finite() {
            // ray along the fit axis: w - f is linear in t
            if dw == 0.0 {
                return None;
            }
            let t = (self.cubic.eval(ou, ov) - ow) / dw;
            return (t > t_min && t < t_max).then_some(t);
        }
        let span = hi - lo;
        // exact cubic coefficients from four samples
        let ts = [lo, lo + span / 3.0, lo + 2.0 * span / 3.0, hi];
        let gs = ts.map(g);
        let poly = interpolate_cubic(&ts, &gs);
        let mut roots = cubic_roots_in(&poly, lo, hi);
        roots.sort_by(f64::total_cmp);
        roots.into_iter().find(|&t| t > t_min && t < t_max && valid(t))
    }

    pub fn samples(&self, spacing: f64) -> Vec<Vec3> {
        let nu = ((self.u_range[1] - self.u_range[0]) / spacing).floor() as usize;
        let nv = ((self.v_range[1] - self.v_range[0]) / spacing).floor() as usize;
        let mut out = Vec::with_capacity((nu + 1) * (nv + 1));
        for i in 0..=nu {
            for j in 0..=nv {
                let u = self.u_range[0] + (self.u_range[1] - self.u_range[0]) * i as f64 / nu.max(1) as f64;
                let v = self.v_range[0] + (self.v_range[1] - self.v_range[0]) * j as f64 / nv.max(1) as f64;
                out.push(self.point(u, v));
            }
        }
        out
    }
}

/// Power-basis coefficients `[a0, a1, a2, a3]` of the cubic through four samples.
fn interpolate_cubic(ts: &[f64; 4], gs: &[f64; 4]) -> [f64; 4] {
    // Newton divided differences, then expand to power basis
    let mut c = *gs;
    for j in 1..4 {
        for i in (j..4).rev() {
            c[i] = (c[i] - c[i - 1]) / (ts[i] - ts[i - j]);
        }
    }
    // p(t) = c0 + c1 (t-t0) + c2 (t-t0)(t-t1) + c3 (t-t0)(t-t1)(t-t2)
    let mut p = [c[3], 0.0, 0.0, 0.0]; // highest first during Horner expansion
    for (deg, k) in (0..3).rev().enumerate() {
        // p = p * (t - ts[k]) + c[k]
        let mut q = [0.0; 4];
        for i in 0..=deg {
            q[i + 1] += p[i];
            q[i] -= p[i] * ts[k];
        }
        q[0] += c[k];
        p = q;
    }
    p
}

fn eval_poly(p: &[f64; 4], t: f64) -> f64 {
    ((p[3] * t + p[2]) * t + p[1]) * t + p[0]
}

/// Real roots of a cubic inside `[lo, hi]`, found by bisection on monotone pieces.
fn cubic_roots_in(p: &[f64; 4], lo: f64, hi: f64) -> Vec<f64> {
    // critical points: 3 a3 t² + 2 a2 t + a1 = 0
    let (a, b, c) = (3.0 * p[3], 2.0 * p[2], p[1]);
    let mut breaks = vec![lo];
    let scale = p.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    if a.abs() > 1e-14 * scale {
        let disc = b * b - 4.0 * a * c;
        if disc > 0.0 {
            let s = disc.sqrt();
            for r in [(-b - s) / (2.0 * a), (-b + s) / (2.0 * a)] {
                if r > lo && r < hi {
                    breaks.push(r);
                }
            }
        }
    } else if b.abs() > 1e-14 * scale {
        let r = -c / b;
        if r > lo && r < hi {
            breaks.push(r);
        }
    }
    breaks.push(hi);
    breaks.sort_by(f64::total_cmp);
    let mut roots = Vec::new();
    for w in breaks.windows(2) {
        let (mut x0, mut x1) = (w[0], w[1]);
        let (mut f0, f1) = (eval_poly(p, x0), eval_poly(p, x1));
        if f0 == 0.0 {
            roots.push(x0);
            continue;
        }
        if f0.signum() == f1.signum() {
            continue;
        }
        for _ in 0..200 {
            let xm = 0.5 * (x0 + x1);
            if xm == x0 || xm == x1 {
                break;
            }
            let fm = eval_poly(p, xm);
            if fm.signum() == f0.signum() {
                x0 = xm;
                f0 = fm;
            } else {
                x1 = xm;
            }
        }
        roots.push(0.5 * (x0 + x1));
    }
    roots
}

#[derive(Clone, Debug, PartialEq)]
pub enum Wall {
    Planar(PlanarWall),
    Polynomial(PolynomialWall),
}

impl Wall {
    pub fn from_spec(spec: &WallSpec) -> Result<Wall, String> {
        match spec {
            WallSpec::Planar { vertices } => Ok(Wall::Planar(PlanarWall::new(vertices.iter().map(|&v| vec3(v)).collect())?)),
            WallSpec::Polynomial {
                axis,
                coefficients,
                u_range,
                v_range,
            } => Ok(Wall::Polynomial(PolynomialWall::new(*axis, *coefficients, *u_range, *v_range)?)),
        }
    }

    pub fn to_spec(&self) -> WallSpec {
        match self {
            Wall::Planar(w) => WallSpec::Planar {
                vertices: w.vertices.iter().map(to_array).collect(),
            },
            Wall::Polynomial(w) => WallSpec::Polynomial {
                axis: w.axis,
                coefficients: w.cubic.0,
                u_range: w.u_range,
                v_range: w.v_range,
            },
        }
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        match self {
            Wall::Planar(w) => w.distance(p),
            Wall::Polynomial(w) => w.distance(p),
        }
    }

    pub fn ray_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<f64> {
        match self {
            Wall::Planar(w) => w.ray_hit(origin, dir, t_min, t_max),
            Wall::Polynomial(w) => w.ray_hit(origin, dir, t_min, t_max),
        }
    }

    pub fn samples(&self, spacing: f64) -> Vec<Vec3> {
        match self {
            Wall::Planar(w) => w.samples(spacing),
            Wall::Polynomial(w) => w.samples(spacing),
        }
    }
}

// ---------------------------------------------------------------------------
// scene

/// Immutable environment. Construct with [`build_scene`] or [`Scene::new`].
#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    walls: Vec<Wall>,
    base_stations: Vec<Vec3>,
    users: Vec<Vec3>,
    clearance: f64,
}

impl Scene {
    pub fn new(walls: Vec<Wall>, base_stations: Vec<Vec3>, users: Vec<Vec3>, clearance: f64) -> Result<Scene, SceneError> {
        for (i, b) in base_stations.iter().enumerate() {
            if !b.iter().all(|c| c.is_finite()) {
                return Err(SceneError::NonFinite { what: "base station", index: i });
            }
        }
        let scene = Scene {
            walls,
            base_stations,
            users: Vec::new(),
            clearance,
        };
        for (i, u) in users.iter().enumerate() {
            scene.check_user(i, u)?;
        }
        Ok(Scene { users, ..scene })
    }

    fn check_user(&self, index: usize, u: &Vec3) -> Result<(), SceneError> {
        if !u.iter().all(|c| c.is_finite()) {
            return Err(SceneError::NonFinite { what: "user", index });
        }
        if let Some(bs) = self.base_stations.iter().position(|b| b == u) {
            return Err(SceneError::UserAtBaseStation { index, bs });
        }
        for (w, wall) in self.walls.iter().enumerate() {
            let d = wall.distance(u);
            if d < self.clearance {
                return Err(SceneError::UserInsideWall {
                    index,
                    position: to_array(u),
                    wall: w,
                    distance: d,
                });
            }
        }
        Ok(())
    }

    pub fn walls(&self) -> &[Wall] {
        &self.walls
    }

    pub fn base_stations(&self) -> &[Vec3] {
        &self.base_stations
    }

    pub fn users(&self) -> &[Vec3] {
        &self.users
    }

    pub fn clearance(&self) -> f64 {
        self.clearance
    }

    /// Same walls and base stations with a different user population.
    pub fn with_users(&self, users: Vec<Vec3>) -> Result<Scene, SceneError> {
        Scene::new(self.walls.clone(), self.base_stations.clone(), users, self.clearance)
    }

    /// Minimum distance from `p` to any wall surface.
    pub fn nearest_surface_distance(&self, p: &Vec3) -> Result<f64, SceneError> {
        if self.walls.is_empty() {
            return Err(SceneError::NoSurface);
        }
        Ok(self.walls.iter().map(|w| w.distance(p)).fold(f64::INFINITY, f64::min))
    }

    /// First wall hit by the ray `origin + t·dir`, `t ∈ (t_min, t_max)`.
    pub fn first_hit(&self, origin: &Vec3, dir: &Vec3, t_min: f64, t_max: f64) -> Option<(f64, usize)> {
        self.walls
            .iter()
            .enumerate()
            .filter_map(|(i, w)| w.ray_hit(origin, dir, t_min, t_max).map(|t| (t, i)))
            .min_by(|a, b| a.0.total_cmp(&b.0))
    }

    /// True if any wall crosses the open segment `(a, b)`.
    pub fn segment_blocked(&self, a: &Vec3, b: &Vec3) -> bool {
        let d = b - a;
        let len = d.norm();
        if len == 0.0 {
            return false;
        }
        let dir = d / len;
        self.walls.iter().any(|w| w.ray_hit(a, &dir, SEGMENT_EPS, len - SEGMENT_EPS).is_some())
    }

    /// Ground-truth sample points on every wall.
    pub fn wall_samples(&self, spacing: f64) -> Vec<Vec3> {
        self.walls.iter().flat_map(|w| w.samples(spacing)).collect()
    }

    pub fn to_spec(&self) -> SceneSpec {
        SceneSpec {
            walls: self.walls.iter().map(Wall::to_spec).collect(),
            base_stations: self.base_stations.iter().map(to_array).collect(),
            users: UserSpec {
                positions: self.users.iter().map(to_array).collect(),
                regions: Vec::new(),
                seed: 0,
            },
            clearance: self.clearance,
        }
    }

    pub fn to_toml(&self) -> Result<String, SceneError> {
        self.to_spec().to_toml()
    }

    pub fn from_toml(text: &str) -> Result<Scene, SceneError> {
        build_scene(&SceneSpec::from_toml(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Scene, SceneError> {
        build_scene(&SceneSpec::load(path)?)
    }
}

impl fmt::Display for Scene {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} walls, {} base stations, {} users",
            self.walls.len(),
            self.base_stations.len(),
            self.users.len()
        )
    }
}

/// Validates a scene description and places its users.
///
/// Explicit user positions come first, followed by each sampled region in
/// order. Sampling is deterministic in `spec.users.seed`; sampled users that
/// land inside a wall's clearance shell are redrawn.
pub fn build_scene(spec: &SceneSpec) -> Result<Scene, SceneError> {
    let walls = spec
        .walls
        .iter()
        .enumerate()
        .map(|(index, w)| Wall::from_spec(w).map_err(|reason| SceneError::InvalidWall { index, reason }))
        .collect::<Result<Vec<_>, _>>()?;
    let base_stations: Vec<Vec3> = spec.base_stations.iter().map(|&b| vec3(b)).collect();
    let explicit: Vec<Vec3> = spec.users.positions.iter().map(|&p| vec3(p)).collect();
    let mut scene = Scene::new(walls, base_stations, explicit, spec.clearance)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.users.seed);
    for (r, region) in spec.users.regions.iter().enumerate() {
        let placed = sample_region(&scene, r, region, &mut rng)?;
        scene.users.extend(placed);
    }
    Ok(scene)
}

fn sample_region(scene: &Scene, region: usize, spec: &RegionSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec3>, SceneError> {
    const MAX_TRIES: usize = 10_000;
    let (min, max, count) = match spec {
        RegionSpec::Uniform { min, max, count } | RegionSpec::Clustered { min, max, count, .. } => (*min, *max, *count),
    };
    for k in 0..3 {
        if !(min[k].is_finite() && max[k].is_finite() && min[k] <= max[k]) {
            return Err(SceneError::Placement {
                region,
                reason: format!("bounds must be finite with min <= max on axis {k}"),
            });
        }
    }
    let uniform = |rng: &mut ChaCha8Rng| {
        Vec3::from_fn(|k, _| if max[k] > min[k] { rng.random_range(min[k]..max[k]) } else { min[k] })
    };
    let centers: Vec<Vec3> = match spec {
        RegionSpec::Clustered { clusters, .. } => {
            if *clusters == 0 {
                return Err(SceneError::Placement {
                    region,
                    reason: "clustered region needs at least one cluster".into(),
                });
            }
            (0..*clusters).map(|_| uniform(rng)).collect()
        }
        RegionSpec::Uniform { .. } => Vec::new(),
    };
    let noise = match spec {
        RegionSpec::Clustered { spread, .. } => Some(Normal::new(0.0, *spread).map_err(|e| SceneError::Placement {
            region,
            reason: e.to_string(),
        })?),
        RegionSpec::Uniform { .. } => None,
    };
    let inside = |p: &Vec3| (0..3).all(|k| p[k] >= min[k] && p[k] <= max[k]);

    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut tries = 0;
        loop {
            tries += 1;
            if tries > MAX_TRIES {
                return Err(SceneError::Placement {
                    region,
                    reason: "could not place a user clear of walls and base stations".into(),
                });
            }
            let p = match &noise {
                None => uniform(rng),
                Some(n) => {
                    let c = centers[rng.random_range(0..centers.len())];
                    c + Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
                }
            };
            if !inside(&p) {
                continue;
            }
            if scene.check_user(scene.users.len() + out.len(), &p).is_ok() {
                out.push(p);
                break;
            }
        }
    }
    Ok(out)
}
