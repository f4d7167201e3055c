//! Shared geometric conventions.
//!
//! Every angle pair in this crate follows one convention:
//!
//! * azimuth is measured in the x-y plane from `+x` toward `+y`, wrapped to `(-π, π]`;
//! * elevation is measured from `+z` (zenith angle), in `[0, π]`.
//!
//! A direction `(az, el)` therefore maps to the unit vector
//! `(sin el · cos az, sin el · sin az, cos el)`. With this convention a
//! line-of-sight path whose departure and arrival directions are opposite
//! satisfies `el_arrival = π − el_departure`.

use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

pub fn vec3(p: [f64; 3]) -> Vec3 {
    Vec3::new(p[0], p[1], p[2])
}

pub fn to_array(p: &Vec3) -> [f64; 3] {
    [p.x, p.y, p.z]
}

/// Unit vector pointing along azimuth `az` and zenith angle `el`.
pub fn direction(az: f64, el: f64) -> Vec3 {
    let (se, ce) = el.sin_cos();
    let (sa, ca) = az.sin_cos();
    Vec3::new(se * ca, se * sa, ce)
}

/// Inverse of [`direction`]. The input need not be normalized but must be nonzero.
pub fn angles_of(dir: &Vec3) -> (f64, f64) {
    let n = dir.norm();
    let az = wrap_angle(dir.y.atan2(dir.x));
    let el = (dir.z / n).clamp(-1.0, 1.0).acos();
    (az, el)
}

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let mut w = a.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Coordinate axis; for surfaces it names the dependent coordinate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Z, Axis::X, Axis::Y];

    /// Splits `p` into `(u, v, w)` where `w` is the coordinate along `self`
    /// and `(u, v)` are the remaining two in cyclic-free ascending order:
    /// `Z → (x, y)`, `Y → (x, z)`, `X → (y, z)`.
    pub fn split(self, p: &Vec3) -> (f64, f64, f64) {
        match self {
            Axis::Z => (p.x, p.y, p.z),
            Axis::Y => (p.x, p.z, p.y),
            Axis::X => (p.y, p.z, p.x),
        }
    }

    pub fn join(self, u: f64, v: f64, w: f64) -> Vec3 {
        match self {
            Axis::Z => Vec3::new(u, v, w),
            Axis::Y => Vec3::new(u, w, v),
            Axis::X => Vec3::new(w, u, v),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

/// Bivariate cubic `w = c0 + c1 u + c2 v + c3 u² + c4 uv + c5 v² + c6 u³ + c7 u²v + c8 uv² + c9 v³`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cubic(pub [f64; 10]);

impl Cubic {
    /// The ten monomials in coefficient order.
    pub fn monomials(u: f64, v: f64) -> [f64; 10] {
        [
            1.0,
            u,
            v,
            u * u,
            u * v,
            v * v,
            u * u * u,
            u * u * v,
            u * v * v,
            v * v * v,
        ]
    }

    pub fn eval(&self, u: f64, v: f64) -> f64 {
        Self::monomials(u, v)
            .iter()
            .zip(self.0.iter())
            .map(|(m, c)| m * c)
            .sum()
    }

    /// `(∂w/∂u, ∂w/∂v)`.
    pub fn grad(&self, u: f64, v: f64) -> (f64, f64) {
        let c = &self.0;
        let du = c[1] + 2.0 * c[3] * u + c[4] * v + 3.0 * c[6] * u * u + 2.0 * c[7] * u * v + c[8] * v * v;
        let dv = c[2] + c[4] * u + 2.0 * c[5] * v + c[7] * u * u + 2.0 * c[8] * u * v + 3.0 * c[9] * v * v;
        (du, dv)
    }

    /// `(∂²w/∂u², ∂²w/∂u∂v, ∂²w/∂v²)`.
    pub fn hessian(&self, u: f64, v: f64) -> (f64, f64, f64) {
        let c = &self.0;
        let uu = 2.0 * c[3] + 6.0 * c[6] * u + 2.0 * c[7] * v;
        let uv = c[4] + 2.0 * c[7] * u + 2.0 * c[8] * v;
        let vv = 2.0 * c[5] + 2.0 * c[8] * u + 6.0 * c[9] * v;
        (uu, uv, vv)
    }

    /// Re-expresses a cubic in normalized coordinates `u' = (u - ou)/su`,
    /// `v' = (v - ov)/sv` as a cubic in the raw coordinates `u, v`.
    pub fn denormalize(&self, ou: f64, su: f64, ov: f64, sv: f64) -> Cubic {
        // exponents of each coefficient slot
        const EXP: [(usize, usize); 10] = [
            (0, 0),
            (1, 0),
            (0, 1),
            (2, 0),
            (1, 1),
            (0, 2),
            (3, 0),
            (2, 1),
            (1, 2),
            (0, 3),
        ];
        let slot = |a: usize, b: usize| EXP.iter().position(|&e| e == (a, b)).unwrap();
        // (u - o)^n / s^n expanded as Σ_k binom(n,k) u^k (-o)^(n-k) / s^n
        let expand = |n: usize, o: f64, s: f64| -> Vec<f64> {
            (0..=n)
                .map(|k| binom(n, k) * (-o).powi((n - k) as i32) / s.powi(n as i32))
                .collect()
        };
        let mut out = [0.0; 10];
        for (idx, &(a, b)) in EXP.iter().enumerate() {
            let c = self.0[idx];
            if c == 0.0 {
                continue;
            }
            let pu = expand(a, ou, su);
            let pv = expand(b, ov, sv);
            for (ka, wa) in pu.iter().enumerate() {
                for (kb, wb) in pv.iter().enumerate() {
                    out[slot(ka, kb)] += c * wa * wb;
                }
            }
        }
        Cubic(out)
    }
}

fn binom(n: usize, k: usize) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r
}

/// Closest point to `p` on segment `[a, b]`.
pub fn closest_on_segment(p: &Vec3, a: &Vec3, b: &Vec3) -> Vec3 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    if len2 == 0.0 {
        return *a;
    }
    let t = ((p - a).dot(&ab) / len2).clamp(0.0, 1.0);
    a + ab * t
}
