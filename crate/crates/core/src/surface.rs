//! Point-set clustering, staged cubic surface fitting and reconstruction error.
//!
//! A surface is `w = f(u, v)` with `f` a bivariate cubic (see [`Cubic`]) and
//! `(u, v, w)` a permutation of `(x, y, z)` chosen by [`Axis`]. The fit runs in
//! three least-squares stages — linear terms on the data, quadratic terms on
//! the stage-1 residual, cubic terms on the stage-2 residual — and the stages
//! are swept repeatedly (backfitting) until the coefficients settle, which
//! reaches the joint least-squares solution.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Axis, Cubic, Vec3};
use crate::localization::PointSet;
use crate::rng::{stream_rng, Stream};
use crate::scene::Scene;

#[derive(Debug, Error, PartialEq)]
pub enum SurfaceError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("k = {k} clusters requested for {n} points")]
    Clusters { k: usize, n: usize },
    #[error("degenerate geometry in stage {stage} of the {axis}-surface fit (condition number {cond:.3e})")]
    Degenerate { stage: usize, axis: &'static str, cond: f64 },
    #[error("no points")]
    NoPoints,
    #[error("scene has no surfaces")]
    NoSurface,
}

/// Stage design matrices with a larger condition number are rank deficient.
pub const MAX_CONDITION: f64 = 1e8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfaceModel {
    pub axis: Axis,
    /// Coefficients in raw coordinates.
    pub coefficients: Cubic,
    pub u_range: [f64; 2],
    pub v_range: [f64; 2],
    pub count: usize,
    /// RMS of the final fit residual along `axis`.
    pub rms: f64,
    /// Backfitting sweeps used.
    pub sweeps: usize,
}

impl SurfaceModel {
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        self.coefficients.eval(u, v)
    }

    /// Grid samples over the fit domain, `spacing` apart in `u` and `v`
    /// (domain edges included).
    pub fn samples(&self, spacing: f64) -> Vec<Vec3> {
        let steps = |r: [f64; 2]| ((r[1] - r[0]) / spacing).ceil().max(0.0) as usize;
        let (nu, nv) = (steps(self.u_range), steps(self.v_range));
        let at = |r: [f64; 2], i: usize, n: usize| if n == 0 { r[0] } else { r[0] + (r[1] - r[0]) * i as f64 / n as f64 };
        let mut out = Vec::with_capacity((nu + 1) * (nv + 1));
        for i in 0..=nu {
            let u = at(self.u_range, i, nu);
            for j in 0..=nv {
                let v = at(self.v_range, j, nv);
                out.push(self.axis.join(u, v, self.eval(u, v)));
            }
        }
        out
    }

    /// One line: `axis c0..c9 u_min u_max v_min v_max count rms`.
    pub fn to_line(&self) -> String {
        let mut s = String::from(self.axis.name());
        for c in self.coefficients.0 {
            write!(s, " {c}").unwrap();
        }
        write!(
            s,
            " {} {} {} {} {} {}",
            self.u_range[0], self.u_range[1], self.v_range[0], self.v_range[1], self.count, self.rms
        )
        .unwrap();
        s
    }
}

/// Text export of several surfaces, one per line after a header comment.
pub fn surfaces_to_text(models: &[SurfaceModel]) -> String {
    let mut s = String::from("# axis c0 c1 c2 c3 c4 c5 c6 c7 c8 c9 u_min u_max v_min v_max count rms\n");
    for m in models {
        s.push_str(&m.to_line());
        s.push('\n');
    }
    s
}

const STAGES: [std::ops::Range<usize>; 3] = [0..3, 3..6, 6..10];

fn condition_number(a: &DMatrix<f64>) -> f64 {
    let sv = a.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Shared normalization: centre each coordinate, scale both by the larger
/// half-range so a thin coordinate stays thin.
fn normalization(uv: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = uv.len() as f64;
    let ou = uv.iter().map(|p| p.0).sum::<f64>() / n;
    let ov = uv.iter().map(|p| p.1).sum::<f64>() / n;
    let half = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let (lo, hi) = uv.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        (hi - lo) / 2.0
    };
    let s = half(&|p| p.0).max(half(&|p| p.1));
    (ou, ov, if s > 0.0 { s } else { 1.0 })
}

/// Condition number of the stage-1 design `[1, u, v]` for a parameterization.
pub fn stage1_condition(points: &[Vec3], axis: Axis) -> f64 {
    let uv: Vec<(f64, f64)> = points.iter().map(|p| {
        let (u, v, _) = axis.split(p);
        (u, v)
    }).collect();
    let (ou, ov, s) = normalization(&uv);
    let a = DMatrix::from_fn(uv.len(), 3, |i, j| {
        Cubic::monomials((uv[i].0 - ou) / s, (uv[i].1 - ov) / s)[j]
    });
    condition_number(&a)
}

/// Staged cubic fit of `z = f(x, y)`.
pub fn fit_surface(points: &[Vec3]) -> Result<SurfaceModel, SurfaceError> {
    fit_surface_along(points, Axis::Z)
}

/// Staged cubic fit of the `axis` coordinate over the other two.
pub fn fit_surface_along(points: &[Vec3], axis: Axis) -> Result<SurfaceModel, SurfaceError> {
    fit_staged(points, axis, 10_000, 1e-13)
}

/// Staged fit with an explicit sweep budget; `max_sweeps = 1` is the plain
/// single pass.
pub fn fit_staged(points: &[Vec3], axis: Axis, max_sweeps: usize, tol: f64) -> Result<SurfaceModel, SurfaceError> {
    if points.len() < 10 {
        return Err(SurfaceError::TooFewPoints {
            need: 10,
            got: points.len(),
        });
    }
    let (uv, w): (Vec<(f64, f64)>, Vec<f64>) = points
        .iter()
        .map(|p| {
            let (u, v, w) = axis.split(p);
            ((u, v), w)
        })
        .unzip();
    let (ou, ov, s) = normalization(&uv);
    let n = points.len();
    let full = DMatrix::from_fn(n, 10, |i, j| Cubic::monomials((uv[i].0 - ou) / s, (uv[i].1 - ov) / s)[j]);
    let w = DVector::from_vec(w);

    // per-stage least-squares solvers (thin SVD of each block)
    let mut solvers = Vec::with_capacity(3);
    for (k, cols) in STAGES.iter().enumerate() {
        let block = full.columns(cols.start, cols.len()).into_owned();
        let cond = condition_number(&block);
        if !(cond < MAX_CONDITION) {
            return Err(SurfaceError::Degenerate {
                stage: k + 1,
                axis: axis.name(),
                cond,
            });
        }
        solvers.push((block.clone(), block.svd(true, true)));
    }

    let mut coef = DVector::<f64>::zeros(10);
    let mut fitted: Vec<DVector<f64>> = vec![DVector::zeros(n); 3];
    let mut sweeps = 0;
    for sweep in 1..=max_sweeps {
        sweeps = sweep;
        let mut change: f64 = 0.0;
        for (k, cols) in STAGES.iter().enumerate() {
            // residual of the data after the other stages
            let mut target = w.clone();
            for (m, f) in fitted.iter().enumerate() {
                if m != k {
                    target -= f;
                }
            }
            let (block, svd) = &solvers[k];
            let c = svd.solve(&target, 1e-14).expect("svd computed with u and v");
            for (i, idx) in cols.clone().enumerate() {
                change = change.max((c[i] - coef[idx]).abs());
                coef[idx] = c[i];
            }
            fitted[k] = block * c;
        }
        let scale = coef.amax().max(1.0);
        if change <= tol * scale {
            break;
        }
    }
    let resid = &w - (&fitted[0] + &fitted[1] + &fitted[2]);
    let rms = (resid.norm_squared() / n as f64).sqrt();
    let mut normalized = [0.0; 10];
    normalized.copy_from_slice(coef.as_slice());
    let coefficients = Cubic(normalized).denormalize(ou, s, ov, s);
    let range = |f: &dyn Fn(&(f64, f64)) -> f64| {
        let (lo, hi) = uv.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
        [lo, hi]
    };
    Ok(SurfaceModel {
        axis,
        coefficients,
        u_range: range(&|p| p.0),
        v_range: range(&|p| p.1),
        count: n,
        rms,
        sweeps,
    })
}

/// Fits along the parameterization whose stage-1 design is best conditioned.
pub fn fit_surface_auto(points: &[Vec3]) -> Result<SurfaceModel, SurfaceError> {
    if points.len() < 10 {
        return Err(SurfaceError::TooFewPoints {
            need: 10,
            got: points.len(),
        });
    }
    let best = Axis::ALL
        .iter()
        .copied()
        .min_by(|a, b| stage1_condition(points, *a).total_cmp(&stage1_condition(points, *b)))
        .unwrap();
    fit_surface_along(points, best)
}

// ---------------------------------------------------------------------------
// clustering

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Vec<Vec3>,
    /// Inertia after initialization and after each Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().unwrap()
    }
}

fn nearest(p: &Vec3, centroids: &[Vec3]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, (p - c).norm_squared()))
        .fold((0, f64::INFINITY), |best, x| if x.1 < best.1 { x } else { best })
}

/// k-means++ seeding, then Lloyd iterations until the assignment stops
/// changing or `max_iter` is reached.
pub fn kmeans(points: &[Vec3], k: usize, seed: u64, max_iter: usize) -> Result<KMeans, SurfaceError> {
    if k == 0 || k > points.len() {
        return Err(SurfaceError::Clusters { k, n: points.len() });
    }
    let mut rng: ChaCha8Rng = stream_rng(seed, Stream::KMeans, k as u64);
    let mut centroids = vec![points[rng.random_range(0..points.len())]];
    while centroids.len() < k {
        let d2: Vec<f64> = points.iter().map(|p| nearest(p, &centroids).1).collect();
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next]);
    }
    let assign = |c: &[Vec3]| -> (Vec<usize>, f64) {
        let mut total = 0.0;
        let a = points
            .iter()
            .map(|p| {
                let (i, d) = nearest(p, c);
                total += d;
                i
            })
            .collect();
        (a, total)
    };
    let (mut assignment, inertia) = assign(&centroids);
    let mut trace = vec![inertia];
    for _ in 0..max_iter {
        // update step; an emptied cluster keeps its centroid
        let mut sums = vec![Vec3::zeros(); k];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assignment) {
            sums[a] += p;
            counts[a] += 1;
        }
        for i in 0..k {
            if counts[i] > 0 {
                centroids[i] = sums[i] / counts[i] as f64;
            }
        }
        let (next, inertia) = assign(&centroids);
        trace.push(inertia);
        if next == assignment {
            break;
        }
        assignment = next;
    }
    Ok(KMeans {
        assignment,
        centroids,
        inertia_trace: trace,
    })
}

/// Mean silhouette coefficient of a clustering (`0` for a single cluster).
pub fn silhouette(points: &[Vec3], assignment: &[usize], k: usize) -> f64 {
    if k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, p) in points.iter().enumerate() {
        let mut sum = vec![0.0; k];
        let mut cnt = vec![0usize; k];
        for (j, q) in points.iter().enumerate() {
            if i != j {
                sum[assignment[j]] += (p - q).norm();
                cnt[assignment[j]] += 1;
            }
        }
        let own = assignment[i];
        if cnt[own] == 0 {
            continue; // singleton: s = 0
        }
        let a = sum[own] / cnt[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && cnt[c] > 0)
            .map(|c| sum[c] / cnt[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / points.len() as f64
}

/// Cluster count in `2..=max_k` with the highest mean silhouette.
pub fn choose_k(points: &[Vec3], max_k: usize, seed: u64) -> Result<usize, SurfaceError> {
    let upper = max_k.min(points.len());
    if upper < 2 {
        return Err(SurfaceError::Clusters { k: 2, n: points.len() });
    }
    let mut best = (2, f64::NEG_INFINITY);
    for k in 2..=upper {
        let km = kmeans(points, k, seed, 300)?;
        let s = silhouette(points, &km.assignment, k);
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(best.0)
}

// ---------------------------------------------------------------------------
// error metrics

/// `sqrt(mean d²)` with `d` the distance from each point to the nearest wall.
pub fn point_set_rmse(points: &PointSet, scene: &Scene) -> Result<f64, SurfaceError> {
    if points.is_empty() {
        return Err(SurfaceError::NoPoints);
    }
    if scene.walls().is_empty() {
        return Err(SurfaceError::NoSurface);
    }
    let sum: f64 = points
        .points
        .iter()
        .map(|p| scene.nearest_surface_distance(&p.position).expect("walls checked").powi(2))
        .sum();
    Ok((sum / points.len() as f64).sqrt())
}
