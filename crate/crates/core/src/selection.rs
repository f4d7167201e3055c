//! Superior-user selection from beam-swept power maps.
//!
//! A power map is thresholded (Otsu on a linear histogram), split into
//! connected domains, and each domain's peak is scored by three factors in
//! `{0, 2}`:
//!
//! * connectivity `c` — the domain is neither a speck nor a smear;
//! * reflection `r` — `0` when the peak angles are those of a line-of-sight
//!   path, `2` for a first-order reflection;
//! * power `p` — the peak's axis neighbours are balanced, i.e. the path sits
//!   on the codebook grid and its angles can be trusted.
//!
//! `s_los = Σ c(2−r)p/8`, `s_nlos = Σ c·r·p/8` and a user is superior when
//! `s_los · s_nlos ≥ 1`. All factor comparisons are strict; equality rejects.

use std::cmp::Ordering;
use std::f64::consts::{FRAC_PI_2, PI};

use ndarray::Array4;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{Codebook, PowerMap};

#[derive(Debug, Error, PartialEq)]
pub enum SelectionError {
    #[error("power map has fewer than two distinct values; no threshold exists")]
    NoThreshold,
    #[error("need at least 2 histogram levels, got {0}")]
    Levels(usize),
    #[error("tangent singularity: {axis} angle {angle} is within 1e-9 of ±π/2")]
    Singular { axis: &'static str, angle: f64 },
    #[error("invalid selection config: {0}")]
    Config(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub k_levels: usize,
    /// Domains must be strictly larger than this.
    pub thr_c: f64,
    /// Domains must be strictly smaller than this; `None` means 5% of the map.
    pub thr_h: Option<f64>,
    pub thr_tan: f64,
    pub thr_pow: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k_levels: 256,
            thr_c: 3.0,
            thr_h: None,
            thr_tan: 0.1,
            thr_pow: 1.5,
        }
    }
}

impl SelectionConfig {
    pub fn thr_h_for(&self, size: usize) -> f64 {
        self.thr_h.unwrap_or(0.05 * size as f64)
    }

    pub fn validate(&self, size: usize) -> Result<(), SelectionError> {
        if self.k_levels < 2 {
            return Err(SelectionError::Levels(self.k_levels));
        }
        let h = self.thr_h_for(size);
        if !(self.thr_c > 0.0 && self.thr_c < h) {
            return Err(SelectionError::Config(format!("need 0 < thr_c < thr_h, got {} and {h}", self.thr_c)));
        }
        if !(self.thr_tan > 0.0) {
            return Err(SelectionError::Config("thr_tan must be positive".into()));
        }
        if !(self.thr_pow > 1.0) {
            return Err(SelectionError::Config("thr_pow must exceed 1".into()));
        }
        Ok(())
    }
}

/// Which factors are evaluated. A disabled factor passes every domain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactorMask {
    pub connectivity: bool,
    pub reflection: bool,
    pub power: bool,
}

impl FactorMask {
    pub const ALL: FactorMask = FactorMask {
        connectivity: true,
        reflection: true,
        power: true,
    };
    pub const NONE: FactorMask = FactorMask {
        connectivity: false,
        reflection: false,
        power: false,
    };

    /// The eight subsets, from none to all, singles then pairs.
    pub fn subsets() -> [FactorMask; 8] {
        let m = |c, r, p| FactorMask {
            connectivity: c,
            reflection: r,
            power: p,
        };
        [
            m(false, false, false),
            m(true, false, false),
            m(false, true, false),
            m(false, false, true),
            m(true, true, false),
            m(true, false, true),
            m(false, true, true),
            m(true, true, true),
        ]
    }

    pub fn count(&self) -> usize {
        [self.connectivity, self.reflection, self.power].iter().filter(|&&b| b).count()
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.connectivity {
            parts.push("connectivity");
        }
        if self.reflection {
            parts.push("reflection");
        }
        if self.power {
            parts.push("power");
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join("+")
        }
    }

    /// Parses `all`, `none` or a `+`/`,`-separated list of factor names.
    pub fn parse(s: &str) -> Option<FactorMask> {
        let s = s.trim();
        match s {
            "all" => return Some(FactorMask::ALL),
            "none" | "" => return Some(FactorMask::NONE),
            _ => {}
        }
        let mut m = FactorMask::NONE;
        for part in s.split(['+', ',']) {
            match part.trim() {
                "connectivity" | "c" => m.connectivity = true,
                "reflection" | "r" => m.reflection = true,
                "power" | "p" => m.power = true,
                _ => return None,
            }
        }
        Some(m)
    }
}

// ---------------------------------------------------------------------------
// thresholding

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Threshold {
    /// Level index `T*`: bins `>= T*` form the upper class.
    pub level: usize,
    /// Smallest power in the upper class.
    pub value: f64,
}

/// Histogram bin of `x` with `k` linear bins spanning `[lo, hi]`.
pub fn bin_index(x: f64, lo: f64, hi: f64, k: usize) -> usize {
    let b = ((x - lo) * k as f64 / (hi - lo)).floor();
    (b.max(0.0) as usize).min(k - 1)
}

/// Otsu threshold on `k_levels` linear bins between the min and max value.
///
/// Maximizes the between-class variance `ω₁ω₂(μ₁ − μ₂)²` over cuts
/// `1 ≤ T < k_levels`, with bin indices as gray levels. The search runs in
/// exact integer arithmetic, so ties resolve to the smallest `T`.
pub fn otsu_threshold(values: &[f64], k_levels: usize) -> Result<Threshold, SelectionError> {
    if k_levels < 2 {
        return Err(SelectionError::Levels(k_levels));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !(hi > lo) {
        return Err(SelectionError::NoThreshold);
    }
    let mut hist = vec![0u64; k_levels];
    for &x in values {
        hist[bin_index(x, lo, hi, k_levels)] += 1;
    }
    let level = otsu_level(&hist);
    let value = values
        .iter()
        .copied()
        .filter(|&x| bin_index(x, lo, hi, k_levels) >= level)
        .fold(f64::INFINITY, f64::min);
    Ok(Threshold { level, value })
}

/// Best cut of a histogram; see [`otsu_threshold`].
pub fn otsu_level(hist: &[u64]) -> usize {
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    let (mut c1, mut s1) = (0u128, 0u128);
    // σ²_B·N² = (s1·c2 − s2·c1)² / (c1·c2); compare as fractions
    let mut best: Option<(u128, u128, usize)> = None;
    for t in 1..hist.len() {
        c1 += hist[t - 1] as u128;
        s1 += (t as u128 - 1) * hist[t - 1] as u128;
        let c2 = n - c1;
        let s2 = s - s1;
        let (num, den) = if c1 == 0 || c2 == 0 {
            (0, 1)
        } else {
            let a = s1 * c2;
            let b = s2 * c1;
            let d = a.abs_diff(b);
            (d * d, c1 * c2)
        };
        let better = match best {
            None => true,
            Some((bn, bd, _)) => cmp_fraction(num, den, bn, bd) == Ordering::Greater,
        };
        if better {
            best = Some((num, den, t));
        }
    }
    best.map(|b| b.2).unwrap_or(1)
}

/// Compares `a/b` with `c/d` exactly (`b, d > 0`).
fn cmp_fraction(a: u128, b: u128, c: u128, d: u128) -> Ordering {
    mul_wide(a, d).cmp(&mul_wide(c, b))
}

/// Full 256-bit product as `(high, low)`.
fn mul_wide(x: u128, y: u128) -> (u128, u128) {
    const MASK: u128 = u64::MAX as u128;
    let (x1, x0) = (x >> 64, x & MASK);
    let (y1, y0) = (y >> 64, y & MASK);
    let p00 = x0 * y0;
    let p01 = x0 * y1;
    let p10 = x1 * y0;
    let p11 = x1 * y1;
    let mid = (p00 >> 64) + (p01 & MASK) + (p10 & MASK);
    let low = (p00 & MASK) | (mid << 64);
    let high = p11 + (p01 >> 64) + (p10 >> 64) + (mid >> 64);
    (high, low)
}

/// `1` where `pm ≥ threshold`, else `0`.
pub fn binarize(pm: &Array4<f64>, threshold: f64) -> Array4<u8> {
    pm.mapv(|x| u8::from(x >= threshold))
}

// ---------------------------------------------------------------------------
// connected domains

#[derive(Clone, Debug, PartialEq)]
pub struct ConnectedDomain {
    /// Cells in row-major order.
    pub cells: Vec<[usize; 4]>,
    pub peak: [usize; 4],
    pub peak_power: f64,
}

impl ConnectedDomain {
    pub fn size(&self) -> usize {
        self.cells.len()
    }
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root so labels follow row-major order
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn unravel(idx: usize, shape: [usize; 4]) -> [usize; 4] {
    let q = idx % shape[3];
    let r = idx / shape[3];
    let p = r % shape[2];
    let r = r / shape[2];
    let j = r % shape[1];
    [r / shape[1], j, p, q]
}

/// Maximal groups of 1-cells under 4-D von Neumann adjacency (±1 along one
/// axis). Domains are ordered by their first cell in row-major order; each
/// peak is the highest-power cell, ties to the smallest index.
pub fn connected_domains(pb: &Array4<u8>, pm: &Array4<f64>) -> Vec<ConnectedDomain> {
    let s = pb.shape();
    let shape = [s[0], s[1], s[2], s[3]];
    let strides = [shape[1] * shape[2] * shape[3], shape[2] * shape[3], shape[3], 1];
    let flat: Vec<u8> = pb.iter().copied().collect();
    let mut ds = DisjointSet {
        parent: (0..flat.len()).collect(),
    };
    for idx in 0..flat.len() {
        if flat[idx] == 0 {
            continue;
        }
        let c = unravel(idx, shape);
        // forward neighbours suffice for undirected unions
        for ax in 0..4 {
            if c[ax] + 1 < shape[ax] && flat[idx + strides[ax]] != 0 {
                ds.union(idx, idx + strides[ax]);
            }
        }
    }
    let mut slot_of_root = std::collections::HashMap::new();
    let mut out: Vec<ConnectedDomain> = Vec::new();
    let values: Vec<f64> = pm.iter().copied().collect();
    for idx in 0..flat.len() {
        if flat[idx] == 0 {
            continue;
        }
        let root = ds.find(idx);
        let cell = unravel(idx, shape);
        let slot = *slot_of_root.entry(root).or_insert_with(|| {
            out.push(ConnectedDomain {
                cells: Vec::new(),
                peak: cell,
                peak_power: f64::NEG_INFINITY,
            });
            out.len() - 1
        });
        let d = &mut out[slot];
        d.cells.push(cell);
        if values[idx] > d.peak_power {
            d.peak_power = values[idx];
            d.peak = cell;
        }
    }
    out
}

// ---------------------------------------------------------------------------
// factors

pub fn connectivity_factor(size: usize, thr_c: f64, thr_h: f64) -> u8 {
    let s = size as f64;
    if thr_c < s && s < thr_h {
        2
    } else {
        0
    }
}

fn check_tan(axis: &'static str, angle: f64) -> Result<f64, SelectionError> {
    let off = (angle - FRAC_PI_2).rem_euclid(PI);
    if off < 1e-9 || PI - off < 1e-9 {
        return Err(SelectionError::Singular { axis, angle });
    }
    Ok(angle.tan())
}

/// Tangent mismatch `Δ = |tan θ_t − tan(π − θ_r)| + |tan φ_t − tan(π − φ_r)|`
/// of local peak angles `[φ_t, θ_t, φ_r, θ_r]`.
pub fn tangent_mismatch(angles: [f64; 4]) -> Result<f64, SelectionError> {
    let [ta, te, ra, re] = angles;
    let el = check_tan("aod elevation", te)? - check_tan("aoa elevation", PI - re)?;
    let az = check_tan("aod azimuth", ta)? - check_tan("aoa azimuth", PI - ra)?;
    Ok(el.abs() + az.abs())
}

/// `0` (line of sight) if `Δ ≤ thr_tan`, else `2` (first-order reflection).
pub fn reflection_factor(angles: [f64; 4], thr_tan: f64) -> Result<u8, SelectionError> {
    Ok(if tangent_mismatch(angles)? <= thr_tan { 0 } else { 2 })
}

/// In-bounds axis neighbours of a cell (at most eight).
pub fn axis_neighbours(cell: [usize; 4], shape: [usize; 4]) -> Vec<[usize; 4]> {
    let mut out = Vec::with_capacity(8);
    for ax in 0..4 {
        if cell[ax] > 0 {
            let mut c = cell;
            c[ax] -= 1;
            out.push(c);
        }
        if cell[ax] + 1 < shape[ax] {
            let mut c = cell;
            c[ax] += 1;
            out.push(c);
        }
    }
    out
}

/// Max/min power over the peak's in-bounds axis neighbours; `None` when
/// fewer than two neighbours exist.
pub fn neighbour_ratio(pm: &Array4<f64>, peak: [usize; 4]) -> Option<f64> {
    let s = pm.shape();
    let n = axis_neighbours(peak, [s[0], s[1], s[2], s[3]]);
    if n.len() < 2 {
        return None;
    }
    let (lo, hi) = n
        .iter()
        .map(|&c| pm[c])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    Some(if lo > 0.0 { hi / lo } else { f64::INFINITY })
}

/// `2` (on-grid, A-class) iff the neighbour power ratio is below `thr_pow`.
pub fn power_factor(pm: &Array4<f64>, peak: [usize; 4], thr_pow: f64) -> u8 {
    match neighbour_ratio(pm, peak) {
        Some(r) if r < thr_pow => 2,
        _ => 0,
    }
}

// ---------------------------------------------------------------------------
// per-user report

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Los,
    Nlos,
    /// Failed a factor, or its reflection factor was undefined.
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainPath {
    /// Codebook angles at the peak, local frames: `[φ_t, θ_t, φ_r, θ_r]`.
    pub angles: [f64; 4],
    pub peak: [usize; 4],
    pub peak_power: f64,
    pub size: usize,
    pub c: u8,
    /// `None` when the reflection factor is disabled or singular.
    pub r: Option<u8>,
    pub p: u8,
    pub singular: bool,
    pub role: Role,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SelectionReport {
    pub user: usize,
    pub threshold: Option<Threshold>,
    pub domains: Vec<(ConnectedDomain, DomainPath)>,
    pub s_los: u32,
    pub s_nlos: u32,
    pub s_u: u32,
    pub superior: bool,
    /// Domain index used as the line-of-sight reference.
    pub los: Option<usize>,
}

impl SelectionReport {
    pub fn nlos_domains(&self) -> impl Iterator<Item = (usize, &DomainPath)> {
        self.domains
            .iter()
            .enumerate()
            .filter(|(_, (_, d))| d.role == Role::Nlos)
            .map(|(i, (_, d))| (i, d))
    }
}

fn stronger(a: &DomainPath, ai: usize, b: &DomainPath, bi: usize) -> bool {
    a.peak_power > b.peak_power || (a.peak_power == b.peak_power && ai < bi)
}

/// Full per-user pipeline: threshold, binarize, domains, factors, `s_u`.
///
/// With the reflection factor disabled, domains cannot be told apart by
/// angle, so the strongest passing domain serves as the line-of-sight path
/// and every other passing domain as a reflection.
pub fn select_user(pm: &PowerMap, cb: &Codebook, cfg: &SelectionConfig, mask: FactorMask) -> SelectionReport {
    let mut report = SelectionReport {
        user: pm.user,
        threshold: None,
        domains: Vec::new(),
        s_los: 0,
        s_nlos: 0,
        s_u: 0,
        superior: false,
        los: None,
    };
    let values: Vec<f64> = pm.data.iter().copied().collect();
    let Ok(th) = otsu_threshold(&values, cfg.k_levels) else {
        return report;
    };
    report.threshold = Some(th);
    let pb = binarize(&pm.data, th.value);
    let thr_h = cfg.thr_h_for(values.len());
    for d in connected_domains(&pb, &pm.data) {
        let angles = cb.angles(d.peak);
        let c = if mask.connectivity {
            connectivity_factor(d.size(), cfg.thr_c, thr_h)
        } else {
            2
        };
        let p = if mask.power {
            power_factor(&pm.data, d.peak, cfg.thr_pow)
        } else {
            2
        };
        let (r, singular) = if mask.reflection {
            match reflection_factor(angles, cfg.thr_tan) {
                Ok(r) => (Some(r), false),
                Err(_) => (None, true),
            }
        } else {
            (None, false)
        };
        let passes = c * p > 0 && !singular;
        let role = match (passes, mask.reflection, r) {
            (false, _, _) => Role::Rejected,
            (true, true, Some(0)) => Role::Los,
            (true, true, _) => Role::Nlos,
            (true, false, _) => Role::Nlos, // resolved below
        };
        let path = DomainPath {
            angles,
            peak: d.peak,
            peak_power: d.peak_power,
            size: d.size(),
            c,
            r,
            p,
            singular,
            role,
        };
        report.domains.push((d, path));
    }
    // the line-of-sight reference: strongest LOS candidate
    let mut los: Option<usize> = None;
    for (i, (_, d)) in report.domains.iter().enumerate() {
        let candidate = if mask.reflection { d.role == Role::Los } else { d.role != Role::Rejected };
        if candidate && los.is_none_or(|j| stronger(d, i, &report.domains[j].1, j)) {
            los = Some(i);
        }
    }
    if !mask.reflection {
        if let Some(l) = los {
            report.domains[l].1.role = Role::Los;
        }
    }
    report.los = los;
    for (_, d) in &report.domains {
        // r as seen by the selection factor
        let r = match d.role {
            Role::Los => 0u32,
            Role::Nlos => 2,
            Role::Rejected => continue,
        };
        let (c, p) = (d.c as u32, d.p as u32);
        report.s_los += c * (2 - r) * p / 8;
        report.s_nlos += c * r * p / 8;
    }
    report.s_u = report.s_los * report.s_nlos;
    report.superior = report.s_u >= 1;
    report
}

/// Serializable per-user summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRecord {
    pub user: usize,
    pub s_los: u32,
    pub s_nlos: u32,
    pub s_u: u32,
    pub superior: bool,
    pub domains: Vec<DomainPath>,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    user: Vec<ReportRecord>,
}

impl From<&SelectionReport> for ReportRecord {
    fn from(r: &SelectionReport) -> Self {
        ReportRecord {
            user: r.user,
            s_los: r.s_los,
            s_nlos: r.s_nlos,
            s_u: r.s_u,
            superior: r.superior,
            domains: r.domains.iter().map(|(_, d)| d.clone()).collect(),
        }
    }
}

/// TOML export, one `[[user]]` table per report.
pub fn reports_to_toml(reports: &[SelectionReport]) -> Result<String, toml::ser::Error> {
    toml::to_string(&ReportFile {
        user: reports.iter().map(ReportRecord::from).collect(),
    })
}

pub fn reports_from_toml(text: &str) -> Result<Vec<ReportRecord>, toml::de::Error> {
    Ok(toml::from_str::<ReportFile>(text)?.user)
}
