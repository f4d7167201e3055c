//! Wideband geometric channel, analog beam sweeping and power maps.
//!
//! Arrays are uniform planar arrays lying in the y–z plane. Element `(n, m)`
//! (row `n` along z, column `m` along y) sits at index `n·cols + m`, and the
//! steering vector entry is `exp(j2π·s·(m·u + n·v)) / √N` with
//! `u = sin el · sin az`, `v = cos el` and `s` the spacing in wavelengths.
//!
//! Each array faces either `+x` or `−x` and only radiates into its front
//! half-space. A `−x` array describes angles in a frame mirrored through the
//! y–z plane, so a local azimuth `az` is the global azimuth `π − az`; since
//! the mirror leaves `u` and `v` unchanged, the same steering formula applies
//! in both frames. With a transmitter facing `+x` and a receiver facing `−x`,
//! a line-of-sight path has local angles satisfying `az_r = −az_t` and
//! `el_r = π − el_t`.

use std::f64::consts::PI;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use ndarray::Array4;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{direction, wrap_angle};
use crate::raytrace::PathParam;

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("path delay {delay:e} s exceeds the {taps}-tap window ({max:e} s)")]
    DelayExceedsTaps { delay: f64, taps: usize, max: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("beamformed subcarrier {subcarrier} has magnitude {magnitude:e}; phase undefined")]
    DegeneratePhase { subcarrier: usize, magnitude: f64 },
    #[error("quad {0:?} is outside the codebook")]
    QuadOutOfRange([usize; 4]),
    #[error("power map file: {0}")]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boresight {
    PlusX,
    MinusX,
}

impl Boresight {
    pub fn opposite(self) -> Boresight {
        match self {
            Boresight::PlusX => Boresight::MinusX,
            Boresight::MinusX => Boresight::PlusX,
        }
    }

    /// Global angles to this array's local frame. The map is an involution,
    /// so it also converts local angles back to global ones.
    pub fn to_local(self, az: f64, el: f64) -> (f64, f64) {
        match self {
            Boresight::PlusX => (az, el),
            Boresight::MinusX => (wrap_angle(PI - az), el),
        }
    }

    /// True if a global direction `(az, el)` lies in the front half-space.
    pub fn faces(self, az: f64, el: f64) -> bool {
        let x = direction(az, el).x;
        match self {
            Boresight::PlusX => x > 0.0,
            Boresight::MinusX => x < 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub rows: usize,
    pub cols: usize,
    /// Element spacing in wavelengths.
    #[serde(default = "half")]
    pub spacing: f64,
    pub boresight: Boresight,
}

fn half() -> f64 {
    0.5
}

impl ArrayConfig {
    pub fn new(rows: usize, cols: usize, boresight: Boresight) -> ArrayConfig {
        ArrayConfig {
            rows,
            cols,
            spacing: 0.5,
            boresight,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn facing(self, boresight: Boresight) -> ArrayConfig {
        ArrayConfig { boresight, ..self }
    }
}

/// Unit-norm UPA response toward local angles `(az, el)`.
pub fn steering_vector(array: &ArrayConfig, az: f64, el: f64) -> DVector<Complex64> {
    let n = array.len();
    let scale = 1.0 / (n as f64).sqrt();
    let u = el.sin() * az.sin();
    let v = el.cos();
    DVector::from_fn(n, |idx, _| {
        let (row, col) = (idx / array.cols, idx % array.cols);
        let phase = 2.0 * PI * array.spacing * (col as f64 * u + row as f64 * v);
        Complex64::from_polar(scale, phase)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Pulse {
    /// One tap per path at the delay rounded to the nearest symbol.
    Rect,
    RaisedCosine { beta: f64 },
}

impl Pulse {
    /// Value of `g(t)` with `t` in symbol periods.
    fn sample(self, t: f64) -> f64 {
        match self {
            Pulse::Rect => {
                if (-0.5..0.5).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
            Pulse::RaisedCosine { beta } => {
                let sinc = if t == 0.0 { 1.0 } else { (PI * t).sin() / (PI * t) };
                let d = 1.0 - (2.0 * beta * t).powi(2);
                if d.abs() < 1e-12 {
                    PI / 4.0 * sinc
                } else {
                    sinc * (PI * beta * t).cos() / d
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    /// Subcarriers `K`; also the DFT length.
    pub subcarriers: usize,
    pub pulse: Pulse,
    /// Discrete delay taps `n = 0..=taps`.
    pub taps: usize,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            carrier_hz: 28e9,
            bandwidth_hz: 40e6,
            subcarriers: 64,
            pulse: Pulse::Rect,
            taps: 32,
        }
    }
}

impl ChannelConfig {
    pub fn symbol_period(&self) -> f64 {
        1.0 / self.bandwidth_hz
    }

    pub fn validate(&self) -> Result<(), ChannelError> {
        if self.subcarriers < 2 {
            return Err(ChannelError::Config("need at least 2 subcarriers".into()));
        }
        if !(self.bandwidth_hz > 0.0 && self.carrier_hz > 0.0) {
            return Err(ChannelError::Config("carrier and bandwidth must be positive".into()));
        }
        if let Pulse::RaisedCosine { beta } = self.pulse {
            if !(0.0..=1.0).contains(&beta) {
                return Err(ChannelError::Config(format!("roll-off {beta} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Subcarrier frequencies `f_m = f_c − B/2 + m·B/M`, `m = 0..M`.
    pub fn subcarrier_frequencies(&self, m: usize) -> Vec<f64> {
        (0..m)
            .map(|i| self.carrier_hz - self.bandwidth_hz / 2.0 + i as f64 * self.bandwidth_hz / m as f64)
            .collect()
    }

    /// Nonzero `(tap, g(nT − τ))` pairs for one delay.
    fn tap_weights(&self, delay: f64) -> Result<Vec<(usize, f64)>, ChannelError> {
        let t = self.symbol_period();
        let max = self.taps as f64 * t;
        if delay > max || delay < 0.0 {
            return Err(ChannelError::DelayExceedsTaps {
                delay,
                taps: self.taps,
                max,
            });
        }
        Ok(match self.pulse {
            Pulse::Rect => vec![((delay / t).round() as usize, 1.0)],
            p => (0..=self.taps)
                .map(|n| (n, p.sample(n as f64 - delay / t)))
                .filter(|&(_, g)| g.abs() > 1e-12)
                .collect(),
        })
    }
}

/// Path angles in the local frames of an array pair, `[aod_az, aod_el,
/// aoa_az, aoa_el]`; `None` if the path leaves or arrives from behind.
pub fn local_angles(path: &PathParam, tx: &ArrayConfig, rx: &ArrayConfig) -> Option<[f64; 4]> {
    if !tx.boresight.faces(path.aod_az, path.aod_el) || !rx.boresight.faces(path.aoa_az, path.aoa_el) {
        return None;
    }
    let (ta, te) = tx.boresight.to_local(path.aod_az, path.aod_el);
    let (ra, re) = rx.boresight.to_local(path.aoa_az, path.aoa_el);
    Some([ta, te, ra, re])
}

/// Time-domain taps `H[n]`, `n = 0..=taps`, each `N_r × N_t`.
pub fn channel_time(
    paths: &[PathParam],
    cfg: &ChannelConfig,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
) -> Result<Vec<DMatrix<Complex64>>, ChannelError> {
    cfg.validate()?;
    let mut h = vec![DMatrix::zeros(rx.len(), tx.len()); cfg.taps + 1];
    let scale = ((rx.len() * tx.len()) as f64).sqrt();
    for p in paths {
        let weights = cfg.tap_weights(p.delay)?;
        let Some([ta, te, ra, re]) = local_angles(p, tx, rx) else {
            continue;
        };
        let outer = steering_vector(rx, ra, re) * steering_vector(tx, ta, te).adjoint();
        for (n, g) in weights {
            h[n] += &outer * (p.gain * scale * g);
        }
    }
    Ok(h)
}

/// Frequency-domain channel `H[k] = Σ_n H[n] e^{−j2πkn/K}`, `k = 0..K`.
pub fn channel_frequency(
    paths: &[PathParam],
    cfg: &ChannelConfig,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
) -> Result<Vec<DMatrix<Complex64>>, ChannelError> {
    let taps = channel_time(paths, cfg, tx, rx)?;
    let k_len = cfg.subcarriers;
    Ok((0..k_len)
        .map(|k| {
            let mut acc = DMatrix::zeros(rx.len(), tx.len());
            for (n, hn) in taps.iter().enumerate() {
                if hn.iter().all(|z| *z == Complex64::new(0.0, 0.0)) {
                    continue;
                }
                let w = Complex64::from_polar(1.0, -2.0 * PI * ((k * n) % k_len) as f64 / k_len as f64);
                acc += hn * w;
            }
            acc
        })
        .collect())
}

// ---------------------------------------------------------------------------
// codebooks

/// How grid points are spread between the endpoints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    /// Uniform in angle.
    #[default]
    Angle,
    /// Uniform in `sin` (azimuth grids): equal steps in the direction cosine `u`.
    Sine,
    /// Uniform in `cos` (elevation grids): equal steps in the direction cosine `v`.
    Cosine,
}

/// Angle grid with inclusive endpoints, in degrees on disk.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub min_deg: f64,
    pub max_deg: f64,
    pub count: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl GridSpec {
    pub fn uniform(min_deg: f64, max_deg: f64, count: usize) -> GridSpec {
        GridSpec {
            min_deg,
            max_deg,
            count,
            spacing: Spacing::Angle,
        }
    }

    /// Increasing angles in radians.
    pub fn values(&self) -> Vec<f64> {
        let (a, b) = (self.min_deg.to_radians(), self.max_deg.to_radians());
        if self.count == 1 {
            return vec![a];
        }
        let lerp = |lo: f64, hi: f64, i: usize| lo + (hi - lo) * i as f64 / (self.count - 1) as f64;
        let mut v: Vec<f64> = (0..self.count)
            .map(|i| match self.spacing {
                Spacing::Angle => lerp(a, b, i),
                Spacing::Sine => lerp(a.sin(), b.sin(), i).clamp(-1.0, 1.0).asin(),
                Spacing::Cosine => lerp(a.cos(), b.cos(), i).clamp(-1.0, 1.0).acos(),
            })
            .collect();
        v.sort_by(f64::total_cmp);
        v
    }
}

/// Beam codebooks as angle sets, each in its own array's local frame.
#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    pub tx_az: Vec<f64>,
    pub tx_el: Vec<f64>,
    pub rx_az: Vec<f64>,
    pub rx_el: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodebookSpec {
    pub tx_az: GridSpec,
    pub tx_el: GridSpec,
    pub rx_az: GridSpec,
    pub rx_el: GridSpec,
}

impl Default for CodebookSpec {
    /// Direction-cosine grids (like oversampled DFT beams): 91 azimuths
    /// 0.02 apart in `sin φ`, 5 elevations 0.1 apart in `cos θ` just below
    /// the horizon. Receiver grids mirror the transmitter grids (`az → −az`,
    /// `el → π − el`), so an on-grid departure arrives on-grid too.
    /// Elevations stop short of the horizon, where the tangent test is
    /// singular.
    fn default() -> Self {
        let az = GridSpec {
            min_deg: -0.9f64.asin().to_degrees(),
            max_deg: 0.9f64.asin().to_degrees(),
            count: 91,
            spacing: Spacing::Sine,
        };
        let el = |lo: f64, hi: f64| GridSpec {
            min_deg: lo.acos().to_degrees(),
            max_deg: hi.acos().to_degrees(),
            count: 5,
            spacing: Spacing::Cosine,
        };
        CodebookSpec {
            tx_az: az,
            tx_el: el(-0.05, -0.45),
            rx_az: az,
            rx_el: el(0.45, 0.05),
        }
    }
}

impl Codebook {
    pub fn new(tx_az: Vec<f64>, tx_el: Vec<f64>, rx_az: Vec<f64>, rx_el: Vec<f64>) -> Result<Codebook, ChannelError> {
        for (name, set) in [("tx_az", &tx_az), ("tx_el", &tx_el), ("rx_az", &rx_az), ("rx_el", &rx_el)] {
            if set.is_empty() {
                return Err(ChannelError::Config(format!("{name} is empty")));
            }
            if set.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(ChannelError::Config(format!("{name} must be strictly increasing")));
            }
        }
        Ok(Codebook {
            tx_az,
            tx_el,
            rx_az,
            rx_el,
        })
    }

    pub fn from_spec(spec: &CodebookSpec) -> Result<Codebook, ChannelError> {
        Codebook::new(spec.tx_az.values(), spec.tx_el.values(), spec.rx_az.values(), spec.rx_el.values())
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.tx_az.len(), self.tx_el.len(), self.rx_az.len(), self.rx_el.len()]
    }

    /// Codebook angles `[tx_az, tx_el, rx_az, rx_el]` of a quad.
    pub fn angles(&self, quad: [usize; 4]) -> [f64; 4] {
        [self.tx_az[quad[0]], self.tx_el[quad[1]], self.rx_az[quad[2]], self.rx_el[quad[3]]]
    }

    pub fn contains(&self, quad: [usize; 4]) -> bool {
        quad.iter().zip(self.shape()).all(|(&q, n)| q < n)
    }

    fn tx_beams(&self, tx: &ArrayConfig) -> Vec<DVector<Complex64>> {
        let mut out = Vec::with_capacity(self.tx_az.len() * self.tx_el.len());
        for &az in &self.tx_az {
            for &el in &self.tx_el {
                out.push(steering_vector(tx, az, el));
            }
        }
        out
    }

    fn rx_beams(&self, rx: &ArrayConfig) -> Vec<DVector<Complex64>> {
        let mut out = Vec::with_capacity(self.rx_az.len() * self.rx_el.len());
        for &az in &self.rx_az {
            for &el in &self.rx_el {
                out.push(steering_vector(rx, az, el));
            }
        }
        out
    }
}

// ---------------------------------------------------------------------------
// power maps

/// Beam-swept received power, indexed `[tx_az, tx_el, rx_az, rx_el]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PowerMap {
    pub data: Array4<f64>,
    pub user: usize,
}

impl PowerMap {
    pub fn shape(&self) -> [usize; 4] {
        let s = self.data.shape();
        [s[0], s[1], s[2], s[3]]
    }

    /// Quad with the highest power; ties go to the smallest row-major index.
    pub fn argmax(&self) -> [usize; 4] {
        let mut best = (f64::NEG_INFINITY, [0; 4]);
        for ((i, j, p, q), &v) in self.data.indexed_iter() {
            if v > best.0 {
                best = (v, [i, j, p, q]);
            }
        }
        best.1
    }

    /// Layout: four little-endian `u32` dimensions, then `f64` values in
    /// row-major order, little-endian.
    pub fn write_to(&self, w: &mut impl Write) -> io::Result<()> {
        for d in self.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for v in self.data.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read, user: usize) -> io::Result<PowerMap> {
        let mut shape = [0usize; 4];
        let mut b4 = [0u8; 4];
        for d in shape.iter_mut() {
            r.read_exact(&mut b4)?;
            *d = u32::from_le_bytes(b4) as usize;
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        let mut b8 = [0u8; 8];
        for _ in 0..n {
            r.read_exact(&mut b8)?;
            values.push(f64::from_le_bytes(b8));
        }
        let data = Array4::from_shape_vec((shape[0], shape[1], shape[2], shape[3]), values)
            .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        Ok(PowerMap { data, user })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ChannelError> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, user: usize) -> Result<PowerMap, ChannelError> {
        let mut f = io::BufReader::new(std::fs::File::open(path)?);
        Ok(PowerMap::read_from(&mut f, user)?)
    }
}

/// Noise variance per complex subcarrier sample giving `snr_db` relative to
/// the perfectly beamformed LOS power `N_r·N_t·|α_los|²` (strongest path if
/// there is no LOS; zero for an empty channel).
pub fn noise_power_for_snr(paths: &[PathParam], tx: &ArrayConfig, rx: &ArrayConfig, snr_db: f64) -> f64 {
    let visible = paths.iter().filter(|p| local_angles(p, tx, rx).is_some());
    let los = visible.clone().find(|p| p.order == 0);
    let alpha = match los {
        Some(p) => p.gain.norm(),
        None => visible.map(|p| p.gain.norm()).fold(0.0, f64::max),
    };
    (rx.len() * tx.len()) as f64 * alpha * alpha / 10f64.powf(snr_db / 10.0)
}

/// Draws the noise of one quad: `K` complex samples of variance `sigma2`.
struct NoiseSource {
    rng: ChaCha8Rng,
    std: f64,
}

impl NoiseSource {
    fn new(noise_power: f64, seed: u64) -> NoiseSource {
        NoiseSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: (noise_power / 2.0).sqrt(),
        }
    }

    fn next(&mut self) -> Complex64 {
        if self.std == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let re: f64 = StandardNormal.sample(&mut self.rng);
        let im: f64 = StandardNormal.sample(&mut self.rng);
        Complex64::new(re * self.std, im * self.std)
    }
}

/// Power map from a frequency-domain channel:
/// `P[i,j,p,q] = Σ_k |a_r(p,q)^H H[k] a_t(i,j) + w[k]|²`.
///
/// Noise samples are drawn per quad in row-major order, subcarriers inner.
pub fn sweep_power_map(
    h: &[DMatrix<Complex64>],
    cb: &Codebook,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    noise_power: f64,
    seed: u64,
) -> PowerMap {
    let [na, ne, ra, re] = cb.shape();
    let tx_beams = cb.tx_beams(tx);
    let rx_beams = cb.rx_beams(rx);
    // H[k] a_t for every transmit beam
    let ht: Vec<Vec<DVector<Complex64>>> = tx_beams.iter().map(|a| h.iter().map(|hk| hk * a).collect()).collect();
    let mut noise = NoiseSource::new(noise_power, seed);
    let mut data = Array4::zeros((na, ne, ra, re));
    for i in 0..na {
        for j in 0..ne {
            let cols = &ht[i * ne + j];
            for p in 0..ra {
                for q in 0..re {
                    let ar = &rx_beams[p * re + q];
                    let mut acc = 0.0;
                    for hk in cols {
                        let y = ar.dotc(hk) + noise.next();
                        acc += y.norm_sqr();
                    }
                    data[[i, j, p, q]] = acc;
                }
            }
        }
    }
    PowerMap { data, user: 0 }
}

/// Same power map as [`sweep_power_map`] ∘ [`channel_frequency`], computed
/// path by path without forming the `N_r × N_t` matrices. Noise is drawn in
/// the same order, so equal seeds give equal maps.
pub fn power_map_from_paths(
    paths: &[PathParam],
    cfg: &ChannelConfig,
    cb: &Codebook,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    noise_power: f64,
    seed: u64,
) -> Result<PowerMap, ChannelError> {
    cfg.validate()?;
    let [na, ne, ra, re] = cb.shape();
    let k_len = cfg.subcarriers;
    let scale = ((rx.len() * tx.len()) as f64).sqrt();

    // per visible path: tap weights and beam gains for every codeword
    struct Visible {
        gain: Complex64,
        taps: Vec<(usize, f64)>,
        gt: Vec<Complex64>,
        gr: Vec<Complex64>,
    }
    let tx_beams = cb.tx_beams(tx);
    let rx_beams = cb.rx_beams(rx);
    let mut visible = Vec::new();
    for p in paths {
        let taps = cfg.tap_weights(p.delay)?;
        let Some([ta, te, ra_, re_]) = local_angles(p, tx, rx) else {
            continue;
        };
        let at = steering_vector(tx, ta, te);
        let ar = steering_vector(rx, ra_, re_);
        visible.push(Visible {
            gain: p.gain * scale,
            taps,
            gt: tx_beams.iter().map(|b| at.dotc(b)).collect(),
            gr: rx_beams.iter().map(|b| b.dotc(&ar)).collect(),
        });
    }
    let mut used_taps: Vec<usize> = visible.iter().flat_map(|v| v.taps.iter().map(|t| t.0)).collect();
    used_taps.sort_unstable();
    used_taps.dedup();
    // twiddles e^{-j2πkn/K} for the taps in use
    let twiddle: Vec<Vec<Complex64>> = used_taps
        .iter()
        .map(|&n| {
            (0..k_len)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * ((k * n) % k_len) as f64 / k_len as f64))
                .collect()
        })
        .collect();

    let mut noise = NoiseSource::new(noise_power, seed);
    let mut data = Array4::zeros((na, ne, ra, re));
    let mut coeff = vec![Complex64::new(0.0, 0.0); used_taps.len()];
    for i in 0..na {
        for j in 0..ne {
            let t_idx = i * ne + j;
            for p in 0..ra {
                for q in 0..re {
                    let r_idx = p * re + q;
                    coeff.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                    for v in &visible {
                        let b = v.gain * v.gt[t_idx] * v.gr[r_idx];
                        for &(n, g) in &v.taps {
                            let slot = used_taps.binary_search(&n).unwrap();
                            coeff[slot] += b * g;
                        }
                    }
                    let mut acc = 0.0;
                    for k in 0..k_len {
                        let mut y = noise.next();
                        for (c, tw) in coeff.iter().zip(&twiddle) {
                            y += c * tw[k];
                        }
                        acc += y.norm_sqr();
                    }
                    data[[i, j, p, q]] = acc;
                }
            }
        }
    }
    Ok(PowerMap { data, user: 0 })
}

/// Per-subcarrier phase lag of the channel beamformed on `quad`, using exact
/// (continuous) path delays: `φ_m = −arg(a_r^H H(f_m) a_t)` in `[0, 2π)`.
/// For a single LOS path this is `2π f_m d / c` modulo `2π` plus a constant.
///
/// Returns `(phases, frequencies)` for `m` subcarriers spread over the band.
/// Complex Gaussian noise of variance `noise_power` is added per subcarrier.
#[allow(clippy::too_many_arguments)]
pub fn subcarrier_phases(
    paths: &[PathParam],
    quad: [usize; 4],
    cb: &Codebook,
    cfg: &ChannelConfig,
    tx: &ArrayConfig,
    rx: &ArrayConfig,
    m: usize,
    noise_power: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>), ChannelError> {
    if !cb.contains(quad) {
        return Err(ChannelError::QuadOutOfRange(quad));
    }
    if m < 2 {
        return Err(ChannelError::Config("need at least 2 subcarriers for ranging".into()));
    }
    let [ta, te, ra, re] = cb.angles(quad);
    let bt = steering_vector(tx, ta, te);
    let br = steering_vector(rx, ra, re);
    let scale = ((rx.len() * tx.len()) as f64).sqrt();
    let freqs = cfg.subcarrier_frequencies(m);
    let mut h = vec![Complex64::new(0.0, 0.0); m];
    for p in paths {
        let Some([pa, pe, qa, qe]) = local_angles(p, tx, rx) else {
            continue;
        };
        let g = p.gain * scale * steering_vector(tx, pa, pe).dotc(&bt) * br.dotc(&steering_vector(rx, qa, qe));
        for (hm, f) in h.iter_mut().zip(&freqs) {
            // α already carries the carrier phase; add the baseband offset
            *hm += g * Complex64::from_polar(1.0, -2.0 * PI * (f - cfg.carrier_hz) * p.delay);
        }
    }
    let mut noise = NoiseSource::new(noise_power, seed);
    let mut phases = Vec::with_capacity(m);
    for (idx, hm) in h.iter().enumerate() {
        let y = hm + noise.next();
        let mag = y.norm();
        if !(mag >= 1e-15) {
            return Err(ChannelError::DegeneratePhase {
                subcarrier: idx,
                magnitude: mag,
            });
        }
        phases.push((-y.arg()).rem_euclid(2.0 * PI));
    }
    Ok((phases, freqs))
}
