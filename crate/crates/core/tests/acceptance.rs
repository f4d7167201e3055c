//! Acceptance suite: one PASS/FAIL line per primary criterion, written
//! straight to stderr so it shows without `--nocapture`. Tolerances are the
//! constants below; the test fails if any criterion does.

mod common;

use std::collections::BTreeSet;
use std::f64::consts::PI;
use std::io::Write;
use std::time::Instant;

use isac_recon::channel::*;
use isac_recon::experiment::*;
use isac_recon::geometry::{angles_of, direction, wrap_angle, SPEED_OF_LIGHT};
use isac_recon::localization::*;
use isac_recon::raytrace::{trace_paths, PathParam, TraceConfig};
use isac_recon::scene::{box_walls, build_scene, SceneSpec, UserSpec};
use isac_recon::selection::*;
use isac_recon::surface::{fit_surface, SurfaceModel};
use isac_recon::{Cubic, Vec3};
use ndarray::Array4;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const ABLATION_RMSE_MAX: f64 = 0.1;
const ABLATION_RATIO_MIN: f64 = 5.0;
const ABLATION_SECONDS_MAX: f64 = 300.0;
const RANGE_EXACT_TOL: f64 = 1e-9;
const RANGE_NOISY_TOL: f64 = 0.5;
const RANGE_NOISY_MIN_HITS: usize = 95;
const TRIANGULATION_EXACT_TOL: f64 = 1e-9;
const TRIANGULATION_GRID_TOL: f64 = 1e-3;
const PLANE_COEFF_TOL: f64 = 1e-9;
const CUBIC_RMS_MAX: f64 = 0.03;
const COVERAGE_GAIN_MIN: f64 = 0.10;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, name: &str, o: &Outcome) {
    let verdict = if o.pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr();
    writeln!(err, "criterion {n} [{name}]: {verdict} — {}", o.detail).unwrap();
}

fn link() -> Link {
    let cfg = ExperimentConfig::default();
    Link {
        bs_id: 0,
        bs: Vec3::new(-9.0, 0.0, 3.0),
        tx: ArrayConfig::new(cfg.bs_array.rows, cfg.bs_array.cols, Boresight::PlusX),
        rx: ArrayConfig::new(cfg.user_array.rows, cfg.user_array.cols, Boresight::MinusX),
    }
}

fn path_at(l: &Link, local: [f64; 4], length: f64, gain: Complex64) -> PathParam {
    let (aaz, ael) = l.rx.boresight.to_local(local[2], local[3]);
    PathParam {
        gain,
        delay: length / SPEED_OF_LIGHT,
        aod_az: local[0],
        aod_el: local[1],
        aoa_az: aaz,
        aoa_el: ael,
        order: 0,
        reflection_points: vec![],
    }
}

fn fmt_rmse(r: Option<f64>) -> String {
    r.map_or("no-points".into(), |v| format!("{v:.3}"))
}

fn factor_ablation() -> Outcome {
    let start = Instant::now();
    let cfg = ExperimentConfig::with_preset(Preset::DefaultRoom);
    let rows = {
        let sim = simulate(&cfg).expect("default room simulates");
        run_ablation(&sim)
    };
    let secs = start.elapsed().as_secs_f64();
    let rmse = |short: &str| {
        let label = FactorMask::parse(short).expect("valid factor list").label();
        rows.iter().find(|r| r.factors == label).and_then(|r| r.rmse)
    };
    let all = rmse("all");
    let none = rmse("none");
    let singles = ["c", "r", "p"].map(rmse);
    let pairs = ["c+r", "c+p", "r+p"].map(rmse);
    let all_ok = all.is_some_and(|a| a <= ABLATION_RMSE_MAX);
    let ratio = match (none, all) {
        (Some(n), Some(a)) if a > 0.0 => n / a,
        _ => 0.0,
    };
    let order_ok = pairs.iter().all(|p| singles.iter().all(|s| matches!((p, s), (Some(p), Some(s)) if p <= s)));
    let table: Vec<String> = rows.iter().map(|r| format!("{}={}({})", r.factors, fmt_rmse(r.rmse), r.points)).collect();
    Outcome {
        pass: all_ok && ratio >= ABLATION_RATIO_MIN && order_ok && secs <= ABLATION_SECONDS_MAX,
        detail: format!(
            "rmse_all≤{ABLATION_RMSE_MAX}: {all_ok}, none/all={ratio:.2} (≥{ABLATION_RATIO_MIN}), pairs≤singles: {order_ok}, {secs:.0}s; {}",
            table.join(" ")
        ),
    }
}

fn power_map_argmax() -> Outcome {
    let l = link();
    let cb = Codebook::from_spec(&CodebookSpec::default()).unwrap();
    let shape = cb.shape();
    let cfg = ChannelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut hits = 0;
    for seed in 0..100u64 {
        let quad = shape.map(|n| rng.random_range(0..n));
        let p = path_at(&l, cb.angles(quad), rng.random_range(3.0..60.0), Complex64::from_polar(1e-4, rng.random_range(0.0..2.0 * PI)));
        let pm = power_map_from_paths(&[p], &cfg, &cb, &l.tx, &l.rx, 0.0, seed).unwrap();
        let (best, _) = pm
            .data
            .indexed_iter()
            .fold(((0, 0, 0, 0), f64::MIN), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
        if [best.0, best.1, best.2, best.3] == quad && pm.argmax() == quad {
            hits += 1;
        }
    }
    Outcome {
        pass: hits == 100,
        detail: format!("{hits}/100 argmax at the true quad"),
    }
}

fn otsu_oracle_equality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut random_ok = 0;
    for _ in 0..50 {
        let n = rng.random_range(10..500);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0f64).powi(rng.random_range(1..5))).collect();
        let th = otsu_threshold(&values, 256).unwrap();
        if th.level == common::otsu_oracle(&common::histogram(&values, 256)) {
            random_ok += 1;
        }
    }
    let mut bimodal_ok = 0;
    for _ in 0..10 {
        let mut hist = vec![0u64; 256];
        let (m1, m2) = (rng.random_range(5..100), rng.random_range(150..250));
        for (m, w) in [(m1, rng.random_range(200..2000)), (m2, rng.random_range(20..500))] {
            for d in -4i64..=4 {
                hist[(m as i64 + d) as usize] += w / (1 + d.unsigned_abs());
            }
        }
        let t = otsu_level(&hist);
        if t == common::otsu_oracle(&hist) && t > m1 && t <= m2 {
            bimodal_ok += 1;
        }
    }
    Outcome {
        pass: random_ok == 50 && bimodal_ok == 10,
        detail: format!("random {random_ok}/50, bimodal {bimodal_ok}/10"),
    }
}

fn connected_components() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut ok = 0;
    for _ in 0..200 {
        let density = rng.random_range(0.05..0.7);
        let pb = Array4::from_shape_fn((6, 6, 6, 6), |_| u8::from(rng.random_bool(density)));
        let pm = pb.mapv(|x| x as f64);
        let got: BTreeSet<BTreeSet<[usize; 4]>> = connected_domains(&pb, &pm)
            .into_iter()
            .map(|d| d.cells.into_iter().collect())
            .collect();
        if got == common::flood_fill(&pb) {
            ok += 1;
        }
    }
    Outcome {
        pass: ok == 200,
        detail: format!("{ok}/200 partitions equal to flood fill"),
    }
}

fn ranging() -> Outcome {
    let rcfg = RangingConfig::default();
    let ccfg = ChannelConfig::default();
    let freqs = ccfg.subcarrier_frequencies(rcfg.subcarriers);
    let mut worst_exact: f64 = 0.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let k = rng.random_range(0..((rcfg.d_max - rcfg.d_min) / rcfg.step) as usize);
        let d0 = rcfg.d_min + k as f64 * rcfg.step;
        let offset = rng.random_range(-PI..PI);
        let phases: Vec<f64> = freqs.iter().map(|f| (2.0 * PI * f * d0 / SPEED_OF_LIGHT + offset).rem_euclid(2.0 * PI)).collect();
        let d = estimate_range(&phases, &freqs, &rcfg).unwrap();
        worst_exact = worst_exact.max((d - d0).abs());
    }
    // 20 dB: beamformed phases of a line-of-sight path on the codebook grid
    let l = link();
    let cb = Codebook::from_spec(&CodebookSpec::default()).unwrap();
    let [na, ne, _, _] = cb.shape();
    let mut hits = 0;
    for seed in 0..100u64 {
        let quad = [rng.random_range(0..na), rng.random_range(0..ne), 0, 0];
        let [ta, te, _, _] = cb.angles(quad);
        let d0 = rng.random_range(3.0..40.0);
        let p = PathParam {
            gain: Complex64::from_polar(1e-4, rng.random_range(0.0..2.0 * PI)),
            delay: d0 / SPEED_OF_LIGHT,
            aod_az: ta,
            aod_el: te,
            aoa_az: wrap_angle(PI + ta),
            aoa_el: PI - te,
            order: 0,
            reflection_points: vec![],
        };
        let local = local_angles(&p, &l.tx, &l.rx).unwrap();
        let rq = [
            quad[0],
            quad[1],
            cb.rx_az.iter().position(|a| (a - local[2]).abs() < 1e-12).unwrap(),
            cb.rx_el.iter().position(|a| (a - local[3]).abs() < 1e-12).unwrap(),
        ];
        let noise = noise_power_for_snr(std::slice::from_ref(&p), &l.tx, &l.rx, 20.0);
        let (ph, f) = subcarrier_phases(std::slice::from_ref(&p), rq, &cb, &ccfg, &l.tx, &l.rx, rcfg.subcarriers, noise, seed).unwrap();
        if (estimate_range(&ph, &f, &rcfg).unwrap() - d0).abs() <= RANGE_NOISY_TOL {
            hits += 1;
        }
    }
    Outcome {
        pass: worst_exact <= RANGE_EXACT_TOL && hits >= RANGE_NOISY_MIN_HITS,
        detail: format!(
            "noiseless worst error {worst_exact:.1e} m (≤{RANGE_EXACT_TOL:.0e}), 20 dB within {RANGE_NOISY_TOL} m: {hits}/100 (≥{RANGE_NOISY_MIN_HITS})"
        ),
    }
}

fn triangulation() -> Outcome {
    let scene = build_scene(&SceneSpec {
        walls: box_walls([-10.0, -10.0, 0.0], [10.0, 10.0, 5.0]),
        base_stations: vec![[-9.0, 0.0, 3.0]],
        users: UserSpec::default(),
        clearance: 0.1,
    })
    .unwrap();
    let bs = scene.base_stations()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut exact_n, mut worst_exact): (usize, f64) = (0, 0.0);
    while exact_n < 200 {
        let u = Vec3::new(rng.random_range(-8.0..8.0), rng.random_range(-8.0..8.0), rng.random_range(0.5..2.5));
        for p in trace_paths(&scene, &bs, &u, &TraceConfig::default()).unwrap() {
            if p.order == 1 {
                let (q, _) = reflection_point(&bs, &u, (p.aod_az, p.aod_el), (p.aoa_az, p.aoa_el)).unwrap();
                worst_exact = worst_exact.max((q - p.reflection_points[0]).norm());
                exact_n += 1;
            }
        }
    }
    // departure on the codebook grid, bounce off y = +10; the mirrored
    // receiver grid holds the arrival angles too
    let l = link();
    let cb = Codebook::from_spec(&CodebookSpec::default()).unwrap();
    let (mut grid_n, mut worst_grid): (usize, f64) = (0, 0.0);
    let mut tries = 0;
    while grid_n < 100 && tries < 100_000 {
        tries += 1;
        let (i, j) = (rng.random_range(cb.tx_az.len() / 2 + 5..cb.tx_az.len()), rng.random_range(0..cb.tx_el.len()));
        let dir = direction(cb.tx_az[i], cb.tx_el[j]);
        let hit = l.bs + dir * ((10.0 - l.bs.y) / dir.y);
        let bounced = Vec3::new(dir.x, -dir.y, dir.z);
        let user = hit + bounced * rng.random_range(2.0..12.0);
        if user.z < 0.2 || user.x > 9.5 || user.y < -9.5 {
            continue;
        }
        let (aaz, ael) = angles_of(&(-bounced));
        let (ra, re) = l.rx.boresight.to_local(aaz, ael);
        let (Some(p), Some(q)) = (cb.rx_az.iter().position(|a| (a - ra).abs() < 1e-9), cb.rx_el.iter().position(|a| (a - re).abs() < 1e-9)) else {
            continue;
        };
        let (aod, aoa) = l.global_angles(cb.angles([i, j, p, q]));
        let (est, _) = reflection_point(&l.bs, &user, aod, aoa).unwrap();
        worst_grid = worst_grid.max((est - hit).norm());
        grid_n += 1;
    }
    Outcome {
        pass: worst_exact <= TRIANGULATION_EXACT_TOL && grid_n == 100 && worst_grid <= TRIANGULATION_GRID_TOL,
        detail: format!(
            "traced order-1: worst {worst_exact:.1e} m over {exact_n} (≤{TRIANGULATION_EXACT_TOL:.0e}); on-grid codebook: worst {worst_grid:.1e} m over {grid_n} (≤{TRIANGULATION_GRID_TOL:.0e})"
        ),
    }
}

/// RMS gap between a fitted surface and the true cubic on an `n × n` grid
/// spanning the fit domain.
fn domain_rms(m: &SurfaceModel, truth: &Cubic, n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            let u = m.u_range[0] + (m.u_range[1] - m.u_range[0]) * i as f64 / (n - 1) as f64;
            let v = m.v_range[0] + (m.v_range[1] - m.v_range[0]) * j as f64 / (n - 1) as f64;
            acc += (m.eval(u, v) - truth.eval(u, v)).powi(2);
        }
    }
    (acc / (n * n) as f64).sqrt()
}

fn surface_fitting() -> Outcome {
    let mut plane = Vec::new();
    for i in 0..10 {
        for j in 0..10 {
            let (x, y) = (i as f64 - 4.5, j as f64 * 0.7 - 3.0);
            plane.push(Vec3::new(x, y, 1.5 - 0.4 * x + 0.25 * y));
        }
    }
    let want = [1.5, -0.4, 0.25, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    let m = fit_surface(&plane).unwrap();
    let plane_err = m.coefficients.0.iter().zip(want).map(|(c, w)| (c - w).abs()).fold(0.0, f64::max);

    let truth = Cubic([0.5, 0.2, -0.3, 0.05, -0.04, 0.03, 0.01, -0.005, 0.004, -0.002]);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let pts: Vec<Vec3> = (0..400)
        .map(|_| {
            let (x, y) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            Vec3::new(x, y, truth.eval(x, y) + noise.sample(&mut rng))
        })
        .collect();
    let fit = fit_surface(&pts).unwrap();
    let rms = domain_rms(&fit, &truth, 50);
    Outcome {
        pass: plane_err <= PLANE_COEFF_TOL && rms <= CUBIC_RMS_MAX,
        detail: format!("plane coefficient error {plane_err:.1e} (≤{PLANE_COEFF_TOL:.0e}); noisy cubic RMS {rms:.4} m (≤{CUBIC_RMS_MAX})"),
    }
}

fn blind_spot_fill() -> Outcome {
    let cfg = ExperimentConfig::with_preset(Preset::ConcavePocket);
    let report = {
        let sim = simulate(&cfg).expect("pocket scene simulates");
        run_multi_bs(&sim, FactorMask::ALL).expect("two base stations").0
    };
    let best = report.per_bs_coverage.iter().cloned().fold(0.0, f64::max);
    let gain = report.merged_coverage - best;
    Outcome {
        pass: gain >= COVERAGE_GAIN_MIN && report.merged_coverage > best,
        detail: format!(
            "coverage per BS {:?}, merged {:.4}, gain {:.1} pp (≥{:.0} pp); points {:?} → {}",
            report.per_bs_coverage.iter().map(|c| format!("{c:.4}")).collect::<Vec<_>>(),
            report.merged_coverage,
            100.0 * gain,
            100.0 * COVERAGE_GAIN_MIN,
            report.per_bs_points,
            report.merged_points
        ),
    }
}

type Criterion = (&'static str, fn() -> Outcome);

#[test]
fn primary_criteria() {
    let criteria: [Criterion; 8] = [
        ("factor ablation", factor_ablation),
        ("power-map argmax", power_map_argmax),
        ("Otsu oracle", otsu_oracle_equality),
        ("connected components", connected_components),
        ("ranging", ranging),
        ("triangulation", triangulation),
        ("surface fitting", surface_fitting),
        ("two-BS blind-spot fill", blind_spot_fill),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let o = run();
        report(i + 1, name, &o);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
