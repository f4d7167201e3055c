use isac_recon::localization::{EstimatedPoint, PointSet};
use isac_recon::scene::{box_walls, build_scene, SceneSpec, UserSpec};
use isac_recon::surface::*;
use isac_recon::{Axis, Cubic, Vec3};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn grid(n: usize, lo: f64, hi: f64, f: impl Fn(f64, f64) -> f64) -> Vec<Vec3> {
    let mut out = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            let y = lo + (hi - lo) * j as f64 / (n - 1) as f64;
            out.push(Vec3::new(x, y, f(x, y)));
        }
    }
    out
}

fn residual_rms(points: &[Vec3], c: &Cubic) -> f64 {
    (points.iter().map(|p| (p.z - c.eval(p.x, p.y)).powi(2)).sum::<f64>() / points.len() as f64).sqrt()
}

/// Single-shot least squares over all ten monomials (SVD), raw coordinates.
fn global_ls(points: &[Vec3]) -> Cubic {
    let a = DMatrix::from_fn(points.len(), 10, |i, j| Cubic::monomials(points[i].x, points[i].y)[j]);
    let b = DVector::from_iterator(points.len(), points.iter().map(|p| p.z));
    let x = a.svd(true, true).solve(&b, 1e-14).unwrap();
    Cubic(std::array::from_fn(|k| x[k]))
}

fn blob(rng: &mut ChaCha8Rng, centre: Vec3, n: usize, spread: f64) -> Vec<Vec3> {
    (0..n)
        .map(|_| centre + Vec3::new(rng.random_range(-spread..spread), rng.random_range(-spread..spread), rng.random_range(-spread..spread)))
        .collect()
}

#[test]
fn plane_is_recovered_exactly() {
    let pts = grid(8, -3.0, 3.0, |x, y| 1.0 + 2.0 * x - y);
    let m = fit_surface(&pts).unwrap();
    let want = [1.0, 2.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    for (c, w) in m.coefficients.0.iter().zip(want) {
        assert!((c - w).abs() < 1e-9, "{:?}", m.coefficients);
    }
    assert!(m.rms < 1e-9);
    assert_eq!(m.count, 64);
}

#[test]
fn staged_fit_of_parabola_matches_global_least_squares() {
    let pts = grid(15, -2.0, 2.0, |x, _| x * x);
    let single = fit_staged(&pts, Axis::Z, 1, 0.0).unwrap();
    let full = fit_surface(&pts).unwrap();
    let oracle = global_ls(&pts);
    let (r1, rs, rg) = (residual_rms(&pts, &single.coefficients), residual_rms(&pts, &full.coefficients), residual_rms(&pts, &oracle));
    assert!(rs <= r1 + 1e-12, "staged {rs} vs one pass {r1}");
    assert!(rs + 1e-12 >= rg, "staged {rs} below global optimum {rg}");
    assert!((full.coefficients.0[3] - 1.0).abs() < 1e-6, "{:?}", full.coefficients);
}

#[test]
fn noisy_cubic_stays_close_to_truth() {
    let truth = Cubic([0.5, 0.2, -0.3, 0.05, -0.04, 0.03, 0.01, -0.005, 0.004, -0.002]);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let noise = Normal::new(0.0, 0.01).unwrap();
    let pts: Vec<Vec3> = (0..400)
        .map(|_| {
            let (x, y) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            Vec3::new(x, y, truth.eval(x, y) + noise.sample(&mut rng))
        })
        .collect();
    let m = fit_surface(&pts).unwrap();
    // RMS deviation from the true surface over a dense grid of the fit domain
    let mut acc = 0.0;
    let n = 50;
    for i in 0..n {
        for j in 0..n {
            let u = m.u_range[0] + (m.u_range[1] - m.u_range[0]) * i as f64 / (n - 1) as f64;
            let v = m.v_range[0] + (m.v_range[1] - m.v_range[0]) * j as f64 / (n - 1) as f64;
            acc += (m.eval(u, v) - truth.eval(u, v)).powi(2);
        }
    }
    let rms = (acc / (n * n) as f64).sqrt();
    assert!(rms <= 0.03, "{rms}");
}

#[test]
fn vertical_walls_use_a_horizontal_axis() {
    let pts: Vec<Vec3> = grid(6, 0.0, 4.0, |_, _| 0.0).iter().map(|p| Vec3::new(10.0, p.x - 2.0, p.y)).collect();
    assert!(matches!(fit_surface(&pts), Err(SurfaceError::Degenerate { stage: 1, .. })));
    let m = fit_surface_auto(&pts).unwrap();
    assert_eq!(m.axis, Axis::X);
    assert!((m.coefficients.0[0] - 10.0).abs() < 1e-9);
    for s in m.samples(0.5) {
        assert!((s.x - 10.0).abs() < 1e-9);
    }
    assert!(stage1_condition(&pts, Axis::X) < stage1_condition(&pts, Axis::Y));
}

#[test]
fn too_few_points_is_an_error() {
    let pts = grid(3, 0.0, 1.0, |x, y| x + y);
    assert!(matches!(fit_surface(&pts), Err(SurfaceError::TooFewPoints { need: 10, got: 9 })));
}

#[test]
fn samples_cover_the_fit_domain() {
    let pts = grid(6, -1.0, 1.0, |x, y| x - y);
    let m = fit_surface(&pts).unwrap();
    let s = m.samples(0.5);
    assert_eq!(s.len(), 25);
    assert!(s.iter().all(|p| (p.z - (p.x - p.y)).abs() < 1e-9));
    assert!(s.iter().any(|p| p.x == -1.0 && p.y == -1.0) && s.iter().any(|p| p.x == 1.0 && p.y == 1.0));
}

#[test]
fn kmeans_separates_blobs_and_never_raises_inertia() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut pts = blob(&mut rng, Vec3::new(0.0, 0.0, 0.0), 40, 0.5);
    pts.extend(blob(&mut rng, Vec3::new(10.0, 0.0, 0.0), 40, 0.5));
    let km = kmeans(&pts, 2, 1, 100).unwrap();
    assert!(km.inertia_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9), "{:?}", km.inertia_trace);
    let first = km.assignment[0];
    assert!(km.assignment[..40].iter().all(|&a| a == first));
    assert!(km.assignment[40..].iter().all(|&a| a != first));
    let one = kmeans(&pts, 1, 1, 10).unwrap();
    let mean = pts.iter().sum::<Vec3>() / pts.len() as f64;
    assert!((one.centroids[0] - mean).norm() < 1e-9);
    assert!(matches!(kmeans(&pts[..2], 3, 1, 10), Err(SurfaceError::Clusters { .. })));
}

#[test]
fn silhouette_picks_the_blob_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pts = Vec::new();
    for c in [Vec3::new(0.0, 0.0, 0.0), Vec3::new(8.0, 0.0, 0.0), Vec3::new(0.0, 8.0, 1.0)] {
        pts.extend(blob(&mut rng, c, 30, 0.6));
    }
    assert_eq!(choose_k(&pts, 8, 1).unwrap(), 3);
    let km = kmeans(&pts, 3, 1, 100).unwrap();
    assert!(silhouette(&pts, &km.assignment, 3) > 0.8);
}

#[test]
fn rmse_against_scene_walls() {
    let scene = build_scene(&SceneSpec {
        walls: box_walls([-10.0, -10.0, 0.0], [10.0, 10.0, 5.0]),
        base_stations: vec![[0.0, 0.0, 1.0]],
        users: UserSpec::default(),
        clearance: 0.1,
    })
    .unwrap();
    let at = |x: f64, y: f64| EstimatedPoint { position: Vec3::new(x, y, 2.0), user: 0, bs: 0, domain: None, residual: 0.0 };
    let ps = PointSet { points: vec![at(0.0, 9.7), at(0.0, -10.4), at(9.9, 0.0)] };
    let want = ((0.09 + 0.16 + 0.01) / 3.0f64).sqrt();
    assert!((point_set_rmse(&ps, &scene).unwrap() - want).abs() < 1e-9);
    assert!(point_set_rmse(&PointSet::default(), &scene).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn shifting_along_the_fit_axis_shifts_only_the_constant(shift in -50.0f64..50.0, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: [f64; 10] = std::array::from_fn(|_| rng.random_range(-0.5..0.5));
        let pts = grid(7, -2.0, 2.0, |x, y| Cubic(c).eval(x, y));
        let moved: Vec<Vec3> = pts.iter().map(|p| p + Vec3::new(0.0, 0.0, shift)).collect();
        let a = fit_surface(&pts).unwrap();
        let b = fit_surface(&moved).unwrap();
        prop_assert!((b.coefficients.0[0] - a.coefficients.0[0] - shift).abs() < 1e-6);
        for k in 1..10 {
            prop_assert!((b.coefficients.0[k] - a.coefficients.0[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn exact_cubics_are_reproduced(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c: [f64; 10] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let pts = grid(8, -1.5, 1.5, |x, y| Cubic(c).eval(x, y));
        let m = fit_surface(&pts).unwrap();
        prop_assert!(m.rms < 1e-8, "rms {}", m.rms);
    }

    #[test]
    fn kmeans_inertia_is_monotone(seed in 0u64..500, k in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec3> = (0..60).map(|_| Vec3::new(rng.random_range(0.0..10.0), rng.random_range(0.0..10.0), rng.random_range(0.0..3.0))).collect();
        let km = kmeans(&pts, k, seed, 200).unwrap();
        prop_assert!(km.inertia_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)));
        prop_assert_eq!(km.assignment.len(), 60);
        prop_assert!(km.assignment.iter().all(|&a| a < k));
    }
}
