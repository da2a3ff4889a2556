mod common;

use common::*;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use willmore_lab::geodesics::{geodesic_sphere_graph, unit_frame, IntegratorOptions};
use willmore_lab::metric::{curvature_pack, AmbientMetric, MetricPerturbation};
use willmore_lab::spectral::{SphereGrid, SphericalFunction};
use willmore_lab::surface::*;
use willmore_lab::willmore::energy;

fn random_w(rng: &mut ChaCha8Rng, l_max: usize, l_use: usize, amp: f64) -> SphericalFunction {
    let mut w = SphericalFunction::zeros(l_max);
    for l in 2..=l_use {
        for m in -(l as i64)..=(l as i64) {
            w.coeffs[willmore_lab::spectral::lm_index(l, m)] = rng.gen_range(-amp..amp) / (l * l) as f64;
        }
    }
    w
}

#[test]
fn round_sphere_curvatures() {
    let grid = SphereGrid::new(24, 16);
    let s = ImmersedSphere::standard_graph(&grid, &Vector3::new(1.0, -2.0, 0.5), 2.0, &SphericalFunction::zeros(16));
    let g = surface_geometry(&AmbientMetric::flat(), &s).unwrap();
    for n in &g.nodes {
        assert!((n.mean - 1.0).abs() < 1e-12);
        assert!((n.det - 0.25).abs() < 1e-12);
        assert!(n.umbilic);
    }
    assert!((g.area() - 16.0 * std::f64::consts::PI).abs() < 1e-10);
}

#[test]
fn ellipsoid_matches_closed_form() {
    let grid = SphereGrid::new(36, 24);
    let (a, b, c) = (1.0, 1.0, 2.0);
    let s = ImmersedSphere::ellipsoid(&grid, &Vector3::zeros(), &Vector3::new(a, b, c));
    let g = surface_geometry(&AmbientMetric::flat(), &s).unwrap();
    for (x, n) in s.x.iter().zip(&g.nodes) {
        let q = (x.x / (a * a)).powi(2) + (x.y / (b * b)).powi(2) + (x.z / (c * c)).powi(2);
        let abc2 = (a * b * c).powi(2);
        let h = -(x.norm_squared() - a * a - b * b - c * c) / (abc2 * q.powf(1.5));
        let k = 1.0 / (abc2 * q * q);
        assert!((n.mean - h).abs() < 1e-6, "{} {}", n.mean, h);
        assert!((n.det - k).abs() < 1e-6);
        assert!(n.integrand() >= 0.0);
    }
    let i = g.integrate(&g.willmore_integrand());
    assert!(i > 0.1);
}

#[test]
fn node_invariants_in_curved_metric() {
    let grid = SphereGrid::new(24, 16);
    let m = AmbientMetric::new(default_bump(), 0.2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let w = random_w(&mut rng, 16, 8, 0.15);
    let s = ImmersedSphere::standard_graph(&grid, &Vector3::new(0.2, 0.1, -0.3), 0.9, &w);
    let g = surface_geometry(&m, &s).unwrap();
    for (k, n) in g.nodes.iter().enumerate() {
        let scale = n.lambda1.abs().max(n.lambda2.abs());
        assert!((n.mean - n.lambda1 - n.lambda2).abs() < 1e-10 * scale);
        assert!((n.det - n.lambda1 * n.lambda2).abs() < 1e-10 * scale * scale);
        assert!((n.integrand() - 0.25 * (n.lambda1 - n.lambda2).powi(2)).abs() < 1e-10 * scale * scale);
        let gm = m.g(&s.x[k]);
        let ip = |a: &Vector3<f64>, b: &Vector3<f64>| (a.transpose() * gm * b)[0];
        assert!((ip(&n.normal, &n.normal) - 1.0).abs() < 1e-10);
        for t in &s.xi[k] {
            assert!(ip(&n.normal, t).abs() < 1e-10 * t.norm());
        }
        assert!((ip(&n.e1, &n.e1) - 1.0).abs() < 1e-10 && ip(&n.e1, &n.e2).abs() < 1e-10);
        // e₁ is an eigenvector of the shape operator in the frame basis
        let f = &n.frame;
        let (c0, c1) = (ip(&n.e1, &f[0]), ip(&n.e1, &f[1]));
        let r0 = n.a[0] * c0 + n.a[1] * c1 - n.lambda1 * c0;
        let r1 = n.a[1] * c0 + n.a[2] * c1 - n.lambda1 * c1;
        assert!(r0.abs().max(r1.abs()) < 1e-9 * scale);
    }
}

#[test]
fn conformal_factor_leaves_integrand_form_invariant() {
    // (H²/4 − D)dΣ is pointwise conformally invariant
    let grid = SphereGrid::new(24, 16);
    let cm = AmbientMetric::new(MetricPerturbation::conformal_bump(Vector3::new(0.2, 0.0, 0.1), 0.7, 1.0).unwrap(), 0.3)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = random_w(&mut rng, 16, 6, 0.2);
    let s = ImmersedSphere::standard_graph(&grid, &Vector3::new(0.1, 0.3, -0.2), 0.9, &w);
    let gc = surface_geometry(&cm, &s).unwrap();
    let gf = surface_geometry(&AmbientMetric::flat(), &s).unwrap();
    for k in 0..grid.n_nodes() {
        let a = gc.nodes[k].integrand() * gc.d_sigma[k];
        let b = gf.nodes[k].integrand() * gf.d_sigma[k];
        assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} {b}");
    }
}

#[test]
fn spectral_convergence_under_refinement() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let w = random_w(&mut rng, 8, 8, 0.1);
    let m = AmbientMetric::new(default_bump(), 0.1).unwrap();
    let p = Vector3::new(0.0, 0.1, 0.0);
    let i = |n: usize| {
        let grid = SphereGrid::new(n, 8);
        energy(&m, &grid, &ImmersedSphere::standard_graph(&grid, &p, 1.0, &w)).unwrap().i
    };
    let (coarse, fine) = (i(32), i(48));
    assert!((coarse - fine).abs() < 1e-8, "{coarse} {fine}");
}

#[test]
fn small_geodesic_sphere_mean_curvature() {
    // H = 2/ρ − (ρ/3)Ric(Θ,Θ) + O(ρ²), Θ the g-unit shooting direction
    let grid = SphereGrid::new(16, 10);
    let m = AmbientMetric::new(default_bump(), 0.1).unwrap();
    let p = Vector3::new(0.4, 0.3, -0.2);
    let pack = curvature_pack(&m, &p, false).unwrap();
    let e = unit_frame(&m, &p);
    let rhos = [0.2, 0.1, 0.05];
    let mut res = vec![];
    for &rho in &rhos {
        let g = geodesic_sphere_graph(&m, &p, rho, &grid, &IntegratorOptions::default()).unwrap();
        let mut jets = grid.synthesize_jets(&g.v.scale(-1.0));
        jets.f = g.values.iter().map(|v| 1.0 - v).collect();
        let s = ImmersedSphere::radial_graph(&grid, &p, rho, &g.frame, &jets, SurfaceKind::GeodesicGraph, None);
        let geom = surface_geometry(&m, &s).unwrap();
        let worst = (0..grid.n_nodes())
            .map(|k| {
                let th = e * grid.direction(k);
                let ric = (th.transpose() * pack.ricci * th)[0];
                (geom.nodes[k].mean - 2.0 / rho + rho / 3.0 * ric).abs()
            })
            .fold(0.0, f64::max);
        res.push(worst);
    }
    let (slope, _, _) = loglog(&rhos, &res);
    assert!(slope >= 2.0 - 0.05, "slope {slope} residuals {res:?}");
}

#[test]
fn degenerate_and_ambiguous_inputs() {
    let grid = SphereGrid::new(12, 8);
    let mut s = ImmersedSphere::standard_graph(&grid, &Vector3::zeros(), 1.0, &SphericalFunction::zeros(8));
    s.xi[7][1] = s.xi[7][0] * 2.0;
    assert!(matches!(
        surface_geometry(&AmbientMetric::flat(), &s),
        Err(SurfaceError::DegenerateImmersion { node: 7, .. })
    ));
    let mut s = ImmersedSphere::standard_graph(&grid, &Vector3::zeros(), 1.0, &SphericalFunction::zeros(8));
    s.graph.as_mut().unwrap().p = Vector3::new(3.0, 0.0, 0.0);
    assert!(matches!(
        surface_geometry(&AmbientMetric::flat(), &s),
        Err(SurfaceError::OrientationAmbiguous { .. })
    ));
}

#[test]
fn graph_spheres_have_w_at_least_4pi() {
    let grid = SphereGrid::new(36, 24);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let w = random_w(&mut rng, 24, 6, 0.4);
        assert!(sup(&grid.synthesize(&w)) <= 0.2);
        let s = ImmersedSphere::standard_graph(&grid, &Vector3::zeros(), 1.0, &w);
        let e = energy(&AmbientMetric::flat(), &grid, &s).unwrap();
        assert!(e.w >= 4.0 * std::f64::consts::PI - 1e-9, "{}", e.w);
        // Gauss–Bonnet: W − I = ∫D = 4π
        assert!((e.w - e.i - 4.0 * std::f64::consts::PI).abs() < 1e-6);
    }
}
