mod common;

use common::*;
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use willmore_lab::geodesics::CutoffFamily;
use willmore_lab::metric::AmbientMetric;
use willmore_lab::reduction::*;
use willmore_lab::spectral::{lm_index, SphereGrid, SphericalFunction};
use willmore_lab::willmore::{energy, ElForm};

fn bump(eps: f64) -> AmbientMetric {
    AmbientMetric::new(default_bump(), eps).unwrap()
}

fn opts() -> SolverOptions {
    SolverOptions { l_max: 16, ..Default::default() }
}

const OFF_AXIS: Vector3<f64> = Vector3::new(0.3, 0.4, 0.2);

#[test]
fn flat_metric_needs_one_step() {
    let grid = SphereGrid::new(24, 16);
    let s = solve_auxiliary(&AmbientMetric::flat(), &grid, &Vector3::new(1.0, 0.0, 0.0), 0.7, &opts(), None).unwrap();
    assert_eq!(s.iterations, 1);
    assert_eq!(s.w.sup_coeff(), 0.0);
    assert!(s.phi.abs() < 1e-14);
}

#[test]
fn solved_w_matches_small_radius_expansion() {
    // w ≈ ρ²(Ric(Θ,Θ)/6 − R/18) up to O(ρ³), which is −2 times the w_expansion field
    let grid = SphereGrid::new(24, 16);
    let m = bump(1e-2);
    let rhos = [0.2, 0.1, 0.05];
    let diffs: Vec<f64> = rhos
        .iter()
        .map(|&rho| {
            let s = solve_auxiliary(&m, &grid, &OFF_AXIS, rho, &opts(), None).unwrap();
            let ex = grid.analyze(&w_expansion(&m, &grid, &OFF_AXIS, rho).unwrap(), 16).project_perp().scale(-2.0);
            sup(&grid.synthesize(&s.w.add_scaled(&ex, -1.0)))
        })
        .collect();
    let (slope, _, _) = loglog(&rhos, &diffs);
    assert!(slope >= 2.7, "slope {slope} {diffs:?}");
}

#[test]
fn energy_along_expansion_direction_is_least_near_minus_two() {
    // I(Σ(c·w)) on a small geodesic sphere, w the w_expansion field; no EL involved
    let grid = SphereGrid::new(24, 16);
    let m = bump(1e-2);
    let rho = 0.05;
    let o = opts();
    let fam = CutoffFamily::new(&m, &OFF_AXIS, rho, &o.cutoff, &grid, &o.integrator).unwrap();
    let w = grid.analyze(&w_expansion(&m, &grid, &OFF_AXIS, rho).unwrap(), 16).project_perp();
    let i = |c: f64| energy(&m, &grid, &fam.surface(&grid, &w.scale(c))).unwrap().i;
    let (a, b, d) = (i(-3.0), i(-2.0), i(-1.0));
    let vertex = -2.0 - 0.5 * (d - a) / (a - 2.0 * b + d);
    assert!((vertex + 2.0).abs() < 0.05, "vertex {vertex}");
    // the expansion field itself is worse than no correction
    assert!(i(1.0) > i(0.0));
}

#[test]
fn w_and_phi_scale_with_epsilon() {
    let grid = SphereGrid::new(24, 16);
    let eps = [4e-3, 2e-3, 1e-3];
    let (mut ws, mut phis) = (vec![], vec![]);
    for &e in &eps {
        let s = solve_auxiliary(&bump(e), &grid, &OFF_AXIS, 1.5, &opts(), None).unwrap();
        ws.push(sup(&grid.synthesize(&s.w)));
        phis.push(s.phi);
    }
    let (sw, _, rw) = loglog(&eps, &ws);
    let (sp, _, rp) = loglog(&eps, &phis);
    assert!((sw - 1.0).abs() < 0.02 && rw > 0.9999, "w slope {sw}");
    assert!((sp - 2.0).abs() < 0.02 && rp > 0.9999, "phi slope {sp}");
}

#[test]
fn far_spheres_see_no_perturbation() {
    let grid = SphereGrid::new(24, 16);
    let s = solve_auxiliary(&bump(0.1), &grid, &Vector3::new(9.0, 0.0, 0.0), 1.0, &opts(), None).unwrap();
    assert!(s.phi.abs() < 1e-20, "{}", s.phi);
}

#[test]
fn restarts_converge_to_the_same_w() {
    let grid = SphereGrid::new(24, 16);
    let m = bump(0.02);
    let o = SolverOptions { tol: 1e-12, ..opts() };
    let base = solve_auxiliary(&m, &grid, &OFF_AXIS, 1.2, &o, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..3 {
        let mut w0 = base.w.clone();
        for l in 2..=6usize {
            for k in -(l as i64)..=(l as i64) {
                w0.coeffs[lm_index(l, k)] += rng.gen_range(-5e-3..5e-3);
            }
        }
        let s = solve_auxiliary(&m, &grid, &OFF_AXIS, 1.2, &o, Some(&w0)).unwrap();
        assert!(sup(&grid.synthesize(&s.w.add_scaled(&base.w, -1.0))) < 1e-8);
        assert!((s.phi - base.phi).abs() < 1e-12);
    }
}

#[test]
fn solver_contracts() {
    let grid = SphereGrid::new(24, 16);
    let s = solve_auxiliary(&bump(0.05), &grid, &OFF_AXIS, 1.0, &opts(), None).unwrap();
    assert!(s.contraction < 0.5, "{}", s.contraction);
    // the gradient is K⁻¹ times the last step, so it sits above the step tolerance
    assert!(s.residual < 1e-6, "{}", s.residual);
    // the solution beats the unperturbed graph
    let o = opts();
    let fam = CutoffFamily::new(&bump(0.05), &OFF_AXIS, 1.0, &o.cutoff, &grid, &o.integrator).unwrap();
    let i0 = energy(&bump(0.05), &grid, &fam.surface(&grid, &SphericalFunction::zeros(16))).unwrap().i;
    assert!(s.phi < i0);
}

#[test]
fn iteration_limit_is_reported() {
    let grid = SphereGrid::new(16, 10);
    let o = SolverOptions { l_max: 10, max_iter: 1, ..Default::default() };
    let r = solve_auxiliary(&bump(0.05), &grid, &OFF_AXIS, 1.0, &o, None);
    assert!(matches!(r, Err(ReductionError::StepLimit(_))), "{r:?}");
}

#[test]
fn phi_has_no_quartic_term_in_rho() {
    let grid = SphereGrid::new(24, 16);
    let m = bump(1e-2);
    let fit = small_rho_fit(&m, &grid, &OFF_AXIS, &log_spaced(0.05, 0.25, 7), &opts()).unwrap();
    // Φ/ρ⁴ at the smallest radius, against the would-be quartic constant
    assert!(fit.phis[0] / fit.rhos[0].powi(4) < 0.01 * fit.predicted, "{fit:?}");
    assert!(fit.c4.abs() < 0.1 * fit.predicted, "{fit:?}");
    // Φ itself is of order ρ⁶
    let (s, _, _) = loglog(&fit.rhos[..4], &fit.phis[..4]);
    assert!((s - 6.0).abs() < 0.3, "slope {s}");
}

#[test]
fn dropping_tangential_ricci_gives_the_quartic_constant() {
    let grid = SphereGrid::new(24, 16);
    let m = bump(1e-2);
    let o = SolverOptions { el_form: ElForm::WithoutTangentialRicci, ..opts() };
    let fit = small_rho_fit(&m, &grid, &Vector3::zeros(), &log_spaced(0.05, 0.25, 7), &o).unwrap();
    assert!(fit.rel_err < 0.05, "{fit:?}");
}

#[test]
fn phi_vanishes_at_second_order_on_the_symmetry_axis() {
    let grid = SphereGrid::new(24, 16);
    let eps = 1e-3;
    let on = solve_auxiliary(&bump(eps), &grid, &Vector3::new(0.6, 0.0, 0.0), 0.8, &opts(), None).unwrap().phi;
    let off = solve_auxiliary(&bump(eps), &grid, &Vector3::new(0.0, 0.6, 0.0), 0.8, &opts(), None).unwrap().phi;
    assert!(off / (eps * eps) > 1e-3);
    assert!(on.abs() < 1e-3 * off.abs(), "{on} {off}");
}

#[test]
fn scan_finds_interior_maxima() {
    let grid = SphereGrid::new(16, 10);
    let spec = ScanSpec {
        bounds: ScanBox { lo: [-3.0; 3], hi: [3.0; 3] },
        rho_min: 0.5,
        rho_max: 2.5,
        n_p: 5,
        n_rho: 4,
        refine_tol: 1e-3,
    };
    let o = SolverOptions { l_max: 10, ..Default::default() };
    let r = scan_and_locate(&bump(1e-2), &grid, &spec, &o).unwrap();
    assert_eq!(r.cells.len(), 5 * 5 * 5 * 4);
    assert!(r.failed_cells == 0);
    let best = r.maxima.iter().map(|m| m.phi).fold(0.0, f64::max);
    assert!(best > 0.0 && best >= r.cells.iter().map(|c| c.phi).fold(0.0, f64::max));
    let csv = r.to_csv();
    assert!(csv.starts_with("px,py,pz,rho,phi,converged,residual\n"));
    assert_eq!(csv.lines().count(), r.cells.len() + 1);
}
