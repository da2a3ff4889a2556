//! Φ_ε(p, ρ)/ε² along ρ for a centre next to the default bump.
//!
//!     cargo run --release --example phi_profile -- 0.0 1.0 0.0

use nalgebra::{Matrix3, Vector3};
use willmore_lab::metric::{AmbientMetric, MetricPerturbation};
use willmore_lab::reduction::{log_spaced, solve_auxiliary, SolverOptions};
use willmore_lab::spectral::SphereGrid;

fn main() {
    let args: Vec<f64> = std::env::args().skip(1).map(|a| a.parse().expect("centre coordinate")).collect();
    let p = match args.as_slice() {
        [x, y, z] => Vector3::new(*x, *y, *z),
        [] => Vector3::new(0.0, 1.0, 0.0),
        _ => panic!("usage: phi_profile [x y z]"),
    };
    let eps = 5e-3;
    let bump = MetricPerturbation::gaussian_bump(Vector3::zeros(), 1.0, Matrix3::from_diagonal(&Vector3::new(1.0, 0.0, 0.0)))
        .expect("valid bump");
    let metric = AmbientMetric::new(bump, eps).expect("ε in range");
    let grid = SphereGrid::new(24, 16);
    let opts = SolverOptions { l_max: 16, ..Default::default() };
    println!("{:>8} {:>14} {:>6}", "rho", "phi/eps^2", "iters");
    for rho in log_spaced(0.1, 3.0, 12) {
        match solve_auxiliary(&metric, &grid, &p, rho, &opts, None) {
            Ok(s) => println!("{rho:>8.4} {:>14.6e} {:>6}", s.phi / (eps * eps), s.iterations),
            Err(e) => println!("{rho:>8.4} failed: {e}"),
        }
    }
}
