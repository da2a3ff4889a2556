use clap::{Args, Parser, Subcommand};
use nalgebra::Vector3;
use serde_json::json;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use willmore_lab::config::RunConfig;
use willmore_lab::geodesics::approximate_surface;
use willmore_lab::metric::{curvature_pack, s_tilde};
use willmore_lab::reduction::solve_auxiliary;
use willmore_lab::spectral::{ricci_integral_identities, SphericalFunction};
use willmore_lab::surface::{surface_geometry, ImmersedSphere};
use willmore_lab::verify::{self, Status};
use willmore_lab::willmore::{energy_of, energy_with_error, epsilon_sweep, euler_lagrange, energy};

const EXIT_INVARIANT: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NO_MAXIMUM: u8 = 3;

#[derive(Parser)]
#[command(name = "willmore-lab", version, about = "Conformal Willmore functional in perturbed Euclidean metrics")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML). Built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, env = "WILLMORE_LAB_THREADS")]
    threads: Option<usize>,
    /// Seed for randomized suites, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Curvature tensors at a point.
    Curvature {
        /// x,y,z
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        point: Vector3<f64>,
    },
    /// Geometry of the configured sphere (standard graph, or the geodesic blend below R2).
    Surface,
    /// Willmore energies of the configured sphere, with an ε sweep when `epsilons` is set.
    Willmore,
    /// Solve the auxiliary equation on the configured sphere.
    SolveW,
    /// Scan Φ over centres and radii and locate maxima.
    Scan {
        /// Exit with status 3 unless an interior maximum above the boundary is found.
        #[arg(long)]
        expect_max: bool,
    },
    /// Möbius invariance of I on random surfaces.
    Invariance {
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 24)]
        l_max: usize,
    },
    /// Run the acceptance checks.
    Verify {
        /// Only these check numbers.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

fn parse_point(s: &str) -> Result<Vector3<f64>, String> {
    let v: Vec<f64> = s.split(',').map(|t| t.trim().parse::<f64>().map_err(|e| e.to_string())).collect::<Result<_, _>>()?;
    if v.len() != 3 {
        return Err(format!("expected x,y,z, got {} values", v.len()));
    }
    Ok(Vector3::new(v[0], v[1], v[2]))
}

/// An error carrying its exit status.
struct Failure(u8, String);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(EXIT_INVARIANT, e.to_string())
    }
}

fn config_error(e: impl std::fmt::Display) -> Failure {
    Failure(EXIT_CONFIG, format!("config error: {e}"))
}

fn write_json(dir: &Path, name: &str, value: &serde_json::Value) -> Result<(), Failure> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(name), serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(Failure(code, msg)) => {
            eprintln!("willmore-lab: {msg}");
            ExitCode::from(code)
        }
    }
}

fn run(cli: Cli) -> Result<u8, Failure> {
    let mut cfg = match &cli.common.config {
        Some(p) => RunConfig::load(p).map_err(config_error)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.common.out {
        cfg.output_dir = o.clone();
    }
    if let Some(n) = cli.common.threads {
        if n == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let out = cfg.output_dir.clone();
    match cli.command {
        Command::Curvature { point } => curvature(&cfg, &point),
        Command::Surface => surface(&cfg),
        Command::Willmore => willmore(&cfg),
        Command::SolveW => solve_w(&cfg),
        Command::Scan { expect_max } => scan(&cfg, &out, expect_max),
        Command::Invariance { pairs, l_max } => {
            let c = verify::moebius_invariance(cfg.seed, pairs, l_max);
            println!("{}", c.line());
            write_json(&out, "invariance.json", &serde_json::to_value(&c)?)?;
            Ok(if c.status == Status::Pass { 0 } else { EXIT_INVARIANT })
        }
        Command::Verify { only } => {
            let ids: Vec<u32> = if only.is_empty() { (1..=10).collect() } else { only };
            if let Some(bad) = ids.iter().find(|&&i| !(1..=10).contains(&i)) {
                return Err(config_error(format!("no check {bad}")));
            }
            let mut checks = vec![];
            for id in ids {
                let c = verify::run_one(&cfg, id);
                println!("{}", c.line());
                for n in &c.notes {
                    println!("       {n}");
                }
                checks.push(c);
            }
            write_json(&out, "verify.json", &json!({ "seed": cfg.seed, "checks": checks }))?;
            let failed = checks.iter().any(|c| c.status == Status::Fail);
            Ok(if failed { EXIT_INVARIANT } else { 0 })
        }
    }
}

fn curvature(cfg: &RunConfig, p: &Vector3<f64>) -> Result<u8, Failure> {
    let m = cfg.metric.metric().map_err(config_error)?;
    let pack = curvature_pack(&m, p, true)?;
    let pert = cfg.metric.perturbation().map_err(config_error)?;
    let st = s_tilde(&pert, p)?;
    let grid = cfg.grid.build();
    // identities hold for any symmetric matrix; the Ricci tensor is the natural input
    let ids = ricci_integral_identities(&grid, &pack.ricci);
    let id_err = ids.iter().map(|i| i.abs_err).fold(0.0, f64::max);
    let sym = pack.symmetry_defect();
    let scale = pack.max_abs_riemann().max(1e-300);
    let ok = sym <= 1e-10 * scale.max(1.0) && id_err < 1e-9 * (1.0 + pack.ricci.amax().powi(2));
    let rows = |m: &nalgebra::Matrix3<f64>| -> Vec<[f64; 3]> { (0..3).map(|i| [m[(i, 0)], m[(i, 1)], m[(i, 2)]]).collect() };
    let report = json!({
        "point": [p.x, p.y, p.z],
        "epsilon": m.epsilon,
        "g": rows(&pack.g),
        "ricci": rows(&pack.ricci),
        "scalar": pack.scalar,
        "traceless_ricci": rows(&pack.traceless),
        "s_norm2": pack.s_norm2(),
        "s_tilde": st,
        "max_abs_riemann": pack.max_abs_riemann(),
        "riemann_symmetry_defect": sym,
        "identity_errors": ids.iter().map(|i| i.abs_err).collect::<Vec<_>>(),
        "invariants_ok": ok,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if ok { 0 } else { EXIT_INVARIANT })
}

fn configured_surface(cfg: &RunConfig, grid: &willmore_lab::spectral::SphereGrid) -> Result<ImmersedSphere, Failure> {
    let m = cfg.metric.metric().map_err(config_error)?;
    let p = Vector3::from(cfg.sphere.center);
    let w = SphericalFunction::zeros(grid.l_max);
    let o = cfg.solver_options();
    Ok(approximate_surface(&m, &p, cfg.sphere.rho, cfg.cutoff.r1, cfg.cutoff.r2, &w, grid, &o.integrator)?)
}

fn surface(cfg: &RunConfig) -> Result<u8, Failure> {
    let m = cfg.metric.metric().map_err(config_error)?;
    let grid = cfg.grid.build();
    let s = configured_surface(cfg, &grid)?;
    let geom = surface_geometry(&m, &s)?;
    let h = geom.mean_curvature();
    let integrand = geom.willmore_integrand();
    let el = euler_lagrange(&m, &grid, &geom, &s)?;
    let (lo, hi) = h.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let report = json!({
        "kind": s.kind,
        "center": cfg.sphere.center,
        "rho": cfg.sphere.rho,
        "area": geom.area(),
        "mean_curvature_min": lo,
        "mean_curvature_max": hi,
        "umbilic_nodes": geom.nodes.iter().filter(|n| n.umbilic).count(),
        "integrand_max": integrand.iter().fold(0.0f64, |a, v| a.max(*v)),
        "el_sup": el.iter().fold(0.0f64, |a, v| a.max(v.abs())),
        "energy": energy_of(&geom, &grid),
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn willmore(cfg: &RunConfig) -> Result<u8, Failure> {
    let m = cfg.metric.metric().map_err(config_error)?;
    let grid = cfg.grid.build();
    let rep = energy_with_error(&m, &grid, |g| configured_surface(cfg, g).map_err(|f| {
        willmore_lab::willmore::WillmoreError::FitIllConditioned(f.1)
    }))?;
    let mut report = json!({ "energy": rep });
    if !cfg.epsilons.is_empty() {
        let pert = cfg.metric.perturbation().map_err(config_error)?;
        let s = ImmersedSphere::standard_graph(&grid, &Vector3::from(cfg.sphere.center), cfg.sphere.rho, &SphericalFunction::zeros(grid.l_max));
        let fit = epsilon_sweep(&pert, &cfg.epsilons, |mm| Ok(energy(mm, &grid, &s)?.i))?;
        report["epsilon_fit"] = serde_json::to_value(&fit)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn solve_w(cfg: &RunConfig) -> Result<u8, Failure> {
    let m = cfg.metric.metric().map_err(config_error)?;
    let grid = cfg.grid.build();
    let s = solve_auxiliary(&m, &grid, &Vector3::from(cfg.sphere.center), cfg.sphere.rho, &cfg.solver_options(), None)?;
    let eps = m.epsilon;
    let report = json!({
        "center": cfg.sphere.center,
        "rho": s.rho,
        "epsilon": eps,
        "phi": s.phi,
        "phi_over_eps2": if eps != 0.0 { s.phi / (eps * eps) } else { 0.0 },
        "iterations": s.iterations,
        "contraction": s.contraction,
        "residual": s.residual,
        "el_norm": s.el_norm(),
        "w_sup": grid.synthesize(&s.w).iter().fold(0.0f64, |a, v| a.max(v.abs())),
        "w_coefficients": s.w.coeffs,
    });
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(0)
}

fn scan(cfg: &RunConfig, out: &Path, expect_max: bool) -> Result<u8, Failure> {
    let (check, result) = if cfg.metric.epsilon() == 0.0 {
        // nothing to find, but the grid is still written
        let m = cfg.metric.metric().map_err(config_error)?;
        let r = willmore_lab::reduction::scan_and_locate(&m, &cfg.grid.build(), &cfg.scan, &cfg.solver_options())?;
        (None, r)
    } else {
        let (c, r) = verify::interior_maximum(cfg);
        match r {
            Some(r) => (Some(c), r),
            None => return Err(Failure(EXIT_INVARIANT, c.summary)),
        }
    };
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join("scan.csv"), result.to_csv())?;
    let interior: Vec<_> = result.interior_maxima().cloned().collect();
    let summary = json!({
        "epsilon": result.epsilon,
        "parameters": result.spec,
        "grid": cfg.grid,
        "cells": result.cells.len(),
        "failed_cells": result.failed_cells,
        "boundary_sup": result.boundary_sup,
        "maxima": result.maxima,
        "interior_maxima": interior.len(),
        "check": check,
    });
    write_json(out, "scan.json", &summary)?;
    match &check {
        Some(c) => println!("{}", c.line()),
        None => println!("{} cells, no perturbation", result.cells.len()),
    }
    if expect_max && interior.is_empty() {
        eprintln!("willmore-lab: no interior maximum above the boundary sup {:e}", result.boundary_sup);
        return Ok(EXIT_NO_MAXIMUM);
    }
    Ok(0)
}
