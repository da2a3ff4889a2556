//! Numerical workbench for the conformal Willmore functional
//! I = ∫(H²/4 − D) dΣ in metrics g_ε = δ + εh on R³.

pub mod metric;
pub mod spectral;
pub mod geodesics;
pub mod surface;
pub mod willmore;
pub mod fit;
pub mod reduction;
pub mod config;
pub mod verify;
