//! Radio environment maps for UAV corridors: two-ray channel synthesis,
//! 3D shadow-fading correlation, Kriging and matrix-completion interpolators,
//! and an RMSE benchmarking harness.

pub mod channel;
pub mod correlation;
pub mod eval;
pub mod geo;
pub mod kriging;
pub mod matcomp;
pub mod par;
