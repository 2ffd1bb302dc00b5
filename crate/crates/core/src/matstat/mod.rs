//! Numerical kernels shared by the power engine, simulator and fitter.

pub mod dist;
pub mod linalg;
pub mod mvt;
pub mod rng;

pub use dist::{
    central_f_quantile, noncentral_f_cdf, normal_cdf, normal_quantile, student_t_cdf,
    student_t_quantile,
};
pub use linalg::{cholesky, invert_spd, solve_spd, Mat, SpdMatrix, Vector};
pub use mvt::{mvt_rectangle, MvtKind, QmcOptions, RectangleProbability};
pub use rng::RngStream;
