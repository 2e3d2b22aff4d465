//! Connectedness measurement for panels of financial time series.
//!
//! Two complementary views are built from the same vector autoregression:
//!
//! * a Granger-causality network, where an edge `j -> i` means the lags of
//!   `j` jointly enter the equation of `i` at a chosen significance level
//!   (Wald test on the least-squares coefficients);
//! * a connectedness table of row-standardized generalized forecast-error
//!   variance decompositions, with within-group and across-group margins,
//!   and the magnitude-thresholded network derived from it.
//!
//! The pipeline is `ingest -> diagnostics -> var -> {granger, fevd} ->
//! network`, wired together by [`pipeline::run_pipeline`]. [`simulate`]
//! generates synthetic panels from known processes and drives the Monte
//! Carlo checks in the test suites.

pub mod config;
pub mod diagnostics;
pub mod fevd;
pub mod granger;
pub mod ingest;
pub mod network;
pub mod pipeline;
pub mod simulate;
pub mod var;

mod dist;
mod linalg;
mod textio;

pub use dist::chi_square_sf;
pub use textio::{format_full, format_rounded};
