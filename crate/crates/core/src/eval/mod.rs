//! Image metrics and the squared-norm gaussianization statistic.

mod image;
mod stats;

pub use image::{lr_consistency, ms_ssim, psnr, ssim, SsimParams, PSNR_CAP};
pub use stats::{
    chi2_cdf, gaussianization_report, ks_pvalue, ks_statistic, ln_gamma, regularized_gamma_p,
    squared_norm_report, GaussianizationReport, KS_ALPHA,
};

/// Per-result metrics as they appear in the CSV.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub psnr: f64,
    pub ssim: f64,
    pub ms_ssim: Option<f64>,
    pub lr_consistency_l1: f64,
    /// Mean flow log-density of the result rows.
    pub density_score: f64,
    /// Mean `|F(w_i)|^2` over the result rows.
    pub norm_stat: f64,
}
