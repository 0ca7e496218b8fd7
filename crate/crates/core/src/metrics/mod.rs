//! Image quality metrics, paired significance tests and report tables.

pub mod image;
pub mod report;
pub mod ttest;

pub use image::{nrmse, ssim, ssim_with_range};
pub use report::{aggregate_report, mean_std, MethodMetrics, Metric, MetricsReport, ReportRow};
pub use ttest::{ks_distance_uniform, paired_t_test, TTest};
