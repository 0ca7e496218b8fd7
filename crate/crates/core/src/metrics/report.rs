//! Per-method summaries with paired tests against a baseline.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::ttest::paired_t_test;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Nrmse,
    Ssim,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::Nrmse, Metric::Ssim];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Nrmse => "nrmse",
            Metric::Ssim => "ssim",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nrmse" => Ok(Metric::Nrmse),
            "ssim" => Ok(Metric::Ssim),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

/// Per-slice values of one method, in slice order.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodMetrics {
    pub method: String,
    pub nrmse: Vec<f64>,
    pub ssim: Vec<f64>,
}

impl MethodMetrics {
    pub fn values(&self, metric: Metric) -> &[f64] {
        match metric {
            Metric::Nrmse => &self.nrmse,
            Metric::Ssim => &self.ssim,
        }
    }
}

/// One line of the summary. `t`/`p` are absent when fewer than two slices
/// are available.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub t_vs_baseline: Option<f64>,
    pub p_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub baseline: String,
    pub methods: Vec<MethodMetrics>,
    pub rows: Vec<ReportRow>,
}

pub const REPORT_CSV_HEADER: &str = "method,metric,mean,std,t_vs_baseline,p_vs_baseline";

/// Sample mean and standard deviation (`n - 1` denominator, 0 for `n < 2`).
pub fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summaries for every method and metric, each tested against `baseline`.
pub fn aggregate_report(methods: Vec<MethodMetrics>, baseline: &str) -> Result<MetricsReport> {
    let base = methods
        .iter()
        .find(|m| m.method == baseline)
        .ok_or_else(|| Error::InvalidArgument(format!("baseline method {baseline:?} not present")))?
        .clone();
    let n = base.nrmse.len();
    if n == 0 {
        return Err(Error::InvalidArgument("no slices to report".into()));
    }
    for m in &methods {
        if m.method.contains(',') {
            return Err(Error::InvalidArgument(format!("method name {:?} contains a comma", m.method)));
        }
        if m.nrmse.len() != n || m.ssim.len() != n {
            return Err(Error::InvalidArgument(format!(
                "method {:?} has {}/{} values, expected {n} (paired design)",
                m.method,
                m.nrmse.len(),
                m.ssim.len()
            )));
        }
    }
    let mut rows = Vec::new();
    for m in &methods {
        for metric in Metric::ALL {
            let (mean, std) = mean_std(m.values(metric));
            let test = if n >= 2 {
                Some(paired_t_test(m.values(metric), base.values(metric))?)
            } else {
                None
            };
            rows.push(ReportRow {
                method: m.method.clone(),
                metric,
                mean,
                std,
                t_vs_baseline: test.map(|t| t.t),
                p_vs_baseline: test.map(|t| t.p),
            });
        }
    }
    Ok(MetricsReport {
        baseline: baseline.to_string(),
        methods,
        rows,
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn parse_f64(s: &str, origin: &Path, line: usize) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::format(origin, format!("line {line}: bad number {s:?}")))
}

impl MetricsReport {
    pub fn row(&self, method: &str, metric: Metric) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method && r.metric == metric)
    }

    /// Summary CSV. Numbers use the shortest representation that parses
    /// back to the same value.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_CSV_HEADER}\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.method,
                r.metric,
                r.mean,
                r.std,
                opt(r.t_vs_baseline),
                opt(r.p_vs_baseline)
            ));
        }
        out
    }

    pub fn parse_csv(text: &str, origin: &Path) -> Result<Vec<ReportRow>> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some(REPORT_CSV_HEADER) {
            return Err(Error::format(origin, format!("expected header `{REPORT_CSV_HEADER}`")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(Error::format(origin, format!("line {lineno}: expected 6 fields")));
            }
            let optional = |s: &str| -> Result<Option<f64>> {
                if s.is_empty() {
                    Ok(None)
                } else {
                    parse_f64(s, origin, lineno).map(Some)
                }
            };
            rows.push(ReportRow {
                method: f[0].to_string(),
                metric: f[1]
                    .parse()
                    .map_err(|e: Error| Error::format(origin, format!("line {lineno}: {e}")))?,
                mean: parse_f64(f[2], origin, lineno)?,
                std: parse_f64(f[3], origin, lineno)?,
                t_vs_baseline: optional(f[4])?,
                p_vs_baseline: optional(f[5])?,
            });
        }
        Ok(rows)
    }

    /// Per-slice values: `slice,method,nrmse,ssim`.
    pub fn per_slice_csv(&self, slice_names: &[String]) -> String {
        let mut out = String::from("slice,method,nrmse,ssim\n");
        for m in &self.methods {
            for (i, name) in slice_names.iter().enumerate() {
                out.push_str(&format!("{name},{},{},{}\n", m.method, m.nrmse[i], m.ssim[i]));
            }
        }
        out
    }

    /// Aligned table with `mean (std)` cells and the p-value vs baseline.
    pub fn render_table(&self) -> String {
        let width = self
            .methods
            .iter()
            .map(|m| m.method.len())
            .max()
            .unwrap_or(6)
            .max(6);
        let mut out = format!(
            "{:<width$}  {:>17}  {:>17}  {:>10}  {:>10}\n",
            "method", "NRMSE", "SSIM", "p(NRMSE)", "p(SSIM)"
        );
        let fmt_p = |r: Option<&ReportRow>| {
            r.and_then(|r| r.p_vs_baseline)
                .map_or_else(|| "-".to_string(), |p| format!("{p:.3e}"))
        };
        for m in &self.methods {
            let n = self.row(&m.method, Metric::Nrmse);
            let s = self.row(&m.method, Metric::Ssim);
            let cell = |r: Option<&ReportRow>| {
                r.map_or_else(String::new, |r| format!("{:.4} ({:.4})", r.mean, r.std))
            };
            out.push_str(&format!(
                "{:<width$}  {:>17}  {:>17}  {:>10}  {:>10}\n",
                m.method,
                cell(n),
                cell(s),
                fmt_p(n),
                fmt_p(s)
            ));
        }
        out.push_str(&format!("p-values: paired t-test vs {}\n", self.baseline));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mm(name: &str, nrmse: &[f64], ssim: &[f64]) -> MethodMetrics {
        MethodMetrics { method: name.into(), nrmse: nrmse.to_vec(), ssim: ssim.to_vec() }
    }

    #[test]
    fn single_method_mean_and_std() {
        let r = aggregate_report(vec![mm("A", &[0.1, 0.3], &[0.5, 0.5])], "A").unwrap();
        let row = r.row("A", Metric::Nrmse).unwrap();
        assert!((row.mean - 0.2).abs() < 1e-15);
        assert!((row.std - 0.02f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_columns_give_null_tests() {
        let v = [0.2, 0.25, 0.31];
        let s = [0.8, 0.7, 0.9];
        let r = aggregate_report(vec![mm("A", &v, &s), mm("B", &v, &s)], "A").unwrap();
        for row in &r.rows {
            assert_eq!(row.t_vs_baseline, Some(0.0));
            assert_eq!(row.p_vs_baseline, Some(1.0));
        }
    }

    #[test]
    fn csv_round_trip() {
        let r = aggregate_report(
            vec![
                mm("LR input", &[0.3, 0.35, 0.28], &[0.6, 0.55, 0.62]),
                mm("ResNet w/o DC", &[0.2, 0.22, 0.19], &[0.7, 0.72, 0.69]),
                mm("Unrolled (N=1)", &[0.1 / 3.0, 0.18, 0.17], &[0.8, 0.81, 0.79]),
            ],
            "ResNet w/o DC",
        )
        .unwrap();
        let csv = r.to_csv();
        assert!(csv.starts_with("method,metric,mean,std,t_vs_baseline,p_vs_baseline\n"));
        let rows = MetricsReport::parse_csv(&csv, Path::new("r.csv")).unwrap();
        assert_eq!(rows, r.rows);
        let table = r.render_table();
        assert!(table.contains("Unrolled (N=1)"));
    }

    #[test]
    fn single_slice_has_no_test() {
        let r = aggregate_report(vec![mm("A", &[0.1], &[0.9])], "A").unwrap();
        assert_eq!(r.rows[0].t_vs_baseline, None);
        let rows = MetricsReport::parse_csv(&r.to_csv(), Path::new("r")).unwrap();
        assert_eq!(rows, r.rows);
    }

    #[test]
    fn rejects_unpaired_input() {
        assert!(aggregate_report(vec![mm("A", &[0.1, 0.2], &[0.5, 0.5]), mm("B", &[0.1], &[0.5])], "A").is_err());
        assert!(aggregate_report(vec![mm("A", &[0.1, 0.2], &[0.5, 0.5])], "Z").is_err());
        assert!(MetricsReport::parse_csv("bad\n", Path::new("r")).is_err());
    }
}
