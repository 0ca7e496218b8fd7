//! Test-split evaluation of the LR input and trained models.

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_report, nrmse, ssim, MethodMetrics, MetricsReport};
use crate::model::{predict, Model};
use crate::numcore::RealImage;
use crate::train::{prepare_split, PreparedSample};

pub const LR_METHOD: &str = "LR input";
pub const RESNET_METHOD: &str = "ResNet w/o DC";

/// Run a model on an unnormalized LR image: normalize by the LR 95th
/// percentile, predict, and scale back.
pub fn infer_image(model: &Model, lr: &RealImage) -> Result<RealImage> {
    let (h, w) = lr.dims();
    let mask = crate::kspace::central_mask(h, w, crate::data::dataset::DEFAULT_FACTOR)?;
    infer_image_with_mask(model, lr, &mask)
}

pub fn infer_image_with_mask(
    model: &Model,
    lr: &RealImage,
    mask: &crate::kspace::SamplingMask,
) -> Result<RealImage> {
    let (lr_n, _, scale) = crate::data::normalize_pair(lr, lr)?;
    Ok(predict(model, &lr_n, mask)?.scale(scale))
}

fn method_rank(name: &str, model: Option<&Model>) -> (usize, usize) {
    match model {
        None if name == LR_METHOD => (0, 0),
        Some(m) if !m.config.is_unrolled() => (1, 0),
        Some(m) => (2, m.config.n_iterations),
        None => (3, 0),
    }
}

fn score(samples: &[PreparedSample], name: &str, f: impl Fn(&PreparedSample) -> Result<RealImage>) -> Result<MethodMetrics> {
    let mut out = MethodMetrics {
        method: name.to_string(),
        nrmse: Vec::with_capacity(samples.len()),
        ssim: Vec::with_capacity(samples.len()),
    };
    for s in samples {
        let pred = f(s)?;
        out.nrmse.push(nrmse(&pred, &s.hr)?);
        out.ssim.push(ssim(&pred, &s.hr)?);
    }
    Ok(out)
}

/// Metrics for the LR input and every model, ordered LR, ResNet, then
/// unrolled models by iteration count.
///
/// `baseline` defaults to the ResNet row when present, else the LR row.
pub fn evaluate_samples(
    samples: &[PreparedSample],
    models: &[Model],
    baseline: Option<&str>,
) -> Result<MetricsReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("test split is empty".into()));
    }
    let mut entries: Vec<(String, Option<&Model>)> = vec![(LR_METHOD.to_string(), None)];
    for m in models {
        let name = m.config.method_name();
        if entries.iter().any(|(n, _)| *n == name) {
            return Err(Error::InvalidArgument(format!("two checkpoints evaluate as {name:?}")));
        }
        entries.push((name, Some(m)));
    }
    entries.sort_by_key(|(n, m)| method_rank(n, *m));

    let mut methods = Vec::with_capacity(entries.len());
    for (name, model) in &entries {
        methods.push(match model {
            None => score(samples, name, |s| Ok(s.lr.clone()))?,
            Some(m) => score(samples, name, |s| predict(m, &s.lr, &s.mask))?,
        });
    }
    let default_baseline = if entries.iter().any(|(n, _)| n == RESNET_METHOD) {
        RESNET_METHOD
    } else {
        LR_METHOD
    };
    aggregate_report(methods, baseline.unwrap_or(default_baseline))
}

/// Evaluate on the dataset's test split. Returns the report and the slice
/// names in evaluation order.
pub fn evaluate(dataset: &Dataset, models: &[Model], baseline: Option<&str>) -> Result<(MetricsReport, Vec<String>)> {
    let samples = prepare_split(dataset, Split::Test)?;
    let names = samples.iter().map(|s| s.name.clone()).collect();
    Ok((evaluate_samples(&samples, models, baseline)?, names))
}
