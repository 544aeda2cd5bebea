use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_traits::Float;
use rayon::prelude::*;
use serde::Serialize;

use super::ConfusionMatrix;
use crate::dataset::{ManifestEntry, Role};
use crate::error::{Error, Result};
use crate::groundtruth::{load_mask, ClassMap};

/// Group label used for the report covering every pair.
pub const OVERALL: &str = "overall";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassScore<F> {
    pub name: String,
    pub true_positives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub iou: F,
    pub f1: F,
}

/// Metrics for one group of evaluated pixels.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport<F> {
    pub group: String,
    pub input_type: String,
    pub classes: Vec<ClassScore<F>>,
    pub mean_iou: F,
    pub mean_f1: F,
    pub micro_iou: F,
    pub dice: F,
    pub pixels: u64,
}

impl<F: Float> MetricReport<F> {
    pub fn from_matrix(
        cm: &ConfusionMatrix,
        names: &[String],
        group: impl Into<String>,
        input_type: impl Into<String>,
    ) -> Result<Self> {
        if names.len() != cm.classes() {
            return Err(Error::ClassMap(format!(
                "{} class names for a {}-class matrix",
                names.len(),
                cm.classes()
            )));
        }
        let classes = names
            .iter()
            .enumerate()
            .map(|(c, name)| ClassScore {
                name: name.clone(),
                true_positives: cm.true_positives(c),
                false_positives: cm.false_positives(c),
                false_negatives: cm.false_negatives(c),
                iou: cm.class_iou(c),
                f1: cm.class_f1(c),
            })
            .collect();
        Ok(Self {
            group: group.into(),
            input_type: input_type.into(),
            classes,
            mean_iou: cm.mean_iou(),
            mean_f1: cm.mean_f1(),
            micro_iou: cm.micro_iou(),
            dice: cm.dice_coefficient(),
            pixels: cm.total(),
        })
    }

    pub fn class(&self, name: &str) -> Option<&ClassScore<F>> {
        self.classes.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalPair {
    pub gt: PathBuf,
    pub pred: PathBuf,
    pub year: Option<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GroupBy {
    #[default]
    Overall,
    Year,
}

impl std::str::FromStr for GroupBy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overall" => Ok(GroupBy::Overall),
            "year" => Ok(GroupBy::Year),
            other => Err(Error::InvalidArgument(format!(
                "unknown grouping {other:?}, expected overall or year"
            ))),
        }
    }
}

/// Evaluates prediction masks against ground truth.
///
/// With [`GroupBy::Year`] there is one report per year (ascending) followed
/// by the overall report. Pairs without a year only count towards the
/// overall report.
pub fn evaluate_pairs(
    pairs: &[EvalPair],
    group_by: GroupBy,
    class_map: &ClassMap,
    input_type: &str,
) -> Result<Vec<MetricReport<f64>>> {
    if pairs.is_empty() {
        return Err(Error::EmptyInput(
            "no prediction / ground-truth pairs".into(),
        ));
    }
    let k = class_map.len();
    let matrices = pairs
        .par_iter()
        .map(|pair| {
            let gt = load_mask(&pair.gt, class_map)?;
            let pred = load_mask(&pair.pred, class_map)?;
            if gt.raster().geotransform() != pred.raster().geotransform() {
                return Err(Error::GeoreferenceMismatch(format!(
                    "{} and {}",
                    pair.gt.display(),
                    pair.pred.display()
                )));
            }
            ConfusionMatrix::from_masks(&gt, &pred, k).map_err(|e| match e {
                Error::ShapeMismatch(msg) => Error::ShapeMismatch(format!(
                    "{} vs {}: {msg}",
                    pair.gt.display(),
                    pair.pred.display()
                )),
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let names = class_map.names();
    let mut overall = ConfusionMatrix::new(k);
    let mut by_year: BTreeMap<i32, ConfusionMatrix> = BTreeMap::new();
    for (pair, cm) in pairs.iter().zip(&matrices) {
        overall += cm;
        if let (GroupBy::Year, Some(year)) = (group_by, pair.year) {
            *by_year
                .entry(year)
                .or_insert_with(|| ConfusionMatrix::new(k)) += cm;
        }
    }
    let mut reports = by_year
        .iter()
        .map(|(year, cm)| MetricReport::from_matrix(cm, &names, year.to_string(), input_type))
        .collect::<Result<Vec<_>>>()?;
    reports.push(MetricReport::from_matrix(
        &overall, &names, OVERALL, input_type,
    )?);
    Ok(reports)
}

/// Pairs each manifest mask with the prediction tile named after its input
/// tile under `{predictions}/{district}/{year}/`.
pub fn pairs_from_manifest(
    entries: &[ManifestEntry],
    predictions: impl AsRef<Path>,
    role: Option<Role>,
) -> Vec<EvalPair> {
    let root = predictions.as_ref();
    entries
        .iter()
        .filter(|e| role.is_none_or(|r| e.role == r))
        .map(|e| {
            let file = e.input.file_name().unwrap_or(e.input.as_os_str());
            EvalPair {
                gt: e.mask.clone(),
                pred: root.join(&e.district).join(e.year.to_string()).join(file),
                year: Some(e.year),
            }
        })
        .collect()
}

/// Writes `group,input_type,class,iou,f1,mean_iou,micro_iou`, one row per
/// class plus a `mean` row per group.
pub fn write_report_csv<F: Float>(
    path: impl AsRef<Path>,
    reports: &[MetricReport<F>],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::csv(path, e))?;
    let fmt = |v: F| format!("{:.4}", v.to_f64().unwrap_or(f64::NAN));
    w.write_record([
        "group",
        "input_type",
        "class",
        "iou",
        "f1",
        "mean_iou",
        "micro_iou",
    ])
    .map_err(|e| Error::csv(path, e))?;
    for r in reports {
        let rows = r
            .classes
            .iter()
            .map(|c| (c.name.as_str(), c.iou, c.f1))
            .chain(std::iter::once(("mean", r.mean_iou, r.mean_f1)));
        for (class, iou, f1) in rows {
            w.write_record([
                r.group.as_str(),
                r.input_type.as_str(),
                class,
                &fmt(iou),
                &fmt(f1),
                &fmt(r.mean_iou),
                &fmt(r.micro_iou),
            ])
            .map_err(|e| Error::csv(path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Aligned text table: per group an IoU row and an F1 row over the class
/// columns and their mean.
pub fn format_table<F: Float>(reports: &[MetricReport<F>]) -> String {
    let Some(first) = reports.first() else {
        return String::new();
    };
    let mut headers = vec!["group".to_string(), "input".into(), "metric".into()];
    headers.extend(first.classes.iter().map(|c| c.name.clone()));
    headers.push("mean".into());

    let fmt = |v: F| format!("{:.4}", v.to_f64().unwrap_or(f64::NAN));
    let mut rows = Vec::new();
    for r in reports {
        for (metric, values, mean) in [
            (
                "IoU",
                r.classes.iter().map(|c| c.iou).collect::<Vec<_>>(),
                r.mean_iou,
            ),
            ("F1", r.classes.iter().map(|c| c.f1).collect(), r.mean_f1),
        ] {
            let mut row = vec![r.group.clone(), r.input_type.clone(), metric.to_string()];
            row.extend(values.into_iter().map(fmt));
            row.push(fmt(mean));
            rows.push(row);
        }
    }
    let widths: Vec<usize> = (0..headers.len())
        .map(|i| {
            rows.iter()
                .filter_map(|r| r.get(i))
                .chain(std::iter::once(&headers[i]))
                .map(String::len)
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    for row in std::iter::once(&headers).chain(&rows) {
        let line = row
            .iter()
            .enumerate()
            .map(|(i, cell)| {
                if i < 3 {
                    format!("{cell:<w$}", w = widths[i])
                } else {
                    format!("{cell:>w$}", w = widths[i])
                }
            })
            .collect::<Vec<_>>()
            .join("  ");
        let _ = writeln!(out, "{}", line.trim_end());
    }
    for r in reports {
        let _ = writeln!(
            out,
            "{} {}: micro IoU {}  dice {}  pixels {}",
            r.group,
            r.input_type,
            fmt(r.micro_iou),
            fmt(r.dice),
            r.pixels
        );
    }
    out
}
