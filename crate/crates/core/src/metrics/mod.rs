//! Pixel confusion counts and the IoU / F1 metric family.
//!
//! Zero-denominator convention: a class absent from both ground truth and
//! prediction scores 1 (nothing to get wrong); a class predicted but absent
//! from ground truth has TP = 0 and FP > 0 and therefore scores 0.

mod report;

use std::ops::{Add, AddAssign};

use ndarray::parallel::prelude::*;
use ndarray::Axis;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::groundtruth::ClassMask;

pub use report::{
    evaluate_pairs, format_table, pairs_from_manifest, write_report_csv, ClassScore, EvalPair,
    GroupBy, MetricReport, OVERALL,
};

/// Full `k x k` confusion matrix, ground truth by row, prediction by column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_masks(gt: &ClassMask, pred: &ClassMask, classes: usize) -> Result<Self> {
        let mut cm = Self::new(classes);
        cm.accumulate(gt, pred)?;
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Count of pixels with ground truth `gt` predicted as `pred`.
    pub fn count(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn record(&mut self, gt: u8, pred: u8) -> Result<()> {
        let k = self.classes;
        for index in [gt, pred] {
            if index as usize >= k {
                return Err(Error::ClassIndexOutOfRange { index, classes: k });
            }
        }
        self.counts[gt as usize * k + pred as usize] += 1;
        Ok(())
    }

    /// Adds every pixel of a ground-truth / prediction pair.
    pub fn accumulate(&mut self, gt: &ClassMask, pred: &ClassMask) -> Result<()> {
        if gt.width() != pred.width() || gt.height() != pred.height() {
            return Err(Error::ShapeMismatch(format!(
                "ground truth {}x{} vs prediction {}x{}",
                gt.width(),
                gt.height(),
                pred.width(),
                pred.height()
            )));
        }
        let k = self.classes;
        let (g, p) = (gt.indices(), pred.indices());
        let rows = g
            .axis_iter(Axis(0))
            .into_par_iter()
            .zip(p.axis_iter(Axis(0)).into_par_iter())
            .map(|(g_row, p_row)| {
                let mut local = ConfusionMatrix::new(k);
                for (&a, &b) in g_row.iter().zip(p_row.iter()) {
                    local.record(a, b)?;
                }
                Ok(local)
            })
            .collect::<Result<Vec<_>>>()?;
        for local in rows {
            *self += &local;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.classes, other.classes, "class count mismatch");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.count(class, class)
    }

    /// Pixels predicted as `class` whose ground truth is another class.
    pub fn false_positives(&self, class: usize) -> u64 {
        (0..self.classes)
            .filter(|&g| g != class)
            .map(|g| self.count(g, class))
            .sum()
    }

    /// Pixels of ground-truth `class` predicted as another class.
    pub fn false_negatives(&self, class: usize) -> u64 {
        (0..self.classes)
            .filter(|&p| p != class)
            .map(|p| self.count(class, p))
            .sum()
    }

    pub fn true_negatives(&self, class: usize) -> u64 {
        self.total()
            - self.true_positives(class)
            - self.false_positives(class)
            - self.false_negatives(class)
    }

    fn sums(&self) -> (u64, u64, u64) {
        (0..self.classes).fold((0, 0, 0), |(tp, fp, fn_), c| {
            (
                tp + self.true_positives(c),
                fp + self.false_positives(c),
                fn_ + self.false_negatives(c),
            )
        })
    }

    /// `TP / (TP + FP + FN)` for one class.
    pub fn class_iou<F: Float>(&self, class: usize) -> F {
        assert!(class < self.classes, "class {class} out of range");
        ratio(
            self.true_positives(class),
            self.true_positives(class) + self.false_positives(class) + self.false_negatives(class),
        )
    }

    /// Unweighted mean of per-class IoU over all classes, background included.
    pub fn mean_iou<F: Float>(&self) -> F {
        mean(
            (0..self.classes).map(|c| self.class_iou::<F>(c)),
            self.classes,
        )
    }

    /// IoU of the class-summed counts: `ΣTP / (ΣTP + ΣFP + ΣFN)`.
    pub fn micro_iou<F: Float>(&self) -> F {
        let (tp, fp, fn_) = self.sums();
        ratio(tp, tp + fp + fn_)
    }

    /// `2 TP / (2 TP + FP + FN)` for one class.
    pub fn class_f1<F: Float>(&self, class: usize) -> F {
        assert!(class < self.classes, "class {class} out of range");
        let tp = self.true_positives(class);
        ratio(
            2 * tp,
            2 * tp + self.false_positives(class) + self.false_negatives(class),
        )
    }

    pub fn mean_f1<F: Float>(&self) -> F {
        mean(
            (0..self.classes).map(|c| self.class_f1::<F>(c)),
            self.classes,
        )
    }

    /// Micro-averaged F1 over all classes.
    pub fn dice_coefficient<F: Float>(&self) -> F {
        let (tp, fp, fn_) = self.sums();
        ratio(2 * tp, 2 * tp + fp + fn_)
    }
}

fn ratio<F: Float>(num: u64, den: u64) -> F {
    if den == 0 {
        F::one()
    } else {
        F::from(num).expect("count fits") / F::from(den).expect("count fits")
    }
}

fn mean<F: Float>(values: impl Iterator<Item = F>, n: usize) -> F {
    let sum = values.fold(F::zero(), |acc, v| acc + v);
    sum / F::from(n).expect("class count fits")
}

/// F1 implied by an IoU value: `2 I / (1 + I)`.
pub fn f1_from_iou<F: Float>(iou: F) -> F {
    let two = F::one() + F::one();
    two * iou / (F::one() + iou)
}

impl AddAssign<&ConfusionMatrix> for ConfusionMatrix {
    fn add_assign(&mut self, rhs: &ConfusionMatrix) {
        self.merge(rhs);
    }
}

impl Add for ConfusionMatrix {
    type Output = ConfusionMatrix;

    fn add(mut self, rhs: ConfusionMatrix) -> ConfusionMatrix {
        self.merge(&rhs);
        self
    }
}
