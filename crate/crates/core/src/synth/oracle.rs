use crate::error::{Error, Result};
use crate::groundtruth::ClassMask;
use crate::metrics::{ClassScore, MetricReport};

/// Reference metrics computed pixel by pixel, one class at a time.
///
/// Deliberately naive and independent of the confusion-matrix code, so the
/// two can be checked against each other.
pub fn brute_force_metrics(
    gt: &ClassMask,
    pred: &ClassMask,
    class_names: &[String],
) -> Result<MetricReport<f64>> {
    if gt.width() != pred.width() || gt.height() != pred.height() {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            gt.width(),
            gt.height(),
            pred.width(),
            pred.height()
        )));
    }
    let k = class_names.len();
    let (g, p) = (gt.indices(), pred.indices());
    for &v in g.iter().chain(p.iter()) {
        if v as usize >= k {
            return Err(Error::ClassIndexOutOfRange {
                index: v,
                classes: k,
            });
        }
    }

    let mut classes = Vec::with_capacity(k);
    let (mut all_tp, mut all_fp, mut all_fn) = (0u64, 0u64, 0u64);
    for (c, name) in class_names.iter().enumerate() {
        let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
        for row in 0..gt.height() {
            for col in 0..gt.width() {
                let is_gt = g[[row, col]] as usize == c;
                let is_pred = p[[row, col]] as usize == c;
                match (is_gt, is_pred) {
                    (true, true) => tp += 1,
                    (false, true) => fp += 1,
                    (true, false) => fn_ += 1,
                    (false, false) => {}
                }
            }
        }
        all_tp += tp;
        all_fp += fp;
        all_fn += fn_;
        classes.push(ClassScore {
            name: name.clone(),
            true_positives: tp,
            false_positives: fp,
            false_negatives: fn_,
            iou: safe_div(tp, tp + fp + fn_),
            f1: safe_div(2 * tp, 2 * tp + fp + fn_),
        });
    }

    let mut iou_sum = 0.0;
    let mut f1_sum = 0.0;
    for c in &classes {
        iou_sum += c.iou;
        f1_sum += c.f1;
    }
    Ok(MetricReport {
        group: "overall".into(),
        input_type: String::new(),
        classes,
        mean_iou: iou_sum / k as f64,
        mean_f1: f1_sum / k as f64,
        micro_iou: safe_div(all_tp, all_tp + all_fp + all_fn),
        dice: safe_div(2 * all_tp, 2 * all_tp + all_fp + all_fn),
        pixels: (gt.width() * gt.height()) as u64,
    })
}

fn safe_div(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}
