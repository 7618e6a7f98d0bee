//! Connected-component blob detector and box-level F1 scoring.

use super::{binarize, check_unit_interval, MASK_THRESHOLD};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

pub const DEFAULT_MIN_AREA: usize = 4;

/// Inclusive pixel bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct DetectionBox {
    pub min_row: usize,
    pub min_col: usize,
    pub max_row: usize,
    pub max_col: usize,
}

impl DetectionBox {
    pub fn area(&self) -> usize {
        (self.max_row - self.min_row + 1) * (self.max_col - self.min_col + 1)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// 4-connected components of the mask (binarized at 0.5) with at least
/// `min_area` pixels, as bounding boxes sorted by (min_row, min_col).
pub fn detect_blobs(mask: &Tensor, min_area: usize) -> Result<Vec<DetectionBox>> {
    if min_area == 0 {
        return Err(invalid!("min_area must be at least 1"));
    }
    let (h, w) = mask.image_dims()?;
    let on = binarize(mask, MASK_THRESHOLD);
    // two-pass labelling with union-find over pixel indices
    let mut parent: Vec<usize> = (0..h * w).collect();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !on[i] {
                continue;
            }
            for j in [(c > 0).then(|| i - 1), (r > 0).then(|| i - w)]
                .into_iter()
                .flatten()
            {
                if on[j] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
    }
    let mut comps: std::collections::BTreeMap<usize, (DetectionBox, usize)> = Default::default();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !on[i] {
                continue;
            }
            let root = find(&mut parent, i);
            let entry = comps.entry(root).or_insert((
                DetectionBox {
                    min_row: r,
                    min_col: c,
                    max_row: r,
                    max_col: c,
                },
                0,
            ));
            entry.0.min_row = entry.0.min_row.min(r);
            entry.0.min_col = entry.0.min_col.min(c);
            entry.0.max_row = entry.0.max_row.max(r);
            entry.0.max_col = entry.0.max_col.max(c);
            entry.1 += 1;
        }
    }
    let mut boxes: Vec<DetectionBox> = comps
        .into_values()
        .filter(|(_, area)| *area >= min_area)
        .map(|(b, _)| b)
        .collect();
    boxes.sort();
    Ok(boxes)
}

/// Intersection-over-union of two inclusive pixel boxes.
pub fn box_iou(a: &DetectionBox, b: &DetectionBox) -> f64 {
    let r0 = a.min_row.max(b.min_row);
    let r1 = a.max_row.min(b.max_row);
    let c0 = a.min_col.max(b.min_col);
    let c1 = a.max_col.min(b.max_col);
    if r0 > r1 || c0 > c1 {
        return 0.0;
    }
    let inter = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
    inter / ((a.area() + b.area()) as f64 - inter)
}

/// Greedy one-to-one matching in descending box-IoU order over pairs with
/// IoU at least `min_iou`. Returns the IoU of each matched pair.
fn greedy_match(pred: &[DetectionBox], truth: &[DetectionBox], min_iou: f64) -> Vec<f64> {
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, p) in pred.iter().enumerate() {
        for (j, t) in truth.iter().enumerate() {
            let v = box_iou(p, t);
            if v > 0.0 && v >= min_iou {
                pairs.push((v, i, j));
            }
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut used_p = vec![false; pred.len()];
    let mut used_t = vec![false; truth.len()];
    let mut matched = Vec::new();
    for (v, i, j) in pairs {
        if !used_p[i] && !used_t[j] {
            used_p[i] = true;
            used_t[j] = true;
            matched.push(v);
        }
    }
    matched
}

/// Greedy matching at `iou_thresh`; returns (precision, recall, F1). Two
/// empty box lists score a perfect 1.
pub fn detection_f1(
    pred: &[DetectionBox],
    truth: &[DetectionBox],
    iou_thresh: f64,
) -> Result<(f64, f64, f64)> {
    check_unit_interval("iou_thresh", iou_thresh)?;
    if pred.is_empty() && truth.is_empty() {
        return Ok((1.0, 1.0, 1.0));
    }
    let tp = greedy_match(pred, truth, iou_thresh).len();
    let precision = if pred.is_empty() {
        0.0
    } else {
        tp as f64 / pred.len() as f64
    };
    let recall = if truth.is_empty() {
        0.0
    } else {
        tp as f64 / truth.len() as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok((precision, recall, f1))
}

/// Per-image box IoU: matched pairs (any overlap) contribute their IoU,
/// unmatched boxes on either side contribute 0, averaged over
/// `|pred| + |truth| - matches`. 1 when both lists are empty.
pub fn box_set_iou(pred: &[DetectionBox], truth: &[DetectionBox]) -> f64 {
    if pred.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let matched = greedy_match(pred, truth, 0.0);
    matched.iter().sum::<f64>() / (pred.len() + truth.len() - matched.len()) as f64
}
