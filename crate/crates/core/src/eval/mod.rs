//! Image-quality and task metrics, plus per-dataset evaluation reports.

mod detect;
mod report;

use crate::error::{invalid, shape_err, Result};
use crate::tensor::Tensor;

pub use detect::{
    box_iou, box_set_iou, detect_blobs, detection_f1, DetectionBox, DEFAULT_MIN_AREA,
};
pub use report::{evaluate_dataset, metrics_csv, parse_metrics_csv, EvalSample, MetricsRecord};

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;
pub const MASK_THRESHOLD: f64 = 0.5;

/// Peak signal-to-noise ratio in dB, capped at 100 dB when MSE < 1e-10.
pub fn psnr(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b, "psnr")?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64;
    if mse < 1e-10 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Summed-area table with a zero first row and column.
fn integral(values: impl Iterator<Item = f64>, h: usize, w: usize) -> Vec<f64> {
    let mut table = vec![0.0; (h + 1) * (w + 1)];
    let mut it = values;
    for r in 0..h {
        let mut row_sum = 0.0;
        for c in 0..w {
            row_sum += it.next().expect("h*w values");
            table[(r + 1) * (w + 1) + c + 1] = table[r * (w + 1) + c + 1] + row_sum;
        }
    }
    table
}

fn window_sum(table: &[f64], w: usize, r: usize, c: usize, k: usize) -> f64 {
    let s = w + 1;
    table[(r + k) * s + c + k] - table[r * s + c + k] - table[(r + k) * s + c] + table[r * s + c]
}

/// Mean SSIM over every 8×8 window (stride 1) with uniform weights and
/// population moments, C1 = (0.01·peak)², C2 = (0.03·peak)².
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    ssim_with_peak(a, b, 1.0)
}

pub fn ssim_with_peak(a: &Tensor, b: &Tensor, peak: f64) -> Result<f64> {
    a.ensure_same_shape(b, "ssim")?;
    let (h, w) = a.image_dims()?;
    let k = SSIM_WINDOW;
    if h < k || w < k {
        return Err(shape_err!(
            "ssim needs at least {k}×{k} pixels, got {h}×{w}"
        ));
    }
    let (x, y) = (a.data(), b.data());
    let sx = integral(x.iter().cloned(), h, w);
    let sy = integral(y.iter().cloned(), h, w);
    let sxx = integral(x.iter().map(|v| v * v), h, w);
    let syy = integral(y.iter().map(|v| v * v), h, w);
    let sxy = integral(x.iter().zip(y).map(|(u, v)| u * v), h, w);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = (k * k) as f64;
    let mut total = 0.0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let mx = window_sum(&sx, w, r, c, k) / n;
            let my = window_sum(&sy, w, r, c, k) / n;
            let vx = window_sum(&sxx, w, r, c, k) / n - mx * mx;
            let vy = window_sum(&syy, w, r, c, k) / n - my * my;
            let cxy = window_sum(&sxy, w, r, c, k) / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
    }
    Ok(total / ((h - k + 1) * (w - k + 1)) as f64)
}

pub fn binarize(t: &Tensor, threshold: f64) -> Vec<bool> {
    t.data().iter().map(|&v| v >= threshold).collect()
}

/// |A ∩ B| / |A ∪ B| of masks binarized at 0.5; 1 when both are empty.
pub fn iou(pred_mask: &Tensor, label: &Tensor) -> Result<f64> {
    pred_mask.ensure_same_shape(label, "iou")?;
    let (a, b) = (
        binarize(pred_mask, MASK_THRESHOLD),
        binarize(label, MASK_THRESHOLD),
    );
    let inter = a.iter().zip(&b).filter(|(x, y)| **x && **y).count();
    let union = a.iter().zip(&b).filter(|(x, y)| **x || **y).count();
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

pub(crate) fn check_unit_interval(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(invalid!("{name} must lie in (0, 1), got {v}"));
    }
    Ok(())
}
