use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{box_set_iou, detect_blobs, detection_f1, psnr, ssim, DEFAULT_MIN_AREA};
use crate::error::{invalid, Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

/// One row of a metrics table. Metrics that cannot be computed for an image
/// (no clean reference, no label) are `None` and written as empty cells.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsRecord {
    pub image_id: usize,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub iou: Option<f64>,
    pub f1: Option<f64>,
}

pub struct EvalSample {
    pub noisy: Tensor,
    pub clean: Option<Tensor>,
    pub label: Option<Tensor>,
}

fn mean_of(rows: &[MetricsRecord], f: impl Fn(&MetricsRecord) -> Option<f64>) -> Option<f64> {
    let vals: Vec<f64> = rows.iter().filter_map(f).collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub fn metrics_csv(rows: &[MetricsRecord], mean: &MetricsRecord) -> String {
    let mut out = String::from("image_id,psnr,ssim,iou,f1\n");
    let fields = |r: &MetricsRecord| {
        format!(
            "{},{},{},{}",
            cell(r.psnr),
            cell(r.ssim),
            cell(r.iou),
            cell(r.f1)
        )
    };
    for r in rows {
        let _ = writeln!(out, "{},{}", r.image_id, fields(r));
    }
    let _ = writeln!(out, "mean,{}", fields(mean));
    out
}

/// Parses a metrics CSV back into (rows, mean row).
pub fn parse_metrics_csv(text: &str) -> Result<(Vec<MetricsRecord>, MetricsRecord)> {
    let mut lines = text.lines();
    if lines.next() != Some("image_id,psnr,ssim,iou,f1") {
        return Err(Error::format("metrics csv", 0, "bad header"));
    }
    let parse = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| invalid!("bad metric `{s}`"))
        }
    };
    let mut rows = Vec::new();
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(invalid!("metrics row needs 5 fields: `{line}`"));
        }
        let rec = MetricsRecord {
            image_id: 0,
            psnr: parse(f[1])?,
            ssim: parse(f[2])?,
            iou: parse(f[3])?,
            f1: parse(f[4])?,
        };
        if f[0] == "mean" {
            return Ok((rows, rec));
        }
        rows.push(MetricsRecord {
            image_id: f[0]
                .parse()
                .map_err(|_| invalid!("bad image id `{}`", f[0]))?,
            ..rec
        });
    }
    Err(invalid!("metrics csv has no mean row"))
}

/// Runs the denoiser (when given) and segmenter (when given) over `samples`
/// in eval mode. PSNR/SSIM compare the denoised image with the clean one.
/// IoU and F1 are box-level: blobs detected in the thresholded segmentation
/// are matched against blobs detected in the label.
/// Writes per-image rows and a mean row to `out_csv` when provided.
pub fn evaluate_dataset(
    denoiser: Option<&Network>,
    segmenter: Option<&Network>,
    samples: &[EvalSample],
    out_csv: Option<&Path>,
) -> Result<(Vec<MetricsRecord>, MetricsRecord)> {
    if samples.is_empty() {
        return Err(invalid!("evaluation set is empty"));
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (id, s) in samples.iter().enumerate() {
        let denoised = match denoiser {
            Some(net) => net.predict(&s.noisy)?,
            None => s.noisy.clone(),
        };
        let mut rec = MetricsRecord {
            image_id: id,
            ..Default::default()
        };
        if let Some(clean) = &s.clean {
            rec.psnr = Some(psnr(&denoised, clean, 1.0)?);
            rec.ssim = Some(ssim(&denoised, clean)?);
        }
        if let (Some(seg), Some(label)) = (segmenter, &s.label) {
            let mask = seg.predict(&denoised.map(|v| v.clamp(0.0, 1.0)))?;
            let found = detect_blobs(&mask, DEFAULT_MIN_AREA)?;
            let truth = detect_blobs(label, DEFAULT_MIN_AREA)?;
            rec.iou = Some(box_set_iou(&found, &truth));
            rec.f1 = Some(detection_f1(&found, &truth, 0.5)?.2);
        }
        rows.push(rec);
    }
    let mean = MetricsRecord {
        image_id: rows.len(),
        psnr: mean_of(&rows, |r| r.psnr),
        ssim: mean_of(&rows, |r| r.ssim),
        iou: mean_of(&rows, |r| r.iou),
        f1: mean_of(&rows, |r| r.f1),
    };
    if let Some(path) = out_csv {
        fs::write(path, metrics_csv(&rows, &mean))
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    }
    Ok((rows, mean))
}
