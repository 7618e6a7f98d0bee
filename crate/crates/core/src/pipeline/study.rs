use std::sync::Mutex;

use super::{train_n2v, TrainConfig, TrainMode};
use crate::error::{invalid, Result};
use crate::nn::{build_unet, UnetSpec};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaskStudyRow {
    pub mask_count: usize,
    pub replicate: usize,
    pub step: usize,
    pub loss: f64,
}

/// Loss-variance summary for one mask count: the cross-replicate sample
/// variance of the blind-spot loss at each step, averaged over the final
/// quarter of the steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudySummary {
    pub mask_count: usize,
    pub variance: f64,
    pub final_mean_loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskStudy {
    pub rows: Vec<MaskStudyRow>,
    pub summary: Vec<StudySummary>,
}

impl MaskStudy {
    /// Long-format CSV: loss rows per (count, replicate, step) followed by one
    /// variance row per count (replicate and step left empty).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("kind,mask_count,replicate,step,value\n");
        for r in &self.rows {
            out.push_str(&format!(
                "loss,{},{},{},{}\n",
                r.mask_count, r.replicate, r.step, r.loss
            ));
        }
        for s in &self.summary {
            out.push_str(&format!("variance,{},,,{}\n", s.mask_count, s.variance));
        }
        out
    }
}

/// Number of trailing steps summarised.
pub fn final_quarter(steps: usize) -> usize {
    (steps / 4).max(1)
}

fn sample_variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
}

/// Trains `replicates` freshly initialised denoisers per mask count and
/// records the per-step blind-spot loss. Replicate `r` of count `k` uses
/// seed `derive_seed(base.seed, [k, r])` for both initialisation and
/// training, so results do not depend on `workers`.
pub fn mask_study(
    images: &[Tensor],
    counts: &[usize],
    replicates: usize,
    spec: UnetSpec,
    base: &TrainConfig,
    workers: usize,
) -> Result<MaskStudy> {
    if replicates < 2 {
        return Err(invalid!(
            "mask study needs at least 2 replicates, got {replicates}"
        ));
    }
    if counts.is_empty() {
        return Err(invalid!("mask study needs at least one mask count"));
    }
    if images.is_empty() {
        return Err(invalid!("mask study needs training images"));
    }
    let (h, w) = images[0].image_dims()?;
    if let Some(&k) = counts.iter().find(|&&k| k == 0 || k > h * w) {
        return Err(invalid!("mask count {k} outside [1, {}]", h * w));
    }
    let jobs: Vec<(usize, usize)> = counts
        .iter()
        .flat_map(|&k| (0..replicates).map(move |r| (k, r)))
        .collect();
    let run = |(k, r): (usize, usize)| -> Result<Vec<f64>> {
        let seed = derive_seed(base.seed, &[k as u64, r as u64]);
        let mut net = build_unet(spec)?;
        net.init_params(seed);
        let cfg = TrainConfig {
            mode: TrainMode::N2v,
            mask_count: k,
            seed,
            log_every: 1,
            ..base.clone()
        };
        Ok(train_n2v(&mut net, images, &cfg)?
            .rows
            .iter()
            .map(|row| row.l1)
            .collect())
    };
    let results: Vec<Mutex<Option<Result<Vec<f64>>>>> =
        jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = Mutex::new(0usize);
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, jobs.len()) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                if i >= jobs.len() {
                    break;
                }
                *results[i].lock().unwrap() = Some(run(jobs[i]));
            });
        }
    });
    let mut curves = Vec::with_capacity(jobs.len());
    for slot in results {
        curves.push(slot.into_inner().unwrap().expect("every job ran")?);
    }

    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let tail = final_quarter(base.steps);
    for (ci, &k) in counts.iter().enumerate() {
        let group = &curves[ci * replicates..(ci + 1) * replicates];
        for (r, curve) in group.iter().enumerate() {
            rows.extend(curve.iter().enumerate().map(|(s, &loss)| MaskStudyRow {
                mask_count: k,
                replicate: r,
                step: s + 1,
                loss,
            }));
        }
        let steps: Vec<usize> = (base.steps - tail..base.steps).collect();
        let variance = steps
            .iter()
            .map(|&s| sample_variance(&group.iter().map(|c| c[s]).collect::<Vec<_>>()))
            .sum::<f64>()
            / tail as f64;
        let final_mean_loss = steps
            .iter()
            .map(|&s| group.iter().map(|c| c[s]).sum::<f64>())
            .sum::<f64>()
            / (tail * replicates) as f64;
        summary.push(StudySummary {
            mask_count: k,
            variance,
            final_mean_loss,
        });
    }
    Ok(MaskStudy { rows, summary })
}
