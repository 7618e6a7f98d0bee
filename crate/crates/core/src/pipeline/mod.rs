//! Training procedures: standalone blind-spot denoising, segmentation
//! pretraining, and the two joint denoiser + segmenter schemes.
//!
//! Every procedure trains on one image per step. The image order is a
//! seeded permutation visited round-robin, and the mask plan for a step is
//! derived from (seed, image index, step), so two runs with the same config
//! see exactly the same inputs regardless of mode.

mod config;
mod study;

use rand::seq::SliceRandom;

use crate::autodiff::{AdamState, Mode, Tape, Var};
use crate::blindspot::{apply_mask, make_mask_plan, masked_mse};
use crate::error::{invalid, Error, Result};
use crate::nn::Network;
use crate::rng::{derive_seed, rng_from};
use crate::tensor::Tensor;

pub use config::{SegLoss, TrainConfig, TrainMode};
pub use study::{mask_study, MaskStudy, MaskStudyRow, StudySummary};

const ORDER_STREAM: u64 = 0x0DE5;
const MASK_STREAM: u64 = 0x3A5C;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub l1: f64,
    pub l2: f64,
    pub combined: f64,
}

/// Per-step losses. `combined` is the exact value that was differentiated,
/// equal to `w1 * l1 + w2 * l2` under the weights stored alongside.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub w1: f64,
    pub w2: f64,
    pub updates: usize,
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    fn new(w1: f64, w2: f64) -> Self {
        TrainLog {
            w1,
            w2,
            updates: 0,
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,l1,l2,combined\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.step, r.l1, r.l2, r.combined));
        }
        out
    }

    pub fn parse_csv(text: &str) -> Result<Vec<LogRow>> {
        let mut lines = text.lines();
        if lines.next() != Some("step,l1,l2,combined") {
            return Err(invalid!("train log must start with `step,l1,l2,combined`"));
        }
        lines
            .map(|line| {
                let f: Vec<&str> = line.split(',').collect();
                let num = |s: &str| {
                    s.parse::<f64>()
                        .map_err(|_| invalid!("bad number `{s}` in `{line}`"))
                };
                if f.len() != 4 {
                    return Err(invalid!("train log row needs 4 fields: `{line}`"));
                }
                Ok(LogRow {
                    step: f[0].parse().map_err(|_| invalid!("bad step in `{line}`"))?,
                    l1: num(f[1])?,
                    l2: num(f[2])?,
                    combined: num(f[3])?,
                })
            })
            .collect()
    }

    fn record(
        &mut self,
        cfg: &TrainConfig,
        step: usize,
        l1: f64,
        l2: f64,
        combined: f64,
    ) -> Result<()> {
        if !combined.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at step {step}")));
        }
        self.updates += 1;
        if step.is_multiple_of(cfg.log_every) {
            self.rows.push(LogRow {
                step,
                l1,
                l2,
                combined,
            });
        }
        Ok(())
    }
}

fn image_order(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from(seed, &[ORDER_STREAM]));
    order
}

/// Masked input and plan for one step.
struct BlindSpotInput {
    masked: Tensor,
    plan: crate::blindspot::MaskPlan,
}

fn blind_spot_input(
    image: &Tensor,
    cfg: &TrainConfig,
    index: usize,
    step: usize,
) -> Result<BlindSpotInput> {
    let (h, w) = image.image_dims()?;
    let plan = make_mask_plan(
        h,
        w,
        cfg.mask_count,
        derive_seed(cfg.seed, &[MASK_STREAM, index as u64, step as u64]),
    )?;
    Ok(BlindSpotInput {
        masked: apply_mask(image, &plan)?,
        plan,
    })
}

fn expect_mode(cfg: &TrainConfig, mode: TrainMode) -> Result<()> {
    cfg.validate()?;
    if cfg.mode != mode {
        return Err(invalid!(
            "config mode is {}, expected {}",
            cfg.mode.as_str(),
            mode.as_str()
        ));
    }
    Ok(())
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

/// Blind-spot training of `denoiser` on noisy images alone. The optimised
/// loss is `w1 * masked_mse`.
pub fn train_n2v(denoiser: &mut Network, images: &[Tensor], cfg: &TrainConfig) -> Result<TrainLog> {
    expect_mode(cfg, TrainMode::N2v)?;
    if images.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    let order = image_order(images.len(), cfg.seed);
    let mut adam = AdamState::new(&denoiser.params);
    let mut log = TrainLog::new(cfg.w1, 0.0);
    for step in 1..=cfg.steps {
        let index = order[(step - 1) % order.len()];
        let image = &images[index];
        let input = blind_spot_input(image, cfg, index, step)?;
        let mut tape = Tape::new();
        let x = tape.constant(input.masked);
        let fwd = denoiser.forward(&mut tape, x, Mode::Train)?;
        let l1 = masked_mse(&mut tape, fwd.output, image, &input.plan)?;
        let loss = tape.scale(l1, cfg.w1)?;
        tape.backward(loss)?;
        let grads = denoiser.collect_grads(&tape, &fwd)?;
        denoiser.apply_adam(&grads, &mut adam, cfg.lr)?;
        log.record(cfg, step, scalar(&tape, l1), 0.0, scalar(&tape, loss))?;
    }
    Ok(log)
}

/// Trains the segmentation network directly on (image, label) pairs.
///
/// With [`SegLoss::Bce`] the network is deliberately kept weak: only
/// `round(weak_fraction * steps)` updates are applied. With [`SegLoss::Mse`]
/// all `steps` run and the network is frozen afterwards, ready to act as a
/// fixed style branch.
pub fn pretrain_segmentation(
    seg: &mut Network,
    pairs: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
    loss_kind: SegLoss,
) -> Result<TrainLog> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(invalid!("segmentation training set is empty"));
    }
    for (i, (img, label)) in pairs.iter().enumerate() {
        img.ensure_same_shape(label, &format!("pair {i} image vs label"))?;
    }
    let steps = match loss_kind {
        SegLoss::Bce => ((cfg.weak_fraction * cfg.steps as f64).round() as usize).max(1),
        SegLoss::Mse => cfg.steps,
    };
    let order = image_order(pairs.len(), cfg.seed);
    let mut adam = AdamState::new(&seg.params);
    let mut log = TrainLog::new(0.0, 1.0);
    for step in 1..=steps {
        let (image, label) = &pairs[order[(step - 1) % order.len()]];
        let mut tape = Tape::new();
        let x = tape.constant(image.clone());
        let fwd = seg.forward(&mut tape, x, Mode::Train)?;
        let loss = match loss_kind {
            SegLoss::Bce => tape.bce_loss(fwd.output, label)?,
            SegLoss::Mse => {
                let t = tape.constant(label.clone());
                tape.mse_loss(fwd.output, t)?
            }
        };
        tape.backward(loss)?;
        let grads = seg.collect_grads(&tape, &fwd)?;
        seg.apply_adam(&grads, &mut adam, cfg.lr)?;
        let l = scalar(&tape, loss);
        log.record(cfg, step, 0.0, l, l)?;
    }
    if loss_kind == SegLoss::Mse {
        seg.frozen = true;
    }
    Ok(log)
}

/// Joint training on labelled data: `w1 * masked_mse + w2 * bce(seg(dn), y)`
/// with one backward pass through both networks and an Adam update of each.
/// The denoised image is clamped to [0, 1] (straight-through) before the
/// segmentation branch.
pub fn train_supervised_joint(
    denoiser: &mut Network,
    seg: &mut Network,
    data: &[(Tensor, Tensor)],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    expect_mode(cfg, TrainMode::SupervisedJoint)?;
    if data.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    if seg.frozen {
        return Err(invalid!(
            "supervised joint training updates the segmenter; it must not be frozen"
        ));
    }
    for (i, (img, label)) in data.iter().enumerate() {
        img.ensure_same_shape(label, &format!("sample {i} image vs label"))?;
    }
    let order = image_order(data.len(), cfg.seed);
    let mut adam_dn = AdamState::new(&denoiser.params);
    let mut adam_seg = AdamState::new(&seg.params);
    let mut log = TrainLog::new(cfg.w1, cfg.w2);
    for step in 1..=cfg.steps {
        let index = order[(step - 1) % order.len()];
        let (noisy, label) = &data[index];
        let input = blind_spot_input(noisy, cfg, index, step)?;
        let mut tape = Tape::new();
        let x = tape.constant(input.masked);
        let dn = denoiser.forward(&mut tape, x, Mode::Train)?;
        let l1 = masked_mse(&mut tape, dn.output, noisy, &input.plan)?;
        let clamped = tape.clamp_unit_straight_through(dn.output)?;
        let sg = seg.forward(&mut tape, clamped, Mode::Train)?;
        let l2 = tape.bce_loss(sg.output, label)?;
        let loss = weighted_sum(&mut tape, l1, l2, cfg)?;
        tape.backward(loss)?;
        let g_dn = denoiser.collect_grads(&tape, &dn)?;
        let g_seg = seg.collect_grads(&tape, &sg)?;
        denoiser.apply_adam(&g_dn, &mut adam_dn, cfg.lr)?;
        seg.apply_adam(&g_seg, &mut adam_seg, cfg.lr)?;
        log.record(
            cfg,
            step,
            scalar(&tape, l1),
            scalar(&tape, l2),
            scalar(&tape, loss),
        )?;
    }
    Ok(log)
}

/// Joint training without labels: `w1 * masked_mse + w2 * mse(dn, seg(dn))`
/// where `seg` is a frozen pretrained network. Gradients flow through the
/// frozen branch into the denoiser only.
pub fn train_unsupervised_joint(
    denoiser: &mut Network,
    frozen_seg: &Network,
    images: &[Tensor],
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    expect_mode(cfg, TrainMode::UnsupervisedJoint)?;
    if images.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    if !frozen_seg.frozen {
        return Err(invalid!(
            "unsupervised joint training needs a frozen segmentation network"
        ));
    }
    let mut seg = frozen_seg.clone();
    let order = image_order(images.len(), cfg.seed);
    let mut adam = AdamState::new(&denoiser.params);
    let mut log = TrainLog::new(cfg.w1, cfg.w2);
    for step in 1..=cfg.steps {
        let index = order[(step - 1) % order.len()];
        let noisy = &images[index];
        let input = blind_spot_input(noisy, cfg, index, step)?;
        let mut tape = Tape::new();
        let x = tape.constant(input.masked);
        let dn = denoiser.forward(&mut tape, x, Mode::Train)?;
        let l1 = masked_mse(&mut tape, dn.output, noisy, &input.plan)?;
        let clamped = tape.clamp_unit_straight_through(dn.output)?;
        let styled = seg.forward(&mut tape, clamped, Mode::Eval)?;
        let l2 = tape.mse_loss(dn.output, styled.output)?;
        let loss = weighted_sum(&mut tape, l1, l2, cfg)?;
        tape.backward(loss)?;
        let grads = denoiser.collect_grads(&tape, &dn)?;
        denoiser.apply_adam(&grads, &mut adam, cfg.lr)?;
        log.record(
            cfg,
            step,
            scalar(&tape, l1),
            scalar(&tape, l2),
            scalar(&tape, loss),
        )?;
    }
    Ok(log)
}

fn weighted_sum(tape: &mut Tape, l1: Var, l2: Var, cfg: &TrainConfig) -> Result<Var> {
    let a = tape.scale(l1, cfg.w1)?;
    let b = tape.scale(l2, cfg.w2)?;
    tape.add(a, b)
}
