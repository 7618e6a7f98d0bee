use crate::error::{invalid, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainMode {
    N2v,
    SupervisedJoint,
    UnsupervisedJoint,
    PretrainSeg,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::N2v => "n2v",
            TrainMode::SupervisedJoint => "supervised_joint",
            TrainMode::UnsupervisedJoint => "unsupervised_joint",
            TrainMode::PretrainSeg => "pretrain_seg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "n2v" => Some(TrainMode::N2v),
            "supervised_joint" | "supervised" => Some(TrainMode::SupervisedJoint),
            "unsupervised_joint" | "unsupervised" => Some(TrainMode::UnsupervisedJoint),
            "pretrain_seg" | "pretrain-seg" => Some(TrainMode::PretrainSeg),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SegLoss {
    Bce,
    Mse,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub lr: f64,
    pub steps: usize,
    pub mask_count: usize,
    pub w1: f64,
    pub w2: f64,
    pub seed: u64,
    pub weak_fraction: f64,
    pub log_every: usize,
}

impl TrainConfig {
    /// Defaults per mode: lr 7e-4, 169 masked pixels, loss weights (1, 1.5)
    /// for supervised joint training and (9, 1) for unsupervised.
    pub fn defaults(mode: TrainMode) -> Self {
        let (w1, w2) = match mode {
            TrainMode::N2v => (1.0, 0.0),
            TrainMode::SupervisedJoint => (1.0, 1.5),
            TrainMode::UnsupervisedJoint => (9.0, 1.0),
            TrainMode::PretrainSeg => (0.0, 1.0),
        };
        TrainConfig {
            mode,
            lr: 7e-4,
            steps: 500,
            mask_count: 169,
            w1,
            w2,
            seed: 0,
            weak_fraction: 0.2,
            log_every: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1e-6..=1.0).contains(&self.lr) {
            return Err(invalid!("lr {} outside [1e-6, 1]", self.lr));
        }
        if self.steps < 1 {
            return Err(invalid!("steps must be at least 1"));
        }
        if !(self.w1 >= 0.0 && self.w2 >= 0.0) || !(self.w1.is_finite() && self.w2.is_finite()) {
            return Err(invalid!(
                "loss weights must be finite and non-negative, got ({}, {})",
                self.w1,
                self.w2
            ));
        }
        if self.w1 == 0.0 && self.w2 == 0.0 {
            return Err(invalid!("loss weights cannot both be zero"));
        }
        if !(self.weak_fraction > 0.0 && self.weak_fraction <= 1.0) {
            return Err(invalid!(
                "weak_fraction {} outside (0, 1]",
                self.weak_fraction
            ));
        }
        if self.log_every < 1 {
            return Err(invalid!("log_every must be at least 1"));
        }
        if self.mask_count < 1 {
            return Err(invalid!("mask_count must be at least 1"));
        }
        Ok(())
    }
}
