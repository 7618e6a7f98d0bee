//! U-Net networks built from a flat list of layer descriptors.
//!
//! A network is interpreted front to back. `MaxPool2` pushes the current
//! activation onto a skip stack before pooling and `ConcatSkip` pops it after
//! upsampling, so the encoder/decoder pairing is implicit in the order.

mod checkpoint;

use rand::Rng as _;

use crate::autodiff::{adam_step, AdamState, Mode, RunningStats, Tape, Var, LEAKY_SLOPE};
use crate::error::{invalid, shape_err, Result};
use crate::rng::rng_from;
use crate::tensor::Tensor;

pub use checkpoint::{
    checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, CHECKPOINT_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Output is added to the raw input; the body models the residual.
    Residual,
    /// Sigmoid squashing to (0, 1).
    Sigmoid,
}

impl Head {
    pub fn as_str(self) -> &'static str {
        match self {
            Head::Residual => "residual",
            Head::Sigmoid => "sigmoid",
        }
    }

    pub fn parse(s: &str) -> Option<Head> {
        match s {
            "residual" => Some(Head::Residual),
            "sigmoid" => Some(Head::Sigmoid),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UnetSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub scales: usize,
    pub base_width: usize,
    pub head: Head,
}

impl UnetSpec {
    pub fn denoiser() -> Self {
        UnetSpec {
            in_channels: 1,
            out_channels: 1,
            scales: 2,
            base_width: 8,
            head: Head::Residual,
        }
    }

    pub fn segmenter() -> Self {
        UnetSpec {
            head: Head::Sigmoid,
            ..UnetSpec::denoiser()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        weight: usize,
        bias: usize,
    },
    BatchNorm {
        channels: usize,
        gamma: usize,
        beta: usize,
        stats: usize,
    },
    LeakyRelu {
        slope: f64,
    },
    MaxPool2,
    Upsample2,
    ConcatSkip,
    Sigmoid,
    ResidualAdd,
}

impl Layer {
    /// One-line descriptor used in checkpoint headers.
    pub fn descriptor(&self) -> String {
        match self {
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => format!("conv in={in_ch} out={out_ch} k={kernel}"),
            Layer::BatchNorm { channels, .. } => format!("batchnorm c={channels}"),
            Layer::LeakyRelu { slope } => format!("leaky_relu slope={slope}"),
            Layer::MaxPool2 => "maxpool2".into(),
            Layer::Upsample2 => "upsample2".into(),
            Layer::ConcatSkip => "concat_skip".into(),
            Layer::Sigmoid => "sigmoid".into(),
            Layer::ResidualAdd => "residual_add".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: UnetSpec,
    pub layers: Vec<Layer>,
    pub params: Vec<Tensor>,
    pub bn_stats: Vec<RunningStats>,
    /// Frozen networks pass gradients through but never update: parameters
    /// are recorded as constants and batch norm always uses running stats.
    pub frozen: bool,
}

/// Tape handles produced by one [`Network::forward`] call.
pub struct Forward {
    pub output: Var,
    pub params: Vec<Var>,
}

struct Builder {
    layers: Vec<Layer>,
    params: Vec<Tensor>,
    bn_stats: Vec<RunningStats>,
}

impl Builder {
    fn conv(&mut self, in_ch: usize, out_ch: usize, kernel: usize) {
        let weight = self.params.len();
        self.params
            .push(Tensor::zeros(&[out_ch, in_ch, kernel, kernel]));
        self.params.push(Tensor::zeros(&[out_ch]));
        self.layers.push(Layer::Conv {
            in_ch,
            out_ch,
            kernel,
            weight,
            bias: weight + 1,
        });
    }

    fn conv_bn_act(&mut self, in_ch: usize, out_ch: usize) {
        self.conv(in_ch, out_ch, 3);
        let gamma = self.params.len();
        self.params.push(Tensor::full(&[out_ch], 1.0));
        self.params.push(Tensor::zeros(&[out_ch]));
        self.layers.push(Layer::BatchNorm {
            channels: out_ch,
            gamma,
            beta: gamma + 1,
            stats: self.bn_stats.len(),
        });
        self.bn_stats.push(RunningStats::new(out_ch));
        self.layers.push(Layer::LeakyRelu { slope: LEAKY_SLOPE });
    }

    fn double_block(&mut self, in_ch: usize, out_ch: usize) {
        self.conv_bn_act(in_ch, out_ch);
        self.conv_bn_act(out_ch, out_ch);
    }
}

/// Builds a U-Net with `scales` pooling levels. Conv weights start at zero;
/// call [`Network::init_params`] before training.
pub fn build_unet(spec: UnetSpec) -> Result<Network> {
    if spec.scales < 1 {
        return Err(invalid!("scales must be >= 1"));
    }
    if spec.base_width < 1 || spec.in_channels < 1 || spec.out_channels < 1 {
        return Err(invalid!("widths and channel counts must be positive"));
    }
    if spec.head == Head::Residual && spec.in_channels != spec.out_channels {
        return Err(invalid!(
            "residual head needs in_channels == out_channels ({} vs {})",
            spec.in_channels,
            spec.out_channels
        ));
    }
    let mut b = Builder {
        layers: Vec::new(),
        params: Vec::new(),
        bn_stats: Vec::new(),
    };
    let width = |level: usize| spec.base_width << level;
    let mut ch = spec.in_channels;
    for level in 0..spec.scales {
        b.double_block(ch, width(level));
        b.layers.push(Layer::MaxPool2);
        ch = width(level);
    }
    b.double_block(ch, width(spec.scales));
    ch = width(spec.scales);
    for level in (0..spec.scales).rev() {
        b.layers.push(Layer::Upsample2);
        b.layers.push(Layer::ConcatSkip);
        b.double_block(ch + width(level), width(level));
        ch = width(level);
    }
    b.conv(ch, spec.out_channels, 1);
    b.layers.push(match spec.head {
        Head::Residual => Layer::ResidualAdd,
        Head::Sigmoid => Layer::Sigmoid,
    });
    let net = Network {
        spec,
        layers: b.layers,
        params: b.params,
        bn_stats: b.bn_stats,
        frozen: false,
    };
    net.validate()?;
    Ok(net)
}

impl Network {
    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    /// Skip connections must pair up and parameter shapes must match their
    /// descriptors.
    pub fn validate(&self) -> Result<()> {
        let mut depth = 0usize;
        for layer in &self.layers {
            match layer {
                Layer::MaxPool2 => depth += 1,
                Layer::ConcatSkip => {
                    depth = depth
                        .checked_sub(1)
                        .ok_or_else(|| invalid!("concat_skip without a saved skip"))?;
                }
                Layer::Conv {
                    in_ch,
                    out_ch,
                    kernel,
                    weight,
                    bias,
                } => {
                    let w = self.params.get(*weight).map(Tensor::shape);
                    let bs = self.params.get(*bias).map(Tensor::shape);
                    if w != Some(&[*out_ch, *in_ch, *kernel, *kernel][..])
                        || bs != Some(&[*out_ch][..])
                    {
                        return Err(shape_err!(
                            "conv parameters do not match {}",
                            layer.descriptor()
                        ));
                    }
                }
                Layer::BatchNorm {
                    channels,
                    gamma,
                    beta,
                    stats,
                } => {
                    let ok = [gamma, beta]
                        .iter()
                        .all(|&&i| self.params.get(i).map(Tensor::shape) == Some(&[*channels][..]))
                        && self
                            .bn_stats
                            .get(*stats)
                            .is_some_and(|s| s.mean.len() == *channels);
                    if !ok {
                        return Err(shape_err!("batchnorm parameters do not match c={channels}"));
                    }
                }
                _ => {}
            }
        }
        if depth != 0 {
            return Err(invalid!("{depth} skip connections never consumed"));
        }
        Ok(())
    }

    /// Fan-in scaled uniform initialization: conv weights ~ U(-b, b) with
    /// b = sqrt(6 / fan_in), biases 0, batch-norm gamma 1 and beta 0.
    ///
    /// With a residual head the final 1×1 conv starts at zero, so an
    /// untrained denoiser is exactly the identity.
    pub fn init_params(&mut self, seed: u64) {
        let head_conv = self
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::Conv { .. }));
        for (li, layer) in self.layers.iter().enumerate() {
            match *layer {
                Layer::Conv {
                    in_ch,
                    kernel,
                    weight,
                    bias,
                    ..
                } => {
                    let bound = (6.0 / (in_ch * kernel * kernel) as f64).sqrt();
                    let mut rng = rng_from(seed, &[weight as u64]);
                    for w in self.params[weight].data_mut() {
                        *w = rng.gen_range(-bound..bound);
                    }
                    if self.spec.head == Head::Residual && Some(li) == head_conv {
                        self.params[weight].data_mut().fill(0.0);
                    }
                    self.params[bias].data_mut().fill(0.0);
                }
                Layer::BatchNorm {
                    gamma, beta, stats, ..
                } => {
                    self.params[gamma].data_mut().fill(1.0);
                    self.params[beta].data_mut().fill(0.0);
                    let c = self.bn_stats[stats].mean.len();
                    self.bn_stats[stats] = RunningStats::new(c);
                }
                _ => {}
            }
        }
    }

    fn check_input(&self, shape: &[usize]) -> Result<()> {
        let [_, c, h, w] = *shape else {
            return Err(shape_err!("network input must be N×C×H×W, got {shape:?}"));
        };
        if c != self.spec.in_channels {
            return Err(shape_err!(
                "network input channels: expected {}, got {c}",
                self.spec.in_channels
            ));
        }
        let unit = 1usize << self.spec.scales;
        if h % unit != 0 || w % unit != 0 {
            return Err(shape_err!(
                "network input {h}×{w} not divisible by 2^{} = {unit}",
                self.spec.scales
            ));
        }
        Ok(())
    }

    /// Records a forward pass on `tape`. Train mode updates batch-norm
    /// running statistics unless the network is frozen.
    pub fn forward(&mut self, tape: &mut Tape, input: Var, mode: Mode) -> Result<Forward> {
        self.check_input(tape.value(input).shape())?;
        let frozen = self.frozen;
        let mode = if frozen { Mode::Eval } else { mode };
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| {
                if frozen {
                    tape.constant(p.clone())
                } else {
                    tape.param(p.clone())
                }
            })
            .collect();
        let mut x = input;
        let mut skips = Vec::new();
        for layer in &self.layers {
            x = match *layer {
                Layer::Conv {
                    kernel,
                    weight,
                    bias,
                    ..
                } => tape.conv2d(x, params[weight], params[bias], (kernel - 1) / 2)?,
                Layer::BatchNorm {
                    gamma, beta, stats, ..
                } => tape.batchnorm2d(
                    x,
                    params[gamma],
                    params[beta],
                    &mut self.bn_stats[stats],
                    mode,
                )?,
                Layer::LeakyRelu { slope } => tape.leaky_relu(x, slope)?,
                Layer::MaxPool2 => {
                    skips.push(x);
                    tape.maxpool2(x)?
                }
                Layer::Upsample2 => tape.upsample_nearest2(x)?,
                Layer::ConcatSkip => {
                    let skip = skips
                        .pop()
                        .ok_or_else(|| invalid!("unbalanced skip stack"))?;
                    tape.concat_channels(x, skip)?
                }
                Layer::Sigmoid => tape.sigmoid(x)?,
                Layer::ResidualAdd => tape.add(x, input)?,
            };
        }
        Ok(Forward { output: x, params })
    }

    /// Eval-mode inference outside any training tape.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut net = self.clone();
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let fwd = net.forward(&mut tape, x, Mode::Eval)?;
        Ok(tape.value(fwd.output).clone())
    }

    /// Copies parameter gradients off a differentiated tape, storing them on
    /// the parameter tensors as well.
    pub fn collect_grads(&mut self, tape: &Tape, fwd: &Forward) -> Result<Vec<Vec<f64>>> {
        let mut grads = Vec::with_capacity(self.params.len());
        for (p, &v) in self.params.iter_mut().zip(&fwd.params) {
            let g = tape
                .grad(v)
                .ok_or_else(|| crate::Error::Tape("collect_grads before backward".into()))?;
            p.grad = Some(g.clone());
            grads.push(g);
        }
        Ok(grads)
    }

    pub fn apply_adam(&mut self, grads: &[Vec<f64>], state: &mut AdamState, lr: f64) -> Result<()> {
        if self.frozen {
            return Err(invalid!("cannot update a frozen network"));
        }
        adam_step(&mut self.params, grads, state, lr)
    }

    /// Byte image of every parameter and running statistic, for equality
    /// checks on frozen networks.
    pub fn param_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for p in &self.params {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for s in &self.bn_stats {
            for v in s.mean.iter().chain(&s.var) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(head: Head) -> UnetSpec {
        UnetSpec {
            in_channels: 1,
            out_channels: 1,
            scales: 2,
            base_width: 4,
            head,
        }
    }

    fn random_image(h: usize, w: usize, seed: u64) -> Tensor {
        let mut rng = rng_from(seed, &[]);
        Tensor::image(h, w, (0..h * w).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn forward_preserves_shape() {
        let mut net = build_unet(UnetSpec::denoiser()).unwrap();
        net.init_params(1);
        let out = net.predict(&random_image(32, 32, 2)).unwrap();
        assert_eq!(out.shape(), &[1, 1, 32, 32]);
    }

    #[test]
    fn rejects_indivisible_input() {
        let net = build_unet(small(Head::Sigmoid)).unwrap();
        let err = net.predict(&random_image(10, 16, 0)).unwrap_err();
        assert!(err.to_string().contains("divisible"), "{err}");
        assert!(net.predict(&Tensor::zeros(&[1, 2, 16, 16])).is_err());
    }

    #[test]
    fn zero_body_residual_is_identity() {
        let mut net = build_unet(small(Head::Residual)).unwrap();
        net.init_params(3);
        for layer in net.layers.clone() {
            match layer {
                Layer::Conv { weight, bias, .. } => {
                    net.params[weight].data_mut().fill(0.0);
                    net.params[bias].data_mut().fill(0.0);
                }
                Layer::BatchNorm { gamma, beta, .. } => {
                    net.params[gamma].data_mut().fill(0.0);
                    net.params[beta].data_mut().fill(0.0);
                }
                _ => {}
            }
        }
        let x = random_image(16, 16, 4);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let fwd = net.forward(&mut tape, xv, Mode::Train).unwrap();
        assert_eq!(tape.value(fwd.output).data(), x.data());
        assert_eq!(net.predict(&x).unwrap().data(), x.data());
    }

    #[test]
    fn eval_forward_is_deterministic_and_sigmoid_bounded() {
        let mut net = build_unet(small(Head::Sigmoid)).unwrap();
        net.init_params(5);
        let x = random_image(16, 16, 6);
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn init_is_seeded() {
        let mut a = build_unet(small(Head::Sigmoid)).unwrap();
        let mut b = a.clone();
        let mut c = a.clone();
        a.init_params(9);
        b.init_params(9);
        c.init_params(10);
        assert_eq!(a.params, b.params);
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn residual_denoiser_starts_as_identity() {
        let mut net = build_unet(small(Head::Residual)).unwrap();
        net.init_params(4);
        let x = random_image(16, 16, 8);
        assert_eq!(net.predict(&x).unwrap(), x);
    }

    #[test]
    fn init_variance_matches_fan_in() {
        let mut net = build_unet(UnetSpec {
            base_width: 64,
            scales: 1,
            ..small(Head::Sigmoid)
        })
        .unwrap();
        net.init_params(11);
        // second conv of the first block: 64 -> 64, 3x3
        let weights = net
            .layers
            .iter()
            .filter_map(|l| match l {
                Layer::Conv {
                    in_ch: 64,
                    out_ch: 64,
                    weight,
                    ..
                } => Some(*weight),
                _ => None,
            })
            .next()
            .unwrap();
        let w = net.params[weights].data();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / (64.0 * 9.0);
        assert!(
            (var / expected - 1.0).abs() < 0.2,
            "var {var} vs {expected}"
        );
    }

    #[test]
    fn frozen_network_records_constants_and_keeps_stats() {
        let mut net = build_unet(small(Head::Sigmoid)).unwrap();
        net.init_params(2);
        net.frozen = true;
        let before = net.param_bytes();
        let mut tape = Tape::new();
        let x = tape.param(random_image(16, 16, 1));
        let fwd = net.forward(&mut tape, x, Mode::Train).unwrap();
        let loss = tape.sum(fwd.output).unwrap();
        tape.backward(loss).unwrap();
        assert!(fwd.params.iter().all(|&p| !tape.requires_grad(p)));
        assert!(tape.grad(x).unwrap().iter().any(|&g| g != 0.0));
        assert_eq!(net.param_bytes(), before);
        let grads = net.collect_grads(&tape, &fwd).unwrap();
        let mut st = AdamState::new(&net.params);
        assert!(net.apply_adam(&grads, &mut st, 1e-3).is_err());
    }
}
