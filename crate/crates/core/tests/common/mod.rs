//! Independent reference implementations used by the integration tests and
//! the acceptance harness. Nothing here calls the code under test except to
//! build inputs.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::VecDeque;

use jnt_core::autodiff::{Mode, Tape, Var};
use jnt_core::eval::DetectionBox;
use jnt_core::nn::Network;
use jnt_core::rng::{rng_from, Rng};
use jnt_core::{Result, Tensor};
use rand::Rng as _;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

pub fn rng(seed: u64) -> Rng {
    rng_from(seed, &[0x7E57])
}

pub fn uniform(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Uniform values in [lo, hi] kept at least `gap` away from zero, so
/// piecewise-linear ops are smooth within a finite-difference step.
pub fn away_from_zero(rng: &mut Rng, shape: &[usize], mag: f64, gap: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let v = rng.gen_range(gap..mag);
            if rng.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Relative error with a small absolute floor so exact zeros compare sanely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Scalar probe: MSE against a random target, so every output element
/// carries a different gradient.
pub fn probe(tape: &mut Tape, out: Var, target: &Tensor) -> Result<Var> {
    let t = tape.constant(target.clone());
    tape.mse_loss(out, t)
}

/// Compares tape gradients of `f(inputs)` against central differences for
/// every element of every input. Returns the worst relative error.
pub fn fd_check<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = f(&mut tape, &vars).expect("forward");
    tape.backward(root).expect("backward");
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| tape.grad(v).unwrap()).collect();

    let eval = |ins: &[Tensor]| -> f64 {
        let mut t = Tape::new();
        let vs: Vec<Var> = ins.iter().map(|x| t.param(x.clone())).collect();
        let r = f(&mut t, &vs).expect("forward");
        t.value(r).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k][i], numeric));
        }
    }
    worst
}

/// Finite-difference check of every parameter of a network under a random
/// probe of its train-mode output.
pub fn fd_check_network(net: &Network, input: &Tensor, target: &Tensor) -> f64 {
    let loss_of = |n: &Network| -> (f64, Vec<Vec<f64>>) {
        let mut n = n.clone();
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let fwd = n.forward(&mut tape, x, Mode::Train).unwrap();
        let root = probe(&mut tape, fwd.output, target).unwrap();
        let value = tape.value(root).data()[0];
        tape.backward(root).unwrap();
        let grads = fwd.params.iter().map(|&p| tape.grad(p).unwrap()).collect();
        (value, grads)
    };
    let (_, analytic) = loss_of(net);
    let mut worst: f64 = 0.0;
    for p in 0..net.params.len() {
        for i in 0..net.params[p].len() {
            let mut plus = net.clone();
            plus.params[p].data_mut()[i] += FD_STEP;
            let mut minus = net.clone();
            minus.params[p].data_mut()[i] -= FD_STEP;
            let numeric = (loss_of(&plus).0 - loss_of(&minus).0) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[p][i], numeric));
        }
    }
    worst
}

/// Direct nested-loop cross-correlation with zero padding.
pub fn conv_oracle(x: &Tensor, k: &Tensor, b: &Tensor, pad: usize) -> Vec<f64> {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let ks = k.shape();
    let (o, kk) = (ks[0], ks[2]);
    let (oh, ow) = (h + 2 * pad + 1 - kk, w + 2 * pad + 1 - kk);
    let mut out = vec![0.0; n * o * oh * ow];
    for s_ in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for ky in 0..kk {
                            for kx in 0..kk {
                                let iy = y as isize + ky as isize - pad as isize;
                                let ix = xx as isize + kx as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xi = ((s_ * c + ic) * h + iy as usize) * w + ix as usize;
                                let ki = ((oc * c + ic) * kk + ky) * kk + kx;
                                acc += x.data()[xi] * k.data()[ki];
                            }
                        }
                    }
                    out[((s_ * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    out
}

pub fn maxpool_oracle(x: &Tensor) -> Vec<f64> {
    let s = x.shape();
    let (nc, h, w) = (s[0] * s[1], s[2], s[3]);
    let mut out = Vec::new();
    for p in 0..nc {
        for y in 0..h / 2 {
            for xx in 0..w / 2 {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        m = m.max(x.data()[(p * h + 2 * y + dy) * w + 2 * xx + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    out
}

pub fn mse_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += (a[i] - b[i]).powi(2);
    }
    s / a.len() as f64
}

pub fn bce_oracle(p: &[f64], t: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        let q = p[i].clamp(1e-7, 1.0 - 1e-7);
        s -= t[i] * q.ln() + (1.0 - t[i]) * (1.0 - q).ln();
    }
    s / p.len() as f64
}

pub fn psnr_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let mse = mse_oracle(a.data(), b.data());
    if mse < 1e-10 {
        100.0
    } else {
        (-10.0 * mse.log10()).min(100.0)
    }
}

/// SSIM computed window by window with explicit loops.
pub fn ssim_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let s = a.shape();
    let (h, w) = (s[2], s[3]);
    let k = 8;
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut total = 0.0;
    let mut count = 0.0;
    for r in 0..=h - k {
        for c in 0..=w - k {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for dy in 0..k {
                for dx in 0..k {
                    xs.push(a.data()[(r + dy) * w + c + dx]);
                    ys.push(b.data()[(r + dy) * w + c + dx]);
                }
            }
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            let vx = xs.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
            let vy = ys.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
            let cov = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| (x - mx) * (y - my))
                .sum::<f64>()
                / n;
            total += (2.0 * mx * my + c1) * (2.0 * cov + c2)
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

pub fn iou_oracle(a: &Tensor, b: &Tensor) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for i in 0..a.len() {
        let (x, y) = (a.data()[i] >= 0.5, b.data()[i] >= 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Breadth-first flood fill over 4-neighbours.
pub fn flood_fill_boxes(mask: &Tensor, min_area: usize) -> Vec<DetectionBox> {
    let s = mask.shape();
    let (h, w) = (s[2], s[3]);
    let on: Vec<bool> = mask.data().iter().map(|&v| v >= 0.5).collect();
    let mut seen = vec![false; h * w];
    let mut boxes = Vec::new();
    for start in 0..h * w {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let (mut r0, mut c0, mut r1, mut c1, mut area) = (h, w, 0, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (r, c) = (i / w, i % w);
            r0 = r0.min(r);
            c0 = c0.min(c);
            r1 = r1.max(r);
            c1 = c1.max(c);
            area += 1;
            let mut nbrs = Vec::new();
            if r > 0 {
                nbrs.push(i - w);
            }
            if r + 1 < h {
                nbrs.push(i + w);
            }
            if c > 0 {
                nbrs.push(i - 1);
            }
            if c + 1 < w {
                nbrs.push(i + 1);
            }
            for j in nbrs {
                if on[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        if area >= min_area {
            boxes.push(DetectionBox {
                min_row: r0,
                min_col: c0,
                max_row: r1,
                max_col: c1,
            });
        }
    }
    boxes.sort_by_key(|b| (b.min_row, b.min_col, b.max_row, b.max_col));
    boxes
}

fn box_iou_oracle(a: &DetectionBox, b: &DetectionBox) -> f64 {
    // count pixels explicitly
    let mut inter = 0usize;
    for r in a.min_row..=a.max_row {
        for c in a.min_col..=a.max_col {
            if (b.min_row..=b.max_row).contains(&r) && (b.min_col..=b.max_col).contains(&c) {
                inter += 1;
            }
        }
    }
    let area = |x: &DetectionBox| (x.max_row - x.min_row + 1) * (x.max_col - x.min_col + 1);
    inter as f64 / (area(a) + area(b) - inter) as f64
}

/// Greedy matching by repeatedly taking the best remaining pair.
pub fn f1_oracle(pred: &[DetectionBox], truth: &[DetectionBox], thresh: f64) -> f64 {
    if pred.is_empty() && truth.is_empty() {
        return 1.0;
    }
    let mut free_p: Vec<bool> = vec![true; pred.len()];
    let mut free_t: Vec<bool> = vec![true; truth.len()];
    let mut tp = 0.0;
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for i in 0..pred.len() {
            for j in 0..truth.len() {
                if !free_p[i] || !free_t[j] {
                    continue;
                }
                let v = box_iou_oracle(&pred[i], &truth[j]);
                if v >= thresh && best.is_none_or(|(bv, _, _)| v > bv) {
                    best = Some((v, i, j));
                }
            }
        }
        match best {
            Some((_, i, j)) => {
                free_p[i] = false;
                free_t[j] = false;
                tp += 1.0;
            }
            None => break,
        }
    }
    let p = if pred.is_empty() {
        0.0
    } else {
        tp / pred.len() as f64
    };
    let r = if truth.is_empty() {
        0.0
    } else {
        tp / truth.len() as f64
    };
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Parameter count of a U-Net from a per-layer tally.
pub fn unet_param_tally(in_ch: usize, out_ch: usize, scales: usize, width: usize) -> usize {
    let conv3 = |i: usize, o: usize| o * i * 9 + o;
    let bn = |c: usize| 2 * c;
    let block = |i: usize, o: usize| conv3(i, o) + bn(o) + conv3(o, o) + bn(o);
    let mut total = 0;
    let mut ch = in_ch;
    for level in 0..scales {
        let wl = width << level;
        total += block(ch, wl);
        ch = wl;
    }
    let bottom = width << scales;
    total += block(ch, bottom);
    ch = bottom;
    for level in (0..scales).rev() {
        let wl = width << level;
        total += block(ch + wl, wl);
        ch = wl;
    }
    total + out_ch * ch + out_ch
}

/// Random binary mask with clustered blobs, so components vary in size.
pub fn random_mask(rng: &mut Rng, h: usize, w: usize, density: f64) -> Tensor {
    let data = (0..h * w)
        .map(|_| if rng.gen_bool(density) { 1.0 } else { 0.0 })
        .collect();
    Tensor::image(h, w, data).unwrap()
}

/// Worst finite-difference error per differentiable operation for one seed,
/// plus a full two-scale U-Net with each head.
pub fn gradient_suite(seed: u64) -> Vec<(&'static str, f64)> {
    use jnt_core::autodiff::RunningStats;
    use jnt_core::nn::{build_unet, Head, UnetSpec};

    let mut r = rng(seed);
    let target = |shape: &[usize]| uniform(&mut rng(seed ^ 0xF00D), shape, -1.0, 1.0);
    let mut out = Vec::new();

    for pad in [0, 1] {
        let x = uniform(&mut r, &[2, 2, 5, 4], -1.0, 1.0);
        let w = uniform(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
        let b = uniform(&mut r, &[3], -1.0, 1.0);
        let t = target(&[2, 3, 5 - 2 * (1 - pad), 4 - 2 * (1 - pad)]);
        out.push((
            "conv2d",
            fd_check(&[x, w, b], |tp, v| {
                let y = tp.conv2d(v[0], v[1], v[2], pad)?;
                probe(tp, y, &t)
            }),
        ));
    }

    let x = uniform(&mut r, &[2, 3, 6, 4], -1.0, 1.0);
    let t = target(&[2, 3, 3, 2]);
    out.push((
        "maxpool2",
        fd_check(&[x], |tp, v| {
            let y = tp.maxpool2(v[0])?;
            probe(tp, y, &t)
        }),
    ));

    let x = uniform(&mut r, &[2, 2, 3, 2], -1.0, 1.0);
    let t = target(&[2, 2, 6, 4]);
    out.push((
        "upsample_nearest2",
        fd_check(&[x], |tp, v| {
            let y = tp.upsample_nearest2(v[0])?;
            probe(tp, y, &t)
        }),
    ));

    let x = uniform(&mut r, &[2, 3, 4, 4], -2.0, 2.0);
    let gamma = uniform(&mut r, &[3], 0.5, 1.5);
    let beta = uniform(&mut r, &[3], -0.5, 0.5);
    let t = target(&[2, 3, 4, 4]);
    for (name, mode) in [
        ("batchnorm2d (train)", Mode::Train),
        ("batchnorm2d (eval)", Mode::Eval),
    ] {
        out.push((
            name,
            fd_check(&[x.clone(), gamma.clone(), beta.clone()], |tp, v| {
                let mut stats = RunningStats {
                    mean: vec![0.1, -0.2, 0.3],
                    var: vec![0.5, 1.5, 2.0],
                };
                let y = tp.batchnorm2d(v[0], v[1], v[2], &mut stats, mode)?;
                probe(tp, y, &t)
            }),
        ));
    }

    let shape = [1, 2, 3, 3];
    let t = target(&shape);
    let x = away_from_zero(&mut r, &shape, 2.0, 1e-3);
    out.push((
        "leaky_relu",
        fd_check(std::slice::from_ref(&x), |tp, v| {
            let y = tp.leaky_relu(v[0], 0.01)?;
            probe(tp, y, &t)
        }),
    ));
    out.push((
        "sigmoid",
        fd_check(std::slice::from_ref(&x), |tp, v| {
            let y = tp.sigmoid(v[0])?;
            probe(tp, y, &t)
        }),
    ));
    out.push((
        "scale",
        fd_check(std::slice::from_ref(&x), |tp, v| {
            let y = tp.scale(v[0], -1.7)?;
            probe(tp, y, &t)
        }),
    ));
    out.push((
        "sum",
        fd_check(std::slice::from_ref(&x), |tp, v| tp.sum(v[0])),
    ));
    let inside = uniform(&mut r, &shape, 0.01, 0.99);
    out.push((
        "clamp_unit_straight_through",
        fd_check(&[inside], |tp, v| {
            let y = tp.clamp_unit_straight_through(v[0])?;
            probe(tp, y, &t)
        }),
    ));
    let y2 = uniform(&mut r, &shape, -1.0, 1.0);
    out.push((
        "add",
        fd_check(&[x.clone(), y2], |tp, v| {
            let y = tp.add(v[0], v[1])?;
            probe(tp, y, &t)
        }),
    ));
    let other = uniform(&mut r, &[1, 1, 3, 3], -1.0, 1.0);
    let tc = target(&[1, 3, 3, 3]);
    out.push((
        "concat_channels",
        fd_check(&[x, other], |tp, v| {
            let y = tp.concat_channels(v[0], v[1])?;
            probe(tp, y, &tc)
        }),
    ));

    let shape = [1, 1, 4, 5];
    let a = uniform(&mut r, &shape, -1.0, 1.0);
    let b = uniform(&mut r, &shape, -1.0, 1.0);
    out.push((
        "mse_loss",
        fd_check(&[a.clone(), b.clone()], |tp, v| tp.mse_loss(v[0], v[1])),
    ));
    let idx = vec![0, 3, 7, 19];
    out.push(("mse_at", fd_check(&[a], |tp, v| tp.mse_at(v[0], &b, &idx))));
    let p = uniform(&mut r, &shape, 0.05, 0.95);
    let y = uniform(&mut r, &shape, 0.0, 1.0);
    out.push(("bce_loss", fd_check(&[p], |tp, v| tp.bce_loss(v[0], &y))));

    for (name, head) in [
        ("U-Net (residual head)", Head::Residual),
        ("U-Net (sigmoid head)", Head::Sigmoid),
    ] {
        let mut net = build_unet(UnetSpec {
            in_channels: 1,
            out_channels: 1,
            scales: 2,
            base_width: 2,
            head,
        })
        .unwrap();
        net.init_params(seed);
        // move zero-initialised tensors off zero so every layer receives gradient
        for p in &mut net.params {
            for (i, v) in p.data_mut().iter_mut().enumerate() {
                if *v == 0.0 {
                    *v = 0.05 * ((i % 5) as f64 - 2.0);
                }
            }
        }
        let input = uniform(&mut rng(seed), &[1, 1, 8, 8], 0.0, 1.0);
        out.push((name, fd_check_network(&net, &input, &target(&[1, 1, 8, 8]))));
    }
    out
}
