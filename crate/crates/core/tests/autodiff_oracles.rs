mod common;

use common::*;
use jnt_core::autodiff::{adam_step, AdamState, Mode, RunningStats, Tape, Var};
use jnt_core::nn::{build_unet, UnetSpec};
use jnt_core::Tensor;

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

fn assert_fd(name: &str, err: f64) {
    assert!(err < FD_TOLERANCE, "{name}: relative error {err:e}");
}

#[test]
fn every_operation_passes_finite_differences() {
    for seed in SEEDS {
        for (name, err) in gradient_suite(seed) {
            assert_fd(&format!("{name} (seed {seed})"), err);
        }
    }
}

#[test]
fn conv2d_matches_loop_oracle() {
    for seed in SEEDS {
        let mut r = rng(seed);
        for (pad, k) in [(1, 3), (0, 3), (0, 1), (2, 5)] {
            let x = uniform(&mut r, &[2, 3, 7, 6], -1.0, 1.0);
            let w = uniform(&mut r, &[4, 3, k, k], -1.0, 1.0);
            let b = uniform(&mut r, &[4], -1.0, 1.0);
            let mut tape = Tape::new();
            let (xv, wv, bv) = (
                tape.constant(x.clone()),
                tape.constant(w.clone()),
                tape.constant(b.clone()),
            );
            let out = tape.conv2d(xv, wv, bv, pad).unwrap();
            let expected = conv_oracle(&x, &w, &b, pad);
            for (a, e) in tape.value(out).data().iter().zip(&expected) {
                assert!((a - e).abs() < 1e-12, "pad {pad} k {k}: {a} vs {e}");
            }
        }
    }
}

#[test]
fn maxpool_matches_block_max() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let x = uniform(&mut r, &[2, 3, 6, 4], -1.0, 1.0);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.maxpool2(xv).unwrap();
        assert_eq!(tape.value(y).data(), &maxpool_oracle(&x)[..]);
    }
}

#[test]
fn maxpool_ties_route_to_first_element() {
    let x = Tensor::new(vec![1, 1, 2, 2], vec![0.5; 4]).unwrap();
    let mut tape = Tape::new();
    let xv = tape.param(x);
    let y = tape.maxpool2(xv).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
}

#[test]
fn upsample_gradient_is_four() {
    let mut tape = Tape::new();
    let xv = tape.param(uniform(&mut rng(9), &[1, 2, 3, 3], -1.0, 1.0));
    let y = tape.upsample_nearest2(xv).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert!(tape.grad(xv).unwrap().iter().all(|&g| g == 4.0));
}

#[test]
fn batchnorm_constant_input_gives_zeros() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 2, 3, 3], 0.7));
    let g = tape.param(Tensor::full(&[2], 1.0));
    let b = tape.param(Tensor::zeros(&[2]));
    let mut stats = RunningStats::new(2);
    let y = tape.batchnorm2d(x, g, b, &mut stats, Mode::Train).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn leaky_relu_slope_at_negative_one() {
    let err = fd_check(&[Tensor::new(vec![1], vec![-1.0]).unwrap()], |t, v| {
        let y = t.leaky_relu(v[0], 0.01)?;
        t.sum(y)
    });
    assert_fd("leaky slope", err);
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![1], vec![-1.0]).unwrap());
    let y = tape.leaky_relu(x, 0.01).unwrap();
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), vec![0.01]);
}

#[test]
fn clamp_is_straight_through_outside_range() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::new(vec![3], vec![-0.5, 0.5, 1.5]).unwrap());
    let y = tape.clamp_unit_straight_through(x).unwrap();
    assert_eq!(tape.value(y).data(), &[0.0, 0.5, 1.0]);
    let s = tape.sum(y).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(x).unwrap(), vec![1.0, 1.0, 1.0]);
}

#[test]
fn loss_values_match_oracles() {
    for seed in SEEDS {
        let mut r = rng(seed);
        let shape = [1, 1, 4, 5];
        let a = uniform(&mut r, &shape, -1.0, 1.0);
        let b = uniform(&mut r, &shape, -1.0, 1.0);
        let mut tape = Tape::new();
        let (av, bv) = (tape.constant(a.clone()), tape.constant(b.clone()));
        let l = tape.mse_loss(av, bv).unwrap();
        assert!((tape.value(l).data()[0] - mse_oracle(a.data(), b.data())).abs() < 1e-12);

        let idx = vec![0, 3, 7, 19];
        let picked_a: Vec<f64> = idx.iter().map(|&i| a.data()[i]).collect();
        let picked_b: Vec<f64> = idx.iter().map(|&i| b.data()[i]).collect();
        let mut tape = Tape::new();
        let av = tape.constant(a.clone());
        let l = tape.mse_at(av, &b, &idx).unwrap();
        assert!((tape.value(l).data()[0] - mse_oracle(&picked_a, &picked_b)).abs() < 1e-12);

        let p = uniform(&mut r, &shape, 0.05, 0.95);
        let y = uniform(&mut r, &shape, 0.0, 1.0);
        let mut tape = Tape::new();
        let pv = tape.constant(p.clone());
        let l = tape.bce_loss(pv, &y).unwrap();
        assert!((tape.value(l).data()[0] - bce_oracle(p.data(), y.data())).abs() < 1e-12);
    }
}

#[test]
fn bce_near_saturation_stays_finite() {
    let mut tape = Tape::new();
    let p = tape.param(Tensor::new(vec![2], vec![1.0, 0.0]).unwrap());
    let l = tape
        .bce_loss(p, &Tensor::new(vec![2], vec![1.0, 0.0]).unwrap())
        .unwrap();
    assert!(tape.value(l).data()[0] < 1e-6);
    tape.backward(l).unwrap();
    assert!(tape.grad(p).unwrap().iter().all(|g| g.is_finite()));
}

#[test]
fn unet_input_gradient() {
    let mut net = build_unet(UnetSpec {
        base_width: 2,
        ..UnetSpec::segmenter()
    })
    .unwrap();
    net.init_params(3);
    let x = uniform(&mut rng(3), &[1, 1, 8, 8], 0.0, 1.0);
    let err = fd_check(&[x], |t, v: &[Var]| {
        let mut n = net.clone();
        let fwd = n.forward(t, v[0], Mode::Eval)?;
        t.sum(fwd.output)
    });
    assert_fd("U-Net input", err);
}

#[test]
fn unreachable_parameters_get_zero_gradient_and_backward_runs_once() {
    let mut tape = Tape::new();
    let a = tape.param(Tensor::full(&[2], 1.0));
    let unused = tape.param(Tensor::full(&[3], 1.0));
    assert!(tape.grad(a).is_none());
    let s = tape.sum(a).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(unused).unwrap(), vec![0.0; 3]);
    assert!(tape.backward(s).is_err());
}

#[test]
fn adam_converges_on_quadratic() {
    let mut params = vec![Tensor::new(vec![2], vec![0.0, 5.0]).unwrap()];
    let mut state = AdamState::new(&params);
    let loss = |p: &[f64]| (p[0] - 3.0).powi(2) + (p[1] - 3.0).powi(2);
    let start = loss(params[0].data());
    for _ in 0..1000 {
        let d = params[0].data();
        let g = vec![2.0 * (d[0] - 3.0), 2.0 * (d[1] - 3.0)];
        adam_step(&mut params, &[g], &mut state, 1e-2).unwrap();
    }
    assert!(loss(params[0].data()) < start * 1e-4);
    assert_eq!(state.step_count, 1000);
}
