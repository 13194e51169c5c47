//! Independent reference implementations for the autodiff primitives.

use eitphys::autodiff::{LstmVars, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-1.0..1.0))
}

/// Values bounded away from zero so ReLU / |·| kinks stay outside the FD stencil.
pub fn rand_away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Direct quadruple-loop cross-correlation.
pub fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64], stride: usize, pad: usize) -> Tensor<f64> {
    let (n, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[0], w.shape()[2]);
    let ho = (h + 2 * pad - k) / stride + 1;
    let wo = (wd + 2 * pad - k) / stride + 1;
    let mut out = vec![0.0; n * co * ho * wo];
    for bi in 0..n {
        for o in 0..co {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut s = b[o];
                    for c in 0..ci {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((bi * ci + c) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((o * ci + c) * k + ky) * k + kx];
                                s += xv * wv;
                            }
                        }
                    }
                    out[((bi * co + o) * ho + oy) * wo + ox] = s;
                }
            }
        }
    }
    Tensor::new(vec![n, co, ho, wo], out).unwrap()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Scalar-by-scalar evaluation of the LSTM gate equations.
pub fn scalar_lstm(x: &[f64], h: &[f64], c: &[f64], w_ih: &[f64], w_hh: &[f64], bias: &[f64], d: usize, hid: usize) -> (Vec<f64>, Vec<f64>) {
    let pre = |gate: usize, j: usize| {
        let row = gate * hid + j;
        let mut s = bias[row];
        for k in 0..d {
            s += w_ih[row * d + k] * x[k];
        }
        for k in 0..hid {
            s += w_hh[row * hid + k] * h[k];
        }
        s
    };
    let mut h_new = vec![0.0; hid];
    let mut c_new = vec![0.0; hid];
    for j in 0..hid {
        let i = sigmoid(pre(0, j));
        let f = sigmoid(pre(1, j));
        let g = pre(2, j).tanh();
        let o = sigmoid(pre(3, j));
        c_new[j] = f * c[j] + i * g;
        h_new[j] = o * c_new[j].tanh();
    }
    (h_new, c_new)
}

/// Largest absolute difference between `conv2d` and [`naive_conv`] over a
/// 1×1×4×4 case and `instances` random geometries.
pub fn conv_oracle_max_error(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = vec![(1, 1, 4, 4, 1, 3, 1, 0)];
    for _ in 0..instances {
        cases.push((
            rng.gen_range(1..3),
            rng.gen_range(1..4),
            rng.gen_range(3..9),
            rng.gen_range(3..9),
            rng.gen_range(1..4),
            [1, 3][rng.gen_range(0..2)],
            rng.gen_range(1..3),
            rng.gen_range(0..2),
        ));
    }
    let mut worst = 0.0f64;
    for (n, ci, h, w, co, k, s, p) in cases {
        let x = rand_tensor(&mut rng, &[n, ci, h, w]);
        let wt = rand_tensor(&mut rng, &[co, ci, k, k]);
        let b: Vec<f64> = (0..co).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let want = naive_conv(&x, &wt, &b, s, p);
        let mut tape = Tape::new();
        let (xv, wv) = (tape.constant(x), tape.constant(wt));
        let bv = tape.constant(Tensor::new(vec![co], b).unwrap());
        let y = tape.conv2d(xv, wv, Some(bv), s, p).unwrap();
        assert_eq!(tape.shape(y), want.shape());
        worst = worst.max(tape.value(y).max_abs_diff(&want));
    }
    worst
}

/// Largest absolute difference between `lstm_step` and [`scalar_lstm`] over
/// `instances` random instances with B=1, D=2, H=3.
pub fn lstm_oracle_max_error(seed: u64, instances: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, hid) = (2, 3);
    let mut worst = 0.0f64;
    for _ in 0..instances {
        let w_ih = rand_tensor(&mut rng, &[4 * hid, d]);
        let w_hh = rand_tensor(&mut rng, &[4 * hid, hid]);
        let bias = rand_tensor(&mut rng, &[4 * hid]);
        let x = rand_tensor(&mut rng, &[1, d]);
        let h0 = rand_tensor(&mut rng, &[1, hid]);
        let c0 = rand_tensor(&mut rng, &[1, hid]);
        let (want_h, want_c) = scalar_lstm(x.data(), h0.data(), c0.data(), w_ih.data(), w_hh.data(), bias.data(), d, hid);
        let mut tape = Tape::new();
        let w = LstmVars { w_ih: tape.leaf(w_ih, true), w_hh: tape.leaf(w_hh, true), bias: tape.leaf(bias, true) };
        let (xv, hv, cv) = (tape.constant(x), tape.constant(h0), tape.constant(c0));
        let (h, c) = tape.lstm_step(xv, hv, cv, &w).unwrap();
        for (a, b) in tape.value(h).data().iter().zip(&want_h).chain(tape.value(c).data().iter().zip(&want_c)) {
            worst = worst.max((a - b).abs());
        }
    }
    worst
}
