//! Central finite-difference checks of every autodiff primitive and of the
//! tiny end-to-end model, in f64.

use eitphys::autodiff::gradcheck::{check_gradients, GradCheckReport};
use eitphys::autodiff::{AutodiffError, Bindings, LstmVars, Tape, Tensor, Var};
use eitphys::nets::{FrameBatch, Model, ModelConfig, NetError, Variant};
use eitphys::sigproc::ChannelId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::{rand_away_from_zero, rand_tensor};

pub const FD_EPS: f64 = 1e-4;
pub const FD_TOL: f64 = 1e-4;

#[derive(Default)]
pub struct GradientSuite {
    pub cases: Vec<(String, GradCheckReport)>,
}

impl GradientSuite {
    pub fn check(&mut self, name: &str, inputs: Vec<Tensor<f64>>, f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>) {
        self.check_with_eps(name, inputs, FD_EPS, f);
    }

    pub fn check_with_eps(
        &mut self,
        name: &str,
        inputs: Vec<Tensor<f64>>,
        eps: f64,
        f: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var, AutodiffError>,
    ) {
        let report = check_gradients(&inputs, eps, f).unwrap();
        self.cases.push((name.to_string(), report));
    }

    /// The case with the largest relative error.
    pub fn worst(&self) -> (&str, f64) {
        self.cases
            .iter()
            .map(|(n, r)| (n.as_str(), r.max_rel_error))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or(("none", 0.0))
    }

    pub fn failures(&self, tol: f64) -> Vec<&(String, GradCheckReport)> {
        self.cases.iter().filter(|(_, r)| !r.passes(tol)).collect()
    }
}

/// A bidirectional LSTM assembled from tape ops: `[B,T,D] → [B,T,2H]`.
pub fn bilstm(t: &mut Tape<f64>, x: Var, fwd: &LstmVars, bwd: &LstmVars, hid: usize) -> Result<Var, AutodiffError> {
    let (b, steps) = (t.shape(x)[0], t.shape(x)[1]);
    let mut dirs = Vec::new();
    for (w, reverse) in [(fwd, false), (bwd, true)] {
        let gx = t.linear(x, w.w_ih, Some(w.bias))?;
        let mut h = None;
        let mut c = None;
        let mut outs = vec![None; steps];
        let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
        for step in order {
            let s = t.lstm_cell(gx, step, h, c, w.w_hh)?;
            let hv = t.narrow(s, 1, 0, hid)?;
            c = Some(t.narrow(s, 1, hid, hid)?);
            h = Some(hv);
            outs[step] = Some(t.reshape(hv, &[b, 1, hid])?);
        }
        let outs: Vec<Var> = outs.into_iter().map(Option::unwrap).collect();
        dirs.push(t.concat(&outs, 1)?);
    }
    t.concat(&dirs, 2)
}

/// Every primitive on 20 random instances. Each op is wrapped in a weighted
/// sum so that the scalar depends on every output element differently.
pub fn primitives(suite: &mut GradientSuite) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        // Weighted sum with a fixed random positive mask.
        let weighted = |t: &mut Tape<f64>, y: Var, seed: u64| -> Result<Var, AutodiffError> {
            let shape = t.shape(y).to_vec();
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let n: usize = shape.iter().product();
            let mask = t.constant(Tensor::from_fn(vec![1, n], |_| r.gen_range(0.5..1.5)));
            let flat = t.reshape(y, &[1, n])?;
            let wsum = t.linear(flat, mask, None)?;
            t.sum(wsum)
        };
        let seed = rng.gen::<u64>();

        // add
        let (a, b) = (rand_tensor(&mut rng, &[2, 3]), rand_tensor(&mut rng, &[2, 3]));
        suite.check("add", vec![a, b], move |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted(t, y, seed)
        });
        // relu
        suite.check("relu", vec![rand_away_from_zero(&mut rng, &[3, 4])], move |t, v| {
            let y = t.relu(v[0])?;
            weighted(t, y, seed)
        });
        // linear
        let (x, w, b) = (rand_tensor(&mut rng, &[2, 2, 3]), rand_tensor(&mut rng, &[4, 3]), rand_tensor(&mut rng, &[4]));
        suite.check("linear", vec![x, w, b], move |t, v| {
            let y = t.linear(v[0], v[1], Some(v[2]))?;
            weighted(t, y, seed)
        });
        // conv2d, strided and padded
        let (x, w, b) = (rand_tensor(&mut rng, &[2, 2, 5, 5]), rand_tensor(&mut rng, &[3, 2, 3, 3]), rand_tensor(&mut rng, &[3]));
        suite.check("conv2d", vec![x, w, b], move |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 2, 1)?;
            weighted(t, y, seed)
        });
        // batch norm with batch statistics
        let (x, g, b) = (rand_tensor(&mut rng, &[3, 2, 2, 2]), rand_tensor(&mut rng, &[2]), rand_tensor(&mut rng, &[2]));
        suite.check("batch_norm", vec![x, g, b], move |t, v| {
            let (y, _) = t.batch_norm(v[0], v[1], v[2], 1e-5)?;
            weighted(t, y, seed)
        });
        // batch norm with frozen statistics
        let (x, g, b) = (rand_tensor(&mut rng, &[3, 2]), rand_tensor(&mut rng, &[2]), rand_tensor(&mut rng, &[2]));
        suite.check("batch_norm_frozen", vec![x, g, b], move |t, v| {
            let y = t.batch_norm_frozen(v[0], v[1], v[2], &[0.1, -0.2], &[0.5, 2.0], 1e-5)?;
            weighted(t, y, seed)
        });
        // global average pool
        suite.check("global_avg_pool", vec![rand_tensor(&mut rng, &[2, 3, 3, 2])], move |t, v| {
            let y = t.global_avg_pool(v[0])?;
            weighted(t, y, seed)
        });
        // concat along the feature axis, and narrow
        let (a, b) = (rand_tensor(&mut rng, &[2, 3, 2]), rand_tensor(&mut rng, &[2, 3, 4]));
        suite.check("concat+narrow", vec![a, b], move |t, v| {
            let y = t.concat(&[v[0], v[1]], 2)?;
            let y = t.narrow(y, 2, 1, 4)?;
            weighted(t, y, seed)
        });
        // mean and sum reductions
        suite.check("mean+sum", vec![rand_tensor(&mut rng, &[4, 2])], move |t, v| {
            let m = t.mean(v[0])?;
            let s = t.sum(v[0])?;
            let y = t.concat(&[m, s], 0)?;
            weighted(t, y, seed)
        });
        // l1 loss, both arguments
        let (p, q) = (rand_tensor(&mut rng, &[2, 5]), rand_tensor(&mut rng, &[2, 5]));
        let q = Tensor::from_fn(vec![2, 5], |i| {
            let d = p.data()[i] - q.data()[i];
            if d.abs() < 0.05 {
                q.data()[i] + 0.1
            } else {
                q.data()[i]
            }
        });
        suite.check("l1_loss", vec![p, q], |t, v| t.l1_loss(v[0], v[1]));
        // lstm cell on a two-step sequence
        let hid = 2;
        let inputs = vec![
            rand_tensor(&mut rng, &[2, 2, 4 * hid]),
            rand_tensor(&mut rng, &[4 * hid, hid]),
            rand_tensor(&mut rng, &[2, hid]),
            rand_tensor(&mut rng, &[2, hid]),
        ];
        suite.check("lstm_cell", inputs, move |t, v| {
            let s0 = t.lstm_cell(v[0], 0, Some(v[2]), Some(v[3]), v[1])?;
            let h = t.narrow(s0, 1, 0, hid)?;
            let c = t.narrow(s0, 1, hid, hid)?;
            let s1 = t.lstm_cell(v[0], 1, Some(h), Some(c), v[1])?;
            weighted(t, s1, seed)
        });
    }
}

pub fn compositions(suite: &mut GradientSuite) {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = rand_tensor(&mut rng, &[1, 1, 6, 6]);
    let w = rand_tensor(&mut rng, &[2, 1, 3, 3]);
    let b = rand_tensor(&mut rng, &[2]);
    let target = rand_away_from_zero(&mut rng, &[1, 2, 4, 4]).map(|v| v + 2.0 * v.signum());
    suite.check("conv2d+relu+l1_loss", vec![x, w, b], move |t, v| {
        let y = t.conv2d(v[0], v[1], Some(v[2]), 1, 0)?;
        let y = t.relu(y)?;
        let tg = t.constant(target.clone());
        t.l1_loss(y, tg)
    });

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (d, e, hid) = (3, 4, 3);
    let inputs = vec![
        rand_tensor(&mut rng, &[1, 5, d]),
        rand_tensor(&mut rng, &[e, d]),
        rand_tensor(&mut rng, &[e]),
        rand_tensor(&mut rng, &[4 * hid, e]),
        rand_tensor(&mut rng, &[4 * hid, hid]),
        rand_tensor(&mut rng, &[4 * hid]),
        rand_tensor(&mut rng, &[4 * hid, e]),
        rand_tensor(&mut rng, &[4 * hid, hid]),
        rand_tensor(&mut rng, &[4 * hid]),
    ];
    suite.check("linear+bilstm+mean", inputs, move |t, v| {
        let z = t.linear(v[0], v[1], Some(v[2]))?;
        let fwd = LstmVars { w_ih: v[3], w_hh: v[4], bias: v[5] };
        let bwd = LstmVars { w_ih: v[6], w_hh: v[7], bias: v[8] };
        let y = bilstm(t, z, &fwd, &bwd, hid)?;
        t.mean(y)
    });
}

/// The whole model at toy size, both input variants, through a fixed linear probe.
pub fn tiny_model(suite: &mut GradientSuite) {
    for variant in [Variant::EitOnly, Variant::EitPlusPaw] {
        let cfg = ModelConfig {
            groups: 1,
            layers_per_group: 1,
            initial_features: 2,
            intermed_dim: 3,
            lstm_hidden: 4,
            aux_hidden: 2,
            image_size: 6,
            output_channels: vec![ChannelId::Ptp],
            variant,
            ..ModelConfig::default()
        };
        let m = Model::<f64>::new(cfg, 11).unwrap();
        let (b, t) = (2, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let eit = Tensor::from_fn(vec![b, t, 1, 6, 6], |_| rng.gen_range(-1.0..1.0));
        let aux_paw = (variant == Variant::EitPlusPaw).then(|| Tensor::from_fn(vec![b, t, 1], |i| 5.0 + 3.0 * i as f64));
        let batch = FrameBatch { eit, aux_paw };
        let probe = Tensor::new(vec![1, 1], vec![0.7]).unwrap();
        let inputs: Vec<Tensor<f64>> = m.params().iter().map(|(_, p)| p.value.clone()).collect();
        suite.check_with_eps(&format!("tiny model ({variant})"), inputs, 1e-6, |tape, vars| {
            let p = Bindings::from_vars(vars.to_vec());
            let out = m.forward(tape, &p, &batch, true).map_err(|e| match e {
                NetError::Autodiff(e) => e,
                other => panic!("{other}"),
            })?;
            let w = tape.constant(probe.clone());
            let y = tape.linear(out.output, w, None)?;
            tape.sum(y)
        });
    }
}

pub fn run_all() -> GradientSuite {
    let mut suite = GradientSuite::default();
    primitives(&mut suite);
    compositions(&mut suite);
    tiny_model(&mut suite);
    suite
}
