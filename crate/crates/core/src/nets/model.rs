use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Variant, AUX_PAW_SCALE};
use super::NetError;
use crate::autodiff::{AutodiffError, Bindings, Element, LstmVars, ParamId, ParamStore, Tape, Tensor, Var};

/// Model input: `eit` is `[B,T,1,S,S]`, `aux_paw` is `[B,T,1]` in cmH2O.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBatch<E> {
    pub eit: Tensor<E>,
    pub aux_paw: Option<Tensor<E>>,
}

impl<E: Element> FrameBatch<E> {
    pub fn batch(&self) -> usize {
        self.eit.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.eit.shape()[1]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv { projection: bool },
    BatchNorm,
    Linear,
    Lstm,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerInfo {
    pub name: String,
    pub kind: LayerKind,
}

#[derive(Clone, Debug)]
struct ConvBn {
    w: ParamId,
    gamma: ParamId,
    beta: ParamId,
    run_mean: ParamId,
    run_var: ParamId,
    stride: usize,
    pad: usize,
}

#[derive(Clone, Debug)]
struct Block {
    a: ConvBn,
    b: ConvBn,
    shortcut: Option<ConvBn>,
}

#[derive(Clone, Debug)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct LstmDir {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

impl LstmDir {
    fn bind(&self, b: &Bindings) -> LstmVars {
        LstmVars { w_ih: b[self.w_ih], w_hh: b[self.w_hh], bias: b[self.bias] }
    }
}

/// Running-statistics update produced by one training-mode forward pass.
#[derive(Clone, Debug)]
pub struct BnUpdate<E> {
    pub mean: ParamId,
    pub var: ParamId,
    pub batch_mean: Vec<E>,
    /// Unbiased batch variance.
    pub batch_var: Vec<E>,
}

pub struct Forward<E> {
    /// `[B,T,K]`.
    pub output: Var,
    pub bn_updates: Vec<BnUpdate<E>>,
}

/// Per-frame convolutional feature extractor, bidirectional LSTM over the
/// frame sequence and a linear per-frame head.
#[derive(Clone, Debug)]
pub struct Model<E: Element> {
    config: ModelConfig,
    params: ParamStore<E>,
    layers: Vec<LayerInfo>,
    stem: ConvBn,
    blocks: Vec<Block>,
    proj: Linear,
    aux: Option<Linear>,
    lstm_fwd: LstmDir,
    lstm_bwd: LstmDir,
    head: Linear,
}

struct Builder<'a, E: Element> {
    params: &'a mut ParamStore<E>,
    layers: &'a mut Vec<LayerInfo>,
    rng: ChaCha8Rng,
}

impl<E: Element> Builder<'_, E> {
    fn uniform(&mut self, name: &str, shape: Vec<usize>, bound: f64) -> ParamId {
        let rng = &mut self.rng;
        let t = Tensor::from_fn(shape, |_| E::from_f64_lossy(rng.gen_range(-bound..=bound)));
        self.params.add(name, t, true)
    }

    fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64, trainable: bool) -> ParamId {
        self.params.add(name, Tensor::full(shape, E::from_f64_lossy(value)), trainable)
    }

    fn conv_bn(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize, projection: bool) -> ConvBn {
        let fan_in = (c_in * k * k) as f64;
        let w = self.uniform(&format!("{name}.weight"), vec![c_out, c_in, k, k], (6.0 / fan_in).sqrt());
        self.layers.push(LayerInfo { name: name.into(), kind: LayerKind::Conv { projection } });
        let bn = format!("{name}.bn");
        let gamma = self.constant(&format!("{bn}.gamma"), vec![c_out], 1.0, true);
        let beta = self.constant(&format!("{bn}.beta"), vec![c_out], 0.0, true);
        let run_mean = self.constant(&format!("{bn}.running_mean"), vec![c_out], 0.0, false);
        let run_var = self.constant(&format!("{bn}.running_var"), vec![c_out], 1.0, false);
        self.layers.push(LayerInfo { name: bn, kind: LayerKind::BatchNorm });
        ConvBn { w, gamma, beta, run_mean, run_var, stride, pad: k / 2 }
    }

    fn linear(&mut self, name: &str, in_f: usize, out_f: usize) -> Linear {
        let bound = 1.0 / (in_f as f64).sqrt();
        let w = self.uniform(&format!("{name}.weight"), vec![out_f, in_f], bound);
        let b = self.uniform(&format!("{name}.bias"), vec![out_f], bound);
        self.layers.push(LayerInfo { name: name.into(), kind: LayerKind::Linear });
        Linear { w, b }
    }

    /// Identity weight and zero bias when square, otherwise the default init.
    fn identity_linear(&mut self, name: &str, in_f: usize, out_f: usize) -> Linear {
        if in_f != out_f {
            return self.linear(name, in_f, out_f);
        }
        let w = self.params.add(
            format!("{name}.weight"),
            Tensor::from_fn(vec![out_f, in_f], |i| if i / in_f == i % in_f { E::one() } else { E::zero() }),
            true,
        );
        let b = self.constant(&format!("{name}.bias"), vec![out_f], 0.0, true);
        self.layers.push(LayerInfo { name: name.into(), kind: LayerKind::Linear });
        Linear { w, b }
    }

    fn lstm(&mut self, name: &str, input: usize, hidden: usize) -> LstmDir {
        let bound = 1.0 / (hidden as f64).sqrt();
        let w_ih = self.uniform(&format!("{name}.w_ih"), vec![4 * hidden, input], bound);
        let w_hh = self.uniform(&format!("{name}.w_hh"), vec![4 * hidden, hidden], bound);
        let bias = self.params.add(
            format!("{name}.bias"),
            Tensor::from_fn(vec![4 * hidden], |i| if (hidden..2 * hidden).contains(&i) { E::one() } else { E::zero() }),
            true,
        );
        self.layers.push(LayerInfo { name: name.into(), kind: LayerKind::Lstm });
        LstmDir { w_ih, w_hh, bias }
    }
}

impl<E: Element> Model<E> {
    /// Builds and initializes a model; all randomness comes from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, NetError> {
        let shapes = config.block_shapes()?;
        let mut params = ParamStore::new();
        let mut layers = Vec::new();
        let mut b = Builder { params: &mut params, layers: &mut layers, rng: ChaCha8Rng::seed_from_u64(seed) };
        let stem = b.conv_bn("stem", 1, config.initial_features, 3, 1, false);
        let mut blocks = Vec::with_capacity(shapes.len());
        for (i, s) in shapes.iter().enumerate() {
            let (g, k) = (i / config.layers_per_group, i % config.layers_per_group);
            let name = format!("group{g}.block{k}");
            let a = b.conv_bn(&format!("{name}.conv1"), s.in_channels, s.out_channels, 3, s.stride, false);
            let c = b.conv_bn(&format!("{name}.conv2"), s.out_channels, s.out_channels, 3, 1, false);
            let shortcut = s
                .needs_projection()
                .then(|| b.conv_bn(&format!("{name}.shortcut"), s.in_channels, s.out_channels, 1, s.stride, true));
            blocks.push(Block { a, b: c, shortcut });
        }
        let proj = b.identity_linear("proj", config.pooled_channels(), config.intermed_dim);
        let aux = (config.variant == Variant::EitPlusPaw).then(|| b.linear("aux", 1, config.aux_hidden));
        let lstm_fwd = b.lstm("lstm.fwd", config.lstm_input_size(), config.lstm_hidden);
        let lstm_bwd = b.lstm("lstm.bwd", config.lstm_input_size(), config.lstm_hidden);
        let head = b.linear("head", 2 * config.lstm_hidden, config.output_count());
        Ok(Model { config, params, layers, stem, blocks, proj, aux, lstm_fwd, lstm_bwd, head })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<E> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<E> {
        &mut self.params
    }

    pub fn layers(&self) -> &[LayerInfo] {
        &self.layers
    }

    /// Main-path convolutions found by walking the built layers.
    pub fn conv_layer_count(&self) -> usize {
        self.layers.iter().filter(|l| l.kind == LayerKind::Conv { projection: false }).count()
    }

    /// Input width of the LSTM, read off its weight shape.
    pub fn lstm_input_size(&self) -> usize {
        self.params.value(self.lstm_fwd.w_ih).shape()[1]
    }

    /// Parameter ids `(w_ih, w_hh, bias)` of the forward and backward LSTM.
    pub fn lstm_param_ids(&self) -> ([ParamId; 3], [ParamId; 3]) {
        let f = self.lstm_fwd;
        let b = self.lstm_bwd;
        ([f.w_ih, f.w_hh, f.bias], [b.w_ih, b.w_hh, b.bias])
    }

    /// Parameter ids `(weight, bias)` of the output layer.
    pub fn head_param_ids(&self) -> (ParamId, ParamId) {
        (self.head.w, self.head.b)
    }

    fn check_batch(&self, batch: &FrameBatch<E>) -> Result<(usize, usize), NetError> {
        let s = batch.eit.shape();
        let size = self.config.image_size;
        if s.len() != 5 || s[2] != 1 || s[3] != size || s[4] != size {
            return Err(NetError::Usage(format!("EIT batch must be [B,T,1,{size},{size}], got {s:?}")));
        }
        let (b, t) = (s[0], s[1]);
        match (&batch.aux_paw, self.config.variant == Variant::EitPlusPaw) {
            (None, true) => return Err(NetError::Usage("variant eit-plus-paw needs the airway pressure input".into())),
            (Some(_), false) => {
                return Err(NetError::Usage(format!("variant {} takes no airway pressure input", self.config.variant)))
            }
            (Some(a), true) if a.shape() != [b, t, 1] => {
                return Err(NetError::Usage(format!("airway pressure must be [{b},{t},1], got {:?}", a.shape())))
            }
            _ => {}
        }
        Ok((b, t))
    }

    fn conv_bn(
        &self,
        tape: &mut Tape<E>,
        p: &Bindings,
        layer: &ConvBn,
        x: Var,
        train: bool,
        updates: &mut Vec<BnUpdate<E>>,
    ) -> Result<Var, AutodiffError> {
        let y = tape.conv2d(x, p[layer.w], None, layer.stride, layer.pad)?;
        let eps = self.config.bn_eps;
        if train {
            let (out, stats) = tape.batch_norm(y, p[layer.gamma], p[layer.beta], eps)?;
            let n = stats.count as f64;
            let unbiased = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
            updates.push(BnUpdate {
                mean: layer.run_mean,
                var: layer.run_var,
                batch_mean: stats.mean,
                batch_var: stats.var.iter().map(|&v| E::from_f64_lossy(v.to_f64_lossy() * unbiased)).collect(),
            });
            Ok(out)
        } else {
            let mean = self.params.value(layer.run_mean).data();
            let var = self.params.value(layer.run_var).data();
            tape.batch_norm_frozen(y, p[layer.gamma], p[layer.beta], mean, var, eps)
        }
    }

    /// Runs the model on `tape` with parameters bound as `p`. In training
    /// mode normalization uses batch statistics and the returned updates
    /// should be applied with [`Model::apply_bn_updates`] after the step.
    pub fn forward(&self, tape: &mut Tape<E>, p: &Bindings, batch: &FrameBatch<E>, train: bool) -> Result<Forward<E>, NetError> {
        let (b, t) = self.check_batch(batch)?;
        let size = self.config.image_size;
        let mut updates = Vec::new();

        let frames = batch.eit.clone().reshape(vec![b * t, 1, size, size])?;
        let x = tape.constant(frames);
        let x = self.conv_bn(tape, p, &self.stem, x, train, &mut updates)?;
        let mut x = tape.relu(x)?;
        for block in &self.blocks {
            let h = self.conv_bn(tape, p, &block.a, x, train, &mut updates)?;
            let h = tape.relu(h)?;
            let h = self.conv_bn(tape, p, &block.b, h, train, &mut updates)?;
            let skip = match &block.shortcut {
                Some(s) => self.conv_bn(tape, p, s, x, train, &mut updates)?,
                None => x,
            };
            let sum = tape.add(h, skip)?;
            x = tape.relu(sum)?;
        }
        let pooled = tape.global_avg_pool(x)?;
        let feats = tape.linear(pooled, p[self.proj.w], Some(p[self.proj.b]))?;
        let mut feats = tape.reshape(feats, &[b, t, self.config.intermed_dim])?;

        if let (Some(aux), Some(paw)) = (&self.aux, &batch.aux_paw) {
            let scale = E::from_f64_lossy(1.0 / AUX_PAW_SCALE);
            let a = tape.constant(paw.map(|v| v * scale));
            let a = tape.linear(a, p[aux.w], Some(p[aux.b]))?;
            let a = tape.relu(a)?;
            feats = tape.concat(&[feats, a], 2)?;
        }

        let h = self.config.lstm_hidden;
        let fwd = self.run_lstm(tape, feats, self.lstm_fwd.bind(p), t, h, false)?;
        let bwd = self.run_lstm(tape, feats, self.lstm_bwd.bind(p), t, h, true)?;
        let seq = tape.concat(&[fwd, bwd], 2)?;
        let output = tape.linear(seq, p[self.head.w], Some(p[self.head.b]))?;
        Ok(Forward { output, bn_updates: updates })
    }

    /// One LSTM direction over `[B,T,D]`; returns hidden states `[B,T,H]` in time order.
    fn run_lstm(&self, tape: &mut Tape<E>, x: Var, w: LstmVars, t: usize, h: usize, reverse: bool) -> Result<Var, AutodiffError> {
        let b = tape.shape(x)[0];
        let gx = tape.linear(x, w.w_ih, Some(w.bias))?;
        let mut hs = vec![None; t];
        let (mut h_prev, mut c_prev) = (None, None);
        for k in 0..t {
            let step = if reverse { t - 1 - k } else { k };
            let state = tape.lstm_cell(gx, step, h_prev, c_prev, w.w_hh)?;
            let hv = tape.narrow(state, 1, 0, h)?;
            let cv = tape.narrow(state, 1, h, h)?;
            hs[step] = Some(hv);
            h_prev = Some(hv);
            c_prev = Some(cv);
        }
        let hs: Vec<Var> = hs.into_iter().map(|v| v.expect("every step visited")).collect();
        let flat = tape.concat(&hs, 1)?;
        tape.reshape(flat, &[b, t, h])
    }

    /// Exponential moving average of the running statistics.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate<E>]) {
        let m = E::from_f64_lossy(self.config.bn_momentum);
        let keep = E::one() - m;
        for u in updates {
            for (r, &v) in self.params.value_mut(u.mean).data_mut().iter_mut().zip(&u.batch_mean) {
                *r = keep * *r + m * v;
            }
            for (r, &v) in self.params.value_mut(u.var).data_mut().iter_mut().zip(&u.batch_var) {
                *r = keep * *r + m * v;
            }
        }
    }

    /// Evaluation-mode forward pass (running statistics, no gradients).
    pub fn predict(&self, batch: &FrameBatch<E>) -> Result<Tensor<E>, NetError> {
        let mut tape = Tape::inference();
        let p = self.params.bind(&mut tape);
        let out = self.forward(&mut tape, &p, batch, false)?;
        Ok(tape.value(out.output).clone())
    }
}
