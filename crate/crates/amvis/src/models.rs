//! Desk-scale model zoo: a small CNN and a tiny ViT with named activation
//! taps at every layer, trained with momentum SGD on the synthetic shape
//! dataset and serialized as a manifest plus concatenated LMT1 tensors.

use crate::data::Dataset;
use crate::error::{AmvisError, Result};
use crate::io::{read_lmt1, write_lmt1};
use crate::tensor::tape::{Tape, VarId};
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::io::{BufRead, Write};
use std::path::Path;

const CNN_CHANNELS: [usize; 4] = [8, 16, 32, 64];
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub enum ArchDesc {
    Cnn,
    Vit {
        patch: usize,
        dim: usize,
        heads: usize,
        layers: usize,
        mlp_dim: usize,
    },
}

/// Registered activation extraction point. `shape` is the per-sample
/// activation shape (without the batch axis).
#[derive(Clone, Debug)]
pub struct TapInfo {
    pub name: String,
    pub layer: usize,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct ModelGraph {
    pub arch: ArchDesc,
    pub input: (usize, usize, usize),
    pub classes: usize,
    params: Vec<(String, Tensor)>,
    taps: Vec<TapInfo>,
}

/// Tap values and logits from one forward pass, as live tape variables.
pub struct ForwardPass {
    pub taps: Vec<(String, VarId)>,
    pub logits: VarId,
    /// per-block attention probabilities [N*heads, T, T] (ViT only)
    pub attention: Vec<VarId>,
}

impl ForwardPass {
    pub fn tap(&self, name: &str) -> Result<VarId> {
        self.taps
            .iter()
            .find(|(n, _)| n == name)
            .map(|&(_, v)| v)
            .ok_or_else(|| AmvisError::UnknownTap(name.to_string()))
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub epochs: usize,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub loss_curve: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn new(epochs: usize, lr: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs,
            lr,
            momentum: 0.9,
            batch_size: 32,
            seed,
        }
    }
}

// ---- builders ---------------------------------------------------------------

/// Four conv blocks (conv3x3 -> relu -> maxpool2) with taps conv_pw_1..4 on
/// the pre-pool activation, then a linear pre-softmax head tapped as "logits".
pub fn build_small_cnn(input: (usize, usize, usize), classes: usize, seed: u64) -> Result<ModelGraph> {
    let (c, h, w) = input;
    if c != 3 {
        return Err(AmvisError::ModelConfig(format!("expected 3 input channels, got {}", c)));
    }
    if h < 16 || w < 16 {
        return Err(AmvisError::InputTooSmall { h, w, min: 16 });
    }
    if h % 16 != 0 || w % 16 != 0 {
        return Err(AmvisError::ModelConfig(format!(
            "input {}x{} not divisible by 16 (four stride-2 pools)",
            h, w
        )));
    }
    if classes == 0 {
        return Err(AmvisError::ModelConfig("classes must be positive".into()));
    }
    let mut params = Vec::new();
    let mut taps = Vec::new();
    let mut in_c = c;
    let (mut th, mut tw) = (h, w);
    for (i, &out_c) in CNN_CHANNELS.iter().enumerate() {
        let fan_in = in_c * 9;
        let wt = Tensor::randn(
            &[out_c, in_c, 3, 3],
            (2.0 / fan_in as f64).sqrt(),
            mix_seed(seed, i as u64),
        );
        params.push((format!("conv{}.weight", i + 1), wt));
        params.push((format!("conv{}.bias", i + 1), Tensor::zeros(&[out_c])));
        taps.push(TapInfo {
            name: format!("conv_pw_{}", i + 1),
            layer: i + 1,
            shape: vec![out_c, th, tw],
        });
        th /= 2;
        tw /= 2;
        in_c = out_c;
    }
    let flat = in_c * th * tw;
    params.push((
        "head.weight".to_string(),
        Tensor::randn(&[flat, classes], (2.0 / flat as f64).sqrt(), mix_seed(seed, 100)),
    ));
    params.push(("head.bias".to_string(), Tensor::zeros(&[classes])));
    taps.push(TapInfo {
        name: "logits".to_string(),
        layer: CNN_CHANNELS.len() + 1,
        shape: vec![classes],
    });
    let mut model = ModelGraph {
        arch: ArchDesc::Cnn,
        input,
        classes,
        params,
        taps,
    };
    model.snap_params();
    Ok(model)
}

/// Patch embedding + learned position embeddings + pre-norm attention/MLP
/// blocks with taps hidden_1..layers, mean-pooled classifier tapped "logits".
pub fn build_tiny_vit(
    input: (usize, usize, usize),
    patch: usize,
    dim: usize,
    heads: usize,
    layers: usize,
    classes: usize,
    seed: u64,
) -> Result<ModelGraph> {
    let (c, h, w) = input;
    if c != 3 {
        return Err(AmvisError::ModelConfig(format!("expected 3 input channels, got {}", c)));
    }
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(AmvisError::ModelConfig(format!(
            "patch {} must divide input {}x{}",
            patch, h, w
        )));
    }
    if heads == 0 || dim % heads != 0 {
        return Err(AmvisError::ModelConfig(format!(
            "dim {} must be divisible by heads {}",
            dim, heads
        )));
    }
    if layers == 0 || classes == 0 {
        return Err(AmvisError::ModelConfig("layers and classes must be positive".into()));
    }
    let tokens = (h / patch) * (w / patch);
    let mlp_dim = 4 * dim;
    let std = 0.02;
    let mut params = Vec::new();
    let mut taps = Vec::new();
    let mut s = seed;
    let mut next_seed = || {
        s = mix_seed(s, 0x9e37);
        s
    };
    params.push((
        "patch.weight".into(),
        Tensor::randn(&[c * patch * patch, dim], std, next_seed()),
    ));
    params.push(("patch.bias".into(), Tensor::zeros(&[dim])));
    params.push(("pos".into(), Tensor::randn(&[tokens, dim], std, next_seed())));
    for l in 1..=layers {
        let p = |n: &str| format!("block{}.{}", l, n);
        params.push((p("ln1.gamma"), Tensor::full(&[dim], 1.0)));
        params.push((p("ln1.beta"), Tensor::zeros(&[dim])));
        params.push((p("qkv.weight"), Tensor::randn(&[dim, 3 * dim], std, next_seed())));
        params.push((p("qkv.bias"), Tensor::zeros(&[3 * dim])));
        params.push((p("proj.weight"), Tensor::randn(&[dim, dim], std, next_seed())));
        params.push((p("proj.bias"), Tensor::zeros(&[dim])));
        params.push((p("ln2.gamma"), Tensor::full(&[dim], 1.0)));
        params.push((p("ln2.beta"), Tensor::zeros(&[dim])));
        params.push((p("fc1.weight"), Tensor::randn(&[dim, mlp_dim], std, next_seed())));
        params.push((p("fc1.bias"), Tensor::zeros(&[mlp_dim])));
        params.push((p("fc2.weight"), Tensor::randn(&[mlp_dim, dim], std, next_seed())));
        params.push((p("fc2.bias"), Tensor::zeros(&[dim])));
        taps.push(TapInfo {
            name: format!("hidden_{}", l),
            layer: l,
            shape: vec![tokens, dim],
        });
    }
    params.push(("ln_f.gamma".into(), Tensor::full(&[dim], 1.0)));
    params.push(("ln_f.beta".into(), Tensor::zeros(&[dim])));
    params.push((
        "head.weight".into(),
        Tensor::randn(&[dim, classes], std, next_seed()),
    ));
    params.push(("head.bias".into(), Tensor::zeros(&[classes])));
    taps.push(TapInfo {
        name: "logits".into(),
        layer: layers + 1,
        shape: vec![classes],
    });
    let mut model = ModelGraph {
        arch: ArchDesc::Vit {
            patch,
            dim,
            heads,
            layers,
            mlp_dim,
        },
        input,
        classes,
        params,
        taps,
    };
    model.snap_params();
    Ok(model)
}

fn mix_seed(seed: u64, salt: u64) -> u64 {
    // splitmix64 round
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9e3779b97f4a7c15))
        .wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

// ---- forward ----------------------------------------------------------------

impl ModelGraph {
    pub fn taps(&self) -> &[TapInfo] {
        &self.taps
    }

    pub fn tap_info(&self, name: &str) -> Result<&TapInfo> {
        self.taps
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| AmvisError::UnknownTap(name.to_string()))
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn snap_params(&mut self) {
        for (_, t) in &mut self.params {
            t.snap_to_f32();
        }
    }

    /// FNV-1a over the f32 bit patterns of all parameters; used to verify
    /// the frozen-f contract.
    pub fn weights_checksum(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for (name, t) in &self.params {
            for b in name.as_bytes() {
                h = (h ^ *b as u64).wrapping_mul(0x100000001b3);
            }
            for &v in &t.data {
                for b in (v as f32).to_le_bytes() {
                    h = (h ^ b as u64).wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }

    /// Inserts every parameter as a tape leaf, in declaration order.
    pub fn bind_params(&self, tape: &mut Tape, requires_grad: bool) -> Vec<VarId> {
        self.params
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), requires_grad))
            .collect()
    }

    fn pvar(&self, vars: &[VarId], name: &str) -> VarId {
        let idx = self
            .params
            .iter()
            .position(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("parameter {} missing", name));
        vars[idx]
    }

    /// Runs the network on a [N,C,H,W] batch variable, recording every tap.
    pub fn forward(&self, tape: &mut Tape, x: VarId, pvars: &[VarId]) -> Result<ForwardPass> {
        let shape = tape.shape(x).to_vec();
        let (c, h, w) = self.input;
        if shape.len() != 4 || shape[1] != c || shape[2] != h || shape[3] != w {
            return Err(AmvisError::ShapeMismatch {
                op: "model forward",
                detail: format!("input {:?}, model expects [N,{},{},{}]", shape, c, h, w),
            });
        }
        match self.arch.clone() {
            ArchDesc::Cnn => self.forward_cnn(tape, x, pvars, shape[0]),
            ArchDesc::Vit {
                patch,
                dim,
                heads,
                layers,
                mlp_dim,
            } => self.forward_vit(tape, x, pvars, shape[0], patch, dim, heads, layers, mlp_dim),
        }
    }

    fn forward_cnn(&self, tape: &mut Tape, x: VarId, pv: &[VarId], n: usize) -> Result<ForwardPass> {
        let mut taps = Vec::new();
        let mut cur = x;
        for (i, _) in CNN_CHANNELS.iter().enumerate() {
            let wt = self.pvar(pv, &format!("conv{}.weight", i + 1));
            let bias = self.pvar(pv, &format!("conv{}.bias", i + 1));
            let out_c = tape.shape(wt)[0];
            let conv = tape.conv2d(cur, wt, 1, 1)?;
            let b3 = tape.reshape(bias, &[out_c, 1, 1])?;
            let biased = tape.add(conv, b3)?;
            let act = tape.relu(biased);
            taps.push((format!("conv_pw_{}", i + 1), act));
            cur = tape.max_pool2x2(act)?;
        }
        let s = tape.shape(cur).to_vec();
        let flat = s[1] * s[2] * s[3];
        let flat_v = tape.reshape(cur, &[n, flat])?;
        let hw = self.pvar(pv, "head.weight");
        let hb = self.pvar(pv, "head.bias");
        let z = tape.matmul(flat_v, hw)?;
        let logits = tape.add(z, hb)?;
        taps.push(("logits".to_string(), logits));
        Ok(ForwardPass {
            taps,
            logits,
            attention: Vec::new(),
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn forward_vit(
        &self,
        tape: &mut Tape,
        x: VarId,
        pv: &[VarId],
        n: usize,
        patch: usize,
        dim: usize,
        heads: usize,
        layers: usize,
        mlp_dim: usize,
    ) -> Result<ForwardPass> {
        let (_, h, w) = self.input;
        let tokens = (h / patch) * (w / patch);
        let hd = dim / heads;
        let mut taps = Vec::new();
        let mut attention = Vec::new();

        // patch embedding
        let patches = tape.patch_extract(x, patch)?; // [N,T,cpp]
        let cpp = tape.shape(patches)[2];
        let flat = tape.reshape(patches, &[n * tokens, cpp])?;
        let pw = self.pvar(pv, "patch.weight");
        let pb = self.pvar(pv, "patch.bias");
        let emb = tape.matmul(flat, pw)?;
        let emb = tape.add(emb, pb)?;
        let mut cur = tape.reshape(emb, &[n, tokens, dim])?;
        let pos = self.pvar(pv, "pos");
        cur = tape.add(cur, pos)?;

        for l in 1..=layers {
            let p = |nm: &str| format!("block{}.{}", l, nm);
            // attention sublayer, pre-norm
            let normed = layer_norm(
                tape,
                cur,
                self.pvar(pv, &p("ln1.gamma")),
                self.pvar(pv, &p("ln1.beta")),
            )?;
            let nf = tape.reshape(normed, &[n * tokens, dim])?;
            let qkv_w = self.pvar(pv, &p("qkv.weight"));
            let qkv_b = self.pvar(pv, &p("qkv.bias"));
            let qkv = tape.matmul(nf, qkv_w)?;
            let qkv = tape.add(qkv, qkv_b)?;
            let qkv = tape.reshape(qkv, &[n, tokens, 3 * dim])?;
            let to_heads = |tape: &mut Tape, v: VarId| -> Result<VarId> {
                let r = tape.reshape(v, &[n, tokens, heads, hd])?;
                let p = tape.permute(r, &[0, 2, 1, 3])?;
                tape.reshape(p, &[n * heads, tokens, hd])
            };
            let q = tape.narrow(qkv, 2, 0, dim)?;
            let k = tape.narrow(qkv, 2, dim, dim)?;
            let v = tape.narrow(qkv, 2, 2 * dim, dim)?;
            let q = to_heads(tape, q)?;
            let k = to_heads(tape, k)?;
            let v = to_heads(tape, v)?;
            let kt = tape.transpose_last2(k)?;
            let scores = tape.bmm(q, kt)?;
            let scores = tape.scale(scores, 1.0 / (hd as f64).sqrt());
            let probs = tape.softmax(scores, 2)?;
            attention.push(probs);
            let ctx = tape.bmm(probs, v)?; // [N*heads, T, hd]
            let ctx = tape.reshape(ctx, &[n, heads, tokens, hd])?;
            let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
            let ctx = tape.reshape(ctx, &[n * tokens, dim])?;
            let proj_w = self.pvar(pv, &p("proj.weight"));
            let proj_b = self.pvar(pv, &p("proj.bias"));
            let proj = tape.matmul(ctx, proj_w)?;
            let proj = tape.add(proj, proj_b)?;
            let proj = tape.reshape(proj, &[n, tokens, dim])?;
            cur = tape.add(cur, proj)?;

            // MLP sublayer, pre-norm
            let normed = layer_norm(
                tape,
                cur,
                self.pvar(pv, &p("ln2.gamma")),
                self.pvar(pv, &p("ln2.beta")),
            )?;
            let nf = tape.reshape(normed, &[n * tokens, dim])?;
            let h1 = tape.matmul(nf, self.pvar(pv, &p("fc1.weight")))?;
            let h1 = tape.add(h1, self.pvar(pv, &p("fc1.bias")))?;
            let h1 = tape.gelu(h1);
            let h2 = tape.matmul(h1, self.pvar(pv, &p("fc2.weight")))?;
            let h2 = tape.add(h2, self.pvar(pv, &p("fc2.bias")))?;
            let h2 = tape.reshape(h2, &[n, tokens, dim])?;
            cur = tape.add(cur, h2)?;
            taps.push((format!("hidden_{}", l), cur));
            let _ = mlp_dim;
        }

        let normed = layer_norm(
            tape,
            cur,
            self.pvar(pv, "ln_f.gamma"),
            self.pvar(pv, "ln_f.beta"),
        )?;
        let pooled = tape.reduce_mean(normed, &[1], false)?; // mean over tokens
        let z = tape.matmul(pooled, self.pvar(pv, "head.weight"))?;
        let logits = tape.add(z, self.pvar(pv, "head.bias"))?;
        taps.push(("logits".to_string(), logits));
        Ok(ForwardPass {
            taps,
            logits,
            attention,
        })
    }

    /// Forward up to a named tap; the result participates in the tape's
    /// autodiff graph so gradients w.r.t. the input are available.
    pub fn activations_on_tape(&self, tape: &mut Tape, x: VarId, tap: &str) -> Result<VarId> {
        self.tap_info(tap)?;
        let pvars = self.bind_params(tape, false);
        let fwd = self.forward(tape, x, &pvars)?;
        fwd.tap(tap)
    }

    /// Pure convenience: activation tensor at a tap for a concrete input.
    pub fn activations_at(&self, x: &Tensor, tap: &str) -> Result<Tensor> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone(), false);
        let t = self.activations_on_tape(&mut tape, xv, tap)?;
        Ok(tape.value(t).clone())
    }

    /// Argmax class predictions for a list of [3,H,W] images.
    pub fn predict(&self, images: &[Tensor]) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(64) {
            let (h, w) = (self.input.1, self.input.2);
            let mut data = Vec::with_capacity(chunk.len() * 3 * h * w);
            for img in chunk {
                data.extend_from_slice(&img.data);
            }
            let batch = Tensor::from_vec(vec![chunk.len(), 3, h, w], data)?;
            let mut tape = Tape::new();
            let xv = tape.leaf(batch, false);
            let pvars = self.bind_params(&mut tape, false);
            let fwd = self.forward(&mut tape, xv, &pvars)?;
            let logits = tape.value(fwd.logits);
            for i in 0..chunk.len() {
                let row = &logits.data[i * self.classes..(i + 1) * self.classes];
                let pred = row
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                    .map(|(j, _)| j)
                    .unwrap();
                out.push(pred);
            }
        }
        Ok(out)
    }

    pub fn accuracy(&self, ds: &Dataset) -> Result<f64> {
        let preds = self.predict(&ds.images)?;
        let correct = preds
            .iter()
            .zip(&ds.labels)
            .filter(|(p, l)| p == l)
            .count();
        Ok(correct as f64 / ds.len().max(1) as f64)
    }
}

fn layer_norm(tape: &mut Tape, x: VarId, gamma: VarId, beta: VarId) -> Result<VarId> {
    let rank = tape.shape(x).len();
    let last = rank - 1;
    let mu = tape.reduce_mean(x, &[last], true)?;
    let d = tape.sub(x, mu)?;
    let d2 = tape.mul(d, d)?;
    let var = tape.reduce_mean(d2, &[last], true)?;
    let var_eps = tape.add_scalar(var, LN_EPS);
    let std = tape.sqrt(var_eps);
    let normed = tape.div(d, std)?;
    let scaled = tape.mul(normed, gamma)?;
    tape.add(scaled, beta)
}

// ---- training -----------------------------------------------------------------

/// Momentum SGD on mean cross-entropy; deterministic under `cfg.seed`.
/// Parameters are snapped to f32-representable values at the end so the
/// serialized form roundtrips bit-exactly.
pub fn train(
    model: &mut ModelGraph,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if train_set.is_empty() {
        return Err(AmvisError::ModelConfig("empty training set".into()));
    }
    for &l in train_set.labels.iter().chain(&test_set.labels) {
        if l >= model.classes {
            return Err(AmvisError::LabelOutOfRange {
                label: l,
                classes: model.classes,
            });
        }
    }
    let mut velocity: Vec<Vec<f64>> = model
        .params
        .iter()
        .map(|(_, t)| vec![0.0; t.numel()])
        .collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        indices.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in indices.chunks(cfg.batch_size) {
            let (batch, labels) = train_set.batch(chunk);
            let mut tape = Tape::new();
            let xv = tape.leaf(batch, false);
            let pvars = model.bind_params(&mut tape, true);
            let fwd = model.forward(&mut tape, xv, &pvars)?;
            let loss = tape.cross_entropy(fwd.logits, &labels)?;
            let loss_val = tape.value(loss).scalar_value();
            if !loss_val.is_finite() {
                return Err(AmvisError::TrainingDiverged { epoch });
            }
            epoch_loss += loss_val;
            batches += 1;
            tape.backward(loss)?;
            for (i, pv) in pvars.iter().enumerate() {
                if let Some(g) = tape.grad(*pv) {
                    let vel = &mut velocity[i];
                    let p = &mut model.params[i].1;
                    for j in 0..g.len() {
                        vel[j] = cfg.momentum * vel[j] + g[j];
                        p.data[j] -= cfg.lr * vel[j];
                    }
                }
            }
        }
        loss_curve.push(epoch_loss / batches.max(1) as f64);
    }
    model.snap_params();
    Ok(TrainReport {
        epochs: cfg.epochs,
        train_accuracy: model.accuracy(train_set)?,
        test_accuracy: model.accuracy(test_set)?,
        loss_curve,
    })
}

// ---- serialization --------------------------------------------------------------

fn arch_line(model: &ModelGraph) -> String {
    let (c, h, w) = model.input;
    match &model.arch {
        ArchDesc::Cnn => format!("arch cnn {} {} {} {}", c, h, w, model.classes),
        ArchDesc::Vit {
            patch,
            dim,
            heads,
            layers,
            ..
        } => format!(
            "arch vit {} {} {} {} {} {} {} {}",
            c, h, w, patch, dim, heads, layers, model.classes
        ),
    }
}

fn payload_checksum(tensors: &[&Tensor]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for t in tensors {
        for &v in &t.data {
            for b in (v as f32).to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x100000001b3);
            }
        }
    }
    h
}

/// Weight file: UTF-8 manifest ("LMW1", arch line, one "tensor name dims.."
/// line per parameter, "end <checksum>"), a blank line, then the parameters
/// as concatenated LMT1 tensors.
pub fn save_weights(model: &ModelGraph, path: &Path) -> Result<()> {
    let ps = path.display().to_string();
    let mut f = std::fs::File::create(path).map_err(|e| AmvisError::io(&ps, e))?;
    let mut manifest = String::from("LMW1\n");
    manifest.push_str(&arch_line(model));
    manifest.push('\n');
    for (name, t) in &model.params {
        manifest.push_str(&format!(
            "tensor {} {}\n",
            name,
            t.shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(" ")
        ));
    }
    let tensors: Vec<&Tensor> = model.params.iter().map(|(_, t)| t).collect();
    manifest.push_str(&format!("end {:016x}\n\n", payload_checksum(&tensors)));
    f.write_all(manifest.as_bytes())
        .map_err(|e| AmvisError::io(&ps, e))?;
    for t in tensors {
        write_lmt1(&mut f, t).map_err(|e| AmvisError::io(&ps, e))?;
    }
    Ok(())
}

struct Manifest {
    arch_tokens: Vec<String>,
    tensors: Vec<(String, Vec<usize>)>,
    checksum: u64,
    payload_offset: usize,
}

fn parse_manifest(path: &Path, bytes: &[u8]) -> Result<Manifest> {
    let ps = path.display().to_string();
    let corrupt = |detail: &str| AmvisError::CorruptWeights {
        path: ps.clone(),
        detail: detail.to_string(),
    };
    // manifest ends at the first blank line
    let mut reader = std::io::BufReader::new(bytes);
    let mut offset = 0usize;
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        let n = reader
            .read_line(&mut line)
            .map_err(|_| corrupt("manifest is not UTF-8"))?;
        if n == 0 {
            return Err(corrupt("missing blank line after manifest"));
        }
        offset += n;
        let trimmed = line.trim_end_matches('\n');
        if trimmed.is_empty() {
            break;
        }
        lines.push(trimmed.to_string());
    }
    if lines.first().map(String::as_str) != Some("LMW1") {
        return Err(corrupt("bad header (expected LMW1)"));
    }
    let arch_tokens: Vec<String> = lines
        .get(1)
        .filter(|l| l.starts_with("arch "))
        .ok_or_else(|| corrupt("missing arch line"))?
        .split_whitespace()
        .skip(1)
        .map(str::to_string)
        .collect();
    let mut tensors = Vec::new();
    let mut checksum = None;
    for line in &lines[2..] {
        if let Some(rest) = line.strip_prefix("tensor ") {
            let mut it = rest.split_whitespace();
            let name = it.next().ok_or_else(|| corrupt("tensor line missing name"))?;
            let dims: Vec<usize> = it
                .map(|d| d.parse().map_err(|_| corrupt("bad tensor extent")))
                .collect::<Result<_>>()?;
            tensors.push((name.to_string(), dims));
        } else if let Some(rest) = line.strip_prefix("end ") {
            checksum =
                Some(u64::from_str_radix(rest.trim(), 16).map_err(|_| corrupt("bad checksum"))?);
        } else {
            return Err(corrupt(&format!("unrecognized manifest line: {}", line)));
        }
    }
    Ok(Manifest {
        arch_tokens,
        tensors,
        checksum: checksum.ok_or_else(|| corrupt("missing end line"))?,
        payload_offset: offset,
    })
}

fn read_payload(path: &Path, bytes: &[u8], manifest: &Manifest) -> Result<Vec<Tensor>> {
    let ps = path.display().to_string();
    let corrupt = |detail: String| AmvisError::CorruptWeights {
        path: ps.clone(),
        detail,
    };
    let mut cursor = &bytes[manifest.payload_offset.min(bytes.len())..];
    let mut loaded = Vec::new();
    for (name, dims) in &manifest.tensors {
        let t = read_lmt1(&mut cursor)
            .map_err(|e| corrupt(format!("while reading tensor '{}': {}", name, e)))?;
        if &t.shape != dims {
            return Err(AmvisError::ManifestMismatch {
                name: name.clone(),
                detail: format!("manifest says {:?}, payload has {:?}", dims, t.shape),
            });
        }
        loaded.push(t);
    }
    if !cursor.is_empty() {
        return Err(corrupt(format!("{} trailing bytes after payload", cursor.len())));
    }
    let refs: Vec<&Tensor> = loaded.iter().collect();
    let got = payload_checksum(&refs);
    if got != manifest.checksum {
        return Err(corrupt(format!(
            "checksum mismatch: manifest {:016x}, payload {:016x}",
            manifest.checksum, got
        )));
    }
    Ok(loaded)
}

/// Loads weights into an existing model of matching architecture. The model
/// is left untouched on any error.
pub fn load_weights(model: &mut ModelGraph, path: &Path) -> Result<()> {
    let ps = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| AmvisError::io(&ps, e))?;
    let manifest = parse_manifest(path, &bytes)?;
    let expected = arch_line(model);
    let got = format!("arch {}", manifest.arch_tokens.join(" "));
    if expected != got {
        return Err(AmvisError::ManifestMismatch {
            name: "arch".into(),
            detail: format!("model is '{}', file is '{}'", expected, got),
        });
    }
    if manifest.tensors.len() != model.params.len() {
        return Err(AmvisError::ManifestMismatch {
            name: "count".into(),
            detail: format!(
                "model has {} tensors, file has {}",
                model.params.len(),
                manifest.tensors.len()
            ),
        });
    }
    for ((mname, mdims), (pname, pt)) in manifest.tensors.iter().zip(&model.params) {
        if mname != pname || mdims != &pt.shape {
            return Err(AmvisError::ManifestMismatch {
                name: mname.clone(),
                detail: format!(
                    "expected '{}' {:?}, found '{}' {:?}",
                    pname, pt.shape, mname, mdims
                ),
            });
        }
    }
    let loaded = read_payload(path, &bytes, &manifest)?;
    for ((_, slot), t) in model.params.iter_mut().zip(loaded) {
        *slot = t;
    }
    Ok(())
}

/// Reconstructs a model from the arch line in a weight file, then loads.
pub fn load_model(path: &Path) -> Result<ModelGraph> {
    let ps = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| AmvisError::io(&ps, e))?;
    let manifest = parse_manifest(path, &bytes)?;
    let toks = &manifest.arch_tokens;
    let parse = |s: &String| -> Result<usize> {
        s.parse().map_err(|_| AmvisError::CorruptWeights {
            path: ps.clone(),
            detail: format!("bad arch token '{}'", s),
        })
    };
    let mut model = match toks.first().map(String::as_str) {
        Some("cnn") if toks.len() == 5 => build_small_cnn(
            (parse(&toks[1])?, parse(&toks[2])?, parse(&toks[3])?),
            parse(&toks[4])?,
            0,
        )?,
        Some("vit") if toks.len() == 9 => build_tiny_vit(
            (parse(&toks[1])?, parse(&toks[2])?, parse(&toks[3])?),
            parse(&toks[4])?,
            parse(&toks[5])?,
            parse(&toks[6])?,
            parse(&toks[7])?,
            parse(&toks[8])?,
            0,
        )?,
        _ => {
            return Err(AmvisError::CorruptWeights {
                path: ps,
                detail: format!("unrecognized arch line 'arch {}'", toks.join(" ")),
            })
        }
    };
    load_weights(&mut model, path)?;
    Ok(model)
}
