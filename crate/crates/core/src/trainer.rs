//! Desk-scale BNN training.
//!
//! Every block keeps latent real weights in `[-1, 1]`; forward passes use
//! their signs. Gradients reach the latent weights straight through the
//! sign. Hidden activations are signs too, and their gradient is passed only
//! where the batch-normalized value lies in `[-1, 1]`. Batch norm uses batch
//! statistics while training and running averages (momentum 0.9) in the
//! exported network. The final block's batch-norm outputs are the logits of
//! a softmax cross-entropy loss. Parameters are updated with Adam.
//!
//! Training is single threaded and fully determined by the seed.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::bitops::{BitTensor, Shape};
use crate::dataio::LabeledDataset;
use crate::error::{Error, Result};
use crate::inference::{network_forward, InputTensor, TempArena};
use crate::model::{Block, BnParams, ElementKind, InputSpec, Network, DEFAULT_EPSILON};

const LATENT_MAGIC: &[u8; 4] = b"EBNL";
const LATENT_VERSION: u16 = 1;
const BN_MOMENTUM: f32 = 0.9;
const MIN_ABS_GAMMA: f32 = 1e-6;
const ADAM_BETA1: f32 = 0.9;
const ADAM_BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub seed: u64,
    /// Reject the architecture before training if `M` exceeds this.
    pub budget_bytes: Option<usize>,
    /// Fraction of the data, taken from the end, held out for per-epoch
    /// evaluation.
    pub eval_split: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 100,
            learning_rate: 1e-3,
            seed: 0,
            budget_bytes: None,
            eval_split: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch size must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(0.0..1.0).contains(&self.eval_split) {
            return Err(Error::invalid("eval split must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's batches.
    pub loss: f64,
    /// Accuracy of the training-mode forward pass over the epoch.
    pub train_accuracy: f64,
    /// Fused-engine accuracy on the held-out split, if any.
    pub eval_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f32, t: u64) {
        let c1 = 1.0 - ADAM_BETA1.powi(t as i32);
        let c2 = 1.0 - ADAM_BETA2.powi(t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + ADAM_EPS);
        }
    }
}

/// Latent state of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBlock {
    /// Structure of the block; its weights and batch norm are refreshed by
    /// [`LatentNetwork::to_network`].
    pub skeleton: Block,
    /// Latent weights in the block's logical weight order.
    pub weights: Vec<f32>,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub epsilon: f32,
    w_opt: Adam,
    gamma_opt: Adam,
    beta_opt: Adam,
}

/// A network under training.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentNetwork {
    pub input: InputSpec,
    pub blocks: Vec<LatentBlock>,
    /// Optimizer steps taken so far.
    pub step: u64,
}

fn weight_shape(block: &Block) -> Shape {
    block.weights().shape()
}

impl LatentNetwork {
    /// Fresh latent state for a skeleton: weights uniform in
    /// `±1/sqrt(fan_in)`, unit scale, zero shift.
    pub fn init(arch: &Network, seed: u64) -> Result<Self> {
        arch.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut blocks = Vec::with_capacity(arch.blocks.len());
        for block in &arch.blocks {
            let ws = weight_shape(block);
            let fan_in = ws.height * ws.width;
            let lim = 1.0 / (fan_in as f32).sqrt();
            let n = ws.len();
            let units = block.out_units();
            blocks.push(LatentBlock {
                skeleton: block.clone(),
                weights: (0..n).map(|_| rng.random_range(-lim..=lim)).collect(),
                gamma: vec![1.0; units],
                beta: vec![0.0; units],
                running_mean: vec![0.0; units],
                running_var: vec![1.0; units],
                epsilon: DEFAULT_EPSILON,
                w_opt: Adam::new(n),
                gamma_opt: Adam::new(units),
                beta_opt: Adam::new(units),
            });
        }
        Ok(LatentNetwork {
            input: arch.input,
            blocks,
            step: 0,
        })
    }

    /// Resumes from a trained network (weights only give signs, so latent
    /// magnitudes come from the sidecar).
    pub fn from_checkpoint(net: &Network, sidecar: &[u8]) -> Result<Self> {
        net.check()?;
        let mut r = crate::model::Reader::new(sidecar);
        if r.take(4, "magic")? != LATENT_MAGIC {
            return Err(Error::parse(0, "bad latent sidecar magic, expected \"EBNL\""));
        }
        let version = r.u16("version")?;
        if version != LATENT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: LATENT_VERSION,
            });
        }
        let step = r.u32("step")? as u64 | (r.u32("step")? as u64) << 32;
        let count = r.u16("block count")? as usize;
        if count != net.blocks.len() {
            return Err(Error::Consistency(format!(
                "sidecar has {count} blocks, model has {}",
                net.blocks.len()
            )));
        }
        let mut blocks = Vec::with_capacity(count);
        for block in &net.blocks {
            let n = r.u32("weight count")? as usize;
            let ws = weight_shape(block);
            if n != ws.len() {
                return Err(Error::Consistency(format!(
                    "sidecar holds {n} latent weights, block needs {}",
                    ws.len()
                )));
            }
            let mut read =
                |len: usize| -> Result<Vec<f32>> { (0..len).map(|_| r.f32("latent state")).collect() };
            let weights = read(n)?;
            let w_opt = Adam {
                m: read(n)?,
                v: read(n)?,
            };
            let units = block.out_units();
            let gamma_opt = Adam {
                m: read(units)?,
                v: read(units)?,
            };
            let beta_opt = Adam {
                m: read(units)?,
                v: read(units)?,
            };
            for (i, &w) in weights.iter().enumerate() {
                let bit = w >= 0.0;
                let (c, y, x) = (i / (ws.height * ws.width), i / ws.width % ws.height, i % ws.width);
                if block.weights().get(c, y, x) != bit {
                    return Err(Error::Consistency(
                        "latent weight signs disagree with the model bits".into(),
                    ));
                }
            }
            let bn = block.bn();
            blocks.push(LatentBlock {
                skeleton: block.clone(),
                weights,
                gamma: bn.iter().map(|b| b.gamma).collect(),
                beta: bn.iter().map(|b| b.beta).collect(),
                running_mean: bn.iter().map(|b| b.mean).collect(),
                running_var: bn.iter().map(|b| b.variance).collect(),
                epsilon: bn.first().map_or(DEFAULT_EPSILON, |b| b.epsilon),
                w_opt,
                gamma_opt,
                beta_opt,
            });
        }
        r.finish()?;
        Ok(LatentNetwork {
            input: net.input,
            blocks,
            step,
        })
    }

    /// Latent weights and optimizer moments, little-endian.
    ///
    /// Layout: magic `EBNL`, u16 version, u64 step (two u32 halves, low
    /// first), u16 block count, then per block: u32 weight count `n`, `n`
    /// latent weights, `n` first moments, `n` second moments, then the first
    /// and second moments of gamma and of beta, one f32 per unit each.
    pub fn to_sidecar(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(LATENT_MAGIC);
        out.extend(LATENT_VERSION.to_le_bytes());
        out.extend((self.step as u32).to_le_bytes());
        out.extend(((self.step >> 32) as u32).to_le_bytes());
        out.extend((self.blocks.len() as u16).to_le_bytes());
        let put = |out: &mut Vec<u8>, v: &[f32]| {
            for x in v {
                out.extend(x.to_le_bytes());
            }
        };
        for b in &self.blocks {
            out.extend((b.weights.len() as u32).to_le_bytes());
            put(&mut out, &b.weights);
            put(&mut out, &b.w_opt.m);
            put(&mut out, &b.w_opt.v);
            put(&mut out, &b.gamma_opt.m);
            put(&mut out, &b.gamma_opt.v);
            put(&mut out, &b.beta_opt.m);
            put(&mut out, &b.beta_opt.v);
        }
        out
    }

    /// Binarized snapshot with running batch-norm statistics.
    pub fn to_network(&self) -> Network {
        let blocks = self
            .blocks
            .iter()
            .map(|lb| {
                let mut block = lb.skeleton.clone();
                let w = block.weights_mut();
                let s = w.shape();
                for (i, &v) in lb.weights.iter().enumerate() {
                    w.set(
                        i / (s.height * s.width),
                        i / s.width % s.height,
                        i % s.width,
                        v >= 0.0,
                    );
                }
                for (u, bn) in block.bn_mut().iter_mut().enumerate() {
                    *bn = BnParams {
                        gamma: lb.gamma[u],
                        beta: lb.beta[u],
                        mean: lb.running_mean[u],
                        variance: lb.running_var[u],
                        epsilon: lb.epsilon,
                    };
                }
                block
            })
            .collect();
        Network::new(self.input, blocks)
    }
}

/// Training-mode intermediates of one block for one batch.
struct Cache {
    /// Block input, or im2col patches for convolutions.
    cols: Vec<f32>,
    /// Conv-plane index of each pooled maximum.
    argmax: Vec<u32>,
    xhat: Vec<f32>,
    y: Vec<f32>,
    inv_std: Vec<f32>,
}

struct Geometry {
    input: Shape,
    conv: Shape,
    output: Shape,
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = [0.0f32; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        for l in 0..8 {
            acc[l] += a[i * 8 + l] * b[i * 8 + l];
        }
    }
    let mut s = acc.iter().sum::<f32>();
    for i in chunks * 8..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn axpy(alpha: f32, x: &[f32], y: &mut [f32]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn sign(v: f32) -> f32 {
    if v >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Training-mode forward and backward for one batch. Returns mean loss and
/// the number of correct predictions; leaves gradients in `grads`.
struct Pass<'a> {
    net: &'a LatentNetwork,
    geo: &'a [Geometry],
    signs: Vec<Vec<f32>>,
}

struct Grads {
    w: Vec<Vec<f32>>,
    gamma: Vec<Vec<f32>>,
    beta: Vec<Vec<f32>>,
}

impl<'a> Pass<'a> {
    fn new(net: &'a LatentNetwork, geo: &'a [Geometry]) -> Self {
        let signs = net
            .blocks
            .iter()
            .map(|b| b.weights.iter().map(|&w| sign(w)).collect())
            .collect();
        Pass { net, geo, signs }
    }

    fn im2col(x: &[f32], g: &Geometry, k: usize, stride: usize) -> Vec<f32> {
        let (c_in, h, w) = (g.input.channels, g.input.height, g.input.width);
        let kk = c_in * k * k;
        let mut cols = vec![0.0; g.conv.height * g.conv.width * kk];
        for oy in 0..g.conv.height {
            for ox in 0..g.conv.width {
                let row = &mut cols[(oy * g.conv.width + ox) * kk..][..kk];
                let mut i = 0;
                for c in 0..c_in {
                    for ky in 0..k {
                        let src = &x[(c * h + oy * stride + ky) * w + ox * stride..][..k];
                        row[i..i + k].copy_from_slice(src);
                        i += k;
                    }
                }
            }
        }
        cols
    }

    /// Pre-normalization values of block `i` for a batch, plus its cache.
    fn linear(&self, i: usize, x: &[f32], batch: usize) -> (Vec<f32>, Vec<f32>, Vec<u32>) {
        let g = &self.geo[i];
        let ws = &self.signs[i];
        let in_len = g.input.len();
        match &self.net.blocks[i].skeleton {
            Block::FusedFc(b) => {
                let mut z = vec![0.0; batch * b.out_units];
                for s in 0..batch {
                    let xs = &x[s * in_len..][..in_len];
                    for j in 0..b.out_units {
                        z[s * b.out_units + j] = dot(xs, &ws[j * in_len..][..in_len]);
                    }
                }
                (z, x.to_vec(), Vec::new())
            }
            Block::FusedConv(c) | Block::FusedConvPool(c, _) => {
                let pool = self.net.blocks[i].skeleton.pool();
                let kk = c.in_channels * c.kernel * c.kernel;
                let positions = g.conv.height * g.conv.width;
                let per_out = g.output.height * g.output.width;
                let mut all_cols = Vec::with_capacity(batch * positions * kk);
                let mut out = vec![0.0; batch * c.filters * per_out];
                let mut argmax = Vec::new();
                if pool.is_some() {
                    argmax = vec![0u32; out.len()];
                }
                let mut plane = vec![0.0f32; positions];
                for s in 0..batch {
                    let cols = Self::im2col(&x[s * in_len..][..in_len], g, c.kernel, c.stride);
                    for f in 0..c.filters {
                        let wf = &ws[f * kk..][..kk];
                        for (p, v) in plane.iter_mut().enumerate() {
                            *v = dot(&cols[p * kk..][..kk], wf);
                        }
                        let base = (s * c.filters + f) * per_out;
                        match pool {
                            None => out[base..base + per_out].copy_from_slice(&plane),
                            Some(ps) => {
                                for py in 0..g.output.height {
                                    for px in 0..g.output.width {
                                        let mut best = 0;
                                        let mut m = f32::NEG_INFINITY;
                                        for wy in 0..ps.size {
                                            for wx in 0..ps.size {
                                                let idx = (py * ps.stride + wy) * g.conv.width
                                                    + px * ps.stride
                                                    + wx;
                                                if (wy == 0 && wx == 0) || plane[idx] > m {
                                                    m = plane[idx];
                                                    best = idx;
                                                }
                                            }
                                        }
                                        let o = base + py * g.output.width + px;
                                        out[o] = m;
                                        argmax[o] = best as u32;
                                    }
                                }
                            }
                        }
                    }
                    all_cols.extend_from_slice(&cols);
                }
                (out, all_cols, argmax)
            }
        }
    }

    fn run(
        &self,
        x0: &[f32],
        labels: &[usize],
        grads: &mut Grads,
        bn_stats: &mut [(Vec<f32>, Vec<f32>)],
    ) -> (f64, usize) {
        let batch = labels.len();
        let last = self.net.blocks.len() - 1;
        let mut caches = Vec::with_capacity(self.net.blocks.len());
        let mut x = x0.to_vec();
        for (i, lb) in self.net.blocks.iter().enumerate() {
            let (z, cols, argmax) = self.linear(i, &x, batch);
            let units = lb.gamma.len();
            let per = self.geo[i].output.len() / units;
            let n = (batch * per) as f32;
            let mut mean = vec![0.0f32; units];
            let mut var = vec![0.0f32; units];
            for s in 0..batch {
                for u in 0..units {
                    for v in &z[(s * units + u) * per..][..per] {
                        mean[u] += v;
                    }
                }
            }
            mean.iter_mut().for_each(|m| *m /= n);
            for s in 0..batch {
                for u in 0..units {
                    for v in &z[(s * units + u) * per..][..per] {
                        var[u] += (v - mean[u]) * (v - mean[u]);
                    }
                }
            }
            var.iter_mut().for_each(|v| *v /= n);
            let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + lb.epsilon).sqrt()).collect();
            let mut xhat = z;
            let mut y = vec![0.0; xhat.len()];
            for s in 0..batch {
                for u in 0..units {
                    let o = (s * units + u) * per;
                    for k in o..o + per {
                        xhat[k] = (xhat[k] - mean[u]) * inv_std[u];
                        y[k] = lb.gamma[u] * xhat[k] + lb.beta[u];
                    }
                }
            }
            bn_stats[i] = (mean, var);
            x = if i == last {
                y.clone()
            } else {
                y.iter().map(|&v| sign(v)).collect()
            };
            caches.push(Cache {
                cols,
                argmax,
                xhat,
                y,
                inv_std,
            });
        }

        // softmax cross-entropy on the final batch-norm outputs
        let classes = self.net.blocks[last].gamma.len();
        let mut loss = 0.0f64;
        let mut correct = 0;
        let mut dy = vec![0.0f32; batch * classes];
        for s in 0..batch {
            let logits = &x[s * classes..][..classes];
            let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let exps: Vec<f32> = logits.iter().map(|&l| (l - max).exp()).collect();
            let sum: f32 = exps.iter().sum();
            loss += (sum.ln() - (logits[labels[s]] - max)) as f64;
            if crate::inference::argmax(logits) == labels[s] {
                correct += 1;
            }
            for c in 0..classes {
                let p = exps[c] / sum;
                dy[s * classes + c] = (p - if c == labels[s] { 1.0 } else { 0.0 }) / batch as f32;
            }
        }

        for i in (0..=last).rev() {
            let lb = &self.net.blocks[i];
            let cache = &caches[i];
            let g = &self.geo[i];
            let units = lb.gamma.len();
            let per = g.output.len() / units;
            let n = (batch * per) as f32;
            if i != last {
                for (d, &y) in dy.iter_mut().zip(&cache.y) {
                    if y.abs() > 1.0 {
                        *d = 0.0;
                    }
                }
            }
            let gg = &mut grads.gamma[i];
            let gb = &mut grads.beta[i];
            let mut sum_dxhat = vec![0.0f32; units];
            let mut sum_dxhat_xhat = vec![0.0f32; units];
            for s in 0..batch {
                for u in 0..units {
                    let o = (s * units + u) * per;
                    for (&d, &x) in dy[o..o + per].iter().zip(&cache.xhat[o..o + per]) {
                        gg[u] += d * x;
                        gb[u] += d;
                        let dxh = d * lb.gamma[u];
                        sum_dxhat[u] += dxh;
                        sum_dxhat_xhat[u] += dxh * x;
                    }
                }
            }
            let mut dz = dy;
            for s in 0..batch {
                for u in 0..units {
                    let o = (s * units + u) * per;
                    for (z, &x) in dz[o..o + per].iter_mut().zip(&cache.xhat[o..o + per]) {
                        let dxh = *z * lb.gamma[u];
                        *z = cache.inv_std[u] / n * (n * dxh - sum_dxhat[u] - x * sum_dxhat_xhat[u]);
                    }
                }
            }
            let need_dx = i > 0;
            let ws = &self.signs[i];
            let gw = &mut grads.w[i];
            let in_len = g.input.len();
            let mut dx = if need_dx {
                vec![0.0f32; batch * in_len]
            } else {
                Vec::new()
            };
            match &lb.skeleton {
                Block::FusedFc(b) => {
                    for s in 0..batch {
                        let xs = &cache.cols[s * in_len..][..in_len];
                        for j in 0..b.out_units {
                            let d = dz[s * b.out_units + j];
                            if d == 0.0 {
                                continue;
                            }
                            axpy(d, xs, &mut gw[j * in_len..][..in_len]);
                            if need_dx {
                                axpy(d, &ws[j * in_len..][..in_len], &mut dx[s * in_len..][..in_len]);
                            }
                        }
                    }
                }
                Block::FusedConv(c) | Block::FusedConvPool(c, _) => {
                    let kk = c.in_channels * c.kernel * c.kernel;
                    let positions = g.conv.height * g.conv.width;
                    let mut dplane = vec![0.0f32; positions];
                    let mut dcols = vec![0.0f32; positions * kk];
                    for s in 0..batch {
                        let cols = &cache.cols[s * positions * kk..][..positions * kk];
                        if need_dx {
                            dcols.fill(0.0);
                        }
                        for f in 0..c.filters {
                            let base = (s * c.filters + f) * per;
                            if cache.argmax.is_empty() {
                                dplane.copy_from_slice(&dz[base..base + per]);
                            } else {
                                dplane.fill(0.0);
                                for o in 0..per {
                                    dplane[cache.argmax[base + o] as usize] += dz[base + o];
                                }
                            }
                            for (p, &d) in dplane.iter().enumerate() {
                                if d == 0.0 {
                                    continue;
                                }
                                axpy(d, &cols[p * kk..][..kk], &mut gw[f * kk..][..kk]);
                                if need_dx {
                                    axpy(d, &ws[f * kk..][..kk], &mut dcols[p * kk..][..kk]);
                                }
                            }
                        }
                        if need_dx {
                            let (h, w, k) = (g.input.height, g.input.width, c.kernel);
                            let dxs = &mut dx[s * in_len..][..in_len];
                            for oy in 0..g.conv.height {
                                for ox in 0..g.conv.width {
                                    let row = &dcols[(oy * g.conv.width + ox) * kk..][..kk];
                                    let mut j = 0;
                                    for ch in 0..c.in_channels {
                                        for ky in 0..k {
                                            let o = (ch * h + oy * c.stride + ky) * w + ox * c.stride;
                                            for kx in 0..k {
                                                dxs[o + kx] += row[j];
                                                j += 1;
                                            }
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dy = dx;
        }
        (loss, correct)
    }
}

fn geometry(net: &LatentNetwork) -> Result<Vec<Geometry>> {
    let skeleton = Network::new(net.input, net.blocks.iter().map(|b| b.skeleton.clone()).collect());
    Ok(skeleton
        .shapes()?
        .into_iter()
        .map(|s| Geometry {
            input: s.input,
            conv: s.conv,
            output: s.output,
        })
        .collect())
}

/// Sample values as seen by the first block; binary inputs are signs.
fn sample_values(spec: &InputSpec, sample: &InputTensor, out: &mut Vec<f32>) {
    match spec.kind {
        ElementKind::Real => out.extend_from_slice(&sample.data),
        ElementKind::Binary => out.extend(sample.data.iter().map(|&v| sign(v))),
    }
}

fn check_data(input: &InputSpec, classes: usize, data: &LabeledDataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    if data.class_count != classes {
        return Err(Error::invalid(format!(
            "dataset has {} classes, network has {classes}",
            data.class_count
        )));
    }
    if data.sample_shape() != Some(input.shape) {
        return Err(Error::invalid(format!(
            "samples are {}, network input is {}",
            data.sample_shape().map_or("empty".to_string(), |s| s.to_string()),
            input.shape
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: Network,
    pub latent: LatentNetwork,
    pub history: Vec<EpochStats>,
}

/// Trains a skeleton from scratch.
pub fn train(arch: &Network, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with(arch, data, cfg, |_| {})
}

/// Like [`train`], reporting each finished epoch.
pub fn train_with(
    arch: &Network,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.check()?;
    arch.check()?;
    if let Some(budget) = cfg.budget_bytes {
        let m = crate::memory::memory_report(arch)?.total;
        if m > budget {
            return Err(Error::BudgetExceeded { needed: m, budget });
        }
    }
    check_data(&arch.input, arch.classes(), data)?;
    let latent = LatentNetwork::init(arch, cfg.seed)?;
    train_latent(latent, data, cfg, on_epoch)
}

/// Continues training existing latent state.
pub fn train_latent(
    mut latent: LatentNetwork,
    data: &LabeledDataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.check()?;
    let classes = latent.blocks.last().map_or(0, |b| b.gamma.len());
    check_data(&latent.input, classes, data)?;
    let (train_set, eval_set) = data.split_tail(cfg.eval_split);
    if train_set.is_empty() {
        return Err(Error::invalid("eval split leaves no training data"));
    }
    let geo = geometry(&latent)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let in_len = latent.input.shape.len();
    let mut xb = Vec::with_capacity(cfg.batch_size * in_len);
    let mut yb = Vec::with_capacity(cfg.batch_size);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut batches) = (0.0f64, 0usize, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                sample_values(&latent.input, &train_set.samples[i], &mut xb);
                yb.push(train_set.labels[i]);
            }
            let mut grads = Grads {
                w: latent.blocks.iter().map(|b| vec![0.0; b.weights.len()]).collect(),
                gamma: latent.blocks.iter().map(|b| vec![0.0; b.gamma.len()]).collect(),
                beta: latent.blocks.iter().map(|b| vec![0.0; b.beta.len()]).collect(),
            };
            let mut stats = vec![(Vec::new(), Vec::new()); latent.blocks.len()];
            let (loss, ok) = Pass::new(&latent, &geo).run(&xb, &yb, &mut grads, &mut stats);
            if !loss.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite loss {loss}"),
                });
            }
            loss_sum += loss / chunk.len() as f64;
            correct += ok;
            batches += 1;
            latent.step += 1;
            let t = latent.step;
            for (i, lb) in latent.blocks.iter_mut().enumerate() {
                lb.w_opt.step(&mut lb.weights, &grads.w[i], cfg.learning_rate, t);
                lb.weights.iter_mut().for_each(|w| *w = w.clamp(-1.0, 1.0));
                lb.gamma_opt
                    .step(&mut lb.gamma, &grads.gamma[i], cfg.learning_rate, t);
                for g in &mut lb.gamma {
                    if g.abs() < MIN_ABS_GAMMA {
                        *g = if *g < 0.0 { -MIN_ABS_GAMMA } else { MIN_ABS_GAMMA };
                    }
                }
                lb.beta_opt
                    .step(&mut lb.beta, &grads.beta[i], cfg.learning_rate, t);
                let (mean, var) = &stats[i];
                for u in 0..lb.gamma.len() {
                    lb.running_mean[u] = BN_MOMENTUM * lb.running_mean[u] + (1.0 - BN_MOMENTUM) * mean[u];
                    lb.running_var[u] = BN_MOMENTUM * lb.running_var[u] + (1.0 - BN_MOMENTUM) * var[u];
                }
                let finite = lb
                    .weights
                    .iter()
                    .chain(&lb.gamma)
                    .chain(&lb.beta)
                    .all(|v| v.is_finite())
                    && lb
                        .running_mean
                        .iter()
                        .chain(&lb.running_var)
                        .all(|v| v.is_finite());
                if !finite {
                    return Err(Error::Training {
                        epoch,
                        message: format!("non-finite parameters in block {i}"),
                    });
                }
            }
        }
        let eval_accuracy = if eval_set.is_empty() {
            None
        } else {
            Some(evaluate(&latent.to_network(), &eval_set)?.accuracy)
        };
        let stats = EpochStats {
            epoch,
            loss: loss_sum / batches as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            eval_accuracy,
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome {
        net: latent.to_network(),
        latent,
        history,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Correct predictions per true class.
    pub per_class_correct: Vec<usize>,
    /// Samples per true class.
    pub per_class_total: Vec<usize>,
    /// Predicted label of every sample, in order.
    pub predictions: Vec<usize>,
}

/// Runs the fused engine over a dataset.
pub fn evaluate(net: &Network, data: &LabeledDataset) -> Result<Evaluation> {
    net.check()?;
    if data.sample_shape().is_some_and(|s| s != net.input.shape) {
        return Err(Error::invalid("dataset samples do not match the network input"));
    }
    let mut arena = TempArena::for_network(net)?;
    let mut scores = vec![0.0; net.classes()];
    let classes = net.classes().max(data.class_count);
    let mut per_class_correct = vec![0; classes];
    let mut per_class_total = vec![0; classes];
    let mut predictions = Vec::with_capacity(data.len());
    let mut bits = BitTensor::zeros(net.input.shape)?;
    for (x, &label) in data.samples.iter().zip(&data.labels) {
        let p = match net.input.kind {
            ElementKind::Real => network_forward(net, x, &mut arena, &mut scores)?,
            ElementKind::Binary => {
                binarize_into(x, &mut bits);
                network_forward(net, &bits, &mut arena, &mut scores)?
            }
        };
        per_class_total[label] += 1;
        if p == label {
            per_class_correct[label] += 1;
        }
        predictions.push(p);
    }
    let correct: usize = per_class_correct.iter().sum();
    Ok(Evaluation {
        accuracy: if data.is_empty() {
            0.0
        } else {
            correct as f64 / data.len() as f64
        },
        correct,
        total: data.len(),
        per_class_correct,
        per_class_total,
        predictions,
    })
}

/// Signs of a real sample, `x >= 0` mapping to `+1`.
pub fn binarize_into(x: &InputTensor, out: &mut BitTensor) {
    let s = x.shape;
    for c in 0..s.channels {
        for y in 0..s.height {
            for xi in 0..s.width {
                out.set(c, y, xi, x.at(c, y, xi) >= 0.0);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::synth_separable;
    use crate::model::PoolSpec;
    use crate::presets;

    fn toy_arch(dim: usize, classes: usize) -> Network {
        presets::mlp(InputSpec::real(1, 1, dim), &[16], classes).unwrap()
    }

    #[test]
    fn separable_toy_reaches_95_percent() {
        let data = synth_separable(16, 2, 400, 7).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let out = train(&toy_arch(16, 2), &data, &cfg).unwrap();
        let acc = evaluate(&out.net, &data).unwrap().accuracy;
        assert!(acc >= 0.95, "{acc}");
    }

    #[test]
    fn deterministic_model_bytes() {
        let data = synth_separable(8, 3, 120, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 16,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&toy_arch(8, 3), &data, &cfg).unwrap();
        let b = train(&toy_arch(8, 3), &data, &cfg).unwrap();
        assert_eq!(a.net.to_bytes(), b.net.to_bytes());
        assert_eq!(a.latent.to_sidecar(), b.latent.to_sidecar());
    }

    #[test]
    fn latent_weights_stay_clamped_and_stats_finite() {
        let data = synth_separable(8, 2, 64, 2).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            learning_rate: 0.5,
            ..TrainConfig::default()
        };
        let out = train(&toy_arch(8, 2), &data, &cfg).unwrap();
        for b in &out.latent.blocks {
            assert!(b.weights.iter().all(|w| (-1.0..=1.0).contains(w)));
            assert!(b.running_var.iter().all(|v| v.is_finite() && *v >= 0.0));
            assert!(b.gamma.iter().all(|g| g.abs() >= MIN_ABS_GAMMA));
        }
    }

    #[test]
    fn conv_pool_toy_trains() {
        // class 0 is bright on top, class 1 bright at the bottom
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let shape = Shape::new(1, 6, 6);
        let mut samples = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let l = i % 2;
            let data = (0..36)
                .map(|p| {
                    let base = if (l == 0) == (p / 6 < 3) { 1.0 } else { -1.0 };
                    base + rng.random_range(-0.3..0.3f32)
                })
                .collect();
            samples.push(InputTensor::new(shape, data).unwrap());
            labels.push(l);
        }
        let data = LabeledDataset::new(samples, labels, 2).unwrap();
        let arch = presets::build(
            InputSpec::real(1, 6, 6),
            &[presets::ConvLayer {
                filters: 4,
                kernel: 3,
                stride: 1,
                pool: Some(PoolSpec { size: 2, stride: 1 }),
            }],
            &[],
            2,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 20,
            batch_size: 20,
            ..TrainConfig::default()
        };
        let out = train(&arch, &data, &cfg).unwrap();
        assert!(evaluate(&out.net, &data).unwrap().accuracy >= 0.95);
    }

    #[test]
    fn budget_rejects_before_training() {
        let data = synth_separable(8, 2, 10, 0).unwrap();
        let cfg = TrainConfig {
            budget_bytes: Some(10),
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&toy_arch(8, 2), &data, &cfg),
            Err(Error::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let mut data = synth_separable(8, 2, 10, 0).unwrap();
        data.samples[3].data[0] = f32::NAN;
        let err = train(&toy_arch(8, 2), &data, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Training { epoch: 1, .. }), "{err:?}");
    }

    #[test]
    fn rejects_class_mismatch() {
        let data = synth_separable(8, 3, 10, 0).unwrap();
        assert!(train(&toy_arch(8, 2), &data, &TrainConfig::default()).is_err());
    }

    #[test]
    fn sidecar_round_trip_resumes_identically() {
        let data = synth_separable(8, 2, 80, 5).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 10,
            ..TrainConfig::default()
        };
        let first = train(&toy_arch(8, 2), &data, &cfg).unwrap();
        let sidecar = first.latent.to_sidecar();
        let model = first.net.to_bytes();
        let restored =
            LatentNetwork::from_checkpoint(&Network::from_bytes(&model).unwrap(), &sidecar).unwrap();
        assert!(restored.to_sidecar() == sidecar && restored.to_network() == first.net);
        let a = train_latent(first.latent.clone(), &data, &cfg, |_| {}).unwrap();
        let b = train_latent(restored, &data, &cfg, |_| {}).unwrap();
        assert!(a.net == b.net);
        assert!(LatentNetwork::from_checkpoint(&first.net, &sidecar[..sidecar.len() - 1]).is_err());
    }

    #[test]
    fn eval_history_matches_evaluate() {
        let data = synth_separable(8, 2, 100, 3).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 10,
            eval_split: 0.2,
            ..TrainConfig::default()
        };
        let out = train(&toy_arch(8, 2), &data, &cfg).unwrap();
        let (_, held) = data.split_tail(0.2);
        assert_eq!(
            out.history.last().unwrap().eval_accuracy,
            Some(evaluate(&out.net, &held).unwrap().accuracy)
        );
    }

    #[test]
    fn memorized_labels_score_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut net = toy_arch(8, 4);
        for b in &mut net.blocks {
            crate::random::randomize_block(&mut rng, b, 8);
        }
        let data = synth_separable(8, 4, 10, 0).unwrap();
        let preds = evaluate(&net, &data).unwrap().predictions;
        let memorized = LabeledDataset::new(data.samples.clone(), preds, 4).unwrap();
        assert_eq!(evaluate(&net, &memorized).unwrap().accuracy, 1.0);
    }

    #[test]
    fn random_net_is_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let data = synth_separable(32, 10, 1000, 4).unwrap();
        let mut total = 0.0;
        let trials = 8;
        for _ in 0..trials {
            let mut net = toy_arch(32, 10);
            for b in &mut net.blocks {
                crate::random::randomize_block(&mut rng, b, 32);
            }
            total += evaluate(&net, &data).unwrap().accuracy;
        }
        let mean = total / trials as f64;
        assert!((mean - 0.1).abs() <= 0.05, "{mean}");
    }

    #[test]
    fn binary_input_networks_train() {
        let data = synth_separable(16, 2, 200, 11).unwrap();
        let arch = presets::mlp(InputSpec::binary(1, 1, 16), &[8], 2).unwrap();
        let out = train(
            &arch,
            &data,
            &TrainConfig {
                epochs: 20,
                batch_size: 20,
                ..TrainConfig::default()
            },
        )
        .unwrap();
        assert!(evaluate(&out.net, &data).unwrap().accuracy >= 0.9);
    }
}
