//! Unfused BNN oracle.
//!
//! Each block runs as separate passes over full `f32` planes: convolution,
//! then max pooling, then batch norm, then binary activation. Nothing is
//! bit-packed until the activation pass, and batch norm is evaluated
//! directly rather than through a folded threshold. It is slow and large on
//! purpose.
//!
//! Convolution results are materialized one input channel at a time: plane
//! `c` of a filter holds the running sum over channels `0..=c`, so a filter
//! over `C` input channels keeps `C` planes alive until pooling.

use crate::bitops::{BitTensor, Shape};
use crate::error::{Error, Result};
use crate::inference::InputTensor;
use crate::model::{Block, BnParams, ElementKind, Network, PoolSpec};

/// Dense `f32` tensor, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FloatPlane {
    pub shape: Shape,
    pub data: Vec<f32>,
}

impl FloatPlane {
    pub fn zeros(shape: Shape) -> Self {
        FloatPlane {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    #[inline]
    fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.shape.height + y) * self.shape.width + x
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.idx(c, y, x)]
    }

    fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }

    pub fn bytes(&self) -> usize {
        self.data.len() * 4
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceOutput {
    pub scores: Vec<f32>,
    pub label: usize,
    /// Post-activation output of every block.
    pub intermediates: Vec<BitTensor>,
    /// Largest single float temporary materialized, in bytes.
    pub peak_temp_bytes: usize,
}

/// Unpacked ±1.0 (or real) values of a block input.
fn to_plane_input(net: &Network, input: &ReferenceInput<'_>) -> Result<FloatPlane> {
    match input {
        ReferenceInput::Real(t) => {
            if net.input.kind != ElementKind::Real || t.shape != net.input.shape {
                return Err(Error::invalid("input does not match the network input spec"));
            }
            Ok(FloatPlane {
                shape: t.shape,
                data: t.data.clone(),
            })
        }
        ReferenceInput::Binary(b) => {
            if net.input.kind != ElementKind::Binary || b.shape() != net.input.shape {
                return Err(Error::invalid("input does not match the network input spec"));
            }
            Ok(signs_to_plane(b))
        }
    }
}

fn signs_to_plane(b: &BitTensor) -> FloatPlane {
    FloatPlane {
        shape: b.shape(),
        data: b.to_signs().into_iter().map(|s| s as f32).collect(),
    }
}

pub enum ReferenceInput<'a> {
    Real(&'a InputTensor),
    Binary(&'a BitTensor),
}

impl<'a> From<&'a InputTensor> for ReferenceInput<'a> {
    fn from(t: &'a InputTensor) -> Self {
        ReferenceInput::Real(t)
    }
}

impl<'a> From<&'a BitTensor> for ReferenceInput<'a> {
    fn from(t: &'a BitTensor) -> Self {
        ReferenceInput::Binary(t)
    }
}

fn weight_sign(weights: &BitTensor, c: usize, y: usize, x: usize) -> f32 {
    if weights.get(c, y, x) {
        1.0
    } else {
        -1.0
    }
}

/// Per-filter stacks of cumulative per-channel convolution planes.
fn convolve(
    x: &FloatPlane,
    weights: &BitTensor,
    filters: usize,
    kernel: usize,
    stride: usize,
) -> Result<Vec<FloatPlane>> {
    let s = x.shape;
    if s.height < kernel || s.width < kernel {
        return Err(Error::invalid("kernel larger than input"));
    }
    let oh = (s.height - kernel) / stride + 1;
    let ow = (s.width - kernel) / stride + 1;
    let mut out = Vec::with_capacity(filters);
    for f in 0..filters {
        let mut planes = FloatPlane::zeros(Shape::new(s.channels, oh, ow));
        for c in 0..s.channels {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut v = if c == 0 { 0.0 } else { planes.get(c - 1, y, xo) };
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            let w = weight_sign(weights, f, c, ky * kernel + kx);
                            v += w * x.get(c, y * stride + ky, xo * stride + kx);
                        }
                    }
                    planes.set(c, y, xo, v);
                }
            }
        }
        out.push(planes);
    }
    Ok(out)
}

fn max_pool(x: &FloatPlane, p: PoolSpec) -> FloatPlane {
    let s = x.shape;
    let oh = (s.height - p.size) / p.stride + 1;
    let ow = (s.width - p.size) / p.stride + 1;
    let mut out = FloatPlane::zeros(Shape::new(s.channels, oh, ow));
    for c in 0..s.channels {
        for y in 0..oh {
            for xo in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for wy in 0..p.size {
                    for wx in 0..p.size {
                        m = m.max(x.get(c, y * p.stride + wy, xo * p.stride + wx));
                    }
                }
                out.set(c, y, xo, m);
            }
        }
    }
    out
}

/// Applies `bn[i]` to every value of channel `i`, or to element `i` when
/// there is one parameter set per element.
fn batch_norm(x: &FloatPlane, bn: &[BnParams]) -> FloatPlane {
    let mut out = x.clone();
    let per = if bn.len() == x.shape.len() {
        1
    } else {
        x.shape.height * x.shape.width
    };
    for (i, v) in out.data.iter_mut().enumerate() {
        *v = bn[i / per].apply(*v);
    }
    out
}

fn activate(x: &FloatPlane) -> Result<BitTensor> {
    let mut out = BitTensor::zeros(x.shape)?;
    let s = x.shape;
    for c in 0..s.channels {
        for y in 0..s.height {
            for xo in 0..s.width {
                let v = x.get(c, y, xo);
                if !v.is_finite() {
                    return Err(Error::invalid("non-finite normalized value"));
                }
                out.set(c, y, xo, v >= 0.0);
            }
        }
    }
    Ok(out)
}

/// Runs `net` unfused, returning scores, label and every block's binary output.
pub fn reference_forward<'a>(net: &Network, input: impl Into<ReferenceInput<'a>>) -> Result<ReferenceOutput> {
    net.check()?;
    let mut x = to_plane_input(net, &input.into())?;
    let mut intermediates = Vec::with_capacity(net.blocks.len());
    let mut peak = 0usize;
    let mut scores = Vec::new();
    for block in &net.blocks {
        let normalized = match block {
            Block::FusedFc(b) => {
                let mut z = FloatPlane::zeros(Shape::vector(b.out_units));
                for u in 0..b.out_units {
                    let mut v = 0.0f32;
                    for (i, &xi) in x.data.iter().enumerate() {
                        v += weight_sign(&b.weights, 0, u, i) * xi;
                    }
                    z.data[u] = v;
                }
                peak = peak.max(z.bytes());
                let n = batch_norm(&z, &b.bn);
                scores = n.data.clone();
                n
            }
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => {
                let stacks = convolve(&x, &b.weights, b.filters, b.kernel, b.stride)?;
                let live: usize = stacks.iter().map(FloatPlane::bytes).sum();
                peak = peak.max(live);
                let last = x.shape.channels - 1;
                let (oh, ow) = (stacks[0].shape.height, stacks[0].shape.width);
                let mut conv = FloatPlane::zeros(Shape::new(b.filters, oh, ow));
                for (f, st) in stacks.iter().enumerate() {
                    let per = oh * ow;
                    conv.data[f * per..(f + 1) * per].copy_from_slice(&st.data[last * per..(last + 1) * per]);
                }
                drop(stacks);
                let pooled = match block.pool() {
                    Some(p) => {
                        let pooled = max_pool(&conv, p);
                        peak = peak.max(pooled.bytes());
                        pooled
                    }
                    None => conv,
                };
                batch_norm(&pooled, &b.bn)
            }
        };
        let bits = activate(&normalized)?;
        x = signs_to_plane(&bits);
        intermediates.push(bits);
    }
    let label = crate::inference::argmax(&scores);
    Ok(ReferenceOutput {
        scores,
        label,
        intermediates,
        peak_temp_bytes: peak,
    })
}
