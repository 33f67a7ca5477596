//! Network description: fused blocks, batch-norm parameters and their folded
//! threshold form, structural validation, and the `.ebnn` model file format.

use std::fmt;

use crate::bitops::{BitTensor, Shape, MAX_ROW_BITS};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f32 = 1e-4;

/// Per-unit batch-norm parameters, single precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnParams {
    pub gamma: f32,
    pub beta: f32,
    pub mean: f32,
    pub variance: f32,
    pub epsilon: f32,
}

impl Default for BnParams {
    fn default() -> Self {
        BnParams {
            gamma: 1.0,
            beta: 0.0,
            mean: 0.0,
            variance: 1.0 - DEFAULT_EPSILON,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl BnParams {
    pub fn new(gamma: f32, beta: f32, mean: f32, variance: f32) -> Self {
        BnParams {
            gamma,
            beta,
            mean,
            variance,
            epsilon: DEFAULT_EPSILON,
        }
    }

    /// `sqrt(variance + epsilon)`, rounded once.
    #[inline]
    pub fn std(&self) -> f32 {
        (self.variance + self.epsilon).sqrt()
    }

    /// Batch normalization evaluated in the canonical single-precision order.
    ///
    /// Every path that needs a normalized value (reference oracle, final
    /// block scores, generated C) uses exactly this sequence of operations.
    #[inline]
    pub fn apply(&self, x: f32) -> f32 {
        self.gamma * ((x - self.mean) / self.std()) + self.beta
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let all = [self.gamma, self.beta, self.mean, self.variance, self.epsilon];
        if all.iter().any(|v| !v.is_finite()) {
            return Err("non-finite batch-norm parameter".into());
        }
        if self.gamma == 0.0 {
            return Err("gamma is zero".into());
        }
        if self.variance < 0.0 {
            return Err(format!("negative variance {}", self.variance));
        }
        if self.epsilon <= 0.0 {
            return Err(format!("epsilon {} is not positive", self.epsilon));
        }
        Ok(())
    }
}

/// Batch norm followed by binary activation, collapsed into one comparison.
///
/// The output bit is `x >= threshold` when `flip` is false and
/// `x <= threshold` when it is true.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BnFold {
    pub threshold: f32,
    pub flip: bool,
}

impl BnFold {
    #[inline]
    pub fn activate(&self, x: f32) -> bool {
        if self.flip {
            x <= self.threshold
        } else {
            x >= self.threshold
        }
    }

    /// Closed-form threshold `mean - beta * std / gamma`, ignoring rounding.
    pub fn analytic_threshold(bn: &BnParams) -> f64 {
        let std = (bn.variance as f64 + bn.epsilon as f64).sqrt();
        bn.mean as f64 - bn.beta as f64 * std / bn.gamma as f64
    }
}

/// Maps an f32 onto a u32 whose unsigned order matches the float order.
fn order_key(x: f32) -> u32 {
    let b = x.to_bits();
    if b & 0x8000_0000 != 0 {
        !b
    } else {
        b | 0x8000_0000
    }
}

fn from_order_key(k: u32) -> f32 {
    if k & 0x8000_0000 != 0 {
        f32::from_bits(k & 0x7fff_ffff)
    } else {
        f32::from_bits(!k)
    }
}

/// Folds batch norm and the sign activation into a threshold.
///
/// Every rounding step of [`BnParams::apply`] is monotone in `x`, so the set
/// of finite inputs with a non-negative normalized value is a half-line. The
/// threshold returned is its exact single-precision endpoint, found by
/// bisection over the ordered float encoding, which makes
/// `fold.activate(x) == (bn.apply(x) >= 0.0)` hold for every finite `x`.
pub fn fold_bn(bn: &BnParams) -> Result<BnFold> {
    bn.check().map_err(Error::DegenerateParameter)?;
    let positive = |x: f32| bn.apply(x) >= 0.0;
    let lo = order_key(-f32::MAX);
    let hi = order_key(f32::MAX);
    if bn.gamma > 0.0 {
        // smallest x with positive(x)
        if !positive(f32::MAX) {
            return Ok(BnFold {
                threshold: f32::INFINITY,
                flip: false,
            });
        }
        if positive(-f32::MAX) {
            return Ok(BnFold {
                threshold: f32::NEG_INFINITY,
                flip: false,
            });
        }
        let (mut a, mut b) = (lo, hi); // positive(a) false, positive(b) true
        while b - a > 1 {
            let mid = a + (b - a) / 2;
            if positive(from_order_key(mid)) {
                b = mid;
            } else {
                a = mid;
            }
        }
        Ok(BnFold {
            threshold: canonical_zero(from_order_key(b)),
            flip: false,
        })
    } else {
        // largest x with positive(x)
        if !positive(-f32::MAX) {
            return Ok(BnFold {
                threshold: f32::NEG_INFINITY,
                flip: true,
            });
        }
        if positive(f32::MAX) {
            return Ok(BnFold {
                threshold: f32::INFINITY,
                flip: true,
            });
        }
        let (mut a, mut b) = (lo, hi); // positive(a) true, positive(b) false
        while b - a > 1 {
            let mid = a + (b - a) / 2;
            if positive(from_order_key(mid)) {
                a = mid;
            } else {
                b = mid;
            }
        }
        Ok(BnFold {
            threshold: canonical_zero(from_order_key(a)),
            flip: true,
        })
    }
}

// -0.0 and +0.0 compare equal; keep the literal form stable.
fn canonical_zero(x: f32) -> f32 {
    if x == 0.0 {
        0.0
    } else {
        x
    }
}

/// Element type of the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ElementKind {
    Real,
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct InputSpec {
    pub shape: Shape,
    pub kind: ElementKind,
}

impl InputSpec {
    pub fn real(channels: usize, height: usize, width: usize) -> Self {
        InputSpec {
            shape: Shape::new(channels, height, width),
            kind: ElementKind::Real,
        }
    }

    pub fn binary(channels: usize, height: usize, width: usize) -> Self {
        InputSpec {
            shape: Shape::new(channels, height, width),
            kind: ElementKind::Binary,
        }
    }

    /// Bytes needed to buffer one input sample on the device.
    pub fn sample_bytes(&self) -> usize {
        match self.kind {
            ElementKind::Real => self.shape.len() * 4,
            ElementKind::Binary => self.shape.packed_bytes(),
        }
    }
}

/// Fused binary fully connected block. Weights are `1 x out_units x in_len`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcBlock {
    pub in_len: usize,
    pub out_units: usize,
    pub weights: BitTensor,
    pub bn: Vec<BnParams>,
}

impl FcBlock {
    /// All −1 weights and identity batch norm.
    pub fn new(in_len: usize, out_units: usize) -> Result<Self> {
        Ok(FcBlock {
            in_len,
            out_units,
            weights: BitTensor::zeros(Shape::new(1, out_units, in_len))?,
            bn: vec![BnParams::default(); out_units],
        })
    }

    #[inline]
    pub fn weight_row(&self, unit: usize) -> &[u8] {
        self.weights.row(0, unit)
    }
}

/// Fused binary convolution block, "valid" padding.
///
/// Weights are `filters x in_channels x (kernel * kernel)`: each filter
/// channel is one packed row of `kernel²` bits, row-major over the window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub filters: usize,
    pub in_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub weights: BitTensor,
    pub bn: Vec<BnParams>,
}

impl ConvBlock {
    pub fn new(filters: usize, in_channels: usize, kernel: usize, stride: usize) -> Result<Self> {
        Ok(ConvBlock {
            filters,
            in_channels,
            kernel,
            stride,
            weights: BitTensor::zeros(Shape::new(filters, in_channels, kernel * kernel))?,
            bn: vec![BnParams::default(); filters],
        })
    }

    #[inline]
    pub fn weight_row(&self, filter: usize, channel: usize) -> &[u8] {
        self.weights.row(filter, channel)
    }

    /// Spatial size of the convolution result, `None` if non-positive.
    pub fn conv_output(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        if self.kernel == 0 || self.stride == 0 || height < self.kernel || width < self.kernel {
            return None;
        }
        Some((
            (height - self.kernel) / self.stride + 1,
            (width - self.kernel) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoolSpec {
    pub size: usize,
    pub stride: usize,
}

impl PoolSpec {
    pub fn output(&self, height: usize, width: usize) -> Option<(usize, usize)> {
        if self.size == 0 || self.stride == 0 || height < self.size || width < self.size {
            return None;
        }
        Some((
            (height - self.size) / self.stride + 1,
            (width - self.size) / self.stride + 1,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    FusedFc(FcBlock),
    FusedConv(ConvBlock),
    FusedConvPool(ConvBlock, PoolSpec),
}

impl Block {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Block::FusedFc(_) => "FusedFC",
            Block::FusedConv(_) => "FusedConv",
            Block::FusedConvPool(..) => "FusedConvPool",
        }
    }

    pub fn bn(&self) -> &[BnParams] {
        match self {
            Block::FusedFc(b) => &b.bn,
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => &b.bn,
        }
    }

    pub fn bn_mut(&mut self) -> &mut [BnParams] {
        match self {
            Block::FusedFc(b) => &mut b.bn,
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => &mut b.bn,
        }
    }

    pub fn weights(&self) -> &BitTensor {
        match self {
            Block::FusedFc(b) => &b.weights,
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => &b.weights,
        }
    }

    pub fn weights_mut(&mut self) -> &mut BitTensor {
        match self {
            Block::FusedFc(b) => &mut b.weights,
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => &mut b.weights,
        }
    }

    /// Output channels (FC: units).
    pub fn out_units(&self) -> usize {
        match self {
            Block::FusedFc(b) => b.out_units,
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => b.filters,
        }
    }

    pub fn conv(&self) -> Option<&ConvBlock> {
        match self {
            Block::FusedFc(_) => None,
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => Some(b),
        }
    }

    pub fn pool(&self) -> Option<PoolSpec> {
        match self {
            Block::FusedConvPool(_, p) => Some(*p),
            _ => None,
        }
    }

    /// Shape before pooling for convolution blocks; the output shape otherwise.
    pub fn pre_pool_shape(&self, input: Shape) -> std::result::Result<Shape, String> {
        match self {
            Block::FusedFc(b) => {
                if input.len() != b.in_len {
                    return Err(format!(
                        "FC expects {} inputs but predecessor produces {} ({input})",
                        b.in_len,
                        input.len()
                    ));
                }
                Ok(Shape::vector(b.out_units))
            }
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => {
                if input.channels != b.in_channels {
                    return Err(format!(
                        "shape mismatch: convolution expects {} input channels but receives {input}",
                        b.in_channels
                    ));
                }
                let (h, w) = b.conv_output(input.height, input.width).ok_or_else(|| {
                    format!(
                        "non-positive output dimension: kernel {} stride {} over {input}",
                        b.kernel, b.stride
                    )
                })?;
                Ok(Shape::new(b.filters, h, w))
            }
        }
    }

    /// Output shape given the input shape, or a description of the problem.
    pub fn output_shape(&self, input: Shape) -> std::result::Result<Shape, String> {
        let conv = self.pre_pool_shape(input)?;
        match self {
            Block::FusedConvPool(_, p) => {
                let (h, w) = p.output(conv.height, conv.width).ok_or_else(|| {
                    format!(
                        "non-positive output dimension: pool {}/{} over convolution output {conv}",
                        p.size, p.stride
                    )
                })?;
                Ok(Shape::new(conv.channels, h, w))
            }
            _ => Ok(conv),
        }
    }

    fn expected_weight_shape(&self) -> Shape {
        match self {
            Block::FusedFc(b) => Shape::new(1, b.out_units, b.in_len),
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => {
                Shape::new(b.filters, b.in_channels, b.kernel * b.kernel)
            }
        }
    }
}

/// One invariant violation found by [`Network::validate`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// `None` for network-level problems.
    pub block: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.block {
            Some(i) => write!(f, "block {i}: {}", self.message),
            None => write!(f, "network: {}", self.message),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub input: InputSpec,
    pub blocks: Vec<Block>,
}

/// Input and output shape of one block, plus the pre-pool convolution shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockShapes {
    pub input: Shape,
    pub conv: Shape,
    pub output: Shape,
}

impl Network {
    pub fn new(input: InputSpec, blocks: Vec<Block>) -> Self {
        Network { input, blocks }
    }

    /// Number of classes, i.e. units of the final FC block.
    pub fn classes(&self) -> usize {
        match self.blocks.last() {
            Some(Block::FusedFc(b)) => b.out_units,
            _ => 0,
        }
    }

    /// Shapes of every block, failing at the first broken link.
    pub fn shapes(&self) -> Result<Vec<BlockShapes>> {
        let mut cur = self.input.shape;
        let mut out = Vec::with_capacity(self.blocks.len());
        for (i, block) in self.blocks.iter().enumerate() {
            let conv = block
                .pre_pool_shape(cur)
                .map_err(|m| Error::InvalidNetwork(vec![format!("block {i}: {m}")]))?;
            let output = block
                .output_shape(cur)
                .map_err(|m| Error::InvalidNetwork(vec![format!("block {i}: {m}")]))?;
            out.push(BlockShapes {
                input: cur,
                conv,
                output,
            });
            cur = output;
        }
        Ok(out)
    }

    /// Every violated structural invariant, in block order.
    pub fn validate(&self) -> std::result::Result<(), Vec<Violation>> {
        let mut v = Vec::new();
        let net = |m: String| Violation {
            block: None,
            message: m,
        };
        let s = self.input.shape;
        if s.is_empty() {
            v.push(net(format!("input shape {s} has a zero dimension")));
        }
        if s.width > MAX_ROW_BITS {
            v.push(net(format!("input width {} exceeds {MAX_ROW_BITS}", s.width)));
        }
        if self.blocks.is_empty() {
            v.push(net("network has no blocks".into()));
        }

        let mut cur = Some(s);
        let mut seen_fc = false;
        for (i, block) in self.blocks.iter().enumerate() {
            let mut here = |m: String| {
                v.push(Violation {
                    block: Some(i),
                    message: m,
                })
            };
            let ws = block.expected_weight_shape();
            if block.weights().shape() != ws {
                here(format!(
                    "weight tensor {} does not match hyperparameters ({ws})",
                    block.weights().shape()
                ));
            }
            if block.out_units() == 0 {
                here("block has no output units".into());
            }
            if block.bn().len() != block.out_units() {
                here(format!(
                    "{} batch-norm entries for {} output units",
                    block.bn().len(),
                    block.out_units()
                ));
            }
            for (u, bn) in block.bn().iter().enumerate() {
                if let Err(m) = bn.check() {
                    here(format!("unit {u}: {m}"));
                }
            }
            if let Some(conv) = block.conv() {
                if seen_fc {
                    here("convolution cannot follow a fully connected block".into());
                }
                if conv.kernel == 0 || conv.stride == 0 {
                    here(format!(
                        "kernel {} and stride {} must be positive",
                        conv.kernel, conv.stride
                    ));
                }
            }
            if let Some(p) = block.pool() {
                if p.size == 0 || p.stride == 0 {
                    here(format!(
                        "pool size {} and stride {} must be positive",
                        p.size, p.stride
                    ));
                }
            }
            if matches!(block, Block::FusedFc(_)) {
                seen_fc = true;
            }
            cur = match cur {
                Some(input) => match block.output_shape(input) {
                    Ok(o) => {
                        if o.width > MAX_ROW_BITS {
                            here(format!("output width {} exceeds {MAX_ROW_BITS}", o.width));
                        }
                        Some(o)
                    }
                    Err(m) => {
                        here(m);
                        None
                    }
                },
                None => None,
            };
        }
        if let Some(last) = self.blocks.last() {
            if !matches!(last, Block::FusedFc(_)) {
                v.push(net(format!(
                    "final block is {} but must be FusedFC",
                    last.kind_name()
                )));
            }
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(v)
        }
    }

    /// [`validate`](Self::validate) folded into an [`Error`].
    pub fn check(&self) -> Result<()> {
        self.validate()
            .map_err(|v| Error::InvalidNetwork(v.into_iter().map(|x| x.to_string()).collect()))
    }

    /// One line per block: variant, shapes, strides, parameter bytes.
    pub fn summary(&self) -> String {
        let mut out = format!(
            "input {} {}\n",
            self.input.shape,
            match self.input.kind {
                ElementKind::Real => "real",
                ElementKind::Binary => "binary",
            }
        );
        let shapes = self.shapes().ok();
        for (i, block) in self.blocks.iter().enumerate() {
            let io = shapes
                .as_ref()
                .map(|s| format!("{} -> {}", s[i].input, s[i].output))
                .unwrap_or_else(|| "? -> ?".into());
            let hyper = match block {
                Block::FusedFc(b) => format!("fc {}->{}", b.in_len, b.out_units),
                Block::FusedConv(b) => format!("filters={} k={} stride={}", b.filters, b.kernel, b.stride),
                Block::FusedConvPool(b, p) => format!(
                    "filters={} k={} stride={} pool={}/{}",
                    b.filters, b.kernel, b.stride, p.size, p.stride
                ),
            };
            out.push_str(&format!(
                "{i} {} {io} {hyper} params={}B\n",
                block.kind_name(),
                crate::memory::param_bytes(block)
            ));
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serialize(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        deserialize(bytes)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        deserialize(&std::fs::read(path)?)
    }
}

pub const MODEL_MAGIC: &[u8; 4] = b"EBNN";
pub const MODEL_VERSION: u16 = 1;

const TAG_FC: u8 = 0;
const TAG_CONV: u8 = 1;
const TAG_CONV_POOL: u8 = 2;

/// Encodes a network. All integers little-endian; see `docs/model-format.md`.
pub fn serialize(net: &Network) -> Vec<u8> {
    let mut w = Vec::new();
    w.extend_from_slice(MODEL_MAGIC);
    w.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let s = net.input.shape;
    for d in [s.channels, s.height, s.width] {
        w.extend_from_slice(&(d as u16).to_le_bytes());
    }
    w.push(match net.input.kind {
        ElementKind::Real => 0,
        ElementKind::Binary => 1,
    });
    w.extend_from_slice(&(net.blocks.len() as u16).to_le_bytes());
    for block in &net.blocks {
        match block {
            Block::FusedFc(b) => {
                w.push(TAG_FC);
                w.extend_from_slice(&(b.in_len as u32).to_le_bytes());
                w.extend_from_slice(&(b.out_units as u32).to_le_bytes());
            }
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => {
                w.push(if block.pool().is_some() {
                    TAG_CONV_POOL
                } else {
                    TAG_CONV
                });
                w.extend_from_slice(&(b.filters as u16).to_le_bytes());
                w.extend_from_slice(&(b.in_channels as u16).to_le_bytes());
                w.push(b.kernel as u8);
                w.push(b.stride as u8);
                if let Some(p) = block.pool() {
                    w.push(p.size as u8);
                    w.push(p.stride as u8);
                }
            }
        }
        w.extend_from_slice(block.weights().as_bytes());
        for bn in block.bn() {
            for x in [bn.gamma, bn.beta, bn.mean, bn.variance, bn.epsilon] {
                w.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    w
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::parse(
                self.pos,
                format!(
                    "truncated {what}: need {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f32> {
        Ok(f32::from_bits(self.u32(what)?))
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(Error::parse(
                self.pos,
                format!("{} trailing bytes", self.buf.len() - self.pos),
            ));
        }
        Ok(())
    }
}

fn read_bits(r: &mut Reader<'_>, shape: Shape) -> Result<BitTensor> {
    let at = r.offset();
    if shape.width > MAX_ROW_BITS {
        return Err(Error::parse(at, format!("row width {} too large", shape.width)));
    }
    let bytes = r.take(shape.packed_bytes(), "weights")?;
    BitTensor::from_bytes(shape, bytes.to_vec()).map_err(|e| Error::parse(at, e.to_string()))
}

fn read_bn(r: &mut Reader<'_>, n: usize) -> Result<Vec<BnParams>> {
    (0..n)
        .map(|_| {
            Ok(BnParams {
                gamma: r.f32("batch norm")?,
                beta: r.f32("batch norm")?,
                mean: r.f32("batch norm")?,
                variance: r.f32("batch norm")?,
                epsilon: r.f32("batch norm")?,
            })
        })
        .collect()
}

/// Decodes a network written by [`serialize`]. Does not run [`Network::validate`].
pub fn deserialize(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::new(bytes);
    if bytes.is_empty() {
        return Err(Error::parse(0, "empty model stream"));
    }
    let magic = r.take(4, "magic")?;
    if magic != MODEL_MAGIC {
        return Err(Error::parse(
            0,
            format!("bad magic {magic:02x?}, expected \"EBNN\""),
        ));
    }
    let version = r.u16("version")?;
    if version != MODEL_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let channels = r.u16("input spec")? as usize;
    let height = r.u16("input spec")? as usize;
    let width = r.u16("input spec")? as usize;
    let kind_at = r.offset();
    let kind = match r.u8("input kind")? {
        0 => ElementKind::Real,
        1 => ElementKind::Binary,
        k => return Err(Error::parse(kind_at, format!("unknown input kind {k}"))),
    };
    let count = r.u16("block count")? as usize;
    let mut blocks = Vec::with_capacity(count);
    for _ in 0..count {
        let tag_at = r.offset();
        let tag = r.u8("block tag")?;
        let block = match tag {
            TAG_FC => {
                let in_len = r.u32("fc header")? as usize;
                let out_units = r.u32("fc header")? as usize;
                let weights = read_bits(&mut r, Shape::new(1, out_units, in_len))?;
                let bn = read_bn(&mut r, out_units)?;
                Block::FusedFc(FcBlock {
                    in_len,
                    out_units,
                    weights,
                    bn,
                })
            }
            TAG_CONV | TAG_CONV_POOL => {
                let filters = r.u16("conv header")? as usize;
                let in_channels = r.u16("conv header")? as usize;
                let kernel = r.u8("conv header")? as usize;
                let stride = r.u8("conv header")? as usize;
                let pool = if tag == TAG_CONV_POOL {
                    Some(PoolSpec {
                        size: r.u8("pool header")? as usize,
                        stride: r.u8("pool header")? as usize,
                    })
                } else {
                    None
                };
                let weights = read_bits(&mut r, Shape::new(filters, in_channels, kernel * kernel))?;
                let bn = read_bn(&mut r, filters)?;
                let conv = ConvBlock {
                    filters,
                    in_channels,
                    kernel,
                    stride,
                    weights,
                    bn,
                };
                match pool {
                    Some(p) => Block::FusedConvPool(conv, p),
                    None => Block::FusedConv(conv),
                }
            }
            t => return Err(Error::parse(tag_at, format!("unknown block tag {t}"))),
        };
        blocks.push(block);
    }
    r.finish()?;
    Ok(Network {
        input: InputSpec {
            shape: Shape::new(channels, height, width),
            kind,
        },
        blocks,
    })
}
