//! Fused feedforward execution.
//!
//! Every block keeps a single `f32` accumulator live and writes its output
//! straight into a bit-packed buffer. Two such buffers are enough for a whole
//! network: block `i` reads one and writes the other, then they swap roles.
//!
//! Loop order inside a convolution block is filter-major, then output cell in
//! row-major order, then (for pooling blocks) the pool window in row-major
//! order. Convolution results shared by overlapping pool windows are
//! recomputed rather than cached.

use crate::bitops::{dot_bits, BitTensor, BitView, Shape};
use crate::error::{Error, Result};
use crate::model::{fold_bn, Block, ConvBlock, ElementKind, FcBlock, Network, PoolSpec};

/// Real-valued network input, one `f32` per element, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    pub shape: Shape,
    pub data: Vec<f32>,
}

impl InputTensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::invalid(format!(
                "{} values for input shape {shape}",
                data.len()
            )));
        }
        Ok(InputTensor { shape, data })
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.shape.height + y) * self.shape.width + x]
    }
}

/// Input to a block: the real network input or a binary predecessor output.
#[derive(Debug, Clone, Copy)]
pub enum BlockInput<'a> {
    Real(&'a InputTensor),
    Binary(BitView<'a>),
}

impl BlockInput<'_> {
    pub fn shape(&self) -> Shape {
        match self {
            BlockInput::Real(t) => t.shape,
            BlockInput::Binary(v) => v.shape,
        }
    }
}

impl<'a> From<&'a InputTensor> for BlockInput<'a> {
    fn from(t: &'a InputTensor) -> Self {
        BlockInput::Real(t)
    }
}

impl<'a> From<&'a BitTensor> for BlockInput<'a> {
    fn from(t: &'a BitTensor) -> Self {
        BlockInput::Binary(t.view())
    }
}

impl<'a> From<BitView<'a>> for BlockInput<'a> {
    fn from(v: BitView<'a>) -> Self {
        BlockInput::Binary(v)
    }
}

/// Hooks into the fused loops, for tracing and per-block inspection.
///
/// The unit type `()` ignores everything and compiles away.
pub trait Observer {
    /// One convolution result was computed into the accumulator.
    fn convolution(&mut self, _filter: usize, _y: usize, _x: usize) {}
    /// One output bit was stored.
    fn store(&mut self, _channel: usize, _y: usize, _x: usize) {}
    /// Block `index` finished; `output` is its packed result.
    fn block_output(&mut self, _index: usize, _output: BitView<'_>) {}
}

impl Observer for () {}

/// Working memory for [`network_forward`]: two packed buffers plus the
/// accumulator.
#[derive(Debug, Clone)]
pub struct TempArena {
    buf_a: Vec<u8>,
    buf_b: Vec<u8>,
    accum: f32,
}

impl TempArena {
    /// Arena with `buffer_bytes` per buffer.
    pub fn with_buffer_bytes(buffer_bytes: usize) -> Self {
        TempArena {
            buf_a: vec![0; buffer_bytes],
            buf_b: vec![0; buffer_bytes],
            accum: 0.0,
        }
    }

    /// Arena sized to the largest block output of `net`.
    pub fn for_network(net: &Network) -> Result<Self> {
        Ok(Self::with_buffer_bytes(crate::memory::ebnn_temp_bytes(net)?))
    }

    pub fn buffer_bytes(&self) -> usize {
        self.buf_a.len()
    }

    /// Bytes of working storage: both buffers and the accumulator.
    pub fn total_bytes(&self) -> usize {
        self.buf_a.len() + self.buf_b.len() + std::mem::size_of_val(&self.accum)
    }
}

/// `x` when the low bit of `bit` is set, else `-x`. Adding `-x` rounds
/// exactly like subtracting `x`, and this form has no data-dependent branch.
#[inline(always)]
fn signed(x: f32, bit: u8) -> f32 {
    f32::from_bits(x.to_bits() ^ (((!bit & 1) as u32) << 31))
}

#[inline]
fn fc_accumulate(input: &BlockInput<'_>, block: &FcBlock, unit: usize) -> f32 {
    let w = block.weight_row(unit);
    match input {
        BlockInput::Binary(v) => {
            let s = v.shape;
            let mut sum = 0i32;
            for c in 0..s.channels {
                for y in 0..s.height {
                    let off = (c * s.height + y) * s.width;
                    sum += dot_bits(v.row(c, y), 0, w, off, s.width);
                }
            }
            sum as f32
        }
        BlockInput::Real(t) => {
            let mut acc = 0.0f32;
            for (i, &x) in t.data.iter().enumerate() {
                acc += signed(x, w[i / 8] >> (i % 8));
            }
            acc
        }
    }
}

/// Full cross-channel convolution of filter `f` at output position `(oy, ox)`.
#[inline]
fn conv_accumulate(input: &BlockInput<'_>, block: &ConvBlock, f: usize, oy: usize, ox: usize) -> f32 {
    let k = block.kernel;
    let (y0, x0) = (oy * block.stride, ox * block.stride);
    match input {
        BlockInput::Binary(v) => {
            let mut sum = 0i32;
            for c in 0..block.in_channels {
                let w = block.weight_row(f, c);
                for ky in 0..k {
                    sum += dot_bits(v.row(c, y0 + ky), x0, w, ky * k, k);
                }
            }
            sum as f32
        }
        BlockInput::Real(t) => {
            let mut acc = 0.0f32;
            for c in 0..block.in_channels {
                let w = block.weight_row(f, c);
                for ky in 0..k {
                    for kx in 0..k {
                        let i = ky * k + kx;
                        acc += signed(t.at(c, y0 + ky, x0 + kx), w[i / 8] >> (i % 8));
                    }
                }
            }
            acc
        }
    }
}

fn check_out(out: &[u8], shape: Shape) -> Result<()> {
    if out.len() != shape.packed_bytes() {
        return Err(Error::invalid(format!(
            "output slot holds {} bytes but {shape} needs {}",
            out.len(),
            shape.packed_bytes()
        )));
    }
    Ok(())
}

#[inline]
fn store_bit(out: &mut [u8], shape: Shape, c: usize, y: usize, x: usize, bit: bool) {
    if bit {
        let row = (c * shape.height + y) * shape.row_stride();
        out[row + x / 8] |= 1 << (x % 8);
    }
}

fn fc_impl<O: Observer>(
    input: BlockInput<'_>,
    block: &FcBlock,
    out: &mut [u8],
    mut scores: Option<&mut [f32]>,
    accum: &mut f32,
    obs: &mut O,
) -> Result<()> {
    let in_shape = input.shape();
    if in_shape.len() != block.in_len {
        return Err(Error::invalid(format!(
            "FC expects {} inputs, got {in_shape}",
            block.in_len
        )));
    }
    let shape = Shape::vector(block.out_units);
    check_out(out, shape)?;
    if let Some(s) = scores.as_deref() {
        if s.len() != block.out_units {
            return Err(Error::invalid(format!(
                "{} score slots for {} units",
                s.len(),
                block.out_units
            )));
        }
    }
    out.fill(0);
    for unit in 0..block.out_units {
        let bn = &block.bn[unit];
        let fold = fold_bn(bn)?;
        *accum = fc_accumulate(&input, block, unit);
        if let Some(s) = scores.as_deref_mut() {
            s[unit] = bn.apply(*accum);
        }
        store_bit(out, shape, 0, 0, unit, fold.activate(*accum));
        obs.store(0, 0, unit);
    }
    Ok(())
}

fn conv_impl<O: Observer>(
    input: BlockInput<'_>,
    block: &ConvBlock,
    pool: Option<PoolSpec>,
    out: &mut [u8],
    accum: &mut f32,
    obs: &mut O,
) -> Result<()> {
    let in_shape = input.shape();
    if in_shape.channels != block.in_channels {
        return Err(Error::invalid(format!(
            "convolution expects {} channels, input is {in_shape}",
            block.in_channels
        )));
    }
    let (ch, cw) = block
        .conv_output(in_shape.height, in_shape.width)
        .ok_or_else(|| Error::invalid(format!("kernel {} does not fit {in_shape}", block.kernel)))?;
    let (oh, ow) = match pool {
        Some(p) => p
            .output(ch, cw)
            .ok_or_else(|| Error::invalid(format!("pool {} does not fit {ch}x{cw}", p.size)))?,
        None => (ch, cw),
    };
    let shape = Shape::new(block.filters, oh, ow);
    check_out(out, shape)?;
    out.fill(0);
    for f in 0..block.filters {
        let fold = fold_bn(&block.bn[f])?;
        for py in 0..oh {
            for px in 0..ow {
                match pool {
                    None => {
                        *accum = conv_accumulate(&input, block, f, py, px);
                        obs.convolution(f, py, px);
                    }
                    Some(p) => {
                        for wy in 0..p.size {
                            for wx in 0..p.size {
                                let (cy, cx) = (py * p.stride + wy, px * p.stride + wx);
                                let v = conv_accumulate(&input, block, f, cy, cx);
                                obs.convolution(f, cy, cx);
                                // seeded with the first window result
                                if (wy == 0 && wx == 0) || v > *accum {
                                    *accum = v;
                                }
                            }
                        }
                    }
                }
                store_bit(out, shape, f, py, px, fold.activate(*accum));
                obs.store(f, py, px);
            }
        }
    }
    Ok(())
}

/// Fused FC block: accumulate, fold batch norm, store one bit per unit.
pub fn fused_fc_forward(input: BlockInput<'_>, block: &FcBlock, out: &mut [u8]) -> Result<()> {
    fc_impl(input, block, out, None, &mut 0.0, &mut ())
}

/// Fused convolution block without pooling.
pub fn fused_conv_forward(input: BlockInput<'_>, block: &ConvBlock, out: &mut [u8]) -> Result<()> {
    conv_impl(input, block, None, out, &mut 0.0, &mut ())
}

/// Fused convolution and max-pool block.
pub fn fused_conv_pool_forward(
    input: BlockInput<'_>,
    block: &ConvBlock,
    pool: PoolSpec,
    out: &mut [u8],
) -> Result<()> {
    conv_impl(input, block, Some(pool), out, &mut 0.0, &mut ())
}

/// Runs one block of any variant with an observer attached.
pub fn block_forward_observed<O: Observer>(
    input: BlockInput<'_>,
    block: &Block,
    out: &mut [u8],
    obs: &mut O,
) -> Result<()> {
    let mut accum = 0.0;
    match block {
        Block::FusedFc(b) => fc_impl(input, b, out, None, &mut accum, obs),
        Block::FusedConv(b) => conv_impl(input, b, None, out, &mut accum, obs),
        Block::FusedConvPool(b, p) => conv_impl(input, b, Some(*p), out, &mut accum, obs),
    }
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f32]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Runs the whole network through `arena`.
///
/// `scores` receives the final block's batch-normalized accumulators (one
/// per class); the return value is their argmax. Nothing is allocated on
/// the success path.
pub fn network_forward<'a>(
    net: &Network,
    input: impl Into<BlockInput<'a>>,
    arena: &mut TempArena,
    scores: &mut [f32],
) -> Result<usize> {
    network_forward_observed(net, input, arena, scores, &mut ())
}

pub fn network_forward_observed<'a, O: Observer>(
    net: &Network,
    input: impl Into<BlockInput<'a>>,
    arena: &mut TempArena,
    scores: &mut [f32],
    obs: &mut O,
) -> Result<usize> {
    let input = input.into();
    let expected_kind = match input {
        BlockInput::Real(_) => ElementKind::Real,
        BlockInput::Binary(_) => ElementKind::Binary,
    };
    if input.shape() != net.input.shape || expected_kind != net.input.kind {
        return Err(Error::invalid(format!(
            "input {} {:?} does not match network input {} {:?}",
            input.shape(),
            expected_kind,
            net.input.shape,
            net.input.kind
        )));
    }
    if !matches!(net.blocks.last(), Some(Block::FusedFc(_))) {
        return Err(Error::invalid("network must end in a FusedFC block"));
    }
    if scores.len() != net.classes() {
        return Err(Error::invalid(format!(
            "{} score slots for {} classes",
            scores.len(),
            net.classes()
        )));
    }

    let TempArena { buf_a, buf_b, accum } = arena;
    let capacity = buf_a.len().min(buf_b.len());
    let (mut src, mut dst): (&mut Vec<u8>, &mut Vec<u8>) = (buf_b, buf_a);
    let mut shape = net.input.shape;
    let last = net.blocks.len() - 1;
    for (i, block) in net.blocks.iter().enumerate() {
        let out_shape = block.output_shape(shape).map_err(Error::InvalidInput)?;
        let need = out_shape.packed_bytes();
        if need > capacity {
            return Err(Error::Capacity {
                needed: need,
                available: capacity,
            });
        }
        let block_in = if i == 0 {
            input
        } else {
            BlockInput::Binary(BitView {
                shape,
                data: &src[..shape.packed_bytes()],
            })
        };
        let out = &mut dst[..need];
        match block {
            Block::FusedFc(b) if i == last => fc_impl(block_in, b, out, Some(&mut *scores), accum, obs)?,
            Block::FusedFc(b) => fc_impl(block_in, b, out, None, accum, obs)?,
            Block::FusedConv(b) => conv_impl(block_in, b, None, out, accum, obs)?,
            Block::FusedConvPool(b, p) => conv_impl(block_in, b, Some(*p), out, accum, obs)?,
        }
        obs.block_output(
            i,
            BitView {
                shape: out_shape,
                data: &dst[..need],
            },
        );
        std::mem::swap(&mut src, &mut dst);
        shape = out_shape;
    }
    Ok(argmax(scores))
}

/// Result of [`predict`].
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub scores: Vec<f32>,
    pub label: usize,
}

/// Convenience wrapper that allocates its own arena.
pub fn predict<'a>(net: &Network, input: impl Into<BlockInput<'a>>) -> Result<Prediction> {
    let mut arena = TempArena::for_network(net)?;
    let mut scores = vec![0.0; net.classes()];
    let label = network_forward(net, input, &mut arena, &mut scores)?;
    Ok(Prediction { scores, label })
}

/// Packed output of every block, collected through an [`Observer`].
#[derive(Debug, Default, Clone, PartialEq)]
pub struct BlockOutputs(pub Vec<BitTensor>);

impl Observer for BlockOutputs {
    fn block_output(&mut self, _index: usize, output: BitView<'_>) {
        self.0.push(output.to_owned());
    }
}

/// Counts convolutions and stores, and records their order.
#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct Trace {
    pub convolutions: usize,
    pub stores: usize,
    /// `(is_store, channel, y, x)` in execution order, when `record` is set.
    pub events: Vec<(bool, usize, usize, usize)>,
    pub record: bool,
}

impl Trace {
    pub fn recording() -> Self {
        Trace {
            record: true,
            ..Default::default()
        }
    }

    pub fn total(&self) -> usize {
        self.convolutions + self.stores
    }
}

impl Observer for Trace {
    fn convolution(&mut self, filter: usize, y: usize, x: usize) {
        self.convolutions += 1;
        if self.record {
            self.events.push((false, filter, y, x));
        }
    }

    fn store(&mut self, channel: usize, y: usize, x: usize) {
        self.stores += 1;
        if self.record {
            self.events.push((true, channel, y, x));
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitops::pack_row;
    use crate::model::{BnParams, InputSpec};

    fn all_ones_fc(n: usize) -> FcBlock {
        let mut b = FcBlock::new(n, 1).unwrap();
        b.weights = BitTensor::from_signs(Shape::new(1, 1, n), &vec![1; n]).unwrap();
        b
    }

    #[test]
    fn fc_all_plus_input() {
        let b = all_ones_fc(8);
        let x = BitTensor::from_signs(Shape::vector(8), &[1; 8]).unwrap();
        let mut out = [0u8; 1];
        fused_fc_forward((&x).into(), &b, &mut out).unwrap();
        assert_eq!(out[0], 1);
        assert_eq!(fc_accumulate(&(&x).into(), &b, 0), 8.0);
    }

    #[test]
    fn fc_all_minus_input() {
        let b = all_ones_fc(8);
        let x = BitTensor::from_signs(Shape::vector(8), &[-1; 8]).unwrap();
        let mut out = [0xffu8; 1];
        fused_fc_forward((&x).into(), &b, &mut out).unwrap();
        assert_eq!(out[0], 0);
        assert_eq!(fc_accumulate(&(&x).into(), &b, 0), -8.0);
    }

    #[test]
    fn fc_shape_mismatch() {
        let b = all_ones_fc(8);
        let x = BitTensor::from_signs(Shape::vector(9), &[1; 9]).unwrap();
        let mut out = [0u8; 1];
        assert!(fused_fc_forward((&x).into(), &b, &mut out).is_err());
        let x = BitTensor::from_signs(Shape::vector(8), &[1; 8]).unwrap();
        assert!(fused_fc_forward((&x).into(), &b, &mut [0u8; 2]).is_err());
    }

    #[test]
    fn fc_real_input_signed_sum() {
        let mut b = FcBlock::new(3, 1).unwrap();
        b.weights = BitTensor::from_bytes(Shape::new(1, 1, 3), pack_row(&[1, -1, 1]).unwrap()).unwrap();
        let x = InputTensor::new(Shape::vector(3), vec![0.5, 0.25, -1.0]).unwrap();
        assert_eq!(fc_accumulate(&(&x).into(), &b, 0), 0.5 - 0.25 - 1.0);
    }

    fn ones_conv(threshold_mean: f32) -> ConvBlock {
        let mut b = ConvBlock::new(1, 1, 3, 1).unwrap();
        b.weights = BitTensor::from_signs(Shape::new(1, 1, 9), &[1; 9]).unwrap();
        b.bn[0] = BnParams {
            mean: threshold_mean,
            ..BnParams::default()
        };
        b
    }

    #[test]
    fn conv_single_position() {
        let x = BitTensor::from_signs(Shape::new(1, 3, 3), &[1; 9]).unwrap();
        let b = ones_conv(0.0);
        assert_eq!(conv_accumulate(&(&x).into(), &b, 0, 0, 0), 9.0);
        let mut out = [0u8; 1];
        fused_conv_forward((&x).into(), &b, &mut out).unwrap();
        assert_eq!(out[0], 1);

        let b = ones_conv(10.0);
        fused_conv_forward((&x).into(), &b, &mut out).unwrap();
        assert_eq!(out[0], 0);
    }

    #[test]
    fn conv_pool_fig2_trace() {
        let x = BitTensor::from_signs(Shape::new(1, 28, 28), &[1; 784]).unwrap();
        let b = ones_conv(0.0);
        let pool = PoolSpec { size: 2, stride: 2 };
        let shape = Shape::new(1, 13, 13);
        let mut out = vec![0u8; shape.packed_bytes()];
        let mut trace = Trace::recording();
        conv_impl((&x).into(), &b, Some(pool), &mut out, &mut 0.0, &mut trace).unwrap();
        assert_eq!(trace.convolutions, 676);
        assert_eq!(trace.stores, 169);
        assert_eq!(trace.total(), 845);
        // every output bit +1 for all-ones filter on all-ones input
        let view = BitView::new(shape, &out).unwrap();
        assert!(view.to_signs().iter().all(|&v| v == 1));
        // first window: (0,0),(0,1),(1,0),(1,1) then the store of cell (0,0)
        assert_eq!(
            &trace.events[..5],
            &[
                (false, 0, 0, 0),
                (false, 0, 0, 1),
                (false, 0, 1, 0),
                (false, 0, 1, 1),
                (true, 0, 0, 0)
            ]
        );
    }

    #[test]
    fn overlapped_pool_recomputes() {
        let x = BitTensor::from_signs(Shape::new(1, 9, 9), &[1; 81]).unwrap();
        let b = ones_conv(0.0);
        // conv 7x7, pool 3/2 -> 3x3 cells, 9 convolutions each
        let shape = Shape::new(1, 3, 3);
        let mut out = vec![0u8; shape.packed_bytes()];
        let mut trace = Trace::default();
        conv_impl(
            (&x).into(),
            &b,
            Some(PoolSpec { size: 3, stride: 2 }),
            &mut out,
            &mut 0.0,
            &mut trace,
        )
        .unwrap();
        assert_eq!(trace.convolutions, 81);
        assert_eq!(trace.stores, 9);
    }

    #[test]
    fn pool_window_order_does_not_matter() {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        for _ in 0..50 {
            let mut block = Block::FusedConvPool(
                ConvBlock::new(3, 2, 3, 1).unwrap(),
                PoolSpec { size: 3, stride: 2 },
            );
            crate::random::randomize_block(&mut rng, &mut block, 18);
            let (Block::FusedConvPool(conv, pool), in_shape) = (&block, Shape::new(2, 11, 11)) else {
                unreachable!()
            };
            let mut x = BitTensor::zeros(in_shape).unwrap();
            crate::random::randomize_bits(&mut rng, &mut x);
            let out_shape = block.output_shape(in_shape).unwrap();
            let mut out = vec![0u8; out_shape.packed_bytes()];
            fused_conv_pool_forward((&x).into(), conv, *pool, &mut out).unwrap();
            let got = BitTensor::from_bytes(out_shape, out).unwrap();
            let input: BlockInput = (&x).into();
            let mut order: Vec<(usize, usize)> = (0..9).map(|i| (i / 3, i % 3)).collect();
            for f in 0..3 {
                let fold = fold_bn(&conv.bn[f]).unwrap();
                for py in 0..out_shape.height {
                    for px in 0..out_shape.width {
                        order.shuffle(&mut rng);
                        let m = order
                            .iter()
                            .map(|&(wy, wx)| conv_accumulate(&input, conv, f, py * 2 + wy, px * 2 + wx))
                            .fold(f32::NEG_INFINITY, f32::max);
                        assert_eq!(got.get(f, py, px), fold.activate(m));
                    }
                }
            }
        }
    }

    #[test]
    fn argmax_lowest_index_wins() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax(&[5.0]), 0);
        assert_eq!(argmax(&[-1.0, -1.0]), 0);
    }

    #[test]
    fn hand_computed_four_class_toy() {
        // 4 classes over 4 binary inputs, unit-scale batch norm with std exactly 1
        let signs: [[i8; 4]; 4] = [[1, 1, 1, 1], [1, -1, 1, -1], [-1, -1, -1, -1], [1, 1, -1, -1]];
        let mut fc = FcBlock::new(4, 4).unwrap();
        let flat: Vec<i8> = signs.iter().flatten().copied().collect();
        fc.weights = BitTensor::from_signs(Shape::new(1, 4, 4), &flat).unwrap();
        for bn in &mut fc.bn {
            *bn = BnParams {
                gamma: 1.0,
                beta: 0.0,
                mean: 0.0,
                variance: 0.5,
                epsilon: 0.5,
            };
        }
        let net = Network::new(InputSpec::binary(1, 1, 4), vec![Block::FusedFc(fc)]);
        net.check().unwrap();
        let input_signs = [1i8, -1, 1, 1];
        let x = BitTensor::from_signs(Shape::new(1, 1, 4), &input_signs).unwrap();
        let p = predict(&net, &x).unwrap();
        let expected: Vec<f32> = signs
            .iter()
            .map(|w| w.iter().zip(&input_signs).map(|(&a, &b)| (a * b) as f32).sum())
            .collect();
        // classes 0 and 1 tie; the lower index wins
        assert_eq!(expected, vec![2.0, 2.0, -2.0, -2.0]);
        assert_eq!(p.scores, expected);
        assert_eq!(p.label, 0);
    }

    #[test]
    fn arena_too_small() {
        let net = crate::presets::fig4(4, 4).unwrap();
        let mut arena = TempArena::with_buffer_bytes(3);
        let x = InputTensor::new(net.input.shape, vec![0.0; 784]).unwrap();
        let mut scores = vec![0.0; 10];
        assert!(matches!(
            network_forward(&net, &x, &mut arena, &mut scores),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn input_kind_mismatch() {
        let net = crate::presets::fig4(4, 4).unwrap();
        let mut arena = TempArena::for_network(&net).unwrap();
        let x = BitTensor::zeros(Shape::new(1, 28, 28)).unwrap();
        let mut scores = vec![0.0; 10];
        assert!(network_forward(&net, &x, &mut arena, &mut scores).is_err());
    }
}
