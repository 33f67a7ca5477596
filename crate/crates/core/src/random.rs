//! Seeded generators for random valid networks, inputs and batch-norm
//! parameters. Used by the property suites, benches and the trainer's
//! initializer.

use rand::Rng;

use crate::bitops::{BitTensor, Shape};
use crate::inference::{BlockInput, InputTensor};
use crate::model::{Block, BnParams, ConvBlock, ElementKind, FcBlock, InputSpec, Network, PoolSpec};
use crate::reference::ReferenceInput;

#[derive(Debug, Clone)]
pub struct RandomNetConfig {
    /// Number of blocks, final FC included.
    pub max_depth: usize,
    pub max_channels: usize,
    pub min_side: usize,
    pub max_side: usize,
    pub max_filters: usize,
    pub max_kernel: usize,
    pub max_stride: usize,
    pub max_pool: usize,
    pub max_hidden: usize,
    pub max_classes: usize,
}

impl Default for RandomNetConfig {
    fn default() -> Self {
        RandomNetConfig {
            max_depth: 3,
            max_channels: 3,
            min_side: 4,
            max_side: 16,
            max_filters: 6,
            max_kernel: 4,
            max_stride: 3,
            max_pool: 3,
            max_hidden: 24,
            max_classes: 10,
        }
    }
}

/// Batch norm with a random-sign scale, centered within `±spread`.
pub fn random_bn_scaled<R: Rng>(rng: &mut R, spread: f32) -> BnParams {
    let magnitude: f32 = rng.random_range(0.2..2.0);
    let gamma = if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    };
    BnParams::new(
        gamma,
        rng.random_range(-2.0..2.0),
        rng.random_range(-spread..=spread),
        rng.random_range(0.1..(spread * spread).max(0.2)),
    )
}

pub fn random_bn<R: Rng>(rng: &mut R) -> BnParams {
    random_bn_scaled(rng, 3.0)
}

pub fn randomize_bits<R: Rng>(rng: &mut R, t: &mut BitTensor) {
    let s = t.shape();
    for c in 0..s.channels {
        for y in 0..s.height {
            for x in 0..s.width {
                t.set(c, y, x, rng.random());
            }
        }
    }
}

/// Random weights and batch norm for an existing block.
pub fn randomize_block<R: Rng>(rng: &mut R, block: &mut Block, fan_in: usize) {
    randomize_bits(rng, block.weights_mut());
    let spread = (fan_in as f32).sqrt().max(1.0);
    for bn in block.bn_mut() {
        *bn = random_bn_scaled(rng, spread);
    }
}

/// A random network that passes [`Network::validate`].
///
/// Leading blocks are convolutions (with or without pooling, pool windows
/// overlapping whenever the pool stride is below the window size), followed
/// by zero or more hidden FC blocks and the final classifier.
pub fn random_network<R: Rng>(rng: &mut R, cfg: &RandomNetConfig) -> Network {
    let kind = if rng.random::<bool>() {
        ElementKind::Real
    } else {
        ElementKind::Binary
    };
    let shape = Shape::new(
        rng.random_range(1..=cfg.max_channels),
        rng.random_range(cfg.min_side..=cfg.max_side),
        rng.random_range(cfg.min_side..=cfg.max_side),
    );
    let depth = rng.random_range(1..=cfg.max_depth);
    let mut convs = rng.random_range(0..depth);
    let mut blocks = Vec::with_capacity(depth);
    let mut cur = shape;
    while convs > 0 {
        let side = cur.height.min(cur.width);
        let kernel = rng.random_range(1..=cfg.max_kernel.min(side));
        let stride = rng.random_range(1..=cfg.max_stride);
        let filters = rng.random_range(1..=cfg.max_filters);
        let conv = ConvBlock::new(filters, cur.channels, kernel, stride).unwrap();
        let (ch, cw) = conv.conv_output(cur.height, cur.width).unwrap();
        let fan_in = kernel * kernel * cur.channels;
        let mut block = if rng.random::<bool>() {
            let size = rng.random_range(1..=cfg.max_pool.min(ch.min(cw)));
            let stride = rng.random_range(1..=cfg.max_stride);
            Block::FusedConvPool(conv, PoolSpec { size, stride })
        } else {
            Block::FusedConv(conv)
        };
        randomize_block(rng, &mut block, fan_in);
        cur = block.output_shape(cur).unwrap();
        blocks.push(block);
        convs -= 1;
    }
    while blocks.len() + 1 < depth {
        let units = rng.random_range(1..=cfg.max_hidden);
        let mut block = Block::FusedFc(FcBlock::new(cur.len(), units).unwrap());
        randomize_block(rng, &mut block, cur.len());
        cur = Shape::vector(units);
        blocks.push(block);
    }
    let classes = rng.random_range(2..=cfg.max_classes);
    let mut block = Block::FusedFc(FcBlock::new(cur.len(), classes).unwrap());
    randomize_block(rng, &mut block, cur.len());
    blocks.push(block);
    Network::new(InputSpec { shape, kind }, blocks)
}

/// A sample matching an input spec.
#[derive(Debug, Clone)]
pub enum RandomInput {
    Real(InputTensor),
    Binary(BitTensor),
}

impl RandomInput {
    pub fn as_block_input(&self) -> BlockInput<'_> {
        match self {
            RandomInput::Real(t) => BlockInput::Real(t),
            RandomInput::Binary(b) => BlockInput::Binary(b.view()),
        }
    }

    pub fn as_reference(&self) -> ReferenceInput<'_> {
        match self {
            RandomInput::Real(t) => ReferenceInput::Real(t),
            RandomInput::Binary(b) => ReferenceInput::Binary(b),
        }
    }
}

pub fn random_input<R: Rng>(rng: &mut R, spec: &InputSpec) -> RandomInput {
    match spec.kind {
        ElementKind::Real => RandomInput::Real(
            InputTensor::new(
                spec.shape,
                (0..spec.shape.len())
                    .map(|_| rng.random_range(-1.0f32..=1.0))
                    .collect(),
            )
            .unwrap(),
        ),
        ElementKind::Binary => {
            let mut t = BitTensor::zeros(spec.shape).unwrap();
            randomize_bits(rng, &mut t);
            RandomInput::Binary(t)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_networks_validate_and_cover_variants() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (mut pools, mut overlapped, mut convs, mut neg) = (0, 0, 0, 0);
        for _ in 0..500 {
            let net = random_network(&mut rng, &RandomNetConfig::default());
            net.check().unwrap();
            for b in &net.blocks {
                match b {
                    Block::FusedConvPool(_, p) => {
                        pools += 1;
                        if p.stride < p.size {
                            overlapped += 1;
                        }
                    }
                    Block::FusedConv(_) => convs += 1,
                    Block::FusedFc(_) => {}
                }
                neg += b.bn().iter().filter(|bn| bn.gamma < 0.0).count();
            }
        }
        assert!(pools > 50 && overlapped > 10 && convs > 50 && neg > 100);
    }
}
