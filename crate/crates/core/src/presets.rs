//! Network skeletons for the evaluated architecture families.
//!
//! Skeletons carry all −1 weights and identity batch norm; the trainer fills
//! them in. Hidden widths and filter counts are parameters because the
//! screening tool searches over them.

use crate::error::Result;
use crate::model::{Block, ConvBlock, FcBlock, InputSpec, Network, PoolSpec};

pub const MNIST_CLASSES: usize = 10;

/// 28x28 grayscale, real valued.
pub fn mnist_input() -> InputSpec {
    InputSpec::real(1, 28, 28)
}

/// One convolution stage of a skeleton.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvLayer {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pool: Option<PoolSpec>,
}

/// Convolution stages, then hidden FC layers, then the classifier.
pub fn build(input: InputSpec, convs: &[ConvLayer], hidden: &[usize], classes: usize) -> Result<Network> {
    let mut blocks = Vec::new();
    let mut cur = input.shape;
    for layer in convs {
        let conv = ConvBlock::new(layer.filters, cur.channels, layer.kernel, layer.stride)?;
        let block = match layer.pool {
            Some(p) => Block::FusedConvPool(conv, p),
            None => Block::FusedConv(conv),
        };
        cur = block
            .output_shape(cur)
            .map_err(|m| crate::Error::InvalidNetwork(vec![m]))?;
        blocks.push(block);
    }
    let mut in_len = cur.len();
    for &units in hidden.iter().chain(std::iter::once(&classes)) {
        blocks.push(Block::FusedFc(FcBlock::new(in_len, units)?));
        in_len = units;
    }
    Ok(Network::new(input, blocks))
}

/// Fully connected network with the given hidden widths.
pub fn mlp(input: InputSpec, hidden: &[usize], classes: usize) -> Result<Network> {
    build(input, &[], hidden, classes)
}

/// MNIST MLP with one hidden layer.
pub fn mlp1(hidden: usize) -> Result<Network> {
    mlp(mnist_input(), &[hidden], MNIST_CLASSES)
}

/// Two fused conv-pool blocks and a classifier over 28x28 input.
///
/// 3x3 kernels, convolution stride 1, 2x2 pooling with stride 2:
/// 28 -> 26 -> 13, then 13 -> 11 -> 5.
pub fn fig4(f1: usize, f2: usize) -> Result<Network> {
    let pool = Some(PoolSpec { size: 2, stride: 2 });
    build(
        mnist_input(),
        &[
            ConvLayer {
                filters: f1,
                kernel: 3,
                stride: 1,
                pool,
            },
            ConvLayer {
                filters: f2,
                kernel: 3,
                stride: 1,
                pool,
            },
        ],
        &[],
        MNIST_CLASSES,
    )
}

/// The smallest convolutional layer: one 3x3 filter over a 3-channel
/// 28x28 image. It has no classifier, so it does not validate as a network;
/// it exists for memory accounting.
pub fn section3_layer() -> Result<Network> {
    Ok(Network::new(
        InputSpec::real(3, 28, 28),
        vec![Block::FusedConv(ConvBlock::new(1, 3, 3, 1)?)],
    ))
}

/// Single-filter conv-pool layer over a 28x28 single-channel binary input:
/// 3x3 convolution with stride 1 and 2x2 pooling with stride 2.
pub fn fig2_block() -> Result<Block> {
    Ok(Block::FusedConvPool(
        ConvBlock::new(1, 1, 3, 1)?,
        PoolSpec { size: 2, stride: 2 },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitops::Shape;

    #[test]
    fn fig4_shapes() {
        let net = fig4(8, 16).unwrap();
        let s = net.shapes().unwrap();
        assert_eq!(s[0].conv, Shape::new(8, 26, 26));
        assert_eq!(s[0].output, Shape::new(8, 13, 13));
        assert_eq!(s[1].output, Shape::new(16, 5, 5));
        assert_eq!(s[2].output, Shape::vector(10));
        net.check().unwrap();
    }

    #[test]
    fn mlp1_shapes() {
        let net = mlp1(128).unwrap();
        net.check().unwrap();
        assert_eq!(net.blocks.len(), 2);
        assert_eq!(net.classes(), 10);
    }
}
