//! Byte-exact inference memory accounting.
//!
//! `M = P + 2T`: `P` sums every block's packed weights plus four `f32`
//! batch-norm parameters per output unit, and `T` is the largest packed block
//! output with byte-aligned rows. Two such buffers hold a block's input and
//! output at once.
//!
//! The unfused comparator, [`bnn_temp_bytes`], charges each convolution one
//! `f32` plane per (filter, input channel) pair; a single 3-channel filter
//! over 28x28 therefore needs 26 x 26 x 3 floats. Charging one plane per
//! filter would give 26 x 26 x 1 instead; the eBNN figures are unaffected
//! either way.

use std::fmt;

use crate::bitops::Shape;
use crate::error::Result;
use crate::model::{Block, Network};

/// Bytes of the four batch-norm reals kept per output unit.
pub const BN_BYTES_PER_UNIT: usize = 16;

/// Bytes of the single real accumulator.
pub const ACCUM_BYTES: usize = 4;

/// Packed weight bytes plus batch-norm bytes of one block.
pub fn param_bytes(block: &Block) -> usize {
    let weight_rows = match block {
        Block::FusedFc(b) => Shape::new(1, b.out_units, b.in_len),
        Block::FusedConv(b) | Block::FusedConvPool(b, _) => {
            Shape::new(b.filters, b.in_channels, b.kernel * b.kernel)
        }
    };
    weight_rows.packed_bytes() + BN_BYTES_PER_UNIT * block.out_units()
}

/// Float-temporary bytes of one block in the unfused formulation.
pub fn block_bnn_temp_bytes(block: &Block, input: Shape) -> Result<usize> {
    let conv = block
        .pre_pool_shape(input)
        .map_err(|m| crate::Error::InvalidNetwork(vec![m]))?;
    Ok(match block {
        Block::FusedFc(b) => b.out_units * 4,
        Block::FusedConv(b) | Block::FusedConvPool(b, _) => {
            b.filters * b.in_channels * conv.height * conv.width * 4
        }
    })
}

/// `T`: largest packed block output in bytes; zero for an empty network.
pub fn ebnn_temp_bytes(net: &Network) -> Result<usize> {
    Ok(net
        .shapes()?
        .iter()
        .map(|s| s.output.packed_bytes())
        .max()
        .unwrap_or(0))
}

/// Largest float temporary of the unfused network.
pub fn bnn_temp_bytes(net: &Network) -> Result<usize> {
    let shapes = net.shapes()?;
    let mut max = 0;
    for (block, s) in net.blocks.iter().zip(&shapes) {
        max = max.max(block_bnn_temp_bytes(block, s.input)?);
    }
    Ok(max)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MemoryReport {
    pub param_bytes_per_block: Vec<usize>,
    /// Packed output bytes of every block.
    pub temp_bytes_per_block: Vec<usize>,
    pub params: usize,
    pub temps: usize,
    pub total: usize,
    pub bnn_temp_bytes: usize,
    /// Pad bits at the end of each packed output row, per block.
    pub waste_bits_per_row: Vec<usize>,
    /// Buffer for one input sample; not part of `total`.
    pub input_bytes: usize,
}

impl MemoryReport {
    pub fn fits(&self, budget: usize) -> bool {
        self.total <= budget
    }

    /// Like [`fits`](Self::fits) but also charging the input sample buffer.
    pub fn fits_with_input(&self, budget: usize) -> bool {
        self.total + self.input_bytes <= budget
    }

    /// `2T / M`, zero for an empty network.
    pub fn temp_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            (2 * self.temps) as f64 / self.total as f64
        }
    }

    /// Working storage of the fused engine: both buffers and the accumulator.
    pub fn arena_bytes(&self) -> usize {
        2 * self.temps + ACCUM_BYTES
    }

    /// `key=value` lines, one field per line.
    pub fn to_records(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        format!(
            "P={}\nT={}\nM={}\nbnn_temp_bytes={}\ninput_bytes={}\nparam_bytes_per_block={}\ntemp_bytes_per_block={}\nwaste_bits_per_row={}\n",
            self.params,
            self.temps,
            self.total,
            self.bnn_temp_bytes,
            self.input_bytes,
            join(&self.param_bytes_per_block),
            join(&self.temp_bytes_per_block),
            join(&self.waste_bits_per_row),
        )
    }
}

impl fmt::Display for MemoryReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:>5}  {:>10}  {:>10}  {:>10}",
            "block", "params B", "temp B", "waste b/row"
        )?;
        for i in 0..self.param_bytes_per_block.len() {
            writeln!(
                f,
                "{:>5}  {:>10}  {:>10}  {:>10}",
                i, self.param_bytes_per_block[i], self.temp_bytes_per_block[i], self.waste_bits_per_row[i]
            )?;
        }
        writeln!(f, "P (parameters)          {:>10} B", self.params)?;
        writeln!(f, "T (widest temporary)    {:>10} B", self.temps)?;
        writeln!(f, "M = P + 2T              {:>10} B", self.total)?;
        writeln!(f, "2T / M                  {:>10.4}", self.temp_fraction())?;
        writeln!(f, "unfused float temps     {:>10} B", self.bnn_temp_bytes)?;
        write!(f, "input sample            {:>10} B", self.input_bytes)
    }
}

pub fn memory_report(net: &Network) -> Result<MemoryReport> {
    let shapes = net.shapes()?;
    let param_bytes_per_block: Vec<usize> = net.blocks.iter().map(param_bytes).collect();
    let temp_bytes_per_block: Vec<usize> = shapes.iter().map(|s| s.output.packed_bytes()).collect();
    let waste_bits_per_row = shapes.iter().map(|s| s.output.waste_bits_per_row()).collect();
    let params: usize = param_bytes_per_block.iter().sum();
    let temps = temp_bytes_per_block.iter().copied().max().unwrap_or(0);
    Ok(MemoryReport {
        param_bytes_per_block,
        temp_bytes_per_block,
        params,
        temps,
        total: params + 2 * temps,
        bnn_temp_bytes: bnn_temp_bytes(net)?,
        waste_bits_per_row,
        input_bytes: if net.blocks.is_empty() {
            0
        } else {
            net.input.sample_bytes()
        },
    })
}

/// `M <= budget`.
pub fn fits(net: &Network, budget: usize) -> Result<bool> {
    Ok(memory_report(net)?.fits(budget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConvBlock, FcBlock, InputSpec};
    use crate::presets;

    #[test]
    fn section3_parameters() {
        let net = presets::section3_layer().unwrap();
        assert_eq!(param_bytes(&net.blocks[0]), 22);
    }

    #[test]
    fn fc_eight_to_one() {
        let b = Block::FusedFc(FcBlock::new(8, 1).unwrap());
        assert_eq!(param_bytes(&b), 17);
    }

    #[test]
    fn thirty_two_single_channel_filters() {
        let b = Block::FusedConv(ConvBlock::new(32, 1, 3, 1).unwrap());
        // per filter: one packed 9-bit row (2 B) plus 16 B batch norm
        let expected: usize = (0..32).map(|_| 9usize.div_ceil(8) + 16).sum();
        assert_eq!(expected, 576);
        assert_eq!(param_bytes(&b), expected);
    }

    #[test]
    fn section3_temporaries() {
        let net = presets::section3_layer().unwrap();
        assert_eq!(ebnn_temp_bytes(&net).unwrap(), 26 * 4);
        assert_eq!(bnn_temp_bytes(&net).unwrap(), 8112);
        let r = memory_report(&net).unwrap();
        assert_eq!(r.total, 22 + 2 * 104);
        assert_eq!(r.total, 230);
        assert!(r.fits(15360));
        assert!(r.bnn_temp_bytes > 230);
    }

    #[test]
    fn fig2_single_channel_float_plane() {
        let block = presets::fig2_block().unwrap();
        assert_eq!(block_bnn_temp_bytes(&block, Shape::new(1, 28, 28)).unwrap(), 2704);
    }

    #[test]
    fn fig4_temp_is_max_over_blocks() {
        let net = presets::fig4(8, 16).unwrap();
        let per: Vec<usize> = net
            .shapes()
            .unwrap()
            .iter()
            .map(|s| s.output.channels * s.output.height * s.output.width.div_ceil(8))
            .collect();
        assert_eq!(per, vec![8 * 13 * 2, 16 * 5, 2]);
        assert_eq!(ebnn_temp_bytes(&net).unwrap(), 208);
    }

    #[test]
    fn fc_only_temporaries() {
        let net = presets::mlp(InputSpec::real(1, 1, 64), &[128], 10).unwrap();
        assert_eq!(ebnn_temp_bytes(&net).unwrap(), 16);
        assert_eq!(bnn_temp_bytes(&net).unwrap(), 512);
    }

    #[test]
    fn empty_network() {
        let net = Network::new(InputSpec::real(1, 28, 28), vec![]);
        let r = memory_report(&net).unwrap();
        assert_eq!((r.params, r.temps, r.total), (0, 0, 0));
        assert!(r.fits(0));
    }

    #[test]
    fn zero_budget() {
        assert!(!fits(&presets::mlp1(8).unwrap(), 0).unwrap());
    }

    #[test]
    fn records_and_table() {
        let r = memory_report(&presets::fig4(2, 2).unwrap()).unwrap();
        let rec = r.to_records();
        assert!(rec.contains(&format!("M={}\n", r.total)));
        assert!(r.to_string().contains("M = P + 2T"));
        assert!(r.waste_bits_per_row.iter().all(|&w| w <= 7));
    }
}
