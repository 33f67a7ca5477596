//! Communication and energy metrics, operation counts and host timing.
//!
//! Energies are power times time in milliwatt-milliseconds (microjoules).

use std::time::Instant;

use crate::error::{Error, Result};
use crate::inference::{network_forward, BlockInput, InputTensor, TempArena};
use crate::model::{Block, ElementKind, InputSpec, Network};

/// Power and link figures of a target device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeviceProfile {
    pub idle_power_mw: f64,
    pub compute_power_mw: f64,
    pub transmit_power_mw: f64,
    pub link_bytes_per_ms: f64,
    pub sram_bytes: usize,
    /// Throughput of the operation-count time model, see [`OpCount`].
    pub ops_per_ms: f64,
}

impl Default for DeviceProfile {
    /// An Intel Curie class microcontroller with a BLE link that sends a
    /// 784-byte sample in 24.5 ms.
    fn default() -> Self {
        DeviceProfile {
            idle_power_mw: 0.150,
            compute_power_mw: 0.250,
            transmit_power_mw: 0.200,
            link_bytes_per_ms: 32.0,
            sram_bytes: 15360,
            ops_per_ms: 4000.0,
        }
    }
}

impl DeviceProfile {
    pub fn check(&self) -> Result<()> {
        let powers = [self.idle_power_mw, self.compute_power_mw, self.transmit_power_mw];
        if powers.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::invalid("device powers must be finite and non-negative"));
        }
        if !(self.link_bytes_per_ms > 0.0 && self.ops_per_ms > 0.0) {
            return Err(Error::invalid("link and compute throughput must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostMetrics {
    /// Communication reduction: sample bytes over label bytes.
    pub cr: f64,
    pub inference_energy: f64,
    pub transmit_energy: f64,
    /// Energy gain: transmit energy over inference energy.
    pub eg: f64,
}

/// Sample size over label size.
pub fn communication_reduction(sample_bytes: usize, label_bytes: usize) -> Result<f64> {
    if label_bytes == 0 || sample_bytes == 0 {
        return Err(Error::invalid("sample and label sizes must be positive"));
    }
    Ok(sample_bytes as f64 / label_bytes as f64)
}

/// Compares classifying on the device against transmitting the raw sample.
pub fn cost_metrics(
    device: &DeviceProfile,
    sample_bytes: usize,
    label_bytes: usize,
    inference_ms: f64,
) -> Result<CostMetrics> {
    device.check()?;
    let cr = communication_reduction(sample_bytes, label_bytes)?;
    if !(inference_ms > 0.0 && inference_ms.is_finite()) {
        return Err(Error::invalid("inference time must be positive"));
    }
    let inference_energy = device.compute_power_mw * inference_ms;
    let transmit_energy = device.transmit_power_mw * (sample_bytes as f64 / device.link_bytes_per_ms);
    Ok(CostMetrics {
        cr,
        inference_energy,
        transmit_energy,
        eg: transmit_energy / inference_energy,
    })
}

/// Bytes needed to send a class label.
pub fn label_bytes(classes: usize) -> usize {
    if classes <= 256 {
        1
    } else {
        2
    }
}

/// Raw sensor bytes of one sample: one byte per real element (8-bit
/// pixels), packed bits for binary input. A 28x28 image is 784 bytes.
pub fn sensor_sample_bytes(spec: &InputSpec) -> usize {
    match spec.kind {
        ElementKind::Real => spec.shape.len(),
        ElementKind::Binary => spec.shape.packed_bytes(),
    }
}

/// [`cost_metrics`] for a network's own input and label sizes.
pub fn network_cost_metrics(net: &Network, device: &DeviceProfile, inference_ms: f64) -> Result<CostMetrics> {
    cost_metrics(
        device,
        sensor_sample_bytes(&net.input),
        label_bytes(net.classes()),
        inference_ms,
    )
}

/// Work done by one fused forward pass.
///
/// Real operations are the first layer's signed additions. Binary
/// operations count one xnor-popcount per packed byte involved in a dot
/// product. Comparisons count pool maxima and threshold tests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCount {
    pub real_adds: u64,
    pub binary_byte_ops: u64,
    pub compares: u64,
}

impl OpCount {
    pub fn total(&self) -> u64 {
        self.real_adds + self.binary_byte_ops + self.compares
    }

    /// Modeled per-sample time on `device`.
    pub fn estimated_ms(&self, device: &DeviceProfile) -> f64 {
        self.total() as f64 / device.ops_per_ms
    }
}

pub fn op_count(net: &Network) -> Result<OpCount> {
    let shapes = net.shapes()?;
    let mut ops = OpCount::default();
    for (i, (block, s)) in net.blocks.iter().zip(&shapes).enumerate() {
        let real = i == 0 && net.input.kind == ElementKind::Real;
        match block {
            Block::FusedFc(b) => {
                let per_unit = if real {
                    b.in_len as u64
                } else {
                    // row-wise over the packed input
                    (s.input.channels * s.input.height * s.input.width.div_ceil(8)) as u64
                };
                ops.real_adds += if real { per_unit * b.out_units as u64 } else { 0 };
                ops.binary_byte_ops += if real { 0 } else { per_unit * b.out_units as u64 };
                ops.compares += b.out_units as u64;
            }
            Block::FusedConv(b) | Block::FusedConvPool(b, _) => {
                let cells = s.output.len() as u64;
                let window = block.pool().map_or(1, |p| (p.size * p.size) as u64);
                let convs = cells * window;
                let k = b.kernel as u64;
                if real {
                    ops.real_adds += convs * b.in_channels as u64 * k * k;
                } else {
                    ops.binary_byte_ops += convs * b.in_channels as u64 * k * k.div_ceil(8);
                }
                ops.compares += cells * window;
            }
        }
    }
    Ok(ops)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub mean_ms: f64,
    pub stddev_ms: f64,
    pub runs: usize,
}

/// Host wall-clock per-sample inference time over `runs` passes through
/// `samples`. Binary-input networks see the signs of the samples.
pub fn measure_inference(net: &Network, samples: &[InputTensor], runs: usize) -> Result<Timing> {
    if samples.is_empty() || runs == 0 {
        return Err(Error::invalid("timing needs samples and at least one run"));
    }
    let mut arena = TempArena::for_network(net)?;
    let mut scores = vec![0.0; net.classes()];
    let bits: Vec<_> = match net.input.kind {
        ElementKind::Real => Vec::new(),
        ElementKind::Binary => samples
            .iter()
            .map(|x| {
                let mut b = crate::bitops::BitTensor::zeros(x.shape)?;
                crate::trainer::binarize_into(x, &mut b);
                Ok(b)
            })
            .collect::<Result<_>>()?,
    };
    let mut per_run = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t = Instant::now();
        for (i, x) in samples.iter().enumerate() {
            let input = match net.input.kind {
                ElementKind::Real => BlockInput::Real(x),
                ElementKind::Binary => BlockInput::Binary(bits[i].view()),
            };
            std::hint::black_box(network_forward(net, input, &mut arena, &mut scores)?);
        }
        per_run.push(t.elapsed().as_secs_f64() * 1e3 / samples.len() as f64);
    }
    let mean = per_run.iter().sum::<f64>() / runs as f64;
    let var = per_run.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / runs as f64;
    Ok(Timing {
        mean_ms: mean,
        stddev_ms: var.sqrt(),
        runs,
    })
}
