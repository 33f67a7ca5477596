//! Seeded fixtures shared by the benchmarks.

use ebnn::bitops::BitTensor;
use ebnn::random::{random_input, randomize_block, RandomInput};
use ebnn::{presets, BlockInput, InputTensor, Network};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A named network with random weights and one random input.
pub struct Fixture {
    pub name: &'static str,
    pub net: Network,
    pub input: RandomInput,
}

impl Fixture {
    pub fn input(&self) -> BlockInput<'_> {
        self.input.as_block_input()
    }
}

/// Fills every block of `net` with seeded random weights and batch norm.
pub fn randomized(mut net: Network, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = net.shapes().expect("preset shapes");
    for (block, s) in net.blocks.iter_mut().zip(&shapes) {
        randomize_block(&mut rng, block, s.input.len());
    }
    net
}

fn fixture(name: &'static str, net: Network, seed: u64) -> Fixture {
    let net = randomized(net, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let input = random_input(&mut rng, &net.input);
    Fixture { name, net, input }
}

/// MNIST-shaped networks of each family at their 15 KB sizes.
pub fn mnist_fixtures() -> Vec<Fixture> {
    vec![
        fixture("mlp-1/128", presets::mlp1(128).expect("preset"), 1),
        fixture("convpool-2/fig4-4x8", presets::fig4(4, 8).expect("preset"), 2),
        fixture(
            "mlp-2/96x144",
            presets::mlp(presets::mnist_input(), &[96, 144], presets::MNIST_CLASSES).expect("preset"),
            3,
        ),
    ]
}

/// Random real MNIST-shaped samples.
pub fn mnist_samples(n: usize, seed: u64) -> Vec<InputTensor> {
    let spec = presets::mnist_input();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| match random_input(&mut rng, &spec) {
            RandomInput::Real(t) => t,
            RandomInput::Binary(_) => unreachable!("real spec"),
        })
        .collect()
}

/// Two random bit rows of `n` bits.
pub fn bit_rows(n: usize, seed: u64) -> (BitTensor, BitTensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = BitTensor::zeros(ebnn::Shape::vector(n)).expect("shape");
    let mut b = a.clone();
    ebnn::random::randomize_bits(&mut rng, &mut a);
    ebnn::random::randomize_bits(&mut rng, &mut b);
    (a, b)
}
