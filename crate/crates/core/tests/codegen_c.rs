//! Compiles generated C and checks it against the library, bit for bit.
//! Skipped when no C compiler is available (set `EBNN_CC` to choose one).

use ebnn::codegen::{c_compiler, compile_self_test, generate, ArenaMode, CodegenOptions};
use ebnn::dataio::synth_separable;
use ebnn::inference::{network_forward, BlockInput, TempArena};
use ebnn::presets::ConvLayer;
use ebnn::random::{random_input, random_network, RandomNetConfig};
use ebnn::trainer::{train, TrainConfig};
use ebnn::{presets, InputSpec, InputTensor, LabeledDataset, Network, PoolSpec, Shape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn library_run(net: &Network, inputs: &[BlockInput<'_>]) -> (Vec<usize>, Vec<Vec<u32>>) {
    let mut arena = TempArena::for_network(net).unwrap();
    let mut scores = vec![0.0; net.classes()];
    let mut labels = Vec::new();
    let mut bits = Vec::new();
    for x in inputs {
        labels.push(network_forward(net, *x, &mut arena, &mut scores).unwrap());
        bits.push(scores.iter().map(|s| s.to_bits()).collect());
    }
    (labels, bits)
}

fn check_parity(net: &Network, inputs: &[BlockInput<'_>], opts: &CodegenOptions) -> bool {
    let dir = tempfile::tempdir().unwrap();
    let code = generate(net, opts, inputs).unwrap();
    let Some(run) = compile_self_test(&code, dir.path()).unwrap() else {
        return false;
    };
    let (labels, bits) = library_run(net, inputs);
    assert!(run.passed, "{}", run.stdout);
    assert_eq!(run.labels, labels);
    assert_eq!(run.score_bits, bits);
    assert!(run.blocks_match.iter().all(|&m| m));
    true
}

#[test]
fn random_networks_match_library() {
    if c_compiler().is_none() {
        eprintln!("no C compiler; skipped");
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..12 {
        let net = random_network(&mut rng, &RandomNetConfig::default());
        let samples: Vec<_> = (0..10).map(|_| random_input(&mut rng, &net.input)).collect();
        let inputs: Vec<BlockInput<'_>> = samples.iter().map(|s| s.as_block_input()).collect();
        let opts = CodegenOptions {
            prefix: format!("net{i}"),
            emit_folded_bn: i % 3 != 0,
            arena: if i % 2 == 0 {
                ArenaMode::Static
            } else {
                ArenaMode::Caller
            },
            include_test_vectors: true,
        };
        assert!(check_parity(&net, &inputs, &opts));
    }
}

fn toy_model(i: usize) -> (Network, Vec<InputTensor>) {
    let data = synth_separable(36, 3, 120, i as u64).unwrap();
    let samples: Vec<InputTensor> = data
        .samples
        .iter()
        .map(|x| InputTensor::new(Shape::new(1, 6, 6), x.data.clone()).unwrap())
        .collect();
    let data = LabeledDataset::new(samples, data.labels, 3).unwrap();
    let input = InputSpec::real(1, 6, 6);
    let conv = |filters, pool| ConvLayer {
        filters,
        kernel: 3,
        stride: 1,
        pool,
    };
    let arch = match i % 4 {
        0 => presets::mlp(input, &[12], 3),
        1 => presets::mlp(input, &[10, 9], 3),
        2 => presets::build(input, &[conv(3, Some(PoolSpec { size: 2, stride: 2 }))], &[], 3),
        _ => presets::build(
            input,
            &[conv(2, None), conv(4, Some(PoolSpec { size: 2, stride: 1 }))],
            &[8],
            3,
        ),
    }
    .unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 20,
        seed: i as u64,
        ..TrainConfig::default()
    };
    let net = train(&arch, &data, &cfg).unwrap().net;
    (net, data.samples[..10].to_vec())
}

#[test]
fn trained_toy_models_match_library() {
    if c_compiler().is_none() {
        eprintln!("no C compiler; skipped");
        return;
    }
    for i in 0..20 {
        let (net, samples) = toy_model(i);
        let inputs: Vec<BlockInput<'_>> = samples.iter().map(BlockInput::from).collect();
        let opts = CodegenOptions {
            prefix: format!("toy{i}"),
            emit_folded_bn: i % 5 != 4,
            arena: if i % 2 == 0 {
                ArenaMode::Static
            } else {
                ArenaMode::Caller
            },
            include_test_vectors: true,
        };
        assert!(check_parity(&net, &inputs, &opts), "toy model {i}");
    }
}

#[test]
fn generation_is_byte_identical() {
    for i in 0..4 {
        let (net, samples) = toy_model(i);
        let inputs: Vec<BlockInput<'_>> = samples.iter().map(BlockInput::from).collect();
        let opts = CodegenOptions {
            include_test_vectors: true,
            ..CodegenOptions::default()
        };
        let a = generate(&net, &opts, &inputs).unwrap();
        let b = generate(&net, &opts, &inputs).unwrap();
        assert_eq!(a.header, b.header);
        assert_eq!(a.source, b.source);
    }
}

#[test]
fn fig4_with_pooling_matches_library() {
    if c_compiler().is_none() {
        eprintln!("no C compiler; skipped");
        return;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut net = presets::fig4(4, 6).unwrap();
    let shapes = net.shapes().unwrap();
    for (b, s) in net.blocks.iter_mut().zip(&shapes) {
        ebnn::random::randomize_block(&mut rng, b, s.input.len());
    }
    let samples: Vec<_> = (0..10).map(|_| random_input(&mut rng, &net.input)).collect();
    let inputs: Vec<BlockInput<'_>> = samples.iter().map(|s| s.as_block_input()).collect();
    assert!(check_parity(
        &net,
        &inputs,
        &CodegenOptions {
            include_test_vectors: true,
            ..CodegenOptions::default()
        }
    ));
}
