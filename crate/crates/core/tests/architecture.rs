mod common;

use ageres::arch::*;
use ageres::autodiff::Graph;
use ageres::ops::Mode;
use ageres::{Error, Tensor};
use common::resnet50_count;

/// Trainable / moving parameter totals of the 64x64 single-output ResNet-50,
/// frozen from the layer-by-layer tally.
const RESNET50_TRAINABLE: usize = 23_536_641;
const RESNET50_MOVING: usize = 53_120;

fn resnet(size: usize) -> Network {
    Network::new(NetworkSpec::resnet50((3, size, size), 1, NetworkOptions::default()).unwrap()).unwrap()
}

#[test]
fn resnet50_counts_match_the_tally() {
    let net = resnet(64);
    let (trainable, moving) = resnet50_count(3, 1, true, RESNET50_IDENTITY_BLOCKS);
    assert_eq!((trainable, moving), (RESNET50_TRAINABLE, RESNET50_MOVING));
    assert_eq!(net.trainable_parameters(), trainable);
    assert_eq!(net.non_trainable_parameters(), moving);
    // parameter count does not depend on the input extent
    assert_eq!(resnet(96).trainable_parameters(), trainable);
}

#[test]
fn variants_match_the_tally() {
    for (bn, ident, out) in [(false, [2, 3, 5, 2], 1), (true, [1, 1, 1, 1], 3), (false, [0, 0, 0, 0], 2)] {
        let options = NetworkOptions {
            batchnorm: bn,
            identity_blocks: ident,
            ..NetworkOptions::default()
        };
        let net = Network::new(NetworkSpec::resnet50((3, 32, 32), out, options).unwrap()).unwrap();
        let (t, m) = resnet50_count(3, out, bn, ident);
        assert_eq!(net.trainable_parameters(), t, "{bn} {ident:?}");
        assert_eq!(net.non_trainable_parameters(), m);
    }
}

#[test]
fn resnet50_structure() {
    let spec = NetworkSpec::resnet50((3, 64, 64), 1, NetworkOptions::default()).unwrap();
    assert_eq!(spec.stages.len(), 5);
    assert_eq!(spec.count_blocks(BlockKind::Convolutional), 4);
    assert_eq!(spec.count_blocks(BlockKind::Identity), 12);
    assert_eq!(spec.stages_with_maxpool(), vec!["stage1"]);
    assert_eq!(spec.conv_layer_count(), 53);
    assert_eq!(spec.dense_layer_count(), 1);
    let net = Network::new(spec).unwrap();
    let shapes: Vec<String> = net.stage_shapes().iter().map(|(_, s)| s.to_string()).collect();
    assert_eq!(shapes, ["64x16x16", "256x16x16", "512x8x8", "1024x4x4", "2048x2x2"]);
}

#[test]
fn alexnet_structure() {
    let spec = NetworkSpec::alexnet((3, 64, 64), 1).unwrap();
    assert_eq!(spec.conv_layer_count(), 5);
    assert_eq!(spec.dense_layer_count(), 3);
    assert_eq!(spec.stages_with_maxpool(), vec!["stage1", "stage2", "stage5"]);
    let net = Network::new(spec).unwrap();
    let shapes: Vec<String> = net.stage_shapes().iter().map(|(_, s)| s.to_string()).collect();
    assert_eq!(shapes, ["96x7x7", "256x3x3", "384x3x3", "384x3x3", "256x1x1"]);
    // conv weights + biases, then 256 -> 4096 -> 4096 -> 1
    let convs = 11 * 11 * 3 * 96 + 96 + 5 * 5 * 96 * 256 + 256 + 9 * 256 * 384 + 384 + 9 * 384 * 384 + 384 + 9 * 384 * 256 + 256;
    let dense = 256 * 4096 + 4096 + 4096 * 4096 + 4096 + 4096 + 1;
    assert_eq!(net.trainable_parameters(), convs + dense);
    assert_eq!(net.non_trainable_parameters(), 0);
}

#[test]
fn small_inputs_are_rejected_with_the_stage() {
    let err = NetworkSpec::resnet50((3, 16, 16), 1, NetworkOptions::default()).unwrap_err();
    assert!(matches!(err, Error::Spec(_)));
    assert!(err.to_string().contains("stage1"), "{err}");
    assert!(NetworkSpec::alexnet((3, 32, 32), 1).is_err());
}

fn zero_final_branch(params: &mut ageres::autodiff::ParamStore<f64>, batchnorm: bool) {
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in names {
        let last = if batchnorm {
            n.ends_with("bn_c.gamma") || n.ends_with("bn_c.beta")
        } else {
            n.contains("conv_c.")
        };
        if last {
            let t = params.get_mut(&n).unwrap();
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
}

#[test]
fn identity_block_passes_input_through_when_branch_is_silent() {
    let spec = BlockSpec::identity((4, 4, 8), 3);
    for batchnorm in [true, false] {
        let (mut params, mut stats) = init_block::<f64>("b", 8, &spec, batchnorm, 3).unwrap();
        zero_final_branch(&mut params, batchnorm);
        let x = Tensor::from_fn(&[2, 8, 5, 5], |i| ((i * 37) % 23) as f64 / 7.0 - 1.0);
        for mode in [Mode::Train, Mode::Infer] {
            let mut g = Graph::new(&params, mode);
            let xi = g.input("x", x.clone());
            let y = build_identity_block(&mut g, &mut stats, "b", xi, &spec, batchnorm).unwrap();
            // exact: ReLU(x + 0)
            assert_eq!(g.value(y), &x.map(|v| v.max(0.0)), "batchnorm={batchnorm} {mode:?}");
        }
    }
}

#[test]
fn conv_block_changes_shape_and_identity_block_checks_channels() {
    let spec = BlockSpec::convolutional((4, 4, 16), 3, 2);
    let (params, mut stats) = init_block::<f64>("c", 8, &spec, true, 1).unwrap();
    let mut g = Graph::new(&params, Mode::Train);
    let x = g.input("x", Tensor::from_fn(&[2, 8, 7, 7], |i| (i % 5) as f64));
    let y = build_conv_block(&mut g, &mut stats, "c", x, &spec, true).unwrap();
    assert_eq!(g.value(y).shape(), [2, 16, 4, 4]);

    let ident = BlockSpec::identity((4, 4, 16), 3);
    assert!(block_param_shapes("i", 8, &ident, true).is_err());
    assert!(build_conv_block(&mut g, &mut stats, "c", x, &ident, true).is_err());
}

#[test]
fn manifest_reports_counts() {
    let m = resnet(64).manifest();
    assert!(m.contains("trainable_parameters: 23536641"), "{m}");
    assert!(m.contains("residual_blocks: 4 convolutional, 12 identity"));
}

#[test]
fn forward_runs_and_rejects_wrong_input() {
    let options = NetworkOptions {
        identity_blocks: [0, 0, 0, 0],
        ..NetworkOptions::default()
    };
    let net = Network::new(NetworkSpec::resnet50((3, 32, 32), 1, options).unwrap()).unwrap();
    let (params, mut stats) = net.init_weights::<f32>(0).unwrap();
    let out = net
        .predict(&params, &mut stats, Tensor::full(&[2, 3, 32, 32], 0.5), Mode::Train, ageres::rng::RngStream::new(0, 0))
        .unwrap();
    assert_eq!(out.shape(), [2, 1]);
    assert!(out.is_finite());
    let bad = net.predict(&params, &mut stats, Tensor::zeros(&[2, 3, 16, 16]), Mode::Infer, ageres::rng::RngStream::new(0, 0));
    assert!(bad.is_err());
}

#[test]
fn initialization_is_seeded() {
    let net = resnet(32);
    let (a, _) = net.init_weights::<f32>(7).unwrap();
    let (b, _) = net.init_weights::<f32>(7).unwrap();
    let (c, _) = net.init_weights::<f32>(8).unwrap();
    assert_eq!(ageres::autodiff::checksum(&a, None), ageres::autodiff::checksum(&b, None));
    assert_ne!(ageres::autodiff::checksum(&a, None), ageres::autodiff::checksum(&c, None));
    // He normal: std sqrt(2 / fan_in) on the widest kernel
    let k = a.get("stage5.block1.conv_c.kernel").unwrap();
    let fan_in = 512.0;
    let var = k.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / k.len() as f64;
    assert!((var / (2.0 / fan_in) - 1.0).abs() < 0.02, "{var}");
}
