//! Generator construction, determinism and end-to-end gradients.

use cladelab::generator::{noise_batch, GenInput, GraphSpec, LayerKind, Model, NormMode};
use cladelab::layers::{InstanceMap, SegmentationMask};
use cladelab::tensor::finite_diff_check_against;
use cladelab::{Error, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny(mode: NormMode, edge: bool) -> GraphSpec {
    let text = format!(
        "noise=4 resolution=4 classes=3 hidden=4 mode={mode} edge={edge}
         kind=linear cout=4 h=2 w=2
         kind=resblock cout=3
         kind=upsample
         kind=resblock
         kind=activation fn=leaky
         kind=conv cout=3
         kind=activation fn=tanh"
    );
    GraphSpec::parse(&text).unwrap()
}

fn random_mask(h: usize, nc: usize, rng: &mut ChaCha8Rng) -> SegmentationMask {
    let labels = (0..h * h).map(|_| rng.random_range(0..nc as u32)).collect();
    SegmentationMask::new(h, h, nc, labels).unwrap()
}

fn toy(mode: NormMode) -> Model {
    Model::build(GraphSpec::preset("toy-64").unwrap().with_mode(mode), 11)
}

#[test]
fn same_seed_same_parameters() {
    let a = toy(NormMode::Clade);
    assert_eq!(a, toy(NormMode::Clade));
    let b = Model::build(a.spec().clone(), 12);
    assert_ne!(a.params(), b.params());
}

#[test]
fn conv_parameters_do_not_depend_on_mode() {
    let models: Vec<Model> = NormMode::ALL.iter().map(|&m| toy(m)).collect();
    let is_norm = |p: &str| p.contains(".norm_");
    for m in &models[1..] {
        let a: Vec<_> = models[0].params().iter().filter(|(p, _)| !is_norm(p)).collect();
        let b: Vec<_> = m.params().iter().filter(|(p, _)| !is_norm(p)).collect();
        assert_eq!(a, b);
    }
}

#[test]
fn clade_norm_state_is_only_banks() {
    let m = toy(NormMode::Clade);
    let spec = m.spec();
    let norm_params: usize = m.params().iter().filter(|(p, _)| p.contains(".norm_")).map(|(_, t)| t.len()).sum();
    let mut expected = 0;
    for l in spec.layers.iter().filter(|l| l.kind == LayerKind::ResBlock) {
        let sites = [l.cin, l.mid_channels()].into_iter().chain(l.learned_skip().then_some(l.cin));
        expected += sites.map(|c| 2 * spec.num_classes * c).sum::<usize>();
    }
    assert_eq!(norm_params, expected);
}

#[test]
fn generate_is_deterministic_bounded_and_noise_sensitive() {
    let m = toy(NormMode::Spade);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mask = random_mask(64, 5, &mut rng);
    let z1 = noise_batch(1, 16, 1).into_data();
    let z2 = noise_batch(1, 16, 2).into_data();
    let a = m.generate(&mask, &z1, None).unwrap();
    assert_eq!(a, m.generate(&mask, &z1, None).unwrap());
    assert!(a.data().iter().all(|v| v.abs() < 1.0));
    assert!(a.max_abs_diff(&m.generate(&mask, &z2, None).unwrap()) > 1e-4);
}

#[test]
fn degenerate_network_outputs_tanh_of_bias() {
    let mut m = toy(NormMode::Clade);
    let last_conv = m.spec().layers.len() - 2;
    let bias = [0.5f32, -0.2, 0.1];
    for (path, t) in m.params_mut().iter_mut() {
        if path.ends_with(".weight") {
            *t = Tensor::zeros(t.shape());
        } else if *path == format!("{last_conv}.bias") {
            t.data_mut().copy_from_slice(&bias);
        } else if path.ends_with(".bias") {
            *t = t.map(|_| 0.7);
        }
    }
    let mask = SegmentationMask::uniform(64, 64, 5, 2).unwrap();
    let out = m.generate(&mask, &[0.3; 16], None).unwrap();
    for c in 0..3 {
        let want = (bias[c] as f64).tanh();
        for &v in &out.data()[c * 4096..(c + 1) * 4096] {
            assert!((v as f64 - want).abs() < 1e-6);
        }
    }
}

#[test]
fn clade_at_init_behaves_as_batch_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let masks: Vec<_> = (0..2).map(|_| random_mask(64, 5, &mut rng)).collect();
    let outs: Vec<Tensor<f32>> = [NormMode::Clade, NormMode::Bn]
        .iter()
        .map(|&mode| {
            let m = toy(mode);
            let input = GenInput::new(m.spec(), &masks, noise_batch(2, 16, 3), None).unwrap();
            let mut tape = Tape::<f32>::new();
            let f = m.forward(&mut tape, &input, true).unwrap();
            tape.value(f.image).clone()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
}

#[test]
fn mismatched_inputs_are_rejected() {
    let m = toy(NormMode::Clade);
    let small = SegmentationMask::uniform(32, 32, 5, 0).unwrap();
    assert!(matches!(m.generate(&small, &[0.0; 16], None), Err(Error::Shape { .. })));
    let ok = SegmentationMask::uniform(64, 64, 5, 0).unwrap();
    assert!(matches!(m.generate(&ok, &[0.0; 8], None), Err(Error::Shape { .. })));
    let inst = InstanceMap::from_fn(64, 64, |_, j| (j > 20) as u32);
    assert!(m.generate(&ok, &[0.0; 16], Some(&inst)).is_err());
}

#[test]
fn edge_path_changes_output_only_through_instances() {
    let spec = GraphSpec::preset("toy-64").unwrap().with_mode(NormMode::Clade).with_edge(true);
    let m = Model::build(spec, 5);
    let mask = SegmentationMask::uniform(64, 64, 5, 1).unwrap();
    let flat = InstanceMap::from_fn(64, 64, |_, _| 0);
    let split = InstanceMap::from_fn(64, 64, |_, j| (j >= 32) as u32);
    let z = noise_batch(1, 16, 0).into_data();
    let none = m.generate(&mask, &z, None).unwrap();
    assert_eq!(none, m.generate(&mask, &z, Some(&flat)).unwrap());
    assert!(none.max_abs_diff(&m.generate(&mask, &z, Some(&split)).unwrap()) > 1e-5);
}

#[test]
fn whole_generator_gradients_match_finite_differences() {
    for mode in NormMode::ALL {
        for edge in [false, true] {
            let model = Model::build(tiny(mode, edge), 3);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let masks: Vec<_> = (0..2).map(|_| random_mask(4, 3, &mut rng)).collect();
            let inst: Vec<_> = (0..2).map(|k| InstanceMap::from_fn(4, 4, move |i, _| (i > k) as u32)).collect();
            let input =
                GenInput::new(model.spec(), &masks, noise_batch(2, 4, 9), edge.then_some(&inst[..])).unwrap();
            let f32_fn = |tape: &mut Tape<f32>, z| Ok(model.forward_from(tape, z, &input, true)?.image);
            let f64_fn = |tape: &mut Tape<f64>, z| Ok(model.forward_from(tape, z, &input, true)?.image);
            let err = finite_diff_check_against(&f32_fn, &f64_fn, &input.noise, 1e-3).unwrap();
            assert!(err < 1e-3, "{mode} edge={edge}: {err}");
        }
    }
}

#[test]
fn parameter_gradients_reach_every_tensor() {
    for mode in NormMode::ALL {
        let model = Model::build(tiny(mode, true), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let masks: Vec<_> = (0..2).map(|_| random_mask(4, 3, &mut rng)).collect();
        let inst: Vec<_> = (0..2).map(|_| InstanceMap::from_fn(4, 4, |i, j| (i + j > 3) as u32)).collect();
        let input = GenInput::new(model.spec(), &masks, noise_batch(2, 4, 1), Some(&inst)).unwrap();
        let mut tape = Tape::<f32>::new();
        let f = model.forward(&mut tape, &input, true).unwrap();
        let target = tape.constant(Tensor::full(tape.shape(f.image), 0.3));
        let d = tape.sub(f.image, target).unwrap();
        let a = tape.abs(d);
        let loss = tape.mean(a);
        let grads = tape.backward(loss).unwrap();
        for (path, &v) in &f.params {
            assert!(grads.wrt(v).max_abs() > 0.0, "{mode}: no gradient for {path}");
        }
        assert_eq!(f.moments.len(), model.norm_sites().len());
    }
}
