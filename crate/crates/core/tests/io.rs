//! Checkpoint and file-format round trips.

use cladelab::generator::{noise_batch, GenInput, GraphSpec, Model, NormMode};
use cladelab::io::{checkpoint, format_mask, load_checkpoint, parse_mask, read_ppm, save_checkpoint, write_ppm};
use cladelab::layers::SegmentationMask;
use cladelab::{Error, Tape};

fn trained_ish(mode: NormMode) -> Model {
    let spec = GraphSpec::preset("toy-64").unwrap().with_mode(mode).with_edge(mode == NormMode::Clade);
    let mut m = Model::build(spec, 42);
    // move running stats away from their initial values
    let masks: Vec<_> = (0..2).map(|k| SegmentationMask::uniform(64, 64, 5, k).unwrap()).collect();
    let input = GenInput::new(m.spec(), &masks, noise_batch(2, 16, 1), None).unwrap();
    let mut tape = Tape::<f32>::new();
    let f = m.forward(&mut tape, &input, true).unwrap();
    m.apply_moments(&f.moments);
    m
}

#[test]
fn checkpoint_roundtrip_reproduces_outputs_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    for mode in NormMode::ALL {
        let m = trained_ish(mode);
        let path = dir.path().join(format!("{mode}.ckpt"));
        save_checkpoint(&path, &m).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, m);
        let mask = SegmentationMask::from_fn(64, 64, 5, |i, j| ((i / 16 + j / 16) % 5) as u32).unwrap();
        let z = noise_batch(1, 16, 3).into_data();
        let (a, b) = (m.generate(&mask, &z, None).unwrap(), back.generate(&mask, &z, None).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = checkpoint::to_bytes(&trained_ish(NormMode::Bn)).unwrap();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(checkpoint::from_bytes(&bad), Err(Error::Checkpoint(m)) if m.contains("magic")));
    assert!(matches!(checkpoint::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Checkpoint(_))));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(checkpoint::from_bytes(&extra), Err(Error::Checkpoint(_))));
    assert!(matches!(checkpoint::from_bytes(b""), Err(Error::Checkpoint(_))));
}

#[test]
fn checkpoint_must_match_its_graph() {
    let m = Model::build(GraphSpec::preset("toy-64").unwrap(), 1);
    let mut params = m.params().clone();
    assert!(params.remove("2.conv_0.weight").is_some());
    assert!(Model::from_parts(m.spec().clone(), 1, params, m.stats().clone()).is_err());
}

#[test]
fn mask_text_and_ppm_bytes() {
    let m = SegmentationMask::from_fn(5, 7, 3, |i, j| ((i * j) % 3) as u32).unwrap();
    assert_eq!(parse_mask(&format_mask(&m)).unwrap(), m);
    let model = Model::build(GraphSpec::preset("toy-64").unwrap(), 2);
    let mask = SegmentationMask::uniform(64, 64, 5, 4).unwrap();
    let img = model.generate(&mask, &[0.1; 16], None).unwrap();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    write_ppm(&mut a, &img).unwrap();
    write_ppm(&mut b, &model.generate(&mask, &[0.1; 16], None).unwrap()).unwrap();
    assert_eq!(a, b);
    let back = read_ppm(&a[..]).unwrap();
    for (x, y) in back.data().iter().zip(img.data()) {
        assert_eq!(cladelab::io::to_byte(*x), cladelab::io::to_byte(*y));
    }
}
