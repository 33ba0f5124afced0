use std::path::Path;

use proptest::prelude::*;
use scanpath_guided::features::{pgm, RawImage};
use scanpath_guided::harness::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta, MANIFEST};
use scanpath_guided::harness::synth::generate;
use scanpath_guided::harness::{gen_synthetic, ingest, DatasetPaths, Split, SyntheticSpec};
use scanpath_guided::labels::{LabelVector, NUM_CLASSES};
use scanpath_guided::numerics::{adam_step, blob, AdamConfig, AdamState, ParamStore, Rng, Tensor};
use scanpath_guided::scanpath::{format_scanpaths, parse_scanpaths, Fixation, Scanpath};
use scanpath_guided::Error;

fn tensor() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(1usize..4, 0..4).prop_flat_map(|dims| {
        let n: usize = dims.iter().product();
        prop::collection::vec(-1e6..1e6f64, n).prop_map(move |d| Tensor::new(dims.clone(), d).unwrap())
    })
}

proptest! {
    #[test]
    fn blob_round_trip(t in tensor()) {
        let bytes = blob::encode(&t);
        prop_assert!(blob::decode(&bytes).unwrap().bit_eq(&t));
        for cut in [0, 3, bytes.len() / 2, bytes.len() - 1] {
            let rejected = matches!(blob::decode(&bytes[..cut]), Err(Error::Format { .. }));
            prop_assert!(rejected, "prefix {}", cut);
        }
        let mut long = bytes.clone();
        long.push(0);
        prop_assert!(blob::decode(&long).is_err());
    }

    #[test]
    fn pgm_round_trip(h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let mut rng = Rng::new(seed);
        let data = (0..h * w).map(|_| rng.below(256) as f64 / 255.0).collect();
        let img = RawImage::new(h, w, data).unwrap();
        let back = pgm::decode(&pgm::encode(&img)).unwrap();
        prop_assert_eq!(back, img);
    }

    #[test]
    fn scanpath_lines_round_trip(paths in prop::collection::vec(
        prop::collection::vec((0.0..255.9f64, 0.0..255.9f64), 1..6), 1..4)
    ) {
        let sps: Vec<Scanpath> = paths
            .iter()
            .enumerate()
            .map(|(i, f)| Scanpath::new(format!("im{i}"), "r1", f.iter().map(|&(x, y)| Fixation::new(x, y)).collect()).unwrap())
            .collect();
        let text = format_scanpaths(&sps);
        prop_assert_eq!(parse_scanpaths(&text, "mem").unwrap(), sps);
    }
}

#[test]
fn scanpath_parse_errors_carry_line() {
    let good = r#"{"image_id":"a","reader_id":"r","fixations":[[1,2]]}"#;
    let out_of_frame = r#"{"image_id":"a","reader_id":"r","fixations":[[300,2]]}"#;
    for bad in [out_of_frame, "{", r#"{"image_id":"a","reader_id":"r","fixations":[]}"#] {
        let text = format!("{good}\n\n{bad}\n");
        assert!(
            matches!(parse_scanpaths(&text, "f"), Err(Error::Parse { line: 3, .. })),
            "{bad}"
        );
    }
}

fn meta(hash: &str) -> CheckpointMeta {
    CheckpointMeta {
        kind: "test".into(),
        config_hash: hash.into(),
        seed: 1,
        step: 2,
        epoch: 3,
        validation_metric: Some(0.5),
    }
}

fn trained_store() -> (ParamStore, AdamState) {
    let mut rng = Rng::new(7);
    let mut store = ParamStore::new();
    store.add_normal("a.weight", &[3, 4], 1.0, &mut rng).unwrap();
    store.add_normal("b", &[5], 1.0, &mut rng).unwrap();
    let mut adam = AdamState::new(AdamConfig::with_lr(1e-2), &store);
    for _ in 0..3 {
        store.zero_grad();
        for id in store.ids().collect::<Vec<_>>() {
            let g = store.value(id).map(|v| v.sin());
            store.set_grad(id, g).unwrap();
        }
        adam_step(&mut store, &mut adam).unwrap();
    }
    (store, adam)
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let (store, adam) = trained_store();
    save_checkpoint(dir.path(), &store, Some(&adam), &meta("abc")).unwrap();
    let ck = load_checkpoint(dir.path(), Some("abc")).unwrap();
    assert!(ck.store.bit_eq(&store));
    assert!(ck.adam.unwrap().bit_eq(&adam));
    assert_eq!(ck.manifest.epoch, 3);
}

#[test]
fn checkpoint_faults_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let (store, _) = trained_store();
    save_checkpoint(dir.path(), &store, None, &meta("abc")).unwrap();
    assert!(matches!(
        load_checkpoint(dir.path(), Some("xyz")),
        Err(Error::HashMismatch { .. })
    ));

    let blob_path = dir.path().join("b.tnsr");
    let bytes = std::fs::read(&blob_path).unwrap();
    std::fs::write(&blob_path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(dir.path(), None), Err(Error::Format { .. })));

    std::fs::remove_file(&blob_path).unwrap();
    assert!(load_checkpoint(dir.path(), None).is_err());

    std::fs::remove_file(dir.path().join(MANIFEST)).unwrap();
    assert!(matches!(load_checkpoint(dir.path(), None), Err(Error::MissingBlob(_))));
}

fn tiny_spec() -> SyntheticSpec {
    SyntheticSpec {
        n_train: 6,
        n_valid: 2,
        n_test: 3,
        channels: 8,
        ..Default::default()
    }
}

#[test]
fn synthetic_data_is_seed_deterministic() {
    let spec = tiny_spec();
    let (a, b, c) = (
        generate(&spec, 5).unwrap(),
        generate(&spec, 5).unwrap(),
        generate(&spec, 6).unwrap(),
    );
    let key = |v: &[scanpath_guided::harness::synth::SynthImage]| {
        v.iter()
            .map(|i| {
                (
                    i.image_id.clone(),
                    i.labels,
                    i.scanpaths.clone(),
                    i.map.tensor().data().to_vec(),
                )
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));
    assert_ne!(key(&a), key(&c));
}

fn ingest_dir(dir: &Path) -> scanpath_guided::harness::DatasetIndex {
    ingest(&DatasetPaths::in_dir(dir)).unwrap()
}

#[test]
fn ingest_dump_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let spec = tiny_spec();
    let images = gen_synthetic(&spec, 3, dir.path()).unwrap();
    let index = ingest_dir(dir.path());
    assert_eq!(index.len(), images.len());
    assert_eq!(index.split(Split::Test).count(), 3);
    for img in &images {
        let e = &index.entries[&img.image_id];
        assert_eq!(e.labels, img.labels);
        assert_eq!(e.scanpaths, img.scanpaths);
        assert_eq!(e.split, img.split);
    }
    index.dump(dir.path()).unwrap();
    assert_eq!(ingest_dir(dir.path()), index);
}

#[test]
fn ingest_rejects_dangling_references() {
    let dir = tempfile::tempdir().unwrap();
    gen_synthetic(&tiny_spec(), 3, dir.path()).unwrap();
    let extra = r#"{"image_id":"ghost","reader_id":"r","fixations":[[1,1]]}"#;
    let sp = dir.path().join("scanpaths.jsonl");
    let text = std::fs::read_to_string(&sp).unwrap() + extra + "\n";
    std::fs::write(&sp, text).unwrap();
    assert!(matches!(
        ingest(&DatasetPaths::in_dir(dir.path())),
        Err(Error::Dataset(_))
    ));
}

#[test]
fn labels_reject_bad_codes() {
    assert!(LabelVector::from_codes(&[0; NUM_CLASSES]).is_ok());
    assert!(LabelVector::from_codes(&[2; NUM_CLASSES]).is_err());
    assert!(LabelVector::from_codes(&[0; 3]).is_err());
}
