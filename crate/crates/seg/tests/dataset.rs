use std::fs;

use octa_core::synth::synth_dataset;
use octa_core::{Fov, TaskName};
use octa_seg::dataset::{load_dataset, load_dataset_with, write_dataset, LoadOptions};
use octa_seg::Error;

#[test]
fn written_dataset_loads_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    let samples = synth_dataset(5, 48, 2);
    write_dataset(dir.path(), &samples).unwrap();
    let loaded = load_dataset(dir.path(), Fov::Fov3M).unwrap();
    assert_eq!(loaded.len(), 5);
    for (a, b) in samples.iter().zip(&loaded) {
        assert_eq!(a.sample_id, b.sample_id);
        assert_eq!(a.labels(), b.labels());
        for ((la, pa), (lb, pb)) in a.projections().iter().zip(b.projections()) {
            assert_eq!(la, lb);
            // 8-bit quantization
            assert!(pa.data().iter().zip(pb.data()).all(|(x, y)| (x - y).abs() <= 0.5 / 255.0 + 1e-6));
        }
    }
}

#[test]
fn ids_are_lexicographic() {
    let dir = tempfile::tempdir().unwrap();
    let mut samples = synth_dataset(3, 32, 1);
    for (s, id) in samples.iter_mut().zip(["b10", "a2", "b2"]) {
        s.sample_id = id.to_string();
    }
    write_dataset(dir.path(), &samples).unwrap();
    let ids: Vec<_> = load_dataset(dir.path(), Fov::Fov3M)
        .unwrap()
        .into_iter()
        .map(|s| s.sample_id)
        .collect();
    assert_eq!(ids, ["a2", "b10", "b2"]);
}

#[test]
fn missing_rv_mask_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &synth_dataset(5, 32, 4)).unwrap();
    fs::remove_file(dir.path().join("3M/labels/rv/synth_0003.png")).unwrap();
    match load_dataset(dir.path(), Fov::Fov3M) {
        Err(Error::CorruptSample { id, .. }) => assert_eq!(id, "synth_0003"),
        other => panic!("expected corrupt sample, got {other:?}"),
    }
}

#[test]
fn label_shape_mismatch_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &synth_dataset(2, 32, 4)).unwrap();
    let small = synth_dataset(1, 16, 4).remove(0);
    let bytes = octa_seg::imageio::encode_mask8(small.label(TaskName::Faz).unwrap()).unwrap();
    fs::write(dir.path().join("3M/labels/faz/synth_0001.png"), bytes).unwrap();
    match load_dataset(dir.path(), Fov::Fov3M) {
        Err(Error::CorruptSample { id, .. }) => assert_eq!(id, "synth_0001"),
        other => panic!("expected corrupt sample, got {other:?}"),
    }
}

#[test]
fn empty_or_missing_directory_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_dataset(dir.path(), Fov::Fov3M), Err(Error::DatasetNotFound(_))));
    fs::create_dir_all(dir.path().join("6M/projections")).unwrap();
    assert!(matches!(load_dataset(dir.path(), Fov::Fov6M), Err(Error::DatasetNotFound(_))));
}

#[test]
fn strict_side_rejects_off_size_images() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &synth_dataset(1, 32, 4)).unwrap();
    let strict = LoadOptions { strict_fov_side: true };
    assert!(load_dataset_with(dir.path(), Fov::Fov3M, strict).is_err());
    assert!(load_dataset_with(dir.path(), Fov::Fov3M, LoadOptions::default()).is_ok());
}
