use clonekit::data::fixture::{Fixture, Split};
use clonekit::data::{export_dataset, export_pool, load_dataset, load_pool};

#[test]
fn fixture_pool_manifest_digest_is_pinned() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(2024, 32);
    let pool = fx.pool(3);
    let manifest = export_pool(&pool, dir.path()).unwrap();
    let loaded = load_pool(&manifest, None).unwrap();
    assert_eq!(loaded.class_names(), pool.class_names());
    assert_eq!(loaded.counts(), vec![3; 20]);
    assert_eq!(loaded.digest(), pool.digest());
    assert_eq!(loaded.digest(), "70276840a001804830d0b3597a8226565d75bc88073e9d85d281ec303dff9e8d");
    let first = &loaded.classes()[4].refs[1];
    let original = pool.source().load(&pool.classes()[4].refs[1]).unwrap();
    assert_eq!(loaded.source().load(first).unwrap(), original);
}

#[test]
fn fixture_test_split_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::new(7, 32);
    let test = fx.target_split(Split::Test, 4);
    let manifest = export_dataset(&test, dir.path()).unwrap();
    let back = load_dataset(&manifest).unwrap();
    assert_eq!(back.class_names, test.class_names);
    let mut want: Vec<(usize, [u8; 32])> =
        test.labels.iter().zip(&test.images).map(|(&l, i)| (l, i.digest())).collect();
    let mut got: Vec<(usize, [u8; 32])> =
        back.labels.iter().zip(&back.images).map(|(&l, i)| (l, i.digest())).collect();
    want.sort();
    got.sort();
    assert_eq!(got, want);
}
