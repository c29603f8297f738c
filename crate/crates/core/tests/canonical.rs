mod common;

use humof_core::data::{canonicalize_sample, Sample, CROP_RADIUS};
use proptest::prelude::*;

use common::{raw_sample, same_bits, tiny};

fn assert_bit_equal(a: &Sample, b: &Sample) {
    assert!(same_bits(&a.target.coords, &b.target.coords));
    assert_eq!(a.others.len(), b.others.len());
    for (x, y) in a.others.iter().zip(&b.others) {
        assert!(same_bits(&x.coords, &y.coords));
    }
    assert!(same_bits(&a.scene.points, &b.scene.points));
    assert!(same_bits(&a.future.as_ref().unwrap().coords, &b.future.as_ref().unwrap().coords));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    // Offsets on a 1/8 m grid keep every shifted f32 coordinate exact in f64,
    // so equality holds bit for bit.
    #[test]
    fn translation_does_not_change_canonical_sample(
        index in 0u64..200,
        k in prop::array::uniform3(-4000i32..4000),
        seed in any::<u64>(),
    ) {
        let cfg = tiny(&[0, 1, 2]);
        let raw = raw_sample(&cfg, index);
        let mut moved = raw.clone();
        moved.translate([k[0] as f64 / 8.0, k[1] as f64 / 8.0, k[2] as f64 / 8.0]);
        let n = cfg.model.scene_points;
        let a = canonicalize_sample(&raw, n, seed).unwrap();
        let b = canonicalize_sample(&moved, n, seed).unwrap();
        assert_bit_equal(&a, &b);
    }

    #[test]
    fn crop_is_sound(index in 0u64..200, seed in any::<u64>()) {
        let cfg = tiny(&[1]);
        let raw = raw_sample(&cfg, index);
        let root = raw.target.root(raw.history() - 1);
        let canon = canonicalize_sample(&raw, cfg.model.scene_points, seed).unwrap();
        prop_assert_eq!(canon.scene.len(), cfg.model.scene_points);
        prop_assert_eq!(canon.target.root(canon.history() - 1), [0.0, 0.0, 0.0]);
        for p in 0..canon.scene.len() {
            let q = canon.scene.point(p);
            let world = [q[0] + root[0], q[1] + root[1], q[2] + root[2]];
            let d = ((world[0] - root[0]).powi(2) + (world[1] - root[1]).powi(2) + (world[2] - root[2]).powi(2)).sqrt();
            prop_assert!(d <= CROP_RADIUS + 1e-9, "point {} at {} m", p, d);
            // Every output point is one of the raw points, shifted.
            let found = (0..raw.scene.len()).any(|r| {
                let s = raw.scene.point(r);
                (0..3).all(|a| s[a] - root[a] == q[a])
            });
            prop_assert!(found);
        }
    }
}

#[test]
fn same_seed_gives_identical_bytes() {
    let cfg = tiny(&[2]);
    let raw = raw_sample(&cfg, 7);
    let a = canonicalize_sample(&raw, 64, 11).unwrap();
    let b = canonicalize_sample(&raw, 64, 11).unwrap();
    assert_bit_equal(&a, &b);
    let c = canonicalize_sample(&raw, 64, 12).unwrap();
    assert_ne!(a.scene.points, c.scene.points);
}
