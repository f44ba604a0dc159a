mod common;

use std::f64::consts::PI;

use common::mean_var;
use fvae::data::{from_bytes, gaussian_ring, read_csv, shapes, to_bytes, two_moons, write_csv, DatasetMeta};
use fvae::{Dataset, Tensor};
use proptest::prelude::*;

#[test]
fn moons_mean_matches_arc_geometry() {
    // Each arc angle is uniform on [0, π]; E[sin] = 2/π, E[cos] = 0. The
    // upper arc averages (0, 2/π), the lower (1, 0.5 − 2/π).
    let n = 100_000;
    let ds = two_moons(n, 0.05, 40).unwrap();
    let want = [0.5, 0.25];
    for c in 0..2 {
        let col: Vec<f64> = (0..n).map(|i| ds.row(i)[c]).collect();
        let (m, v) = mean_var(&col);
        assert!((m - want[c]).abs() < 4.0 * (v / n as f64).sqrt(), "coordinate {c}: {m}");
    }
}

#[test]
fn ring_modes_are_equally_likely() {
    let (n, k) = (40_000, 8);
    let ds = gaussian_ring(n, k, 2.0, 0.1, 41).unwrap();
    let mut counts = vec![0usize; k];
    for i in 0..n {
        let p = ds.row(i);
        let angle = p[1].atan2(p[0]).rem_euclid(2.0 * PI);
        counts[((angle / (2.0 * PI / k as f64)).round() as usize) % k] += 1;
    }
    let expected = n as f64 / k as f64;
    for c in counts {
        assert!((c as f64 - expected).abs() < 4.0 * (n as f64).sqrt());
    }
}

#[test]
fn shapes_have_both_kinds_and_lit_pixels() {
    let ds = shapes(200, 16, 42).unwrap();
    for i in 0..ds.len() {
        let lit = ds.row(i).iter().filter(|&&v| v == 1.0).count();
        assert!(lit >= 4);
        assert!(ds.row(i).iter().all(|&v| v == 1.0 || v == -1.0));
    }
}

fn dataset(rows: Vec<Vec<f64>>) -> Dataset {
    Dataset::from_rows(&rows, DatasetMeta::default()).unwrap()
}

proptest! {
    #[test]
    fn binary_roundtrip_is_bit_exact(rows in prop::collection::vec(prop::collection::vec(-1e300f64..1e300, 3), 1..20)) {
        let ds = dataset(rows);
        let back = from_bytes(&to_bytes(&ds)).unwrap();
        prop_assert_eq!(back.points.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            ds.points.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn csv_roundtrip_is_exact(rows in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 2), 1..20)) {
        let ds = dataset(rows);
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back.points.data(), ds.points.data());
    }

    #[test]
    fn split_is_disjoint_and_covering(n in 20usize..400, seed in any::<u64>()) {
        let pts = Tensor::new(vec![n, 1], (0..n).map(|i| i as f64).collect()).unwrap();
        let ds = Dataset::new(pts, DatasetMeta::default()).unwrap();
        if let Ok((train, valid)) = ds.split(seed) {
            let mut all: Vec<f64> = train.points.data().iter().chain(valid.points.data()).copied().collect();
            all.sort_by(f64::total_cmp);
            prop_assert_eq!(all, (0..n).map(|i| i as f64).collect::<Vec<_>>());
        }
    }
}
