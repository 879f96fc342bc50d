//! Drop-mask property suite over randomized attention maps.
//!
//! Run counts are deliberately high (10⁴ randomized cases per property) so
//! the exact zero-count, top-set and scaling invariants are exercised across
//! many map sizes and drop splits.

use oclsim::debias::{fuse, hard_mask, soft_mask, stabilize, AttentionMap};
use oclsim::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use testkit::fuse_ref;

const CASES: usize = 10_000;

fn random_map(rng: &mut impl Rng) -> AttentionMap {
    let h = rng.gen_range(2..12);
    let w = rng.gen_range(2..12);
    let data: Vec<f64> = (0..h * w).map(|_| rng.gen_range(-4.0..4.0)).collect();
    AttentionMap { values: Tensor::from_vec(&[h, w], data).unwrap() }
}

/// Indices sorted by descending value, ties to the smaller index; computed
/// here by a full sort as the oracle.
fn sorted_cells(values: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    idx
}

#[test]
fn hard_mask_zero_count_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..CASES {
        let map = random_map(&mut rng);
        let cells = map.values.data().len();
        let n_kappa = rng.gen_range(0..=cells);
        let n_rand = rng.gen_range(0..=cells - n_kappa);
        let mask = hard_mask(&map, n_kappa, n_rand, &mut rng).unwrap();
        let zeros = mask.values.data().iter().filter(|&&v| v == 0.0).count();
        assert_eq!(zeros, n_kappa + n_rand);
        assert!(mask.values.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }
}

#[test]
fn hard_mask_always_covers_top_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..CASES {
        let map = random_map(&mut rng);
        let cells = map.values.data().len();
        let n_kappa = rng.gen_range(0..=cells);
        let n_rand = rng.gen_range(0..=cells - n_kappa);
        let mask = hard_mask(&map, n_kappa, n_rand, &mut rng).unwrap();
        let order = sorted_cells(map.values.data());
        for &top in &order[..n_kappa] {
            assert_eq!(mask.values.data()[top], 0.0, "top cell {top} kept");
        }
    }
}

#[test]
fn fused_top_set_invariant_under_positive_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..CASES {
        let c = rng.gen_range(1..4);
        let h = rng.gen_range(2..8);
        let w = rng.gen_range(2..8);
        let c2 = rng.gen_range(1..4);
        let h2 = rng.gen_range(1..=h);
        let w2 = rng.gen_range(1..=w);
        let first: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(0.0..3.0)).collect();
        let last: Vec<f64> = (0..c2 * h2 * w2).map(|_| rng.gen_range(0.0..3.0)).collect();
        let s: f64 = rng.gen_range(0.1..10.0);
        let f1 = Tensor::from_vec(&[c, h, w], first.clone()).unwrap();
        let f1s = Tensor::from_vec(&[c, h, w], first.iter().map(|&v| s * v).collect()).unwrap();
        let fl = Tensor::from_vec(&[c2, h2, w2], last).unwrap();
        let a = fuse(&f1, &fl).unwrap();
        let a_scaled = fuse(&f1s, &fl).unwrap();
        let n_kappa = rng.gen_range(1..=h * w);
        let set_a = &sorted_cells(a.values.data())[..n_kappa];
        let set_b = &sorted_cells(a_scaled.values.data())[..n_kappa];
        assert_eq!(set_a, set_b, "selected set moved under scale {s}");
        // scale-covariance of the fused values themselves
        for (va, vb) in a.values.data().iter().zip(a_scaled.values.data()) {
            assert!((va * s - vb).abs() <= 1e-9 * vb.abs().max(1.0));
        }
    }
}

#[test]
fn soft_mask_values_rank_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..CASES {
        let map = random_map(&mut rng);
        let cells = map.values.data().len();
        let n_kappa = rng.gen_range(1..=cells);
        let mask = soft_mask(&map, n_kappa).unwrap();
        let data = mask.values.data();
        assert!(data.iter().all(|&v| v > 0.0 && v <= 1.0));
        let order = sorted_cells(map.values.data());
        for (rank0, &cell) in order[..n_kappa].iter().enumerate() {
            let expect = (rank0 + 1) as f64 / n_kappa as f64;
            assert_eq!(data[cell], expect, "rank {} cell {cell}", rank0 + 1);
        }
        for &cell in &order[n_kappa..] {
            assert_eq!(data[cell], 1.0);
        }
        // values are nondecreasing along descending attention rank
        for pair in order[..n_kappa].windows(2) {
            assert!(data[pair[0]] <= data[pair[1]]);
        }
    }
}

#[test]
fn stabilized_drop_count_constant_per_gamma() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for _ in 0..2_000 {
        let h = rng.gen_range(2..40);
        let w = rng.gen_range(2..40);
        let gamma: f64 = rng.gen_range(0.0..30.0);
        let n_total = (gamma / 100.0 * (h * w) as f64).round() as usize;
        // any admissible kappa must keep the same total
        for _ in 0..5 {
            let kappa = rng.gen_range(0.0..=gamma);
            let (n_kappa, n_rand) = stabilize(kappa, gamma, h, w).unwrap();
            assert_eq!(n_kappa + n_rand, n_total, "κ={kappa} γ={gamma} {h}×{w}");
        }
    }
}

#[test]
fn fuse_matches_brute_force_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    for _ in 0..300 {
        let c = rng.gen_range(1..6);
        let h = rng.gen_range(1..9);
        let w = rng.gen_range(1..9);
        let c2 = rng.gen_range(1..9);
        let h2 = rng.gen_range(1..=h);
        let w2 = rng.gen_range(1..=w);
        let first: Vec<f64> = (0..c * h * w).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let last: Vec<f64> = (0..c2 * h2 * w2).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let got = fuse(
            &Tensor::from_vec(&[c, h, w], first.clone()).unwrap(),
            &Tensor::from_vec(&[c2, h2, w2], last.clone()).unwrap(),
        )
        .unwrap();
        let want = fuse_ref(&first, (c, h, w), &last, (c2, h2, w2));
        for (g, e) in got.values.data().iter().zip(&want) {
            assert!((g - e).abs() <= 1e-12 * e.abs().max(1.0), "{g} vs {e}");
        }
    }
}

/// The fixed 4×6×6 / 8×3×3 example shape from the fusion contract.
#[test]
fn fuse_reference_fixed_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let first: Vec<f64> = (0..4 * 6 * 6).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let last: Vec<f64> = (0..8 * 3 * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let got = fuse(
        &Tensor::from_vec(&[4, 6, 6], first.clone()).unwrap(),
        &Tensor::from_vec(&[8, 3, 3], last.clone()).unwrap(),
    )
    .unwrap();
    let want = fuse_ref(&first, (4, 6, 6), &last, (8, 3, 3));
    for (g, e) in got.values.data().iter().zip(&want) {
        assert!((g - e).abs() < 1e-12);
    }
}
