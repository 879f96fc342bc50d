//! Welch t-test against an adaptive-quadrature tail oracle.

use oclsim::intensity::t_test_p;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use testkit::student_t_upper_tail;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Independent Welch route: statistic and degrees of freedom computed here,
/// tail mass from numeric integration of the t density.
fn welch_oracle(a: &[f64], b: &[f64]) -> f64 {
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let sa = va / a.len() as f64;
    let sb = vb / b.len() as f64;
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb) * (sa + sb)
        / (sa * sa / (a.len() as f64 - 1.0) + sb * sb / (b.len() as f64 - 1.0));
    student_t_upper_tail(t, df)
}

fn random_sample(rng: &mut impl Rng, n: usize, shift: f64, spread: f64) -> Vec<f64> {
    (0..n).map(|_| shift + spread * rng.gen_range(-1.0..1.0)).collect()
}

#[test]
fn welch_p_matches_quadrature_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut worst = 0.0f64;
    for case in 0..80 {
        let na = rng.gen_range(2..16);
        let nb = rng.gen_range(2..16);
        let (shift_a, spread_a) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.05..2.0));
        let (shift_b, spread_b) = (rng.gen_range(-1.0..1.0), rng.gen_range(0.05..2.0));
        let a = random_sample(&mut rng, na, shift_a, spread_a);
        let b = random_sample(&mut rng, nb, shift_b, spread_b);
        let got = t_test_p(&a, &b).unwrap();
        let want = welch_oracle(&a, &b);
        let err = (got - want).abs();
        worst = worst.max(err);
        assert!(err < 1e-3, "case {case}: {got} vs oracle {want}");
    }
    assert!(worst < 1e-3, "worst |Δp| = {worst}");
}

#[test]
fn fixed_arithmetic_sequences_example() {
    let a: Vec<f64> = (0..10).map(|i| 0.5 + 0.1 * i as f64).collect();
    let b: Vec<f64> = (0..10).map(|i| 0.1 * i as f64).collect();
    let got = t_test_p(&a, &b).unwrap();
    let want = welch_oracle(&a, &b);
    assert!((got - want).abs() < 1e-3, "{got} vs {want}");
    assert!(got < 0.05, "separated means should be significant: {got}");
}

#[test]
fn symmetry_to_nanoprecision() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..200 {
        let na = rng.gen_range(2..12);
        let nb = rng.gen_range(2..12);
        let (shift_a, spread_a) = (rng.gen_range(-0.5..0.5), rng.gen_range(0.1..1.5));
        let (shift_b, spread_b) = (rng.gen_range(-0.5..0.5), rng.gen_range(0.1..1.5));
        let a = random_sample(&mut rng, na, shift_a, spread_a);
        let b = random_sample(&mut rng, nb, shift_b, spread_b);
        let p_ab = t_test_p(&a, &b).unwrap();
        let p_ba = t_test_p(&b, &a).unwrap();
        assert!((p_ab + p_ba - 1.0).abs() < 1e-9, "{p_ab} + {p_ba}");
    }
}

#[test]
fn extreme_separation_saturates() {
    let a = vec![10.0, 10.1, 9.9, 10.05, 9.95];
    let b = vec![0.0, 0.1, -0.1, 0.05, -0.05];
    let p = t_test_p(&a, &b).unwrap();
    assert!(p < 1e-9, "p = {p}");
    let q = t_test_p(&b, &a).unwrap();
    assert!(q > 1.0 - 1e-9, "q = {q}");
}
