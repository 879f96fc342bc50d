//! Mask semantics of the backbone forward: identity and zero masks, and
//! receptive-field containment of a single-cell drop.

use oclsim::backbone::{BackboneConfig, Model};
use oclsim::debias::{DropMask, MaskKind};
use oclsim::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(seed: u64) -> BackboneConfig {
    BackboneConfig {
        input_channels: 3,
        input_size: 16,
        stem_channels: 6,
        block_channels: vec![8, 12],
        num_classes: 3,
        seed,
    }
}

fn random_batch(rng: &mut impl Rng, n: usize, size: usize) -> Tensor {
    let data: Vec<f64> = (0..n * 3 * size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_vec(&[n, 3, size, size], data).unwrap()
}

fn mask_with(values: Vec<f64>, size: usize) -> DropMask {
    DropMask { values: Tensor::from_vec(&[size, size], values).unwrap(), kind: MaskKind::Hard }
}

#[test]
fn all_ones_mask_is_bit_identical_to_unmasked() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut model = Model::build(config(1)).unwrap();
    let batch = random_batch(&mut rng, 3, 16);
    let masks: Vec<DropMask> = (0..3).map(|_| DropMask::identity(16, 16)).collect();
    let masked = model.forward(&batch, Some(&masks)).unwrap();
    let plain = model.forward_eval(&batch).unwrap();
    assert_eq!(masked.logits.data(), plain.logits.data());
    assert_eq!(masked.f_last.data(), plain.f_last.data());
}

#[test]
fn all_zeros_mask_gives_bias_only_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let mut model = Model::build(config(2)).unwrap();
    let batch = random_batch(&mut rng, 2, 16);
    let masks: Vec<DropMask> = (0..2).map(|_| mask_with(vec![0.0; 256], 16)).collect();
    let out = model.forward(&batch, Some(&masks)).unwrap();
    assert!(out.f_first.data().iter().all(|&v| v == 0.0));
    let bias = &model.params()[model.params().len() - 1].data;
    for row in out.logits.data().chunks(3) {
        assert_eq!(row, &bias[..]);
    }
}

#[test]
fn mask_shape_mismatch_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let mut model = Model::build(config(3)).unwrap();
    let batch = random_batch(&mut rng, 1, 16);
    let bad = mask_with(vec![1.0; 64], 8);
    assert!(model.forward(&batch, Some(&[bad])).is_err());
}

/// Receptive field of a last-map cell through two stride-2 3×3 convolutions:
/// rows 4p−3 .. 4p+3 of the stem map. A single dropped stem cell may only
/// perturb last-map cells whose field covers it.
#[test]
fn single_dropped_cell_stays_inside_receptive_field() {
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let mut model = Model::build(config(4)).unwrap();
    for case in 0..10 {
        let batch = random_batch(&mut rng, 1, 16);
        let plain = model.forward_eval(&batch).unwrap();
        let (y, x) = (rng.gen_range(0..16), rng.gen_range(0..16));
        let mut values = vec![1.0; 256];
        values[y * 16 + x] = 0.0;
        let masked = model.forward(&batch, Some(&[mask_with(values, 16)])).unwrap();

        let ls = plain.f_last.shape();
        let (c2, h2, w2) = (ls[1], ls[2], ls[3]);
        let covers = |p: usize, cell: usize| -> bool {
            let lo = 4 * p as isize - 3;
            let hi = 4 * p as isize + 3;
            (cell as isize) >= lo && (cell as isize) <= hi
        };
        for py in 0..h2 {
            for px in 0..w2 {
                let inside = covers(py, y) && covers(px, x);
                if inside {
                    continue;
                }
                for ch in 0..c2 {
                    let idx = (ch * h2 + py) * w2 + px;
                    assert_eq!(
                        plain.f_last.data()[idx],
                        masked.f_last.data()[idx],
                        "case {case}: cell ({py},{px}) outside field of ({y},{x}) changed"
                    );
                }
            }
        }
    }
}

#[test]
fn dropping_an_active_cell_changes_something() {
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    let mut model = Model::build(config(5)).unwrap();
    let batch = random_batch(&mut rng, 1, 16);
    let plain = model.forward_eval(&batch).unwrap();
    // pick the stem cell with the largest pooled activation
    let fs = plain.f_first.shape();
    let (c, h, w) = (fs[1], fs[2], fs[3]);
    let mut best = (0usize, 0usize, f64::NEG_INFINITY);
    for y in 0..h {
        for x in 0..w {
            let sum: f64 = (0..c).map(|ch| plain.f_first.data()[(ch * h + y) * w + x]).sum();
            if sum > best.2 {
                best = (y, x, sum);
            }
        }
    }
    let mut values = vec![1.0; h * w];
    values[best.0 * w + best.1] = 0.0;
    let masked = model.forward(&batch, Some(&[mask_with(values, 16)])).unwrap();
    assert_ne!(plain.f_last.data(), masked.f_last.data());
}
