//! Central finite-difference gradient checking.
//!
//! The analytic side builds a graph with the library ops; the numeric side
//! evaluates a caller-provided independent forward at perturbed inputs. Both
//! are contracted against a random cotangent so arbitrary output shapes
//! reduce to one scalar.

use oclsim::tensor::{self, Tensor};
use rand::Rng;

pub struct GradCheckReport {
    /// Number of gradient elements compared.
    pub elements: usize,
    pub max_rel_err: f64,
}

/// Relative error with a small floor so dead units (both sides ~0) pass.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

/// Checks `d loss / d input` for every element of every input.
///
/// * `inputs` — raw (shape, data) pairs turned into gradient-tracked leaves
/// * `analytic` — builds the op under test from those leaves
/// * `oracle` — independent forward over raw arrays, same output layout
pub fn check_gradients<F, G>(
    inputs: &[(&[usize], Vec<f64>)],
    analytic: F,
    oracle: G,
    step: f64,
    rng: &mut impl Rng,
) -> GradCheckReport
where
    F: Fn(&[Tensor]) -> Tensor,
    G: Fn(&[Vec<f64>]) -> Vec<f64>,
{
    let leaves: Vec<Tensor> = inputs
        .iter()
        .map(|(shape, data)| Tensor::param(shape, data.clone()).expect("leaf"))
        .collect();
    let out = analytic(&leaves);
    let cotangent: Vec<f64> = (0..out.data().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let loss = tensor::weighted_sum(&out, &cotangent).expect("cotangent contraction");
    loss.backward();

    let raw: Vec<Vec<f64>> = inputs.iter().map(|(_, d)| d.clone()).collect();
    let contract = |arrays: &[Vec<f64>]| -> f64 {
        let y = oracle(arrays);
        assert_eq!(y.len(), cotangent.len(), "oracle output layout mismatch");
        y.iter().zip(&cotangent).map(|(v, w)| v * w).sum()
    };

    let mut max_rel = 0.0f64;
    let mut elements = 0;
    for (idx, leaf) in leaves.iter().enumerate() {
        let grad = leaf.grad().map(|g| g.clone()).unwrap_or_else(|| vec![0.0; raw[idx].len()]);
        for e in 0..raw[idx].len() {
            let mut plus = raw.clone();
            plus[idx][e] += step;
            let mut minus = raw.clone();
            minus[idx][e] -= step;
            let fd = (contract(&plus) - contract(&minus)) / (2.0 * step);
            max_rel = max_rel.max(rel_err(grad[e], fd));
            elements += 1;
        }
    }
    GradCheckReport { elements, max_rel_err: max_rel }
}
