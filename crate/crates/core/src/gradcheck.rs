//! Central finite-difference checking of tape gradients.
//!
//! The op under test is supplied as a closure that rebuilds its computation
//! from leaf variables; the checker reduces the output to a scalar with a
//! fixed `sum`, so the numeric side never touches the reverse pass it is
//! auditing.

use crate::tensor::{Tape, Tensor, TensorError, VarId};

/// Default central-difference step for 64-bit checks.
pub const FD_STEP: f64 = 1e-5;

/// Outcome of one gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

fn forward_scalar<F>(inputs: &[Tensor], build: &F) -> Result<f64, TensorError>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId, TensorError>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &ids)?;
    let total = tape.sum(out);
    Ok(tape.scalar_value(total))
}

/// Reverse-mode gradients of `sum(build(inputs))` with respect to each input.
pub fn analytic_gradients<F>(inputs: &[Tensor], build: &F) -> Result<Vec<Vec<f64>>, TensorError>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId, TensorError>,
{
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.leaf(t)).collect();
    let out = build(&mut tape, &ids)?;
    let total = tape.sum(out);
    tape.backward(total)?;
    Ok(ids.iter().map(|&id| tape.grad(id).to_vec()).collect())
}

/// Central-difference gradients of `sum(build(inputs))`, one forward pair per
/// perturbed element.
pub fn numeric_gradients<F>(
    inputs: &[Tensor],
    build: &F,
    step: f64,
) -> Result<Vec<Vec<f64>>, TensorError>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId, TensorError>,
{
    let mut grads = Vec::with_capacity(inputs.len());
    for (which, input) in inputs.iter().enumerate() {
        let mut grad = vec![0.0; input.len()];
        for (elem, slot) in grad.iter_mut().enumerate() {
            let mut plus: Vec<Tensor> = inputs.to_vec();
            plus[which].values_mut()[elem] += step;
            let mut minus: Vec<Tensor> = inputs.to_vec();
            minus[which].values_mut()[elem] -= step;
            let f_plus = forward_scalar(&plus, build)?;
            let f_minus = forward_scalar(&minus, build)?;
            *slot = (f_plus - f_minus) / (2.0 * step);
        }
        grads.push(grad);
    }
    Ok(grads)
}

/// Relative error with denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn compare_gradients(
    op_name: &str,
    analytic: &[Vec<f64>],
    numeric: &[Vec<f64>],
    tolerance: f64,
) -> GradCheckReport {
    let mut max_rel_error: f64 = 0.0;
    for (a_vec, n_vec) in analytic.iter().zip(numeric) {
        for (&a, &n) in a_vec.iter().zip(n_vec) {
            let denom = a.abs().max(n.abs()).max(1e-8);
            let rel = (a - n).abs() / denom;
            max_rel_error = max_rel_error.max(rel);
        }
    }
    GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_error,
        tolerance,
        passed: max_rel_error <= tolerance,
    }
}

/// Checks the tape gradients of `build` against central finite differences.
pub fn grad_check<F>(
    op_name: &str,
    inputs: &[Tensor],
    tolerance: f64,
    build: F,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId, TensorError>,
{
    let analytic = analytic_gradients(inputs, &build)?;
    let numeric = numeric_gradients(inputs, &build, FD_STEP)?;
    Ok(compare_gradients(op_name, &analytic, &numeric, tolerance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let len: usize = shape.iter().product();
        let values: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), values).unwrap()
    }

    #[test]
    fn linear_op_is_exact() {
        // matmul by a constant is linear, so central differences are exact up
        // to rounding and the error must sit far below 1e-7.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tensor(&mut rng, &[3, 4]);
        let report = grad_check("matmul_by_constant", &[a], 1e-7, |tape, ids| {
            let c = tape.leaf_from(
                vec![4, 2],
                vec![0.5, -1.0, 2.0, 0.25, -0.75, 1.5, 0.1, -0.2],
            )?;
            tape.matmul(ids[0], c)
        })
        .unwrap();
        assert!(report.passed, "rel err {}", report.max_rel_error);
        assert!(report.max_rel_error < 1e-7);
    }

    #[test]
    fn matmul_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, n, p) = (
                rng.gen_range(1..=5),
                rng.gen_range(1..=5),
                rng.gen_range(1..=5),
            );
            let a = random_tensor(&mut rng, &[m, n]);
            let b = random_tensor(&mut rng, &[n, p]);
            let report = grad_check("matmul", &[a, b], 1e-4, |tape, ids| {
                tape.matmul(ids[0], ids[1])
            })
            .unwrap();
            assert!(report.passed, "seed {seed}: rel err {}", report.max_rel_error);
        }
    }

    #[test]
    fn conv1d_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let t = rng.gen_range(1..=9);
            let d_in = rng.gen_range(1..=5);
            let d_out = rng.gen_range(1..=4);
            let w = [1usize, 3, 5][rng.gen_range(0..3)];
            let seq = random_tensor(&mut rng, &[t, d_in]);
            let filters = random_tensor(&mut rng, &[w, d_in, d_out]);
            let bias = random_tensor(&mut rng, &[d_out]);
            let report = grad_check("conv1d_same", &[seq, filters, bias], 1e-4, |tape, ids| {
                tape.conv1d_same(ids[0], ids[1], ids[2])
            })
            .unwrap();
            assert!(report.passed, "seed {seed}: rel err {}", report.max_rel_error);
        }
    }

    #[test]
    fn pool_softmax_nll_tanh_gradients_match_finite_differences() {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(200 + seed);

            let t = rng.gen_range(3..=9);
            let channels = rng.gen_range(1..=4);
            let split2 = rng.gen_range(1..t);
            let split1 = rng.gen_range(0..=split2);
            let fm = random_tensor(&mut rng, &[t, channels]);
            let report = grad_check("piecewise_max_pool", &[fm], 1e-4, |tape, ids| {
                tape.piecewise_max_pool(ids[0], split1, split2)
            })
            .unwrap();
            assert!(report.passed, "pool seed {seed}: {}", report.max_rel_error);

            let width = rng.gen_range(2..=7);
            let logits = random_tensor(&mut rng, &[width]);
            let gold = rng.gen_range(0..width);
            let mix: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.5..1.5)).collect();
            // sum(softmax) is constant, so weight the outputs to keep the
            // reduction sensitive to the Jacobian
            let report = grad_check("softmax_row", std::slice::from_ref(&logits), 1e-4, |tape, ids| {
                let s = tape.softmax_row(ids[0])?;
                let w = tape.leaf_from(vec![width], mix.clone())?;
                tape.mul(s, w)
            })
            .unwrap();
            assert!(report.passed, "softmax seed {seed}: {}", report.max_rel_error);

            let report = grad_check("nll_from_logits", &[logits], 1e-4, |tape, ids| {
                tape.nll_from_logits(ids[0], gold)
            })
            .unwrap();
            assert!(report.passed, "nll seed {seed}: {}", report.max_rel_error);

            let rows = rng.gen_range(1..=5);
            let cols = rng.gen_range(1..=4);
            let x = random_tensor(&mut rng, &[rows, cols]);
            let report =
                grad_check("tanh", &[x], 1e-4, |tape, ids| Ok(tape.tanh(ids[0]))).unwrap();
            assert!(report.passed, "tanh seed {seed}: {}", report.max_rel_error);
        }
    }

    #[test]
    fn corrupted_backward_is_detected() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_tensor(&mut rng, &[3, 3]);
        let b = random_tensor(&mut rng, &[3, 3]);
        let inputs = vec![a, b];
        let build = |tape: &mut Tape, ids: &[VarId]| tape.matmul(ids[0], ids[1]);
        let mut analytic = analytic_gradients(&inputs, &build).unwrap();
        analytic[0][4] *= 1.1; // inject a 10% error on one gradient entry
        let numeric = numeric_gradients(&inputs, &build, FD_STEP).unwrap();
        let report = compare_gradients("corrupted_matmul", &analytic, &numeric, 1e-4);
        assert!(!report.passed);
        assert!(report.max_rel_error > 1e-4);
    }

    #[test]
    fn report_passed_flag_is_consistent() {
        let report = compare_gradients("x", &[vec![1.0]], &[vec![1.0 + 1e-6]], 1e-4);
        assert_eq!(report.passed, report.max_rel_error <= report.tolerance);
        assert!(report.passed);
    }
}
