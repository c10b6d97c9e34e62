use super::{Matrix, Tape, Tensor, TensorError};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub eps: f64,
    /// Pass threshold on the max relative error.
    pub tol: f64,
    /// Denominator floor: `|a - n| / max(|a|, |n|, floor)`.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self { eps: 1e-6, tol: 1e-5, floor: 1e-5 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input, element)` of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
    pub passed: bool,
}

/// Compares reverse-mode gradients of a scalar function with central differences
/// for every element of every input.
pub fn grad_check<F>(f: F, inputs: &[Matrix], opts: GradCheckOptions) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape, &[Tensor]) -> Result<Tensor, TensorError>,
{
    let eval = |values: &[Matrix]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let leaves: Vec<Tensor> = values.iter().map(|m| tape.constant(m.clone())).collect();
        let out = f(&mut tape, &leaves)?;
        if out.shape() != (1, 1) {
            return Err(TensorError::NotScalar(out.shape()));
        }
        Ok(tape.value(out).data[0])
    };

    if eval(inputs)?.to_bits() != eval(inputs)?.to_bits() {
        return Err(TensorError::NonDeterministic);
    }

    let mut tape = Tape::new();
    let leaves: Vec<Tensor> = inputs.iter().map(|m| tape.variable(m.clone())).collect();
    let out = f(&mut tape, &leaves)?;
    let grads = tape.backward(out)?;

    let mut report = GradCheckReport { max_rel_error: 0.0, worst: (0, 0), checked: 0, passed: true };
    let mut work: Vec<Matrix> = inputs.to_vec();
    for (i, leaf) in leaves.iter().enumerate() {
        let analytic = grads.get_or_zeros(*leaf);
        for e in 0..inputs[i].data.len() {
            let orig = inputs[i].data[e];
            work[i].data[e] = orig + opts.eps;
            let plus = eval(&work)?;
            work[i].data[e] = orig - opts.eps;
            let minus = eval(&work)?;
            work[i].data[e] = orig;
            let numeric = (plus - minus) / (2.0 * opts.eps);
            let a = analytic.data[e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = if rel.is_finite() { rel } else { f64::INFINITY };
                report.worst = (i, e);
            }
            report.checked += 1;
        }
    }
    report.passed = report.max_rel_error < opts.tol;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    fn rand_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut s = seed;
        let data = (0..rows * cols)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn identity_has_zero_error() {
        let x = rand_matrix(1, 1, 1);
        let r = grad_check(|_, v| Ok(v[0]), &[x], GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-9, "{}", r.max_rel_error);
    }

    #[test]
    fn matmul_matches_finite_differences() {
        let a = rand_matrix(4, 3, 7);
        let b = rand_matrix(3, 5, 8);
        let w = rand_matrix(4, 5, 9);
        let r = grad_check(
            |t, v| {
                let p = t.matmul(v[0], v[1])?;
                let wt = t.constant(w.clone());
                let q = t.mul(p, wt)?;
                Ok(t.sum(q))
            },
            &[a, b],
            GradCheckOptions { tol: 1e-7, ..Default::default() },
        )
        .unwrap();
        assert!(r.passed, "max rel error {}", r.max_rel_error);
    }

    #[test]
    fn leaky_relu_away_from_kink() {
        let mut x = rand_matrix(5, 4, 3);
        for v in &mut x.data {
            if v.abs() < 0.05 {
                *v += 0.1;
            }
        }
        let r = grad_check(
            |t, v| {
                let y = t.leaky_relu(v[0], 0.1);
                let y2 = t.mul(y, y)?;
                Ok(t.sum(y2))
            },
            &[x],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let x = rand_matrix(6, 3, 11);
        let w = rand_matrix(3, 4, 12);
        let b = rand_matrix(1, 4, 13);
        let gamma = rand_matrix(1, 4, 14);
        let beta = rand_matrix(1, 4, 15);
        let r = grad_check(
            |t, v| {
                let h = t.matmul(v[0], v[1])?;
                let h = t.add_row(h, v[2])?;
                let (h, _) = t.batch_norm_train(h, v[3], v[4], 1e-5)?;
                let h = t.leaky_relu(h, 0.1);
                let g = t.gather_rows(h, std::sync::Arc::from(vec![5usize, 0, 0, 3]))?;
                let c = t.concat_cols(g, g)?;
                let c = t.scale(c, 0.7);
                let c = t.add_scalar(c, 0.3);
                let s = t.segment_sum(c, std::sync::Arc::from(vec![0usize, 1, 4]))?;
                let lp = t.log_softmax(s);
                t.nll_loss(lp, std::sync::Arc::from(vec![3usize, 6]), std::sync::Arc::from(vec![0.5, 1.0, 2.0, 1.0, 1.0, 1.0, 3.0, 1.0]))
            },
            &[x, w, b, gamma, beta],
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.passed, "max rel error {} at {:?}", r.max_rel_error, r.worst);
    }

    #[test]
    fn nondeterminism_detected() {
        let counter = Cell::new(0.0);
        let err = grad_check(
            |t, v| {
                counter.set(counter.get() + 1.0);
                let s = t.sum(v[0]);
                Ok(t.add_scalar(s, counter.get()))
            },
            &[Matrix::zeros(1, 1)],
            GradCheckOptions::default(),
        )
        .unwrap_err();
        assert_eq!(err, TensorError::NonDeterministic);
    }
}
