use serde::Serialize;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{randn_matrix, seeded_rng, Matrix};
use crate::scalar::Scalar;

/// Outcome of comparing analytic gradients with central finite differences.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub op_name: String,
    pub max_rel_err: f64,
    pub h: f64,
    pub shapes: Vec<(usize, usize)>,
}

/// Central-difference check of d<S, f(leaves)>/dleaf against the tape's
/// backward pass. Relative error is |analytic - numeric| / max(1, |numeric|),
/// maximized over every entry of every leaf.
pub fn finite_diff_check<T, F>(
    op_name: &str,
    build: F,
    leaves: &[Matrix<T>],
    h: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[NodeId]) -> Result<NodeId>,
{
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::invalid(
            "finite_diff_check",
            format!("step {h} must lie in (0, 1e-2]"),
        ));
    }

    let mut tape = Tape::new();
    let ids: Vec<NodeId> = leaves.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = build(&mut tape, &ids)?;
    let out_shape = tape.value(out).shape();

    let mut rng = seeded_rng(seed);
    let probe: Matrix<T> = randn_matrix(out_shape.0, out_shape.1, &mut rng);
    let grads = tape.backward(out, &probe)?;

    let objective = |leaves: &[Matrix<T>]| -> Result<T> {
        let mut t = Tape::new();
        let ids: Vec<NodeId> = leaves.iter().map(|m| t.leaf(m.clone())).collect();
        let out = build(&mut t, &ids)?;
        Ok(t.value(out)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(&a, &b)| a * b)
            .fold(T::zero(), |a, b| a + b))
    };

    let step = T::from_config(h);
    let mut max_rel_err = 0.0f64;
    let mut perturbed: Vec<Matrix<T>> = leaves.to_vec();
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .wrt(ids[li])
            .expect("leaf gradients always materialized");
        for r in 0..leaf.rows() {
            for c in 0..leaf.cols() {
                let orig = leaf.get(r, c);
                perturbed[li].set(r, c, orig + step);
                let fp = objective(&perturbed)?;
                perturbed[li].set(r, c, orig - step);
                let fm = objective(&perturbed)?;
                perturbed[li].set(r, c, orig);
                let numeric = ((fp - fm) / (step + step)).to_f64_lossy();
                let a = analytic.get(r, c).to_f64_lossy();
                let rel = (a - numeric).abs() / numeric.abs().max(1.0);
                if rel > max_rel_err {
                    max_rel_err = rel;
                }
            }
        }
    }

    Ok(GradCheckReport {
        op_name: op_name.to_string(),
        max_rel_err,
        h,
        shapes: leaves.iter().map(|m| m.shape()).collect(),
    })
}
