//! Named finite-difference checks covering every tape op plus the
//! end-to-end attention composites. The CLI's `gradcheck` subcommand and
//! the acceptance suite both run this registry.

use crate::attention::graph::{multi_head_attention_graph, MhaWeightIds};
use crate::attention::AttentionConfig;
use crate::autodiff::{finite_diff_check, GradCheckReport, NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::rng::stream_rng;
use crate::linalg::{randn_matrix, Matrix};

type Builder = fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>;

struct Case {
    name: &'static str,
    builder: Builder,
    /// Leaf shapes; values are standard normal unless `safe_inputs`.
    shapes: &'static [(usize, usize)],
    /// Shift leaf values away from 0 (for kinked or divided-by ops).
    safe_inputs: bool,
}

fn b_matmul(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.matmul(l[0], l[1])
}
fn b_hadamard(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.hadamard(l[0], l[1])
}
fn b_add(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.add(l[0], l[1])
}
fn b_sub(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.sub(l[0], l[1])
}
fn b_scale(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.scale(l[0], 1.7)
}
fn b_transpose(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.transpose(l[0])
}
fn b_softmax(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.softmax_rows(l[0])
}
fn b_elu1(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.kernel_elu1(l[0])
}
fn b_relu(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.relu(l[0])
}
fn b_tanh(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.tanh(l[0])
}
fn b_gelu(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.gelu(l[0])
}
fn b_mean_rows(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.mean_rows(l[0])
}
fn b_scale_rows(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.scale_rows(l[0], l[1])
}
fn b_div_rows(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    // Denominator passes through elu+1 so it stays positive under
    // finite-difference perturbation.
    let d = t.kernel_elu1(l[1])?;
    t.div_rows(l[0], d)
}
fn b_add_bias(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.add_bias(l[0], l[1])
}
fn b_slice_cols(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.slice_cols(l[0], 1, 2)
}
fn b_concat_cols(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.concat_cols(&[l[0], l[1]])
}
fn b_unfold(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.unfold3x3(l[0], 4, 4, 1)
}
fn b_unfold_s2(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.unfold3x3(l[0], 4, 4, 2)
}
fn b_depthwise(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.depthwise_conv3x3(l[0], l[1], 4, 4)
}
fn b_layer_norm(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.layer_norm(l[0], l[1], l[2])
}
fn b_cross_entropy(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    t.cross_entropy_mean(l[0], &[0, 2, 3])
}
fn b_rala_block(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    let cfg = AttentionConfig::rala(2, 2);
    let w = MhaWeightIds {
        w_q: l[1],
        b_q: l[2],
        w_k: l[3],
        b_k: l[4],
        w_v: l[5],
        b_v: l[6],
        w_phi: Some(l[7]),
        b_phi: Some(l[8]),
        w_out: l[9],
        b_out: l[10],
    };
    multi_head_attention_graph(t, l[0], &cfg, &w, None)
}
fn b_rala_normalized_core(t: &mut Tape<f64>, l: &[NodeId]) -> Result<NodeId> {
    use crate::attention::graph::rala_head_graph;
    let kq = t.kernel_elu1(l[0])?;
    let kk = t.kernel_elu1(l[1])?;
    Ok(rala_head_graph(t, l[0], kq, kk, l[2], Some(l[3]), true, true)?.output)
}

const C: usize = 4;
const CASES: &[Case] = &[
    Case { name: "matmul", builder: b_matmul, shapes: &[(3, 4), (4, 2)], safe_inputs: false },
    Case { name: "hadamard", builder: b_hadamard, shapes: &[(3, 4), (3, 4)], safe_inputs: false },
    Case { name: "add", builder: b_add, shapes: &[(3, 4), (3, 4)], safe_inputs: false },
    Case { name: "sub", builder: b_sub, shapes: &[(3, 4), (3, 4)], safe_inputs: false },
    Case { name: "scale", builder: b_scale, shapes: &[(3, 4)], safe_inputs: false },
    Case { name: "transpose", builder: b_transpose, shapes: &[(3, 4)], safe_inputs: false },
    Case { name: "softmax_rows", builder: b_softmax, shapes: &[(3, 4)], safe_inputs: false },
    Case { name: "kernel_elu1", builder: b_elu1, shapes: &[(3, 4)], safe_inputs: true },
    Case { name: "relu", builder: b_relu, shapes: &[(3, 4)], safe_inputs: true },
    Case { name: "tanh", builder: b_tanh, shapes: &[(3, 4)], safe_inputs: false },
    Case { name: "gelu", builder: b_gelu, shapes: &[(3, 4)], safe_inputs: false },
    Case { name: "mean_rows", builder: b_mean_rows, shapes: &[(3, 4)], safe_inputs: false },
    Case { name: "scale_rows", builder: b_scale_rows, shapes: &[(3, 4), (3, 1)], safe_inputs: false },
    Case { name: "div_rows", builder: b_div_rows, shapes: &[(3, 4), (3, 1)], safe_inputs: false },
    Case { name: "add_bias", builder: b_add_bias, shapes: &[(3, 4), (1, 4)], safe_inputs: false },
    Case { name: "slice_cols", builder: b_slice_cols, shapes: &[(3, 4)], safe_inputs: false },
    Case { name: "concat_cols", builder: b_concat_cols, shapes: &[(3, 2), (3, 3)], safe_inputs: false },
    Case { name: "unfold3x3", builder: b_unfold, shapes: &[(16, 2)], safe_inputs: false },
    Case { name: "unfold3x3_stride2", builder: b_unfold_s2, shapes: &[(16, 2)], safe_inputs: false },
    Case { name: "depthwise_conv3x3", builder: b_depthwise, shapes: &[(16, 2), (9, 2)], safe_inputs: false },
    Case { name: "layer_norm", builder: b_layer_norm, shapes: &[(3, 4), (1, 4), (1, 4)], safe_inputs: false },
    Case { name: "cross_entropy_mean", builder: b_cross_entropy, shapes: &[(3, 5)], safe_inputs: false },
    Case {
        name: "rala_attention",
        builder: b_rala_normalized_core,
        shapes: &[(6, C), (6, C), (6, C), (6, C)],
        safe_inputs: false,
    },
    Case {
        name: "rala_block",
        builder: b_rala_block,
        shapes: &[
            (6, C), // x
            (C, C), (1, C), // q
            (C, C), (1, C), // k
            (C, C), (1, C), // v
            (C, C), (1, C), // phi
            (C, C), (1, C), // out
        ],
        safe_inputs: false,
    },
];

pub fn op_names() -> Vec<&'static str> {
    CASES.iter().map(|c| c.name).collect()
}

/// Keep standard-normal values but push each entry at least 0.3 from the
/// origin, where kinked ops break central differences.
fn away_from_zero(m: Matrix<f64>) -> Matrix<f64> {
    m.map(|x| x + 0.3 * x.signum())
}

/// Worst case over `trials` seeded input draws.
pub fn run_case(name: &str, trials: usize, h: f64, seed: u64) -> Result<GradCheckReport> {
    let case = CASES
        .iter()
        .find(|c| c.name == name)
        .ok_or_else(|| Error::invalid("gradcheck", format!("unknown op '{name}'")))?;
    if trials == 0 {
        return Err(Error::invalid("gradcheck", "trials must be >= 1"));
    }
    let mut worst: Option<GradCheckReport> = None;
    for trial in 0..trials {
        let mut rng = stream_rng(seed, trial as u64);
        let leaves: Vec<Matrix<f64>> = case
            .shapes
            .iter()
            .map(|&(r, c)| {
                let m = randn_matrix(r, c, &mut rng);
                if case.safe_inputs {
                    away_from_zero(m)
                } else {
                    m
                }
            })
            .collect();
        let report = finite_diff_check(case.name, case.builder, &leaves, h, seed ^ trial as u64)?;
        worst = Some(match worst {
            Some(w) if w.max_rel_err >= report.max_rel_err => w,
            _ => report,
        });
    }
    Ok(worst.expect("at least one trial"))
}

pub fn run_all(trials: usize, h: f64, seed: u64) -> Result<Vec<GradCheckReport>> {
    CASES
        .iter()
        .map(|c| run_case(c.name, trials, h, seed))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_registered_op_passes_at_tolerance() {
        for report in run_all(3, 1e-5, 0).unwrap() {
            assert!(
                report.max_rel_err < 1e-4,
                "{}: {}",
                report.op_name,
                report.max_rel_err
            );
        }
    }

    #[test]
    fn unknown_op_is_a_usage_error() {
        assert!(run_case("not_an_op", 1, 1e-5, 0).is_err());
    }

    #[test]
    fn registry_contains_the_composites() {
        let names = op_names();
        assert!(names.contains(&"rala_attention"));
        assert!(names.contains(&"rala_block"));
        assert!(names.contains(&"matmul"));
    }
}
