//! Differentiable builders for the attention variants. Every builder
//! composes the same linalg primitives in the same order as the plain
//! functions in the parent module, so tape and non-tape forwards agree
//! bit for bit.

use crate::attention::{AttentionConfig, Kernel, Phi, Variant};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct MhaWeightIds {
    pub w_q: NodeId,
    pub b_q: NodeId,
    pub w_k: NodeId,
    pub b_k: NodeId,
    pub w_v: NodeId,
    pub b_v: NodeId,
    pub w_phi: Option<NodeId>,
    pub b_phi: Option<NodeId>,
    pub w_out: NodeId,
    pub b_out: NodeId,
}

/// Node ids of the four matrices the rank analysis inspects, for one head.
#[derive(Debug, Clone, Copy)]
pub struct HeadTraceIds {
    pub kappa_q: NodeId,
    pub kv_buffer: NodeId,
    pub pre_modulation: NodeId,
    pub output: NodeId,
}

fn apply_kernel<T: Scalar>(tape: &mut Tape<T>, kernel: Kernel, m: NodeId) -> Result<NodeId> {
    match kernel {
        Kernel::Elu1 => tape.kernel_elu1(m),
        Kernel::Relu => tape.relu(m),
        Kernel::SoftmaxRows => tape.softmax_rows(m),
    }
}

/// Mirror of `rala_core`: alpha, buffer, normalization, modulation.
#[allow(clippy::too_many_arguments)]
pub(crate) fn rala_head_graph<T: Scalar>(
    tape: &mut Tape<T>,
    q_for_alpha: NodeId,
    kappa_q: NodeId,
    kappa_k: NodeId,
    v: NodeId,
    phi_x: Option<NodeId>,
    kv_augment: bool,
    normalize: bool,
) -> Result<HeadTraceIds> {
    let n = tape.value(kappa_k).rows();
    let alpha_row = if kv_augment {
        let qg = tape.mean_rows(q_for_alpha)?;
        let kk_t = tape.transpose(kappa_k)?;
        let scores = tape.matmul(qg, kk_t)?;
        let sm = tape.softmax_rows(scores)?;
        tape.scale(sm, T::from_config(n as f64))?
    } else {
        tape.leaf(Matrix::ones(1, n))
    };
    let alpha_col = tape.transpose(alpha_row)?;
    let weighted = tape.scale_rows(kappa_k, alpha_col)?;
    let weighted_t = tape.transpose(weighted)?;
    let buffer = tape.matmul(weighted_t, v)?;
    let key_sum = tape.matmul(alpha_row, kappa_k)?;
    let raw = tape.matmul(kappa_q, buffer)?;
    let pre_modulation = if normalize {
        let key_sum_t = tape.transpose(key_sum)?;
        let denom = tape.matmul(kappa_q, key_sum_t)?;
        tape.div_rows(raw, denom)?
    } else {
        raw
    };
    let output = match phi_x {
        Some(p) => tape.hadamard(p, pre_modulation)?,
        None => pre_modulation,
    };
    Ok(HeadTraceIds {
        kappa_q,
        kv_buffer: buffer,
        pre_modulation,
        output,
    })
}

fn phi_graph<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    phi: Phi,
    w_phi: Option<NodeId>,
    b_phi: Option<NodeId>,
) -> Result<NodeId> {
    match phi {
        Phi::LinearProjection => {
            let (w, b) = match (w_phi, b_phi) {
                (Some(w), Some(b)) => (w, b),
                _ => {
                    return Err(Error::invalid(
                        "attention_graph",
                        "phi=linear_projection needs w_phi/b_phi",
                    ))
                }
            };
            let p = tape.matmul(x, w)?;
            tape.add_bias(p, b)
        }
        Phi::Identity => Ok(x),
        Phi::Tanh => tape.tanh(x),
    }
}

/// Single-head RALA on the tape; mirrors `rala_attention`.
pub fn rala_attention_graph<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    config: &AttentionConfig,
    w_phi: Option<NodeId>,
    b_phi: Option<NodeId>,
) -> Result<NodeId> {
    let phi_x = if config.out_augment {
        Some(phi_graph(tape, x, config.phi, w_phi, b_phi)?)
    } else {
        None
    };
    let kappa_q = apply_kernel(tape, config.kernel, q)?;
    let kappa_k = apply_kernel(tape, config.kernel, k)?;
    Ok(rala_head_graph(
        tape,
        q,
        kappa_q,
        kappa_k,
        v,
        phi_x,
        config.kv_augment,
        config.normalize,
    )?
    .output)
}

fn softmax_head_graph<T: Scalar>(
    tape: &mut Tape<T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
) -> Result<NodeId> {
    let d = tape.value(q).cols() as f64;
    let scaled_q = tape.scale(q, T::from_config(1.0 / d.sqrt()))?;
    let k_t = tape.transpose(k)?;
    let scores = tape.matmul(scaled_q, k_t)?;
    let sm = tape.softmax_rows(scores)?;
    tape.matmul(sm, v)
}

fn efficient_head_graph<T: Scalar>(
    tape: &mut Tape<T>,
    q: NodeId,
    k: NodeId,
    v: NodeId,
) -> Result<NodeId> {
    let rho_q = tape.softmax_rows(q)?;
    let k_t = tape.transpose(k)?;
    let sm = tape.softmax_rows(k_t)?;
    let rho_k = tape.transpose(sm)?;
    let rho_k_t = tape.transpose(rho_k)?;
    let buffer = tape.matmul(rho_k_t, v)?;
    tape.matmul(rho_q, buffer)
}

/// Multi-head wrapper on the tape; mirrors `multi_head_attention`. When
/// `trace_head0` is provided it receives the head-0 analysis node ids
/// (RALA and vanilla-linear variants only).
pub fn multi_head_attention_graph<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    config: &AttentionConfig,
    w: &MhaWeightIds,
    mut trace_head0: Option<&mut Option<HeadTraceIds>>,
) -> Result<NodeId> {
    let c = tape.value(x).cols();
    if config.heads * config.head_dim != c {
        return Err(Error::invalid(
            "multi_head_attention",
            format!(
                "{} channels not equal to {} heads x {} head_dim",
                c, config.heads, config.head_dim
            ),
        ));
    }
    let q0 = tape.matmul(x, w.w_q)?;
    let q = tape.add_bias(q0, w.b_q)?;
    let k0 = tape.matmul(x, w.w_k)?;
    let k = tape.add_bias(k0, w.b_k)?;
    let v0 = tape.matmul(x, w.w_v)?;
    let v = tape.add_bias(v0, w.b_v)?;
    let needs_phi = config.variant == Variant::Rala && config.out_augment;
    let phi_x = if needs_phi {
        Some(phi_graph(tape, x, config.phi, w.w_phi, w.b_phi)?)
    } else {
        None
    };

    let d = config.head_dim;
    let mut head_outputs = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let qh = tape.slice_cols(q, h * d, d)?;
        let kh = tape.slice_cols(k, h * d, d)?;
        let vh = tape.slice_cols(v, h * d, d)?;
        let out = match config.variant {
            Variant::Softmax => softmax_head_graph(tape, qh, kh, vh)?,
            Variant::Efficient => efficient_head_graph(tape, qh, kh, vh)?,
            Variant::LinearVanilla | Variant::Rala => {
                let vanilla = config.variant == Variant::LinearVanilla;
                let phi_h = match phi_x {
                    Some(p) if !vanilla => Some(tape.slice_cols(p, h * d, d)?),
                    _ => None,
                };
                let kappa_q = apply_kernel(tape, config.kernel, qh)?;
                let kappa_k = apply_kernel(tape, config.kernel, kh)?;
                let parts = rala_head_graph(
                    tape,
                    qh,
                    kappa_q,
                    kappa_k,
                    vh,
                    phi_h,
                    !vanilla && config.kv_augment,
                    config.normalize,
                )?;
                if h == 0 {
                    if let Some(sink) = trace_head0.as_mut() {
                        **sink = Some(parts);
                    }
                }
                parts.output
            }
        };
        head_outputs.push(out);
    }
    let cat = tape.concat_cols(&head_outputs)?;
    let proj = tape.matmul(cat, w.w_out)?;
    tape.add_bias(proj, w.b_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{multi_head_attention, rala_attention, MhaWeights, PhiParams};
    use crate::linalg::{randn_matrix, seeded_rng};

    type M = Matrix<f64>;

    fn leaf_weights(tape: &mut Tape<f64>, w: &MhaWeights<f64>) -> MhaWeightIds {
        MhaWeightIds {
            w_q: tape.leaf(w.w_q.clone()),
            b_q: tape.leaf(w.b_q.clone()),
            w_k: tape.leaf(w.w_k.clone()),
            b_k: tape.leaf(w.b_k.clone()),
            w_v: tape.leaf(w.w_v.clone()),
            b_v: tape.leaf(w.b_v.clone()),
            w_phi: w.w_phi.clone().map(|m| tape.leaf(m)),
            b_phi: w.b_phi.clone().map(|m| tape.leaf(m)),
            w_out: tape.leaf(w.w_out.clone()),
            b_out: tape.leaf(w.b_out.clone()),
        }
    }

    #[test]
    fn single_head_rala_dual_path_is_bit_exact() {
        let mut rng = seeded_rng(41);
        let (n, d) = (6, 4);
        let x: M = randn_matrix(n, d, &mut rng);
        let q: M = randn_matrix(n, d, &mut rng);
        let k: M = randn_matrix(n, d, &mut rng);
        let v: M = randn_matrix(n, d, &mut rng);
        let w_phi: M = randn_matrix(d, d, &mut rng);
        let b_phi: M = randn_matrix(1, d, &mut rng);
        let cfg = crate::attention::AttentionConfig::rala(1, d);

        let phi = PhiParams {
            weight: w_phi.clone(),
            bias: b_phi.clone(),
        };
        let plain = rala_attention(&x, &q, &k, &v, &cfg, Some(&phi)).unwrap();

        let mut tape = Tape::new();
        let (xi, qi, ki, vi) = (
            tape.leaf(x),
            tape.leaf(q),
            tape.leaf(k),
            tape.leaf(v),
        );
        let wp = tape.leaf(w_phi);
        let bp = tape.leaf(b_phi);
        let out = rala_attention_graph(&mut tape, xi, qi, ki, vi, &cfg, Some(wp), Some(bp))
            .unwrap();
        // 0 ulp: identical bits on both paths.
        assert_eq!(tape.value(out), &plain);
    }

    #[test]
    fn multi_head_dual_path_is_bit_exact_across_variants() {
        let mut rng = seeded_rng(43);
        let (n, c) = (8, 8);
        let x: M = randn_matrix(n, c, &mut rng);
        let weights = crate::attention::tests::random_mha_weights(c, &mut rng, true);
        for variant in [
            Variant::Softmax,
            Variant::LinearVanilla,
            Variant::Efficient,
            Variant::Rala,
        ] {
            let cfg = AttentionConfig {
                variant,
                ..crate::attention::AttentionConfig::rala(2, 4)
            };
            let plain = multi_head_attention(&x, &cfg, &weights).unwrap();
            let mut tape = Tape::new();
            let xi = tape.leaf(x.clone());
            let ids = leaf_weights(&mut tape, &weights);
            let out = multi_head_attention_graph(&mut tape, xi, &cfg, &ids, None).unwrap();
            assert_eq!(tape.value(out), &plain, "variant {variant:?}");
        }
    }

    #[test]
    fn head_trace_exposes_expected_shapes() {
        let mut rng = seeded_rng(47);
        let (n, c, d) = (8, 8, 4);
        let x: M = randn_matrix(n, c, &mut rng);
        let weights = crate::attention::tests::random_mha_weights(c, &mut rng, true);
        let cfg = crate::attention::AttentionConfig::rala(2, d);
        let mut tape = Tape::new();
        let xi = tape.leaf(x);
        let ids = leaf_weights(&mut tape, &weights);
        let mut trace = None;
        multi_head_attention_graph(&mut tape, xi, &cfg, &ids, Some(&mut trace)).unwrap();
        let trace = trace.unwrap();
        assert_eq!(tape.value(trace.kappa_q).shape(), (n, d));
        assert_eq!(tape.value(trace.kv_buffer).shape(), (d, d));
        assert_eq!(tape.value(trace.pre_modulation).shape(), (n, d));
        assert_eq!(tape.value(trace.output).shape(), (n, d));
    }
}
