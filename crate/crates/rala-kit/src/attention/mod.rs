//! The four attention mechanisms: Softmax, vanilla linear, the
//! efficient-attention baseline, and rank-augmented linear attention (RALA),
//! plus the multi-head wrapper. Plain (tape-free) evaluation lives here; the
//! differentiable builders are in `graph`.

pub mod graph;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Softmax,
    LinearVanilla,
    Efficient,
    Rala,
}

impl std::str::FromStr for Variant {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "softmax" => Ok(Variant::Softmax),
            "linear_vanilla" => Ok(Variant::LinearVanilla),
            "efficient" => Ok(Variant::Efficient),
            "rala" => Ok(Variant::Rala),
            other => Err(format!("unknown variant '{other}'")),
        }
    }
}

/// Kernel applied to queries and keys in the linear variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    Elu1,
    Relu,
    SoftmaxRows,
}

impl Kernel {
    pub fn apply<T: Scalar>(self, m: &Matrix<T>) -> Matrix<T> {
        match self {
            Kernel::Elu1 => m.kernel_elu1(),
            Kernel::Relu => m.relu(),
            Kernel::SoftmaxRows => m.softmax_rows(),
        }
    }
}

/// Transformation applied to the input tokens before the output Hadamard
/// modulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phi {
    LinearProjection,
    Identity,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub variant: Variant,
    pub heads: usize,
    pub head_dim: usize,
    pub kernel: Kernel,
    pub phi: Phi,
    pub kv_augment: bool,
    pub out_augment: bool,
    pub normalize: bool,
}

impl AttentionConfig {
    pub fn rala(heads: usize, head_dim: usize) -> Self {
        AttentionConfig {
            variant: Variant::Rala,
            heads,
            head_dim,
            kernel: Kernel::Elu1,
            phi: Phi::LinearProjection,
            kv_augment: true,
            out_augment: true,
            normalize: true,
        }
    }
}

/// Per-token KV-buffer weights; sums to N by construction.
#[derive(Debug, Clone)]
pub struct AlphaWeights<T> {
    values: Vec<T>,
}

impl<T: Scalar> AlphaWeights<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        let n = values.len();
        let sum: f64 = values.iter().map(|v| v.to_f64_lossy()).sum();
        if (sum - n as f64).abs() > 1e-9 * (n as f64).max(1.0) {
            return Err(Error::invalid(
                "alpha_weights",
                format!("sum {sum} differs from N = {n}"),
            ));
        }
        if values.iter().any(|v| *v <= T::zero()) {
            return Err(Error::invalid("alpha_weights", "nonpositive weight"));
        }
        Ok(AlphaWeights { values })
    }

    pub fn uniform(n: usize) -> Self {
        AlphaWeights {
            values: vec![T::one(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn as_row(&self) -> Matrix<T> {
        Matrix::from_vec(1, self.values.len(), self.values.clone()).expect("sized")
    }

    pub fn as_column(&self) -> Matrix<T> {
        Matrix::from_vec(self.values.len(), 1, self.values.clone()).expect("sized")
    }
}

/// The d x d accumulator every query multiplies against, plus the weighted
/// key sum for the optional normalization denominator.
#[derive(Debug, Clone)]
pub struct KVBuffer<T> {
    /// sum_j alpha_j kappa(K_j)^T V_j, summed in index order.
    pub b: Matrix<T>,
    /// 1 x d row sum_j alpha_j kappa(K_j).
    pub key_sum: Matrix<T>,
}

/// Linear projection parameters for phi.
#[derive(Debug, Clone)]
pub struct PhiParams<T> {
    pub weight: Matrix<T>,
    pub bias: Matrix<T>,
}

fn check_same_shape<T: Scalar>(
    op: &'static str,
    mats: &[&Matrix<T>],
) -> Result<()> {
    let shape = mats[0].shape();
    for m in &mats[1..] {
        if m.shape() != shape {
            return Err(Error::shape(op, shape, m.shape()));
        }
    }
    Ok(())
}

/// Rows of softmax(Q K^T / sqrt(d)) convexly combine the value rows.
pub fn softmax_attention<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<Matrix<T>> {
    check_same_shape("softmax_attention", &[q, k, v])?;
    let d = q.cols() as f64;
    // Scaling Q instead of the N x N score matrix avoids a full pass over
    // the quadratic intermediate.
    let scaled_q = q.scale(T::from_config(1.0 / d.sqrt()));
    let scores = scaled_q.matmul(&k.transpose())?;
    scores.softmax_rows_owned().matmul(v)
}

/// Global-query token weights: alpha_j = N * softmax_j(Q_g kappa(K_j)^T),
/// with Q_g the mean of the raw query rows and no sqrt(d) scaling.
pub fn compute_alpha<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    kernel: Kernel,
) -> Result<AlphaWeights<T>> {
    check_same_shape("compute_alpha", &[q, k])?;
    let kappa_k = kernel.apply(k);
    alpha_from_kernelized(q, &kappa_k)
}

pub(crate) fn alpha_from_kernelized<T: Scalar>(
    q: &Matrix<T>,
    kappa_k: &Matrix<T>,
) -> Result<AlphaWeights<T>> {
    if q.cols() != kappa_k.cols() || q.rows() != kappa_k.rows() {
        return Err(Error::shape("compute_alpha", q.shape(), kappa_k.shape()));
    }
    let n = q.rows();
    let qg = q.mean_rows();
    let scores = qg.matmul(&kappa_k.transpose())?;
    let weights = scores.softmax_rows().scale(T::from_config(n as f64));
    AlphaWeights::new(weights.data().to_vec())
}

/// KV buffer from already-kernelized keys. B and key_sum are reduced in
/// index order 1..N.
pub(crate) fn kv_buffer_from_kernelized<T: Scalar>(
    kappa_k: &Matrix<T>,
    v: &Matrix<T>,
    alpha: &AlphaWeights<T>,
) -> Result<KVBuffer<T>> {
    if alpha.len() != kappa_k.rows() {
        return Err(Error::invalid(
            "build_kv_buffer",
            format!("{} alpha weights for {} tokens", alpha.len(), kappa_k.rows()),
        ));
    }
    if v.rows() != kappa_k.rows() {
        return Err(Error::shape("build_kv_buffer", kappa_k.shape(), v.shape()));
    }
    let weighted = kappa_k.scale_rows(&alpha.as_column())?;
    let b = weighted.transpose().matmul(v)?;
    let key_sum = alpha.as_row().matmul(kappa_k)?;
    Ok(KVBuffer { b, key_sum })
}

pub fn build_kv_buffer<T: Scalar>(
    k: &Matrix<T>,
    v: &Matrix<T>,
    alpha: &AlphaWeights<T>,
    kernel: Kernel,
) -> Result<KVBuffer<T>> {
    kv_buffer_from_kernelized(&kernel.apply(k), v, alpha)
}

/// Every intermediate the rank analysis wants to look at.
#[derive(Debug, Clone)]
pub struct RalaParts<T> {
    pub kappa_q: Matrix<T>,
    pub alpha: AlphaWeights<T>,
    pub buffer: KVBuffer<T>,
    pub pre_modulation: Matrix<T>,
    pub output: Matrix<T>,
}

/// Core of the augmented output path over pre-kernelized queries and keys. `phi_x` is the
/// already-transformed modulation input; None means no output augmentation.
pub(crate) fn rala_core<T: Scalar>(
    q_for_alpha: &Matrix<T>,
    kappa_q: &Matrix<T>,
    kappa_k: &Matrix<T>,
    v: &Matrix<T>,
    phi_x: Option<&Matrix<T>>,
    kv_augment: bool,
    normalize: bool,
) -> Result<RalaParts<T>> {
    let alpha = if kv_augment {
        alpha_from_kernelized(q_for_alpha, kappa_k)?
    } else {
        AlphaWeights::uniform(kappa_k.rows())
    };
    let buffer = kv_buffer_from_kernelized(kappa_k, v, &alpha)?;
    let raw = kappa_q.matmul(&buffer.b)?;
    let pre_modulation = if normalize {
        let denom = kappa_q.matmul(&buffer.key_sum.transpose())?;
        raw.div_rows(&denom)?
    } else {
        raw
    };
    let output = match phi_x {
        Some(p) => p.hadamard(&pre_modulation)?,
        None => pre_modulation.clone(),
    };
    Ok(RalaParts {
        kappa_q: kappa_q.clone(),
        alpha,
        buffer,
        pre_modulation,
        output,
    })
}

fn phi_transform<T: Scalar>(
    x: &Matrix<T>,
    phi: Phi,
    params: Option<&PhiParams<T>>,
) -> Result<Matrix<T>> {
    match phi {
        Phi::LinearProjection => {
            let p = params.ok_or_else(|| {
                Error::invalid("rala_attention", "phi=linear_projection needs phi_params")
            })?;
            x.matmul(&p.weight)?.add_bias(&p.bias)
        }
        Phi::Identity => Ok(x.clone()),
        Phi::Tanh => Ok(x.tanh_map()),
    }
}

/// Kernelized linear attention. alpha is fixed to 1, so this is RALA
/// with both augmentations disabled.
pub fn linear_attention_vanilla<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    kernel: Kernel,
    normalize: bool,
) -> Result<Matrix<T>> {
    check_same_shape("linear_attention_vanilla", &[q, k, v])?;
    let parts = rala_core(
        q,
        &kernel.apply(q),
        &kernel.apply(k),
        v,
        None,
        false,
        normalize,
    )?;
    Ok(parts.output)
}

/// Efficient-attention baseline: row-softmaxed Q times (column-softmaxed K)^T V.
pub fn efficient_attention_baseline<T: Scalar>(
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
) -> Result<Matrix<T>> {
    check_same_shape("efficient_attention", &[q, k, v])?;
    let rho_q = q.softmax_rows();
    let rho_k = k.transpose().softmax_rows().transpose();
    let buffer = rho_k.transpose().matmul(v)?;
    rho_q.matmul(&buffer)
}

/// Y_i = phi(X_i) (Hadamard) kappa(Q_i) B, with the alpha-weighted
/// buffer when kv_augment is on and optional row normalization.
pub fn rala_attention<T: Scalar>(
    x: &Matrix<T>,
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    config: &AttentionConfig,
    phi_params: Option<&PhiParams<T>>,
) -> Result<Matrix<T>> {
    Ok(rala_attention_parts(x, q, k, v, config, phi_params)?.output)
}

pub fn rala_attention_parts<T: Scalar>(
    x: &Matrix<T>,
    q: &Matrix<T>,
    k: &Matrix<T>,
    v: &Matrix<T>,
    config: &AttentionConfig,
    phi_params: Option<&PhiParams<T>>,
) -> Result<RalaParts<T>> {
    check_same_shape("rala_attention", &[x, q, k, v])?;
    let phi_x = if config.out_augment {
        Some(phi_transform(x, config.phi, phi_params)?)
    } else {
        None
    };
    rala_core(
        q,
        &config.kernel.apply(q),
        &config.kernel.apply(k),
        v,
        phi_x.as_ref(),
        config.kv_augment,
        config.normalize,
    )
}

/// Projection weights for the multi-head wrapper. All projections are
/// C x C with 1 x C biases; phi is present only for phi=linear_projection.
#[derive(Debug, Clone)]
pub struct MhaWeights<T> {
    pub w_q: Matrix<T>,
    pub b_q: Matrix<T>,
    pub w_k: Matrix<T>,
    pub b_k: Matrix<T>,
    pub w_v: Matrix<T>,
    pub b_v: Matrix<T>,
    pub w_phi: Option<Matrix<T>>,
    pub b_phi: Option<Matrix<T>>,
    pub w_out: Matrix<T>,
    pub b_out: Matrix<T>,
}

/// Project, split channelwise into heads, run the configured variant per
/// head (alpha independently per head), concatenate, project out.
pub fn multi_head_attention<T: Scalar>(
    x: &Matrix<T>,
    config: &AttentionConfig,
    w: &MhaWeights<T>,
) -> Result<Matrix<T>> {
    let c = x.cols();
    if config.heads * config.head_dim != c {
        return Err(Error::invalid(
            "multi_head_attention",
            format!(
                "{} channels not equal to {} heads x {} head_dim",
                c, config.heads, config.head_dim
            ),
        ));
    }
    let q = x.matmul(&w.w_q)?.add_bias(&w.b_q)?;
    let k = x.matmul(&w.w_k)?.add_bias(&w.b_k)?;
    let v = x.matmul(&w.w_v)?.add_bias(&w.b_v)?;
    let needs_phi = config.variant == Variant::Rala && config.out_augment;
    let phi_x = if needs_phi {
        Some(match config.phi {
            Phi::LinearProjection => {
                let (wp, bp) = match (&w.w_phi, &w.b_phi) {
                    (Some(wp), Some(bp)) => (wp, bp),
                    _ => {
                        return Err(Error::invalid(
                            "multi_head_attention",
                            "phi=linear_projection needs w_phi/b_phi",
                        ))
                    }
                };
                x.matmul(wp)?.add_bias(bp)?
            }
            Phi::Identity => x.clone(),
            Phi::Tanh => x.tanh_map(),
        })
    } else {
        None
    };

    let d = config.head_dim;
    let mut head_outputs = Vec::with_capacity(config.heads);
    for h in 0..config.heads {
        let qh = q.slice_cols(h * d, d)?;
        let kh = k.slice_cols(h * d, d)?;
        let vh = v.slice_cols(h * d, d)?;
        let out = match config.variant {
            Variant::Softmax => softmax_attention(&qh, &kh, &vh)?,
            Variant::LinearVanilla => {
                linear_attention_vanilla(&qh, &kh, &vh, config.kernel, config.normalize)?
            }
            Variant::Efficient => efficient_attention_baseline(&qh, &kh, &vh)?,
            Variant::Rala => {
                let phi_h = match &phi_x {
                    Some(p) => Some(p.slice_cols(h * d, d)?),
                    None => None,
                };
                rala_core(
                    &qh,
                    &config.kernel.apply(&qh),
                    &config.kernel.apply(&kh),
                    &vh,
                    phi_h.as_ref(),
                    config.kv_augment,
                    config.normalize,
                )?
                .output
            }
        };
        head_outputs.push(out);
    }
    let refs: Vec<&Matrix<T>> = head_outputs.iter().collect();
    Matrix::concat_cols(&refs)?.matmul(&w.w_out)?.add_bias(&w.b_out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::linalg::{randn_matrix, seeded_rng};

    type M = Matrix<f64>;

    #[test]
    fn softmax_attention_single_token_returns_value() {
        let q = M::from_rows(&[vec![0.3, -1.0]]).unwrap();
        let k = M::from_rows(&[vec![2.0, 0.5]]).unwrap();
        let v = M::from_rows(&[vec![7.0, -3.0]]).unwrap();
        let y = softmax_attention(&q, &k, &v).unwrap();
        assert!(y.max_abs_diff(&v) < 1e-15);
    }

    #[test]
    fn softmax_attention_orthogonal_queries_average_values() {
        // Q K^T = 0 gives uniform weights, so every output row is the mean
        // of the value rows.
        let q = M::from_rows(&[vec![1.0, 0.0], vec![2.0, 0.0]]).unwrap();
        let k = M::from_rows(&[vec![0.0, 1.0], vec![0.0, -3.0]]).unwrap();
        let v = M::from_rows(&[vec![2.0, 4.0], vec![6.0, 0.0]]).unwrap();
        let y = softmax_attention(&q, &k, &v).unwrap();
        for r in 0..2 {
            assert!((y.get(r, 0) - 4.0).abs() < 1e-14);
            assert!((y.get(r, 1) - 2.0).abs() < 1e-14);
        }
    }

    #[test]
    fn alpha_uniform_for_identical_keys() {
        let mut rng = seeded_rng(3);
        let q: M = randn_matrix(4, 3, &mut rng);
        let k_row: M = randn_matrix(1, 3, &mut rng);
        let k = M::from_rows(&[
            k_row.row(0).to_vec(),
            k_row.row(0).to_vec(),
            k_row.row(0).to_vec(),
            k_row.row(0).to_vec(),
        ])
        .unwrap();
        let alpha = compute_alpha(&q, &k, Kernel::Elu1).unwrap();
        for &a in alpha.values() {
            assert!((a - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn alpha_hand_case_ln3() {
        // kernel = relu, keys [1, -1] give kappa(K) = [1, 0]; queries with
        // mean ln 3 give scores [ln 3, 0], so alpha = [1.5, 0.5].
        let ln3 = 3.0f64.ln();
        let q = M::from_rows(&[vec![ln3], vec![ln3]]).unwrap();
        let k = M::from_rows(&[vec![1.0], vec![-1.0]]).unwrap();
        let alpha = compute_alpha(&q, &k, Kernel::Relu).unwrap();
        assert!((alpha.values()[0] - 1.5).abs() < 1e-12);
        assert!((alpha.values()[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn alpha_sums_to_n() {
        let mut rng = seeded_rng(11);
        let q: M = randn_matrix(16, 8, &mut rng);
        let k: M = randn_matrix(16, 8, &mut rng);
        let alpha = compute_alpha(&q, &k, Kernel::Elu1).unwrap();
        let sum: f64 = alpha.values().iter().sum();
        assert!((sum - 16.0).abs() < 1e-9);
    }

    #[test]
    fn kv_buffer_uniform_alpha_matches_unweighted() {
        let mut rng = seeded_rng(13);
        let k: M = randn_matrix(8, 4, &mut rng);
        let v: M = randn_matrix(8, 4, &mut rng);
        let buf = build_kv_buffer(&k, &v, &AlphaWeights::uniform(8), Kernel::Elu1).unwrap();
        let plain = k.kernel_elu1().transpose().matmul(&v).unwrap();
        assert_eq!(buf.b, plain);
    }

    #[test]
    fn kv_buffer_single_token_rank_one() {
        let k = M::from_rows(&[vec![0.2, -0.4, 1.0]]).unwrap();
        let v = M::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let buf = build_kv_buffer(&k, &v, &AlphaWeights::uniform(1), Kernel::Elu1).unwrap();
        let r = crate::linalg::numerical_rank(&buf.b, 1e-6).unwrap();
        assert!(r <= 1);
        assert!(buf.key_sum.data().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn vanilla_single_token_is_value() {
        let q = M::from_rows(&[vec![0.1, 0.2]]).unwrap();
        let k = M::from_rows(&[vec![-0.3, 0.8]]).unwrap();
        let v = M::from_rows(&[vec![5.0, -2.0]]).unwrap();
        let y = linear_attention_vanilla(&q, &k, &v, Kernel::Elu1, true).unwrap();
        assert!(y.max_abs_diff(&v) < 1e-12);
    }

    #[test]
    fn efficient_single_token_is_value_and_stays_finite() {
        let q = M::from_rows(&[vec![1000.0, -1000.0]]).unwrap();
        let k = M::from_rows(&[vec![-1000.0, 1000.0]]).unwrap();
        let v = M::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let y = efficient_attention_baseline(&q, &k, &v).unwrap();
        assert!(y.is_finite());
        assert!(y.max_abs_diff(&v) < 1e-12);
    }

    #[test]
    fn rala_degenerate_config_equals_vanilla_bitwise() {
        let mut rng = seeded_rng(17);
        let x: M = randn_matrix(6, 4, &mut rng);
        let q: M = randn_matrix(6, 4, &mut rng);
        let k: M = randn_matrix(6, 4, &mut rng);
        let v: M = randn_matrix(6, 4, &mut rng);
        let mut cfg = AttentionConfig::rala(1, 4);
        cfg.kv_augment = false;
        cfg.out_augment = false;
        let a = rala_attention(&x, &q, &k, &v, &cfg, None).unwrap();
        let b = linear_attention_vanilla(&q, &k, &v, Kernel::Elu1, true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rala_single_token_is_modulated_value() {
        let mut rng = seeded_rng(19);
        let x: M = randn_matrix(1, 3, &mut rng);
        let q: M = randn_matrix(1, 3, &mut rng);
        let k: M = randn_matrix(1, 3, &mut rng);
        let v: M = randn_matrix(1, 3, &mut rng);
        let mut cfg = AttentionConfig::rala(1, 3);
        cfg.phi = Phi::Tanh;
        let y = rala_attention(&x, &q, &k, &v, &cfg, None).unwrap();
        let want = x.tanh_map().hadamard(&v).unwrap();
        assert!(y.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn rala_missing_phi_params_is_an_error() {
        let m = M::ones(2, 2);
        let cfg = AttentionConfig::rala(1, 2);
        assert!(rala_attention(&m, &m, &m, &m, &cfg, None).is_err());
    }

    #[test]
    fn multi_head_single_head_reduces_to_projected_path() {
        let mut rng = seeded_rng(23);
        let c = 4;
        let x: M = randn_matrix(5, c, &mut rng);
        let w = random_mha_weights(c, &mut rng, true);
        let cfg = AttentionConfig::rala(1, c);
        let got = multi_head_attention(&x, &cfg, &w).unwrap();

        let q = x.matmul(&w.w_q).unwrap().add_bias(&w.b_q).unwrap();
        let k = x.matmul(&w.w_k).unwrap().add_bias(&w.b_k).unwrap();
        let v = x.matmul(&w.w_v).unwrap().add_bias(&w.b_v).unwrap();
        let phi = PhiParams {
            weight: w.w_phi.clone().unwrap(),
            bias: w.b_phi.clone().unwrap(),
        };
        let head = rala_attention(&x, &q, &k, &v, &cfg, Some(&phi)).unwrap();
        let want = head.matmul(&w.w_out).unwrap().add_bias(&w.b_out).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-14);
    }

    #[test]
    fn multi_head_two_heads_match_manual_slices() {
        let mut rng = seeded_rng(29);
        let (n, c, d) = (8, 8, 4);
        let x: M = randn_matrix(n, c, &mut rng);
        let w = random_mha_weights(c, &mut rng, true);
        let cfg = AttentionConfig {
            heads: 2,
            head_dim: d,
            ..AttentionConfig::rala(2, d)
        };
        let got = multi_head_attention(&x, &cfg, &w).unwrap();

        let q = x.matmul(&w.w_q).unwrap().add_bias(&w.b_q).unwrap();
        let k = x.matmul(&w.w_k).unwrap().add_bias(&w.b_k).unwrap();
        let v = x.matmul(&w.w_v).unwrap().add_bias(&w.b_v).unwrap();
        let phi_x = x
            .matmul(w.w_phi.as_ref().unwrap())
            .unwrap()
            .add_bias(w.b_phi.as_ref().unwrap())
            .unwrap();
        let mut heads = Vec::new();
        for h in 0..2 {
            let parts = rala_core(
                &q.slice_cols(h * d, d).unwrap(),
                &q.slice_cols(h * d, d).unwrap().kernel_elu1(),
                &k.slice_cols(h * d, d).unwrap().kernel_elu1(),
                &v.slice_cols(h * d, d).unwrap(),
                Some(&phi_x.slice_cols(h * d, d).unwrap()),
                true,
                true,
            )
            .unwrap();
            heads.push(parts.output);
        }
        let cat = M::concat_cols(&[&heads[0], &heads[1]]).unwrap();
        let want = cat.matmul(&w.w_out).unwrap().add_bias(&w.b_out).unwrap();
        assert!(got.max_abs_diff(&want) < 1e-12);
    }

    #[test]
    fn multi_head_rejects_indivisible_channels() {
        let x = M::ones(4, 6);
        let mut rng = seeded_rng(31);
        let w = random_mha_weights(6, &mut rng, false);
        let cfg = AttentionConfig {
            heads: 4,
            head_dim: 2,
            ..AttentionConfig::rala(4, 2)
        };
        assert!(multi_head_attention(&x, &cfg, &w).is_err());
    }

    pub(crate) fn random_mha_weights(
        c: usize,
        rng: &mut crate::linalg::SeededRng,
        with_phi: bool,
    ) -> MhaWeights<f64> {
        MhaWeights {
            w_q: randn_matrix(c, c, rng),
            b_q: randn_matrix(1, c, rng),
            w_k: randn_matrix(c, c, rng),
            b_k: randn_matrix(1, c, rng),
            w_v: randn_matrix(c, c, rng),
            b_v: randn_matrix(1, c, rng),
            w_phi: with_phi.then(|| randn_matrix(c, c, rng)),
            b_phi: with_phi.then(|| randn_matrix(1, c, rng)),
            w_out: randn_matrix(c, c, rng),
            b_out: randn_matrix(1, c, rng),
        }
    }
}
