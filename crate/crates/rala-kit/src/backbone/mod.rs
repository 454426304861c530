//! The hierarchical backbone: CPE -> attention -> FFN blocks stacked over
//! four stages with 1/4, 1/8, 1/16, 1/32 downsampling, plus exact analytic
//! parameter and FLOP counters.

mod cost;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::attention::graph::{multi_head_attention_graph, HeadTraceIds, MhaWeightIds};
use crate::attention::{AttentionConfig, Kernel, Phi, Variant};
use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{Matrix, SeededRng};
use crate::scalar::Scalar;

pub use cost::{count_costs, count_flops, count_params, CostReport, SegmentCost};

fn default_true() -> bool {
    true
}

/// Full model description. Serializes to JSON with exactly these field
/// names; presets are addressable as ravlt-t/s/b/l and toy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub stage_blocks: [usize; 4],
    pub stage_channels: [usize; 4],
    pub stage_heads: [usize; 4],
    pub ffn_ratio: f64,
    pub num_classes: usize,
    pub input_resolution: usize,
    pub cpe_enabled: bool,
    pub kv_augment: bool,
    pub out_augment: bool,
    pub kernel: Kernel,
    pub phi: Phi,
    pub normalize: bool,
    #[serde(default = "default_true")]
    pub prenorm: bool,
}

pub const PRESET_NAMES: [&str; 5] = ["ravlt-t", "ravlt-s", "ravlt-b", "ravlt-l", "toy"];

impl ModelConfig {
    fn base(
        stage_blocks: [usize; 4],
        stage_channels: [usize; 4],
        stage_heads: [usize; 4],
    ) -> Self {
        ModelConfig {
            stage_blocks,
            stage_channels,
            stage_heads,
            ffn_ratio: 4.0,
            num_classes: 1000,
            input_resolution: 224,
            cpe_enabled: true,
            kv_augment: true,
            out_augment: true,
            kernel: Kernel::Elu1,
            phi: Phi::LinearProjection,
            normalize: true,
            prenorm: true,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "ravlt-t" => Ok(Self::base([2, 2, 6, 2], [64, 128, 256, 512], [1, 2, 4, 8])),
            "ravlt-s" => Ok(Self::base([3, 5, 9, 3], [64, 128, 320, 512], [1, 2, 5, 8])),
            "ravlt-b" => Ok(Self::base([4, 6, 12, 6], [96, 192, 384, 512], [1, 2, 6, 8])),
            "ravlt-l" => Ok(Self::base(
                [4, 7, 19, 8],
                [96, 192, 448, 640],
                [1, 2, 7, 10],
            )),
            "toy" => {
                let mut cfg = Self::base([1, 1, 2, 1], [16, 32, 64, 128], [1, 1, 2, 4]);
                cfg.num_classes = 10;
                cfg.input_resolution = 64;
                Ok(cfg)
            }
            other => Err(Error::invalid(
                "preset",
                format!("unknown preset '{other}' (expected one of {PRESET_NAMES:?})"),
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..4 {
            if self.stage_heads[i] == 0 || self.stage_channels[i] % self.stage_heads[i] != 0 {
                return Err(Error::invalid(
                    "model_config",
                    format!(
                        "stage {i}: {} channels not divisible by {} heads",
                        self.stage_channels[i], self.stage_heads[i]
                    ),
                ));
            }
        }
        if self.input_resolution % 32 != 0 {
            return Err(Error::invalid(
                "model_config",
                format!("resolution {} not divisible by 32", self.input_resolution),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::invalid("model_config", "need at least 2 classes"));
        }
        Ok(())
    }

    pub fn attention_config(&self, stage: usize, variant: Variant) -> AttentionConfig {
        AttentionConfig {
            variant,
            heads: self.stage_heads[stage],
            head_dim: self.stage_channels[stage] / self.stage_heads[stage],
            kernel: self.kernel,
            phi: self.phi,
            kv_augment: self.kv_augment,
            out_augment: self.out_augment,
            normalize: self.normalize,
        }
    }

    pub fn ffn_hidden(&self, stage: usize) -> usize {
        (self.stage_channels[stage] as f64 * self.ffn_ratio).round() as usize
    }

    fn uses_phi_projection(&self) -> bool {
        self.out_augment && self.phi == Phi::LinearProjection
    }
}

/// Ordered, named weight store. Iteration order is the forward-pass order
/// and is the contract for checkpoints and the optimizer.
#[derive(Debug, Clone)]
pub struct ModelWeights {
    names: Vec<String>,
    mats: Vec<Matrix<f64>>,
    by_name: HashMap<String, usize>,
}

impl ModelWeights {
    pub fn new() -> Self {
        ModelWeights {
            names: Vec::new(),
            mats: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix<f64>) {
        let name = name.into();
        self.by_name.insert(name.clone(), self.mats.len());
        self.names.push(name);
        self.mats.push(m);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<f64>> {
        self.by_name.get(name).map(|&i| &self.mats[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<f64>> {
        self.by_name.get(name).copied().map(move |i| &mut self.mats[i])
    }

    pub fn len(&self) -> usize {
        self.mats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mats.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix<f64>)> {
        self.names.iter().map(|n| n.as_str()).zip(&self.mats)
    }

    pub fn mats_mut(&mut self) -> &mut [Matrix<f64>] {
        &mut self.mats
    }

    pub fn total_elements(&self) -> u64 {
        self.mats
            .iter()
            .map(|m| (m.rows() * m.cols()) as u64)
            .sum()
    }
}

impl Default for ModelWeights {
    fn default() -> Self {
        Self::new()
    }
}

/// Truncated normal, std 0.02, resampled beyond two sigma (DeiT-style init).
fn trunc_normal<T: Scalar>(rows: usize, cols: usize, rng: &mut SeededRng) -> Matrix<T> {
    use rand::Rng;
    use rand_distr::StandardNormal;
    let data = (0..rows * cols)
        .map(|_| {
            let mut z: f64 = rng.sample(StandardNormal);
            while z.abs() > 2.0 {
                z = rng.sample(StandardNormal);
            }
            T::from_config(z * 0.02)
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

/// Initialize all weights for the config, in forward order.
pub fn init_weights(config: &ModelConfig, rng: &mut SeededRng) -> Result<ModelWeights> {
    config.validate()?;
    let mut w = ModelWeights::new();
    let c0 = config.stage_channels[0];
    let c_half = (c0 / 2).max(1);
    w.push("stem.conv1.weight", trunc_normal(9 * 3, c_half, rng));
    w.push("stem.conv1.bias", Matrix::zeros(1, c_half));
    w.push("stem.conv2.weight", trunc_normal(9 * c_half, c0, rng));
    w.push("stem.conv2.bias", Matrix::zeros(1, c0));

    for s in 0..4 {
        let c = config.stage_channels[s];
        if s > 0 {
            let prev = config.stage_channels[s - 1];
            w.push(
                format!("stages.{s}.downsample.weight"),
                trunc_normal(9 * prev, c, rng),
            );
            w.push(format!("stages.{s}.downsample.bias"), Matrix::zeros(1, c));
        }
        for b in 0..config.stage_blocks[s] {
            let p = format!("stages.{s}.blocks.{b}");
            if config.cpe_enabled {
                w.push(format!("{p}.cpe.weight"), trunc_normal(9, c, rng));
                w.push(format!("{p}.cpe.bias"), Matrix::zeros(1, c));
            }
            w.push(format!("{p}.norm1.gamma"), Matrix::ones(1, c));
            w.push(format!("{p}.norm1.beta"), Matrix::zeros(1, c));
            for proj in ["q", "k", "v"] {
                w.push(format!("{p}.attn.w_{proj}"), trunc_normal(c, c, rng));
                w.push(format!("{p}.attn.b_{proj}"), Matrix::zeros(1, c));
            }
            if config.uses_phi_projection() {
                w.push(format!("{p}.attn.w_phi"), trunc_normal(c, c, rng));
                w.push(format!("{p}.attn.b_phi"), Matrix::zeros(1, c));
            }
            w.push(format!("{p}.attn.w_out"), trunc_normal(c, c, rng));
            w.push(format!("{p}.attn.b_out"), Matrix::zeros(1, c));
            w.push(format!("{p}.norm2.gamma"), Matrix::ones(1, c));
            w.push(format!("{p}.norm2.beta"), Matrix::zeros(1, c));
            let h = config.ffn_hidden(s);
            w.push(format!("{p}.ffn.w1"), trunc_normal(c, h, rng));
            w.push(format!("{p}.ffn.b1"), Matrix::zeros(1, h));
            w.push(format!("{p}.ffn.w2"), trunc_normal(h, c, rng));
            w.push(format!("{p}.ffn.b2"), Matrix::zeros(1, c));
        }
    }
    let c3 = config.stage_channels[3];
    w.push("norm.gamma", Matrix::ones(1, c3));
    w.push("norm.beta", Matrix::zeros(1, c3));
    w.push("head.weight", trunc_normal(c3, config.num_classes, rng));
    w.push("head.bias", Matrix::zeros(1, config.num_classes));
    Ok(w)
}

/// Weight leaves bound into a tape, addressable by name.
pub struct WeightBinding {
    ids: Vec<NodeId>,
    by_name: HashMap<String, usize>,
}

impl WeightBinding {
    pub fn bind(tape: &mut Tape<f64>, weights: &ModelWeights) -> Self {
        let mut ids = Vec::with_capacity(weights.len());
        let mut by_name = HashMap::new();
        for (name, m) in weights.iter() {
            by_name.insert(name.to_string(), ids.len());
            ids.push(tape.leaf(m.clone()));
        }
        WeightBinding { ids, by_name }
    }

    pub fn id(&self, name: &str) -> Result<NodeId> {
        self.by_name
            .get(name)
            .map(|&i| self.ids[i])
            .ok_or_else(|| Error::invalid("weight_binding", format!("missing weight '{name}'")))
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

fn conv3x3_graph(
    tape: &mut Tape<f64>,
    x: NodeId,
    weight: NodeId,
    bias: NodeId,
    h: usize,
    w: usize,
    stride: usize,
) -> Result<NodeId> {
    let unfolded = tape.unfold3x3(x, h, w, stride)?;
    let y = tape.matmul(unfolded, weight)?;
    tape.add_bias(y, bias)
}

/// x + depthwise 3x3 conv of x (plus bias): the positional encoding.
pub fn cpe_graph(
    tape: &mut Tape<f64>,
    x: NodeId,
    weight: NodeId,
    bias: NodeId,
    h: usize,
    w: usize,
) -> Result<NodeId> {
    let dwc = tape.depthwise_conv3x3(x, weight, h, w)?;
    let dwc_b = tape.add_bias(dwc, bias)?;
    tape.add(x, dwc_b)
}

/// linear -> GELU -> linear.
pub fn ffn_graph(
    tape: &mut Tape<f64>,
    x: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
) -> Result<NodeId> {
    let h0 = tape.matmul(x, w1)?;
    let h = tape.add_bias(h0, b1)?;
    let g = tape.gelu(h)?;
    let y = tape.matmul(g, w2)?;
    tape.add_bias(y, b2)
}

struct BlockIds {
    cpe: Option<(NodeId, NodeId)>,
    norm1: (NodeId, NodeId),
    attn: MhaWeightIds,
    norm2: (NodeId, NodeId),
    ffn: (NodeId, NodeId, NodeId, NodeId),
}

fn block_ids(binding: &WeightBinding, prefix: &str, cpe: bool, phi: bool) -> Result<BlockIds> {
    Ok(BlockIds {
        cpe: if cpe {
            Some((
                binding.id(&format!("{prefix}.cpe.weight"))?,
                binding.id(&format!("{prefix}.cpe.bias"))?,
            ))
        } else {
            None
        },
        norm1: (
            binding.id(&format!("{prefix}.norm1.gamma"))?,
            binding.id(&format!("{prefix}.norm1.beta"))?,
        ),
        attn: MhaWeightIds {
            w_q: binding.id(&format!("{prefix}.attn.w_q"))?,
            b_q: binding.id(&format!("{prefix}.attn.b_q"))?,
            w_k: binding.id(&format!("{prefix}.attn.w_k"))?,
            b_k: binding.id(&format!("{prefix}.attn.b_k"))?,
            w_v: binding.id(&format!("{prefix}.attn.w_v"))?,
            b_v: binding.id(&format!("{prefix}.attn.b_v"))?,
            w_phi: if phi {
                Some(binding.id(&format!("{prefix}.attn.w_phi"))?)
            } else {
                None
            },
            b_phi: if phi {
                Some(binding.id(&format!("{prefix}.attn.b_phi"))?)
            } else {
                None
            },
            w_out: binding.id(&format!("{prefix}.attn.w_out"))?,
            b_out: binding.id(&format!("{prefix}.attn.b_out"))?,
        },
        norm2: (
            binding.id(&format!("{prefix}.norm2.gamma"))?,
            binding.id(&format!("{prefix}.norm2.beta"))?,
        ),
        ffn: (
            binding.id(&format!("{prefix}.ffn.w1"))?,
            binding.id(&format!("{prefix}.ffn.b1"))?,
            binding.id(&format!("{prefix}.ffn.w2"))?,
            binding.id(&format!("{prefix}.ffn.b2"))?,
        ),
    })
}

/// One CPE -> attention -> FFN block. Pre-norm by default; post-norm when
/// `prenorm` is off.
#[allow(clippy::too_many_arguments)]
fn block_graph(
    tape: &mut Tape<f64>,
    mut x: NodeId,
    ids: &BlockIds,
    attn_cfg: &AttentionConfig,
    prenorm: bool,
    h: usize,
    w: usize,
    trace: Option<&mut Option<HeadTraceIds>>,
) -> Result<NodeId> {
    if let Some((cw, cb)) = ids.cpe {
        x = cpe_graph(tape, x, cw, cb, h, w)?;
    }
    if prenorm {
        let n1 = tape.layer_norm(x, ids.norm1.0, ids.norm1.1)?;
        let a = multi_head_attention_graph(tape, n1, attn_cfg, &ids.attn, trace)?;
        x = tape.add(x, a)?;
        let n2 = tape.layer_norm(x, ids.norm2.0, ids.norm2.1)?;
        let f = ffn_graph(tape, n2, ids.ffn.0, ids.ffn.1, ids.ffn.2, ids.ffn.3)?;
        tape.add(x, f)
    } else {
        let a = multi_head_attention_graph(tape, x, attn_cfg, &ids.attn, trace)?;
        let s1 = tape.add(x, a)?;
        x = tape.layer_norm(s1, ids.norm1.0, ids.norm1.1)?;
        let f = ffn_graph(tape, x, ids.ffn.0, ids.ffn.1, ids.ffn.2, ids.ffn.3)?;
        let s2 = tape.add(x, f)?;
        tape.layer_norm(s2, ids.norm2.0, ids.norm2.1)
    }
}

/// Full forward pass: stem -> 4 stages -> pool -> logits. The image is
/// (H*W) x 3 tokens; when `trace` is given, every attention layer's head-0
/// analysis nodes are appended in layer order.
pub fn model_forward_graph(
    tape: &mut Tape<f64>,
    config: &ModelConfig,
    binding: &WeightBinding,
    image: NodeId,
    variant: Variant,
    mut trace: Option<&mut Vec<HeadTraceIds>>,
) -> Result<NodeId> {
    config.validate()?;
    let res = config.input_resolution;
    if tape.value(image).shape() != (res * res, 3) {
        return Err(Error::shape(
            "model_forward",
            tape.value(image).shape(),
            (res * res, 3),
        ));
    }

    // Stem: two stride-2 convs with GELU between, reaching the 1/4 rate.
    let mut h = res / 2;
    let s1 = conv3x3_graph(
        tape,
        image,
        binding.id("stem.conv1.weight")?,
        binding.id("stem.conv1.bias")?,
        res,
        res,
        2,
    )?;
    let g = tape.gelu(s1)?;
    let mut x = conv3x3_graph(
        tape,
        g,
        binding.id("stem.conv2.weight")?,
        binding.id("stem.conv2.bias")?,
        h,
        h,
        2,
    )?;
    h = res / 4;

    for s in 0..4 {
        if s > 0 {
            x = conv3x3_graph(
                tape,
                x,
                binding.id(&format!("stages.{s}.downsample.weight"))?,
                binding.id(&format!("stages.{s}.downsample.bias"))?,
                h,
                h,
                2,
            )?;
            h /= 2;
        }
        let attn_cfg = config.attention_config(s, variant);
        for b in 0..config.stage_blocks[s] {
            let ids = block_ids(
                binding,
                &format!("stages.{s}.blocks.{b}"),
                config.cpe_enabled,
                config.uses_phi_projection() && variant == Variant::Rala,
            )?;
            let mut layer_trace = None;
            x = block_graph(
                tape,
                x,
                &ids,
                &attn_cfg,
                config.prenorm,
                h,
                h,
                trace.as_mut().map(|_| &mut layer_trace).or(None),
            )?;
            if let Some(sink) = trace.as_mut() {
                if let Some(t) = layer_trace {
                    sink.push(t);
                }
            }
        }
    }

    let xn = tape.layer_norm(x, binding.id("norm.gamma")?, binding.id("norm.beta")?)?;
    let pooled = tape.mean_rows(xn)?;
    let logits = tape.matmul(pooled, binding.id("head.weight")?)?;
    tape.add_bias(logits, binding.id("head.bias")?)
}

/// Convenience wrapper: fresh tape, weight leaves, forward, logits value.
pub fn model_forward(
    config: &ModelConfig,
    weights: &ModelWeights,
    image: &Matrix<f64>,
    variant: Variant,
) -> Result<Matrix<f64>> {
    let mut tape = Tape::new();
    let binding = WeightBinding::bind(&mut tape, weights);
    let img = tape.leaf(image.clone());
    let logits = model_forward_graph(&mut tape, config, &binding, img, variant, None)?;
    Ok(tape.value(logits).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{randn_matrix, seeded_rng};

    #[test]
    fn presets_match_published_table() {
        let t = ModelConfig::preset("ravlt-t").unwrap();
        assert_eq!(t.stage_blocks, [2, 2, 6, 2]);
        assert_eq!(t.stage_channels, [64, 128, 256, 512]);
        assert_eq!(t.stage_heads, [1, 2, 4, 8]);
        let s = ModelConfig::preset("ravlt-s").unwrap();
        assert_eq!(s.stage_blocks, [3, 5, 9, 3]);
        assert_eq!(s.stage_channels, [64, 128, 320, 512]);
        assert_eq!(s.stage_heads, [1, 2, 5, 8]);
        assert!(ModelConfig::preset("ravlt-x").is_err());
    }

    #[test]
    fn config_json_roundtrip_keeps_field_names() {
        let cfg = ModelConfig::preset("toy").unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        for field in [
            "stage_blocks",
            "stage_channels",
            "stage_heads",
            "ffn_ratio",
            "num_classes",
            "input_resolution",
            "cpe_enabled",
            "kv_augment",
            "out_augment",
            "kernel",
            "phi",
            "normalize",
        ] {
            assert!(json.contains(field), "missing {field} in {json}");
        }
        let back: ModelConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn toy_forward_produces_finite_logits() {
        let cfg = ModelConfig::preset("toy").unwrap();
        let mut rng = seeded_rng(0);
        let weights = init_weights(&cfg, &mut rng).unwrap();
        let image = randn_matrix(64 * 64, 3, &mut rng);
        let logits = model_forward(&cfg, &weights, &image, Variant::Rala).unwrap();
        assert_eq!(logits.shape(), (1, 10));
        assert!(logits.is_finite());
    }

    #[test]
    fn bad_resolution_rejected() {
        let mut cfg = ModelConfig::preset("toy").unwrap();
        cfg.input_resolution = 60;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn param_count_matches_materialized_weights() {
        for preset in ["toy", "ravlt-t"] {
            let cfg = ModelConfig::preset(preset).unwrap();
            let mut rng = seeded_rng(1);
            let weights = init_weights(&cfg, &mut rng).unwrap();
            let counted = count_params(&cfg).unwrap().parameter_count;
            assert_eq!(counted, weights.total_elements(), "{preset}");
        }
    }

    #[test]
    fn disabling_cpe_removes_exactly_9c_plus_c_params_per_block() {
        let cfg = ModelConfig::preset("toy").unwrap();
        let mut off = cfg.clone();
        off.cpe_enabled = false;
        let with = count_params(&cfg).unwrap().parameter_count;
        let without = count_params(&off).unwrap().parameter_count;
        let expected: u64 = (0..4)
            .map(|s| (cfg.stage_blocks[s] * (9 * cfg.stage_channels[s] + cfg.stage_channels[s])) as u64)
            .sum();
        assert_eq!(with - without, expected);
    }

    #[test]
    fn trace_covers_every_block() {
        let cfg = ModelConfig::preset("toy").unwrap();
        let mut rng = seeded_rng(2);
        let weights = init_weights(&cfg, &mut rng).unwrap();
        let image = randn_matrix(64 * 64, 3, &mut rng);
        let mut tape = Tape::new();
        let binding = WeightBinding::bind(&mut tape, &weights);
        let img = tape.leaf(image);
        let mut trace = Vec::new();
        model_forward_graph(&mut tape, &cfg, &binding, img, Variant::Rala, Some(&mut trace))
            .unwrap();
        assert_eq!(trace.len(), cfg.stage_blocks.iter().sum::<usize>());
    }
}
