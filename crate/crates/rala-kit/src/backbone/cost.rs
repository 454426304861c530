//! Analytic parameter and FLOP counters, derived from shapes alone.
//!
//! `macs` counts multiply-accumulate pairs, the convention behind the
//! published Params(M)/FLOPs(G) table for this architecture family;
//! `flops` is 2 x macs. Norms, activations, and bias adds are not counted,
//! matching the usual vision-model counters.

use serde::Serialize;

use crate::attention::Variant;
use crate::backbone::ModelConfig;
use crate::error::Result;

#[derive(Debug, Clone, Serialize)]
pub struct SegmentCost {
    pub name: String,
    pub parameter_count: u64,
    pub macs: u64,
    pub flops: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CostReport {
    pub parameter_count: u64,
    pub macs: u64,
    pub flops: u64,
    pub resolution: usize,
    pub breakdown: Vec<SegmentCost>,
}

impl CostReport {
    fn from_segments(resolution: usize, breakdown: Vec<SegmentCost>) -> Self {
        let parameter_count = breakdown.iter().map(|s| s.parameter_count).sum();
        let macs = breakdown.iter().map(|s| s.macs).sum();
        CostReport {
            parameter_count,
            macs,
            flops: 2 * macs,
            resolution,
            breakdown,
        }
    }
}

/// Attention-core MACs for one layer of N tokens, C channels, h heads.
fn attention_core_macs(variant: Variant, n: u64, c: u64, heads: u64) -> u64 {
    let d = c / heads;
    match variant {
        // Q K^T and A V, per head N*N*d.
        Variant::Softmax => 2 * n * n * c,
        // K^T V buffer and Q B, per head N*d*d; plus the key-sum denominator.
        Variant::LinearVanilla => 2 * n * d * c + 2 * n * c,
        Variant::Efficient => 2 * n * d * c,
        // Vanilla plus the global-query scores for alpha.
        Variant::Rala => 2 * n * d * c + 3 * n * c,
    }
}

fn counts(config: &ModelConfig, resolution: usize) -> Result<CostReport> {
    config.validate()?;
    let variant = Variant::Rala;
    let phi_proj = config.out_augment && config.phi == crate::attention::Phi::LinearProjection;
    let mut segments = Vec::new();

    let c0 = config.stage_channels[0] as u64;
    let c_half = (c0 / 2).max(1);
    let r = resolution as u64;
    let stem_params = 9 * 3 * c_half + c_half + 9 * c_half * c0 + c0;
    let stem_macs = 9 * 3 * c_half * (r / 2) * (r / 2) + 9 * c_half * c0 * (r / 4) * (r / 4);
    segments.push(SegmentCost {
        name: "stem".into(),
        parameter_count: stem_params,
        macs: stem_macs,
        flops: 2 * stem_macs,
    });

    for s in 0..4 {
        let c = config.stage_channels[s] as u64;
        let heads = config.stage_heads[s] as u64;
        let n = {
            let side = r / (4 << s);
            side * side
        };
        let hidden = config.ffn_hidden(s) as u64;
        let mut params = 0u64;
        let mut macs = 0u64;
        if s > 0 {
            let prev = config.stage_channels[s - 1] as u64;
            params += 9 * prev * c + c;
            macs += 9 * prev * c * n;
        }
        let proj_count: u64 = if phi_proj { 5 } else { 4 };
        let block_params = {
            let cpe = if config.cpe_enabled { 9 * c + c } else { 0 };
            let norms = 4 * c;
            let attn = proj_count * (c * c + c);
            let ffn = c * hidden + hidden + hidden * c + c;
            cpe + norms + attn + ffn
        };
        let block_macs = {
            let cpe = if config.cpe_enabled { 9 * c * n } else { 0 };
            let attn = proj_count * n * c * c + attention_core_macs(variant, n, c, heads);
            let ffn = 2 * n * c * hidden;
            cpe + attn + ffn
        };
        params += config.stage_blocks[s] as u64 * block_params;
        macs += config.stage_blocks[s] as u64 * block_macs;
        segments.push(SegmentCost {
            name: format!("stage{}", s + 1),
            parameter_count: params,
            macs,
            flops: 2 * macs,
        });
    }

    let c3 = config.stage_channels[3] as u64;
    let k = config.num_classes as u64;
    let head_params = 2 * c3 + c3 * k + k;
    let head_macs = c3 * k;
    segments.push(SegmentCost {
        name: "head".into(),
        parameter_count: head_params,
        macs: head_macs,
        flops: 2 * head_macs,
    });

    Ok(CostReport::from_segments(resolution, segments))
}

/// Exact parameter count from shapes; independent of input resolution.
pub fn count_params(config: &ModelConfig) -> Result<CostReport> {
    counts(config, config.input_resolution)
}

/// Exact analytic MAC/FLOP count at the given resolution.
pub fn count_flops(config: &ModelConfig, resolution: usize) -> Result<CostReport> {
    counts(config, resolution)
}

/// Both counters in one report.
pub fn count_costs(config: &ModelConfig, resolution: usize) -> Result<CostReport> {
    counts(config, resolution)
}
