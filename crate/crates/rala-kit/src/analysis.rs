//! Rank instrumentation and the complexity/scaling benchmark, emitting
//! plot-ready CSV/JSON tables.

use std::io::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::attention::{rala_core, Variant};
use crate::autodiff::Tape;
use crate::backbone::{init_weights, model_forward_graph, ModelConfig, WeightBinding};
use crate::error::{Error, Result};
use crate::linalg::rng::{stream_rng, uniform_matrix};
use crate::linalg::{randn_matrix, rank_report, Matrix, RankReport};

pub const MATRIX_NAMES: [&str; 4] = ["kappa_q", "kv_buffer", "pre_modulation", "final_output"];

/// Rank reports for one attention layer (head 0).
#[derive(Debug, Clone, Serialize)]
pub struct LayerTrace {
    pub layer_index: usize,
    pub reports: Vec<RankReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct LayerRankTrace {
    pub config_fingerprint: String,
    pub seed: u64,
    pub rel_eps: f64,
    pub layers: Vec<LayerTrace>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRecord {
    pub variant: String,
    pub n: usize,
    pub d: usize,
    pub flops: u64,
    pub wall_time_s: f64,
    pub seed: u64,
}

fn variant_label(v: Variant) -> &'static str {
    match v {
        Variant::Softmax => "softmax",
        Variant::LinearVanilla => "linear_vanilla",
        Variant::Efficient => "efficient",
        Variant::Rala => "rala",
    }
}

fn four_reports(
    kappa_q: &Matrix<f64>,
    buffer: &Matrix<f64>,
    pre_modulation: &Matrix<f64>,
    output: &Matrix<f64>,
    rel_eps: f64,
) -> Result<Vec<RankReport>> {
    Ok(vec![
        rank_report(MATRIX_NAMES[0], kappa_q, rel_eps)?,
        rank_report(MATRIX_NAMES[1], buffer, rel_eps)?,
        rank_report(MATRIX_NAMES[2], pre_modulation, rel_eps)?,
        rank_report(MATRIX_NAMES[3], output, rel_eps)?,
    ])
}

/// Single-layer trace on constructed inputs: random Q/V/X and, when
/// `key_rank` is set, kernelized keys built at exactly that rank (positive
/// factors, so normalization stays well defined). This is the structural
/// stand-in for the trained-model rank figures, which are not reproducible
/// without training.
pub fn single_layer_trace(
    variant: Variant,
    n: usize,
    d: usize,
    key_rank: Option<usize>,
    seed: u64,
    rel_eps: f64,
) -> Result<LayerRankTrace> {
    if let Some(r) = key_rank {
        if r == 0 || r > n.min(d) {
            return Err(Error::invalid(
                "single_layer_trace",
                format!("key rank {r} out of range for {n}x{d}"),
            ));
        }
    }
    let mut rng = stream_rng(seed, 0);
    let q: Matrix<f64> = randn_matrix(n, d, &mut rng);
    let v: Matrix<f64> = randn_matrix(n, d, &mut rng);
    let x: Matrix<f64> = randn_matrix(n, d, &mut rng);

    let constructed_keys = |rng: &mut crate::linalg::SeededRng| -> Result<Matrix<f64>> {
        match key_rank {
            Some(r) => {
                let u: Matrix<f64> = uniform_matrix(n, r, 0.1, 1.1, rng);
                let w: Matrix<f64> = uniform_matrix(r, d, 0.1, 1.1, rng);
                u.matmul(&w)
            }
            None => {
                let k: Matrix<f64> = randn_matrix(n, d, rng);
                Ok(k.kernel_elu1())
            }
        }
    };

    let reports = match variant {
        Variant::Rala | Variant::LinearVanilla => {
            let kappa_k = constructed_keys(&mut rng)?;
            let kappa_q = q.kernel_elu1();
            let augmented = variant == Variant::Rala;
            let phi_x = if augmented {
                let w: Matrix<f64> = randn_matrix(d, d, &mut rng);
                let b: Matrix<f64> = randn_matrix(1, d, &mut rng);
                Some(x.matmul(&w)?.add_bias(&b)?)
            } else {
                None
            };
            let parts = rala_core(&q, &kappa_q, &kappa_k, &v, phi_x.as_ref(), augmented, true)?;
            four_reports(
                &parts.kappa_q,
                &parts.buffer.b,
                &parts.pre_modulation,
                &parts.output,
                rel_eps,
            )?
        }
        Variant::Efficient => {
            // Column-stochastic keys; a constructed low-rank matrix is
            // column-normalized, which preserves its rank.
            let rho_q = q.softmax_rows();
            let rho_k = match key_rank {
                Some(_) => {
                    let raw = constructed_keys(&mut rng)?;
                    let col_sums = Matrix::ones(1, n).matmul(&raw)?;
                    let mut out = raw.clone();
                    for r in 0..n {
                        for c in 0..d {
                            out.set(r, c, raw.get(r, c) / col_sums.get(0, c));
                        }
                    }
                    out
                }
                None => {
                    let k: Matrix<f64> = randn_matrix(n, d, &mut rng);
                    k.transpose().softmax_rows().transpose()
                }
            };
            let buffer = rho_k.transpose().matmul(&v)?;
            let out = rho_q.matmul(&buffer)?;
            four_reports(&rho_q, &buffer, &out, &out, rel_eps)?
        }
        Variant::Softmax => {
            return Err(Error::invalid(
                "single_layer_trace",
                "rank tracing applies to the linear variants only",
            ))
        }
    };

    Ok(LayerRankTrace {
        config_fingerprint: format!(
            "single_layer variant={} n={n} d={d} key_rank={key_rank:?} head=0",
            variant_label(variant)
        ),
        seed,
        rel_eps,
        layers: vec![LayerTrace {
            layer_index: 0,
            reports,
        }],
    })
}

/// Trace every attention layer of a randomly initialized model on a random
/// input (head 0 per layer).
pub fn model_rank_trace(
    config: &ModelConfig,
    variant: Variant,
    seed: u64,
    rel_eps: f64,
) -> Result<LayerRankTrace> {
    if !matches!(variant, Variant::Rala | Variant::LinearVanilla) {
        return Err(Error::invalid(
            "model_rank_trace",
            "model tracing applies to the rala and linear_vanilla variants",
        ));
    }
    let mut weight_rng = stream_rng(seed, 0);
    let weights = init_weights(config, &mut weight_rng)?;
    let mut input_rng = stream_rng(seed, 1);
    let res = config.input_resolution;
    let image: Matrix<f64> = randn_matrix(res * res, 3, &mut input_rng);

    let mut tape = Tape::new();
    let binding = WeightBinding::bind(&mut tape, &weights);
    let img = tape.leaf(image);
    let mut head_traces = Vec::new();
    model_forward_graph(
        &mut tape,
        config,
        &binding,
        img,
        variant,
        Some(&mut head_traces),
    )?;

    let mut layers = Vec::with_capacity(head_traces.len());
    for (i, t) in head_traces.iter().enumerate() {
        layers.push(LayerTrace {
            layer_index: i,
            reports: four_reports(
                tape.value(t.kappa_q),
                tape.value(t.kv_buffer),
                tape.value(t.pre_modulation),
                tape.value(t.output),
                rel_eps,
            )?,
        });
    }
    Ok(LayerRankTrace {
        config_fingerprint: format!(
            "model variant={} config={} head=0",
            variant_label(variant),
            serde_json::to_string(config).expect("config serializes")
        ),
        seed,
        rel_eps,
        layers,
    })
}

/// Closed-form FLOPs (2 x MACs plus softmax/exp terms) for one single-head
/// attention layer, matching what the benchmark executes.
pub fn attention_flops(variant: Variant, n: u64, d: u64) -> u64 {
    match variant {
        // scores + weighted sum: 4 N^2 d, plus the row softmax term.
        Variant::Softmax => 4 * n * n * d + 5 * n * n,
        // buffer + query-buffer products, plus key-sum normalization.
        Variant::LinearVanilla => 4 * n * d * d + 4 * n * d,
        // two softmaxes plus the two linear products.
        Variant::Efficient => 4 * n * d * d + 10 * n * d,
        // vanilla plus alpha scores and the phi projection.
        Variant::Rala => 6 * n * d * d + 6 * n * d + 5 * n,
    }
}

fn run_attention_once(
    variant: Variant,
    q: &Matrix<f64>,
    k: &Matrix<f64>,
    v: &Matrix<f64>,
    x: &Matrix<f64>,
    phi: &crate::attention::PhiParams<f64>,
) -> Result<Matrix<f64>> {
    use crate::attention::{
        efficient_attention_baseline, linear_attention_vanilla, rala_attention,
        softmax_attention, AttentionConfig, Kernel,
    };
    match variant {
        Variant::Softmax => softmax_attention(q, k, v),
        Variant::LinearVanilla => linear_attention_vanilla(q, k, v, Kernel::Elu1, true),
        Variant::Efficient => efficient_attention_baseline(q, k, v),
        Variant::Rala => {
            let cfg = AttentionConfig::rala(1, q.cols());
            rala_attention(x, q, k, v, &cfg, Some(phi))
        }
    }
}

/// Median-of-repeats wall time per (variant, N), with one untimed warm-up
/// call per point. Timing runs strictly sequentially.
pub fn scaling_benchmark(
    variants: &[Variant],
    n_list: &[usize],
    d: usize,
    repeats: usize,
    seed: u64,
) -> Result<Vec<ScalingRecord>> {
    if variants.is_empty() || n_list.is_empty() {
        return Err(Error::invalid("scaling_benchmark", "empty variant or N list"));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "scaling_benchmark",
            "N list must be strictly increasing",
        ));
    }
    if repeats == 0 {
        return Err(Error::invalid("scaling_benchmark", "repeats must be >= 1"));
    }
    struct Point {
        variant: Variant,
        n: usize,
        q: Matrix<f64>,
        k: Matrix<f64>,
        v: Matrix<f64>,
        x: Matrix<f64>,
        phi: crate::attention::PhiParams<f64>,
        times: Vec<f64>,
    }
    let mut points = Vec::new();
    for (vi, &variant) in variants.iter().enumerate() {
        for &n in n_list {
            let mut rng = stream_rng(seed, (vi as u64) << 32 | n as u64);
            points.push(Point {
                variant,
                n,
                q: randn_matrix(n, d, &mut rng),
                k: randn_matrix(n, d, &mut rng),
                v: randn_matrix(n, d, &mut rng),
                x: randn_matrix(n, d, &mut rng),
                phi: crate::attention::PhiParams {
                    weight: randn_matrix(d, d, &mut rng),
                    bias: randn_matrix(1, d, &mut rng),
                },
                times: Vec::with_capacity(repeats),
            });
        }
    }
    // Warm up every point once, untimed.
    for p in &points {
        run_attention_once(p.variant, &p.q, &p.k, &p.v, &p.x, &p.phi)?;
    }
    // Interleave the repeats across points so a transient load spike lands
    // on one sweep of many points instead of every repeat of one point;
    // the per-point median then stays clean.
    for _ in 0..repeats {
        for p in &mut points {
            let t0 = Instant::now();
            let out = run_attention_once(p.variant, &p.q, &p.k, &p.v, &p.x, &p.phi)?;
            p.times.push(t0.elapsed().as_secs_f64());
            std::hint::black_box(out);
        }
    }
    let records = points
        .into_iter()
        .map(|mut p| {
            p.times.sort_by(|a, b| a.partial_cmp(b).unwrap());
            ScalingRecord {
                variant: variant_label(p.variant).to_string(),
                n: p.n,
                d,
                flops: attention_flops(p.variant, p.n as u64, d as u64),
                wall_time_s: p.times[p.times.len() / 2],
                seed,
            }
        })
        .collect();
    Ok(records)
}

/// Least-squares slope of ln(y) against ln(x).
pub fn fit_loglog_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("fit_loglog_slope", "need >= 2 points"));
    }
    let lx: Vec<f64> = xs.iter().map(|&x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|&y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let num: f64 = lx.iter().zip(&ly).map(|(&x, &y)| (x - mx) * (y - my)).sum();
    let den: f64 = lx.iter().map(|&x| (x - mx) * (x - mx)).sum();
    Ok(num / den)
}

/// Fitted wall-time slopes per variant, in the order variants first appear.
pub fn fitted_slopes(records: &[ScalingRecord]) -> Result<Vec<(String, f64)>> {
    let mut out: Vec<(String, f64)> = Vec::new();
    let mut variants: Vec<&str> = Vec::new();
    for r in records {
        if !variants.contains(&r.variant.as_str()) {
            variants.push(&r.variant);
        }
    }
    for v in variants {
        let xs: Vec<f64> = records
            .iter()
            .filter(|r| r.variant == v)
            .map(|r| r.n as f64)
            .collect();
        let ys: Vec<f64> = records
            .iter()
            .filter(|r| r.variant == v)
            .map(|r| r.wall_time_s)
            .collect();
        out.push((v.to_string(), fit_loglog_slope(&xs, &ys)?));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
}

impl std::str::FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(TableFormat::Csv),
            "json" => Ok(TableFormat::Json),
            other => Err(format!("unknown format '{other}'")),
        }
    }
}

pub fn rank_trace_table(trace: &LayerRankTrace, format: TableFormat) -> Result<String> {
    if trace.layers.is_empty() {
        return Err(Error::invalid("export_table", "no records to export"));
    }
    match format {
        TableFormat::Json => {
            Ok(serde_json::to_string_pretty(trace).expect("serializable") + "\n")
        }
        TableFormat::Csv => {
            let mut out = String::from(
                "layer_index,matrix_name,rows,cols,numerical_rank,sigma_max,sigma_min,tolerance\n",
            );
            for layer in &trace.layers {
                for r in &layer.reports {
                    out.push_str(&format!(
                        "{},{},{},{},{},{},{},{}\n",
                        layer.layer_index,
                        r.name,
                        r.rows,
                        r.cols,
                        r.numerical_rank,
                        r.sigma_max,
                        r.sigma_min,
                        r.tolerance
                    ));
                }
            }
            Ok(out)
        }
    }
}

pub fn scaling_table(records: &[ScalingRecord], format: TableFormat) -> Result<String> {
    if records.is_empty() {
        return Err(Error::invalid("export_table", "no records to export"));
    }
    match format {
        TableFormat::Json => {
            Ok(serde_json::to_string_pretty(records).expect("serializable") + "\n")
        }
        TableFormat::Csv => {
            let mut out = String::from("variant,N,d,flops,wall_time_s,seed\n");
            for r in records {
                out.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    r.variant, r.n, r.d, r.flops, r.wall_time_s, r.seed
                ));
            }
            Ok(out)
        }
    }
}

/// Write a rendered table to the given path.
pub fn export_table(rendered: &str, path: &Path) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    f.write_all(rendered.as_bytes()).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}
