//! Acceptance suite: one test per criterion, each printing a single
//! pass/fail line (visible with `cargo test -- --nocapture`).

use std::process::Command;

use rala_kit::analysis::{attention_flops, fit_loglog_slope, fitted_slopes, scaling_benchmark,
    single_layer_trace};
use rala_kit::attention::{compute_alpha, linear_attention_vanilla, Kernel, Variant};
use rala_kit::backbone::{count_costs, ModelConfig};
use rala_kit::linalg::rng::stream_rng;
use rala_kit::linalg::{
    low_rank_factory, numerical_rank, randn_matrix, Matrix, DEFAULT_REL_EPS,
};
use rala_kit::trainer::{train_loop, TrainConfig};
use rala_kit::Matrix64;

fn report(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion}: {detail}");
}

/// 1. Quadratic-order and linear-order vanilla linear attention agree.
#[test]
fn criterion_01_order_equivalence() {
    let mut worst = 0.0f64;
    for seed in 0..50u64 {
        let mut rng = stream_rng(seed, 0);
        use rand::Rng as _;
        let n = rng.gen_range(2..=64);
        let d = rng.gen_range(2..=16);
        let q: Matrix64 = randn_matrix(n, d, &mut rng);
        let k: Matrix64 = randn_matrix(n, d, &mut rng);
        let v: Matrix64 = randn_matrix(n, d, &mut rng);
        let kq = q.kernel_elu1();
        let kk = k.kernel_elu1();
        // Quadratic order: softmax-style N x N score matrix first.
        let scores = kq.matmul(&kk.transpose()).unwrap();
        let denom = scores.matmul(&Matrix::ones(n, 1)).unwrap();
        let quadratic = scores.matmul(&v).unwrap().div_rows(&denom).unwrap();
        // Linear order, as the library computes it.
        let linear = linear_attention_vanilla(&q, &k, &v, Kernel::Elu1, true).unwrap();
        let rel = linear.max_abs_diff(&quadratic) / quadratic.frobenius_norm().max(1.0);
        worst = worst.max(rel);
    }
    report(
        "01 order-equivalence",
        worst < 1e-10,
        &format!("worst relative difference {worst:.3e} over 50 trials"),
    );
}

/// 2. Alpha weights sum to the token count.
#[test]
fn criterion_02_alpha_constraint() {
    let mut worst = 0.0f64;
    for trial in 0..100u64 {
        let mut rng = stream_rng(trial, 0);
        use rand::Rng as _;
        let n = rng.gen_range(1..=1024);
        let d = rng.gen_range(1..=64);
        let q: Matrix64 = randn_matrix(n, d, &mut rng);
        let k: Matrix64 = randn_matrix(n, d, &mut rng);
        let alpha = compute_alpha(&q, &k, Kernel::Elu1).unwrap();
        let sum: f64 = alpha.values().iter().sum();
        worst = worst.max((sum - n as f64).abs());
    }
    report(
        "02 alpha-constraint",
        worst <= 1e-9,
        &format!("worst |sum(alpha) - N| = {worst:.3e} over 100 pairs up to N=1024"),
    );
}

/// 3. Rank of a product is bounded by both factor ranks.
#[test]
fn criterion_03_rank_inequality() {
    let mut violations = 0;
    for trial in 0..100u64 {
        let ra = 1 + (trial as usize % 8);
        let rb = 1 + ((trial as usize / 8) % 8);
        let kq: Matrix64 = low_rank_factory(32, 16, ra, trial).unwrap();
        let b: Matrix64 = low_rank_factory(16, 16, rb, trial.wrapping_add(1000)).unwrap();
        let prod = kq.matmul(&b).unwrap();
        let bound = numerical_rank(&kq, DEFAULT_REL_EPS)
            .unwrap()
            .min(numerical_rank(&b, DEFAULT_REL_EPS).unwrap());
        if numerical_rank(&prod, DEFAULT_REL_EPS).unwrap() > bound {
            violations += 1;
        }
    }
    report(
        "03 rank-inequality",
        violations == 0,
        &format!("{violations} violations in 100 constructed products"),
    );
}

/// 4. Hadamard rank bound rank(A o B) <= rank(A) * rank(B).
#[test]
fn criterion_04_hadamard_bound() {
    let mut violations = 0;
    for trial in 0..100u64 {
        let ra = 1 + (trial as usize % 4);
        let rb = 1 + ((trial as usize / 4) % 4);
        let a: Matrix64 = low_rank_factory(24, 16, ra, trial).unwrap();
        let b: Matrix64 = low_rank_factory(24, 16, rb, trial.wrapping_add(2000)).unwrap();
        let h = a.hadamard(&b).unwrap();
        let bound =
            numerical_rank(&a, DEFAULT_REL_EPS).unwrap() * numerical_rank(&b, DEFAULT_REL_EPS).unwrap();
        if numerical_rank(&h, DEFAULT_REL_EPS).unwrap() > bound {
            violations += 1;
        }
    }
    report(
        "04 hadamard-bound",
        violations == 0,
        &format!("{violations} violations in 100 seeded pairs"),
    );
}

/// 5. Output augmentation restores full rank where vanilla stays rank-bounded.
#[test]
fn criterion_05_rank_separation() {
    let mut vanilla_bounded = 0;
    let mut rala_full = 0;
    for seed in 0..20u64 {
        let v = single_layer_trace(Variant::LinearVanilla, 196, 64, Some(8), seed, DEFAULT_REL_EPS)
            .unwrap();
        if v.layers[0].reports[3].numerical_rank <= 8 {
            vanilla_bounded += 1;
        }
        let r =
            single_layer_trace(Variant::Rala, 196, 64, Some(8), seed, DEFAULT_REL_EPS).unwrap();
        if r.layers[0].reports[3].numerical_rank == 64 {
            rala_full += 1;
        }
    }
    report(
        "05 rank-separation",
        vanilla_bounded == 20 && rala_full >= 19,
        &format!("vanilla rank<=8 in {vanilla_bounded}/20, rala full rank in {rala_full}/20"),
    );
}

/// 6. Every op and the end-to-end block pass finite differences.
#[test]
fn criterion_06_gradient_correctness() {
    let reports = rala_kit::gradcheck::run_all(20, 1e-5, 0).unwrap();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .unwrap();
    report(
        "06 gradient-correctness",
        worst.max_rel_err < 1e-4,
        &format!(
            "worst op {} rel err {:.3e} across {} ops x 20 trials",
            worst.op_name,
            worst.max_rel_err,
            reports.len()
        ),
    );
}

/// 7. Parameter/FLOP counts reproduce the published table within 15%.
#[test]
fn criterion_07_cost_reproduction() {
    // Published Params(M)/FLOPs(G) at 224^2; the published FLOPs column
    // counts multiply-accumulates, which is this counter's `macs` field.
    let targets: [(&str, f64, f64); 4] = [
        ("ravlt-t", 15e6, 2.4e9),
        ("ravlt-s", 26e6, 4.6e9),
        ("ravlt-b", 48e6, 9.9e9),
        ("ravlt-l", 95e6, 16.0e9),
    ];
    let mut detail = String::new();
    let mut pass = true;
    for (preset, params_t, macs_t) in targets {
        let cfg = ModelConfig::preset(preset).unwrap();
        let rep = count_costs(&cfg, 224).unwrap();
        let dp = rep.parameter_count as f64 / params_t - 1.0;
        let dm = rep.macs as f64 / macs_t - 1.0;
        pass &= dp.abs() <= 0.15 && dm.abs() <= 0.15;
        detail.push_str(&format!("{preset} params {dp:+.1e} macs {dm:+.1e}; "));
    }
    report("07 cost-reproduction", pass, detail.trim_end_matches("; "));
}

/// 8. Analytic slopes are exact; measured wall time scales accordingly.
#[test]
fn criterion_08_complexity_scaling() {
    let n_list = [196usize, 392, 784, 1568, 3136];
    let big: Vec<f64> = (14..20).map(|p| (1u64 << p) as f64).collect();
    let soft: Vec<f64> = big
        .iter()
        .map(|&n| attention_flops(Variant::Softmax, n as u64, 64) as f64)
        .collect();
    let rala: Vec<f64> = big
        .iter()
        .map(|&n| attention_flops(Variant::Rala, n as u64, 64) as f64)
        .collect();
    let analytic_soft = fit_loglog_slope(&big, &soft).unwrap();
    let analytic_rala = fit_loglog_slope(&big, &rala).unwrap();

    // Machine-load spikes only ever inflate timings, so take the per-point
    // minimum of medians across independent sweeps before fitting.
    let mut records =
        scaling_benchmark(&[Variant::Softmax, Variant::Rala], &n_list, 64, 15, 0).unwrap();
    for seed in 1..3u64 {
        let sweep =
            scaling_benchmark(&[Variant::Softmax, Variant::Rala], &n_list, 64, 15, seed).unwrap();
        for (r, s) in records.iter_mut().zip(&sweep) {
            r.wall_time_s = r.wall_time_s.min(s.wall_time_s);
        }
    }
    let slopes = fitted_slopes(&records).unwrap();
    let wall_soft = slopes.iter().find(|(v, _)| v == "softmax").unwrap().1;
    let wall_rala = slopes.iter().find(|(v, _)| v == "rala").unwrap().1;

    let pass = (analytic_soft - 2.0).abs() < 1e-2
        && (analytic_rala - 1.0).abs() < 1e-2
        && (1.8..=2.2).contains(&wall_soft)
        && (0.8..=1.2).contains(&wall_rala);
    report(
        "08 complexity-scaling",
        pass,
        &format!(
            "analytic slopes {analytic_soft:.3}/{analytic_rala:.3}, wall-time slopes softmax {wall_soft:.2} rala {wall_rala:.2}"
        ),
    );
}

/// 9. The toy model trains to 90% on the synthetic task; the ablated
/// variant trains without error.
#[test]
fn criterion_09_trainability() {
    let cfg = TrainConfig {
        target_accuracy: Some(0.9),
        ..TrainConfig::default()
    };
    let out = train_loop(&cfg).unwrap();
    let best = out
        .metrics
        .iter()
        .map(|m| m.accuracy)
        .fold(0.0f64, f64::max);
    let epochs_used = out.metrics.len();

    let ablated = TrainConfig {
        epochs: 2,
        kv_augment: false,
        out_augment: false,
        ..TrainConfig::default()
    };
    let ablated_ok = train_loop(&ablated).is_ok();

    report(
        "09 trainability",
        best >= 0.9 && epochs_used <= 200 && ablated_ok,
        &format!(
            "accuracy {best:.3} after {epochs_used} epochs; ablated run ok: {ablated_ok}"
        ),
    );
}

/// 10. Repeated CLI invocations with the same seed emit identical bytes.
/// The bench subcommand is excluded: its wall-time column measures real
/// time by design.
#[test]
fn criterion_10_determinism() {
    let bin = env!("CARGO_BIN_EXE_rala-kit");
    let dir = tempfile::tempdir().unwrap();
    let invocations: Vec<Vec<String>> = vec![
        vec!["rank", "--variant", "rala", "--n", "48", "--d", "16", "--key-rank", "4", "--seed", "7"],
        vec!["rank", "--preset", "toy", "--variant", "linear_vanilla", "--seed", "3", "--format", "json"],
        vec!["gradcheck", "--ops", "matmul", "--trials", "3", "--seed", "5"],
        vec!["train", "--epochs", "2", "--n-samples", "8", "--seed", "9"],
        vec!["info", "--preset", "ravlt-t", "--format", "json"],
    ]
    .into_iter()
    .map(|v| v.into_iter().map(String::from).collect())
    .collect();

    let mut pass = true;
    let mut detail = String::new();
    for (i, args) in invocations.iter().enumerate() {
        let outputs: Vec<Vec<u8>> = (0..2)
            .map(|run| {
                let path = dir.path().join(format!("out_{i}_{run}"));
                let status = Command::new(bin)
                    .args(args)
                    .arg("--out")
                    .arg(&path)
                    .status()
                    .unwrap();
                assert!(status.success(), "invocation {args:?} failed");
                std::fs::read(&path).unwrap()
            })
            .collect();
        if outputs[0] != outputs[1] {
            pass = false;
            detail.push_str(&format!("{} differs; ", args[0]));
        }
    }
    if detail.is_empty() {
        detail = format!("{} invocations byte-identical across reruns", invocations.len());
    }
    report("10 determinism", pass, &detail);
}
