//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splitquant::accuracy::{calibrate_profile, CalibrationConfig, CalibrationMeta, LayerProfile, RobustnessProfile, LN4};
use splitquant::costs::{server_energy_term, CostContext, CostWeights, DeviceProfile, ServerProfile};
use splitquant::nn::{load_model, Dataset, DatasetBundle, Dense, Layer, LayerStats, Model, Tensor};
use splitquant::optimizer::{
    brute_force_oracle, offline_quantize, pattern_objective, ratio_spread, ContinuousSolution, OfflineOptions,
};
use splitquant::quant::{measure_output_noise, NoiseTarget, QuantizerConfig};

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Quantizer against exhaustive nearest-grid search with ties to the smaller value.
fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    for _ in 0..10_000 {
        let bits = rng.random_range(1..=6u32);
        let mu = rng.random_range(-10.0..10.0f64);
        let phi = mu + rng.random_range(1e-3..20.0f64);
        let span = phi - mu;
        let c = match rng.random_range(0..4) {
            // Exact midpoints between neighbours exercise the tie rule.
            0 => {
                let k = rng.random_range(0..(1u32 << bits) - 1) as f64;
                let step = span / ((1u64 << bits) - 1) as f64;
                mu + k * step + step / 2.0
            }
            1 => mu - rng.random_range(0.0..span),
            2 => phi + rng.random_range(0.0..span),
            _ => rng.random_range(mu..phi),
        };
        let cfg = QuantizerConfig::new(bits, mu, phi).unwrap();
        let levels = (1u64 << bits) - 1;
        let mut best = f64::NAN;
        let mut best_d = f64::INFINITY;
        for k in 0..=levels {
            let g = mu + k as f64 * (span / levels as f64);
            let d = (c - g).abs();
            if d < best_d || (d == best_d && g < best) {
                best = g;
                best_d = d;
            }
        }
        if cfg.quantize(c).unwrap() != best {
            mismatches += 1;
        }
    }
    check(mismatches == 0, format!("{mismatches} mismatches in 10000 cases"))
}

fn synthetic_model() -> (Model, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut dense = |d: usize, g: usize| {
        let w: Vec<f64> = (0..d * g).map(|_| rng.random_range(-1.0..1.0)).collect();
        Layer::Dense(Dense::new(d, g, Tensor::new(vec![d, g], w).unwrap()).unwrap())
    };
    let layers = vec![dense(6, 10), Layer::Relu, dense(10, 8), Layer::Relu, dense(8, 3)];
    let model = Model::new("synthetic-3", vec![6], 3, layers).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 200;
    let images: Vec<f64> = (0..n * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
    let labels: Vec<u8> = (0..n)
        .map(|i| model.predict(&Tensor::new(vec![6], images[i * 6..(i + 1) * 6].to_vec()).unwrap()).unwrap() as u8)
        .collect();
    (model, Dataset::new(vec![6], 3, images, labels).unwrap())
}

fn synthetic_profile() -> RobustnessProfile {
    let levels = vec![0.005, 0.01, 0.02, 0.05, 0.10];
    let entries = [(40.0, 12.0, 0.35), (25.0, 30.0, 0.8), (90.0, 55.0, 1.7)];
    RobustnessProfile {
        model_id: "synthetic-3".into(),
        mean_adv: 2.0,
        layers: entries
            .iter()
            .enumerate()
            .map(|(i, &(s_w, s_x, rho))| LayerProfile {
                layer: i + 1,
                s_w,
                s_x,
                act_range: (0.0, 4.0 + i as f64),
                rho: levels.iter().map(|a| rho * (1.0 + 10.0 * a)).collect(),
                thresholds: levels.iter().map(|a| 2.0 * rho * (1.0 + 10.0 * a)).collect(),
            })
            .collect(),
        levels,
        calib: CalibrationMeta { samples: 0, seed: 0, trials: 0, b_ref: 8, clean_accuracy: 1.0, degenerate_samples: 0 },
    }
}

/// Equal-ratio residual on every continuous solution of a full store.
fn criterion_2() -> Outcome {
    let (model, data) = synthetic_model();
    let profile = synthetic_profile();
    let opts = OfflineOptions { levels: profile.levels.clone(), context: CostContext::default() };
    let store = offline_quantize(&model, &data, &profile, &opts, None, &mut |_| Ok(())).map_err(|e| e.to_string())?;
    let stats = LayerStats::of(&model);
    let mut worst = 0.0f64;
    for q in &store.patterns {
        let sol = ContinuousSolution { p: q.p, bits: q.continuous_bits.clone(), bits_act: q.continuous_act };
        worst = worst.max(ratio_spread(&sol, &stats, &profile, q.a_level).map_err(|e| e.to_string())?);
    }
    check(store.is_complete() && worst <= 1e-9, format!("{} patterns, worst spread {worst:.3e}", store.patterns.len()))
}

fn load_bundle(name: &str) -> (Model, DatasetBundle) {
    (
        load_model(fixtures().join(name).join("model")).expect("fixture model"),
        DatasetBundle::load(fixtures().join(name).join("data")).expect("fixture data"),
    )
}

/// Stored toy patterns against exhaustive search at the same degradation budget.
fn criterion_3() -> Outcome {
    let (model, data) = load_bundle("toy-2layer");
    let calib = data.train.seeded_subset(512, 1234);
    let profile = calibrate_profile(&model, &calib, &CalibrationConfig::default()).map_err(|e| e.to_string())?;
    let ctx = CostContext::default();
    let levels = [0.01, 0.02, 0.05];
    let opts = OfflineOptions { levels: levels.to_vec(), context: ctx };
    let store = offline_quantize(&model, &data.val, &profile, &opts, None, &mut |_| Ok(())).map_err(|e| e.to_string())?;
    let stats = LayerStats::of(&model);
    let mut worst = 0.0f64;
    let mut notes = Vec::new();
    for &a in &levels {
        for p in 1..=model.num_learnable() {
            let q = store.get(a, p).ok_or("missing pattern")?;
            let (_, _, j) = pattern_objective(&stats, q, &ctx).map_err(|e| e.to_string())?;
            let best = brute_force_oracle(&stats, &profile, a, q.psi_total, p..=p, 2..=16, &ctx)
                .map_err(|e| e.to_string())?
                .ok_or_else(|| format!("a={a} p={p}: no feasible pattern in [2,16]"))?;
            let gap = (j - best.objective) / best.objective;
            worst = worst.max(gap);
            notes.push(format!("a={a} p={p} gap={gap:.4}"));
        }
    }
    check(worst <= 0.05, format!("worst gap {worst:.4} ({})", notes.join(", ")))
}

fn slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Log output noise against bit-width on the toy model.
fn criterion_4() -> Outcome {
    let (model, data) = load_bundle("toy-2layer");
    let calib = data.train.seeded_subset(512, 1234);
    let widths: Vec<u32> = (4..=12).collect();
    let xs: Vec<f64> = widths.iter().map(|&b| b as f64).collect();
    let mut slopes = Vec::new();
    for l in 1..=model.num_learnable() {
        let ys: Vec<f64> = widths
            .iter()
            .map(|&b| measure_output_noise(&model, &calib, NoiseTarget::Weights(l), b).map(f64::ln))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        slopes.push(slope(&xs, &ys));
    }
    let ok = slopes.iter().all(|s| (s + LN4).abs() <= 0.25 * LN4);
    let shown: Vec<String> = slopes.iter().map(|s| format!("{s:.4}")).collect();
    check(ok, format!("weight-noise slopes [{}] vs -ln4 = {:.4}", shown.join(", "), -LN4))
}

/// Linearised objective identity on random configurations.
fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut lu = |lo: f64, hi: f64| (rng.random_range(lo.ln()..hi.ln())).exp();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let ctx = CostContext {
            device: DeviceProfile { f_local: lu(1e7, 1e10), gamma_local: lu(0.1, 50.0), kappa: lu(1e-29, 1e-25), pi: lu(0.01, 10.0), mem_budget: None },
            server: ServerProfile { f_server: lu(1e8, 1e11), gamma_server: lu(0.1, 50.0), zeta: lu(1e-4, 1.0), eta_m: lu(1e-29, 1e-25) },
            weights: CostWeights { omega: lu(0.01, 5.0), tau: lu(0.01, 5.0), eta: lu(0.01, 5.0) },
            rate: lu(1e5, 1e10),
        };
        let (o1, o2, z) = (lu(1.0, 1e9) as u64, lu(1.0, 1e9) as u64, lu(1.0, 1e9) as u64);
        let c = ctx.coefficients().map_err(|e| e.to_string())?;
        let lhs = c.xi * o1 as f64 + c.delta * o2 as f64 + c.epsilon * z as f64;
        let rhs = ctx.objective(o1, o2, z) + server_energy_term(o2, &ctx.server, &ctx.weights);
        worst = worst.max((lhs - rhs).abs() / rhs.abs());
    }
    check(worst <= 1e-12, format!("worst relative error {worst:.3e} over 100 configurations"))
}

fn splitquant(args: &[&str], out: &Path, seed: &str) -> Result<(), String> {
    let mnist = fixtures().join("mnist-mlp6");
    let status = Command::new(env!("CARGO_BIN_EXE_splitquant"))
        .args(args)
        .arg("--model")
        .arg(mnist.join("model"))
        .arg("--data")
        .arg(mnist.join("data"))
        .arg("--out")
        .arg(out)
        .env("SPLITQUANT_SEED", seed)
        .output()
        .map_err(|e| e.to_string())?;
    if status.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&status.stderr).trim()))
    }
}

fn pipeline(out: &Path) -> Result<f64, String> {
    let t = Instant::now();
    splitquant(&["calibrate"], out, "1234")?;
    splitquant(&["offline"], out, "1234")?;
    splitquant(&["sweep", "--accuracy", "0.01", "--p-min", "0"], out, "1234")?;
    Ok(t.elapsed().as_secs_f64())
}

struct Row {
    p: usize,
    z: f64,
    c: f64,
    j: f64,
    degradation: f64,
}

fn read_rows(path: &Path) -> Result<Vec<Row>, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .skip(1)
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| format!("{line}: {e}"));
            Ok(Row { p: num(1)? as usize, z: num(6)?, c: num(12)?, j: num(13)?, degradation: num(15)? })
        })
        .collect()
}

/// Server cost falls with p and optimization never raises the objective.
fn criterion_6(out: &Path, secs: f64) -> Outcome {
    let opt = read_rows(&out.join("optimized.csv"))?;
    let base = read_rows(&out.join("no_optimization.csv"))?;
    let mut ok = opt.len() == 7 && base.len() == 7;
    for rows in [&opt, &base] {
        ok &= rows.windows(2).all(|w| w[1].c < w[0].c);
    }
    ok &= opt.iter().zip(&base).all(|(o, b)| o.p == b.p && o.j <= b.j);
    let ratios: Vec<String> = opt.iter().zip(&base).map(|(o, b)| format!("{:.3}", o.j / b.j)).collect();
    check(ok && secs < 300.0, format!("J ratios by p [{}], pipeline {secs:.1}s", ratios.join(", ")))
}

/// Payload reduction and measured test degradation at a 1% budget.
fn criterion_7(out: &Path, secs: f64) -> Outcome {
    let opt: Vec<Row> = read_rows(&out.join("optimized.csv"))?.into_iter().filter(|r| r.p >= 1).collect();
    let base: Vec<Row> = read_rows(&out.join("no_optimization.csv"))?.into_iter().filter(|r| r.p >= 1).collect();
    if opt.len() != 6 || base.len() != 6 {
        return Err("expected rows for p = 1..6".into());
    }
    let red: Vec<f64> = opt.iter().zip(&base).map(|(o, b)| 1.0 - o.z / b.z).collect();
    let mean = red.iter().sum::<f64>() / red.len() as f64;
    let worst = opt.iter().map(|r| r.degradation).fold(f64::NEG_INFINITY, f64::max);
    let shown: Vec<String> = red.iter().map(|r| format!("{:.3}", r)).collect();
    check(
        (0.60..=0.90).contains(&mean) && worst <= 0.01 && secs < 900.0,
        format!("mean payload reduction {mean:.4} [{}], worst test degradation {worst:.4}", shown.join(", ")),
    )
}

/// Two seeded pipeline runs produce identical artifacts.
fn criterion_8(a: &Path, b: &Path) -> Outcome {
    let files = ["profile.json", "patterns.json", "optimized.csv", "no_optimization.csv", "magnitude_pruning.csv", "comparison.csv"];
    let mut differ = Vec::new();
    for f in files {
        let (x, y) = (fs::read(a.join(f)).map_err(|e| format!("{f}: {e}"))?, fs::read(b.join(f)).map_err(|e| format!("{f}: {e}"))?);
        if x != y {
            differ.push(f);
        }
    }
    check(differ.is_empty(), format!("{} files compared, differing: {:?}", files.len(), differ))
}

fn main() {
    let timed = |f: &dyn Fn() -> Outcome| {
        let t = Instant::now();
        let r = f();
        (r, t.elapsed().as_secs_f64())
    };
    let mut results: Vec<(u32, Outcome, f64)> = Vec::new();
    let (r, s) = timed(&criterion_1);
    results.push((1, r.and_then(|d| check(s < 1.0, format!("{d}, {s:.3}s"))), s));
    let (r, s) = timed(&criterion_2);
    results.push((2, r.and_then(|d| check(s < 1.0, format!("{d}, {s:.3}s"))), s));
    let (r, s) = timed(&criterion_3);
    results.push((3, r.and_then(|d| check(s < 60.0, d)), s));
    let (r, s) = timed(&criterion_4);
    results.push((4, r.and_then(|d| check(s < 60.0, d)), s));
    let (r, s) = timed(&criterion_5);
    results.push((5, r.and_then(|d| check(s < 1.0, d)), s));

    let dirs = (tempfile::tempdir().expect("temp dir"), tempfile::tempdir().expect("temp dir"));
    match (pipeline(dirs.0.path()), pipeline(dirs.1.path())) {
        (Ok(sa), Ok(sb)) => {
            results.push((6, criterion_6(dirs.0.path(), sa), sa));
            results.push((7, criterion_7(dirs.0.path(), sa), sa));
            results.push((8, criterion_8(dirs.0.path(), dirs.1.path()), sa + sb));
        }
        (Err(e), _) | (_, Err(e)) => {
            for c in 6..=8 {
                results.push((c, Err(e.clone()), 0.0));
            }
        }
    }

    let mut failed = 0;
    for (c, r, secs) in &results {
        match r {
            Ok(d) => println!("criterion {c}: PASS ({secs:.2}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {c}: FAIL ({secs:.2}s) {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
