use std::fs;
use std::path::{Path, PathBuf};

use splitquant::accuracy::{calibrate_profile, CalibrationConfig, NoiseSearch, RobustnessProfile};
use splitquant::costs::ChannelProfile;
use splitquant::nn::{load_model, DatasetBundle, Model};
use splitquant::optimizer::{offline_quantize, online_serve, write_segment, OfflineOptions, PatternStore, Request};
use splitquant::simulator::{
    compare_strategies, emit_comparison_csv, emit_csv, run_scenario, Scenario, SimInputs, SimReport, Strategy,
};

use crate::config::CliConfig;
use crate::{Cli, CliError, Command, ServeArgs, SweepArgs};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = CliConfig::load(cli.config.as_deref())?;
    let p = cli.paths;
    for (slot, flag) in [
        (&mut cfg.model_dir, p.model),
        (&mut cfg.data_dir, p.data),
        (&mut cfg.profile, p.profile),
        (&mut cfg.patterns, p.patterns),
        (&mut cfg.output_dir, p.out),
    ] {
        if flag.is_some() {
            *slot = flag;
        }
    }
    match cli.command {
        Command::Calibrate => calibrate(&cfg),
        Command::Offline => offline(&cfg),
        Command::Serve(args) => serve(cfg, args),
        Command::Sweep(args) => sweep(cfg, args),
    }
}

/// Writes through a temporary file so readers never see a partial document.
fn write_atomic(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))
}

fn output_file(cfg: &CliConfig, explicit: &Option<PathBuf>, name: &str) -> Result<PathBuf, CliError> {
    match (explicit, &cfg.output_dir) {
        (Some(p), _) => Ok(p.clone()),
        (None, Some(dir)) => Ok(dir.join(name)),
        (None, None) => Err(CliError::Usage(format!("missing --out or an explicit path for {name}"))),
    }
}

fn load_profile(cfg: &CliConfig) -> Result<RobustnessProfile, CliError> {
    let path = output_file(cfg, &cfg.profile, "profile.json")?;
    RobustnessProfile::from_json(&read_text(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn load_store(cfg: &CliConfig) -> Result<PatternStore, CliError> {
    let path = output_file(cfg, &cfg.patterns, "patterns.json")?;
    PatternStore::from_json(&read_text(&path)?).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn model(cfg: &CliConfig) -> Result<Model, CliError> {
    Ok(load_model(cfg.require(&cfg.model_dir, "model")?)?)
}

fn bundle(cfg: &CliConfig) -> Result<DatasetBundle, CliError> {
    Ok(DatasetBundle::load(cfg.require(&cfg.data_dir, "data")?)?)
}

fn calibrate(cfg: &CliConfig) -> Result<(), CliError> {
    let out = output_file(cfg, &cfg.profile, "profile.json")?;
    let model = model(cfg)?;
    let data = bundle(cfg)?;
    let calib = data.train.seeded_subset(cfg.calib_samples, cfg.seed);
    let ccfg = CalibrationConfig {
        levels: cfg.levels.clone(),
        samples: cfg.calib_samples,
        b_ref: cfg.b_ref,
        search: NoiseSearch { trials: cfg.noise_trials, seed: cfg.seed, ..NoiseSearch::default() },
    };
    let profile = calibrate_profile(&model, &calib, &ccfg)?;
    write_atomic(&out, &profile.to_json())?;
    println!("model {}  samples {}  mean_adv {:.6e}", profile.model_id, profile.calib.samples, profile.mean_adv);
    for lp in &profile.layers {
        let rho: Vec<String> = lp.rho.iter().map(|r| format!("{r:.4e}")).collect();
        println!("layer {}  s_w {:.4e}  s_x {:.4e}  rho [{}]", lp.layer, lp.s_w, lp.s_x, rho.join(", "));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn offline(cfg: &CliConfig) -> Result<(), CliError> {
    let out = output_file(cfg, &cfg.patterns, "patterns.json")?;
    let model = model(cfg)?;
    let data = bundle(cfg)?;
    let profile = load_profile(cfg)?;
    let existing = if out.exists() { PatternStore::from_json(&read_text(&out)?).ok() } else { None };
    let opts = OfflineOptions { levels: cfg.levels.clone(), context: cfg.context() };
    let mut checkpoint = |s: &PatternStore| -> splitquant::Result<()> {
        write_atomic(&out, &s.to_json()).map_err(|e| splitquant::Error::Missing(e.message_owned()))
    };
    let store = offline_quantize(&model, &data.val, &profile, &opts, existing, &mut checkpoint)?;
    write_atomic(&out, &store.to_json())?;
    for q in &store.patterns {
        println!(
            "a {:<6} p {}  bits {:?}  act {}  psi {:.4e}  val_deg {:.4}",
            q.a_level, q.p, q.bits, q.bits_act, q.psi_total, q.validated_degradation
        );
    }
    println!("wrote {} ({} patterns)", out.display(), store.patterns.len());
    Ok(())
}

fn serve(mut cfg: CliConfig, args: ServeArgs) -> Result<(), CliError> {
    let out = cfg.require(&cfg.output_dir, "out")?.join("segment");
    if let Some(v) = args.f_local {
        cfg.f_local = v;
    }
    if let Some(v) = args.pi {
        cfg.pi = v;
    }
    if let Some(v) = args.kappa {
        cfg.kappa = v;
    }
    if let Some(v) = args.gamma_local {
        cfg.gamma_local = v;
    }
    if args.mem_budget.is_some() {
        cfg.mem_budget = args.mem_budget;
    }
    let channel = match args.rate {
        Some(rate) => ChannelProfile::FixedRate { rate },
        None => cfg.channel_profile(),
    };
    let model = model(&cfg)?;
    let profile = load_profile(&cfg)?;
    let store = load_store(&cfg)?;
    let req = Request { model_id: model.id().to_string(), a: args.accuracy, device: cfg.device(), channel, weights: cfg.weights() };
    let outcome = online_serve(&req, &store, &model, &profile, &cfg.server())?;
    write_segment(&outcome.segment, &out)?;
    let s = &outcome.selection;
    println!("a* {}", s.a_star);
    println!("p* {}", s.pattern.p);
    println!("bits {:?}", s.pattern.bits);
    println!("bits_act {}", s.pattern.bits_act);
    println!("Z {}", s.payload.total);
    println!("T {:.8e}", s.breakdown.total_time());
    println!("E {:.8e}", s.breakdown.total_energy());
    println!("C {:.8e}", s.breakdown.cost);
    println!("J {:.8e}", s.objective);
    println!("segment {}", out.display());
    Ok(())
}

fn parse_strategy(name: &str) -> Result<Strategy, CliError> {
    match name.trim() {
        "optimized" => Ok(Strategy::Optimized),
        "no_optimization" => Ok(Strategy::NoOptimization),
        "magnitude_pruning" => Ok(Strategy::MagnitudePruning { keep_fraction: None }),
        other => Err(CliError::Usage(format!("unknown strategy '{other}'"))),
    }
}

fn sweep(mut cfg: CliConfig, args: SweepArgs) -> Result<(), CliError> {
    if let Some(a) = args.accuracy {
        cfg.a_level = a;
    }
    if let Some(s) = args.strategies {
        cfg.strategies = s;
    }
    if let Some(p) = args.p_min {
        cfg.p_min = p;
    }
    if args.p_max.is_some() {
        cfg.p_max = args.p_max;
    }
    let out = cfg.require(&cfg.output_dir, "out")?.to_path_buf();
    let strategies = cfg.strategies.iter().map(|s| parse_strategy(s)).collect::<Result<Vec<_>, _>>()?;
    if strategies.is_empty() {
        return Err(CliError::Usage("no strategies requested".into()));
    }
    let model = model(&cfg)?;
    let data = bundle(&cfg)?;
    let profile = load_profile(&cfg)?;
    let store = load_store(&cfg)?;
    let scenario = Scenario {
        model_id: model.id().to_string(),
        context: cfg.context(),
        a_level: cfg.a_level,
        p_min: cfg.p_min,
        p_max: cfg.p_max.unwrap_or(model.num_learnable()),
        seed: cfg.seed,
    };
    let inputs = SimInputs { model: &model, data: &data.test, profile: &profile, store: Some(&store) };

    let optimized = run_scenario(&scenario, Strategy::Optimized, &inputs, None)?;
    let mut reports = Vec::new();
    for &s in &strategies {
        let report = match s {
            Strategy::Optimized => optimized.clone(),
            other => run_scenario(&scenario, other, &inputs, Some(&optimized))?,
        };
        let path = out.join(format!("{}.csv", s.name()));
        emit_csv(&report, &path)?;
        println!("wrote {}", path.display());
        reports.push(report);
    }
    let all = SimReport::combine(reports);
    let baseline = Strategy::NoOptimization.name();
    let mut comparisons = Vec::new();
    if !all.strategy(baseline).is_empty() {
        for s in &strategies {
            if s.name() != baseline {
                let c = compare_strategies(&all, s.name(), baseline)?;
                println!(
                    "{} vs {}: mean payload reduction {:.4}, mean J ratio {:.4}, mean accuracy gap {:.4}",
                    c.candidate, c.baseline, c.mean_payload_reduction, c.mean_j_ratio, c.mean_accuracy_gap
                );
                comparisons.push(c);
            }
        }
    }
    let path = out.join("comparison.csv");
    emit_comparison_csv(&comparisons, &path)?;
    println!("wrote {}", path.display());
    if let Some(best) = all.strategy(Strategy::Optimized.name()).into_iter().filter(|r| r.p >= 1).min_by(|x, y| x.j.total_cmp(&y.j)) {
        println!("optimized min J {:.8e} at p {}", best.j, best.p);
    }
    Ok(())
}
