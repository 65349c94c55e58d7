mod common;

use std::cell::RefCell;

use common::{mnist, toy, toy_profile};
use splitquant::accuracy::{degradation_terms, psi, LN4};
use splitquant::costs::{ChannelProfile, CostContext, CostWeights, DeviceProfile, ServerProfile};
use splitquant::nn::LayerStats;
use splitquant::optimizer::{
    anchor_bitwidth, chain_solve, offline_quantize, online_serve, read_segment, ratio_spread, segment_accuracy,
    write_segment, OfflineOptions, PatternStore, Request,
};

fn options() -> OfflineOptions {
    OfflineOptions { levels: toy_profile().levels.clone(), context: CostContext::default() }
}

fn solve(existing: Option<PatternStore>) -> (PatternStore, usize) {
    let t = toy();
    let calls = RefCell::new(0);
    let mut cp = |_: &PatternStore| {
        *calls.borrow_mut() += 1;
        Ok(())
    };
    let store = offline_quantize(&t.model, &t.data.val, toy_profile(), &options(), existing, &mut cp).unwrap();
    (store, calls.into_inner())
}

#[test]
fn store_is_complete_and_validated() {
    let t = toy();
    let (store, _) = solve(None);
    assert!(store.is_complete());
    assert_eq!(store.patterns.len(), 5 * t.model.num_learnable());
    for q in &store.patterns {
        let acc = segment_accuracy(&t.model, &t.data.val, toy_profile(), q.p, &q.bits, q.bits_act).unwrap();
        let clean = splitquant::accuracy::accuracy(&t.model, &t.data.val).unwrap();
        assert!(clean - acc <= q.a_level, "a={} p={} measured {}", q.a_level, q.p, clean - acc);
        assert!((clean - acc - q.validated_degradation).abs() < 1e-12);
    }
}

#[test]
fn tighter_budgets_never_use_fewer_bits() {
    let (store, _) = solve(None);
    let levels = store.levels.clone();
    for p in 1..=store.num_layers {
        for w in levels.windows(2) {
            let (tight, loose) = (store.get(w[0], p).unwrap(), store.get(w[1], p).unwrap());
            assert!(tight.bits.iter().zip(&loose.bits).all(|(a, b)| a >= b));
            assert!(tight.bits_act >= loose.bits_act);
            // Under a common robustness level, more bits means less measured degradation.
            let common = levels[0];
            let f = |q: &splitquant::optimizer::QuantPattern| {
                let b: Vec<f64> = q.bits.iter().map(|&x| x as f64).collect();
                degradation_terms(toy_profile(), common, &b, q.bits_act as f64).unwrap().total
            };
            assert!(f(tight) <= f(loose));
        }
    }
}

#[test]
fn store_is_deterministic_and_resumable() {
    let (a, calls) = solve(None);
    let (b, _) = solve(None);
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(calls, a.levels.len());

    let mut partial = a.clone();
    partial.patterns.retain(|q| !(q.a_level == partial.levels[0] && q.p == 2));
    let (resumed, calls) = solve(Some(partial));
    assert_eq!(calls, 1);
    assert_eq!(resumed.to_json(), a.to_json());

    let mut foreign = a.clone();
    foreign.config_fingerprint = "other".into();
    foreign.patterns.truncate(1);
    let (fresh, calls) = solve(Some(foreign));
    assert_eq!(calls, a.levels.len());
    assert_eq!(fresh.to_json(), a.to_json());
}

/// Objective recomputed from the raw cost model.
fn direct_objective(stats: &LayerStats, bits: &[u32], bits_act: u32, dev: &DeviceProfile, srv: &ServerProfile, w: &CostWeights, rate: f64) -> f64 {
    let p = bits.len();
    let o1: u64 = (1..=p).map(|l| stats.o(l)).sum();
    let o2: u64 = (p + 1..=stats.num_layers()).map(|l| stats.o(l)).sum();
    let z: u64 = bits.iter().enumerate().map(|(i, &b)| b as u64 * stats.z_w(i + 1)).sum::<u64>() + bits_act as u64 * stats.z_x(p);
    let t = o1 as f64 * dev.gamma_local / dev.f_local + z as f64 / rate + o2 as f64 * srv.gamma_server / srv.f_server;
    let e = dev.kappa * dev.f_local.powi(2) * o1 as f64 * dev.gamma_local + dev.pi * z as f64 / rate;
    let c = o2 as f64 * srv.gamma_server * srv.zeta / srv.f_server;
    w.omega * t + w.tau * e + w.eta * c
}

#[test]
fn serving_picks_the_sweep_minimum() {
    let t = toy();
    let (store, _) = solve(None);
    let stats = LayerStats::of(&t.model);
    let srv = ServerProfile::default();
    for (a, rate, f_local) in [(0.015, 200e6, 200e6), (0.05, 1e3, 200e6), (0.2, 1e9, 1e5)] {
        let req = Request {
            model_id: t.model.id().into(),
            a,
            device: DeviceProfile { f_local, ..DeviceProfile::default() },
            channel: ChannelProfile::FixedRate { rate },
            weights: CostWeights { eta: 0.5, ..CostWeights::default() },
        };
        let out = online_serve(&req, &store, &t.model, toy_profile(), &srv).unwrap();
        let a_star = store.levels.iter().cloned().filter(|&l| l <= a).fold(0.0, f64::max);
        assert_eq!(out.selection.a_star, a_star);
        let sweep: Vec<f64> = (1..=stats.num_layers())
            .map(|p| {
                let q = store.get(a_star, p).unwrap();
                direct_objective(&stats, &q.bits, q.bits_act, &req.device, &srv, &req.weights, rate)
            })
            .collect();
        let best = sweep.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!((out.selection.objective - best).abs() <= 1e-12 * best);
        assert_eq!(out.selection.pattern.p, sweep.iter().position(|&j| j == best).unwrap() + 1);
        assert_eq!(out.segment.p, out.selection.pattern.p);

        let dir = tempfile::tempdir().unwrap();
        write_segment(&out.segment, dir.path()).unwrap();
        assert_eq!(read_segment(dir.path()).unwrap(), out.segment);
    }
}

#[test]
fn reference_anchor_matches_hand_substitution() {
    // Reference settings, p = 3 on the 784-512-256-128-64-32-10 network: o(3) = 256 * 128, z = 128.
    let stats = LayerStats::of(&mnist().model);
    let coeffs = CostContext::default().coefficients().unwrap();
    let xi = 1.0 * 5.0 / 200e6 + 1.0 * 5.0 * 3e-27 * 200e6 * 200e6;
    let delta = 1.0 * 1.25 / 3e9 + 1.0 * 1.25 * 3.75e-27 * 3e9 * 3e9;
    let eps = (1.0 + 1.0) / 200e6;
    let expected = ((xi - delta) * 32768.0 - 128.0 / 4f64.ln()) / (eps * 128.0);
    let got = anchor_bitwidth(3, &stats, &coeffs).unwrap();
    assert!((got - expected).abs() <= 1e-12 * expected.abs());
    assert!(got < 0.0);
}

#[test]
fn continuous_solutions_are_stationary() {
    // With lambda fitted by least squares to the stationarity equations, no single
    // +/-0.01 move in one width lowers the Lagrangian.
    let t = toy();
    let stats = LayerStats::of(&t.model);
    let prof = toy_profile();
    let eps = CostContext::default().coefficients().unwrap().epsilon;
    for &a in &prof.levels {
        for p in 1..=stats.num_layers() {
            let sol = chain_solve(p, 6.0, &stats, prof, a).unwrap();
            assert!(ratio_spread(&sol, &stats, prof, a).unwrap() <= 1e-9);
            let k = prof.levels.iter().position(|&l| l == a).unwrap();
            let mut items: Vec<(f64, f64, f64)> = (1..=p).map(|l| (stats.z_w(l) as f64, prof.layers[l - 1].s_w, prof.layers[l - 1].rho[k])).collect();
            items.push((stats.z_x(p) as f64, prof.layers[p - 1].s_x, prof.layers[p - 1].rho[k]));
            let mut bits = sol.bits.clone();
            bits.push(sol.bits_act);
            let budget: f64 = items.iter().zip(&bits).map(|(&(_, s, r), &b)| psi(s, b, r)).sum();
            let grads: Vec<f64> = items.iter().zip(&bits).map(|(&(_, s, r), &b)| LN4 * psi(s, b, r)).collect();
            let lambda = items.iter().zip(&grads).map(|(&(z, _, _), g)| eps * z * g).sum::<f64>() / grads.iter().map(|g| g * g).sum::<f64>();
            let lagrangian = |b: &[f64]| {
                let cost: f64 = items.iter().zip(b).map(|(&(z, _, _), &x)| eps * z * x).sum();
                let g: f64 = items.iter().zip(b).map(|(&(_, s, r), &x)| psi(s, x, r)).sum::<f64>() - budget;
                cost + lambda * g
            };
            let base = lagrangian(&bits);
            for i in 0..bits.len() {
                for d in [-0.01, 0.01] {
                    let mut moved = bits.clone();
                    moved[i] += d;
                    assert!(lagrangian(&moved) >= base - 1e-6 * base.abs(), "a={a} p={p} item {i} step {d}");
                }
            }
        }
    }
}

#[test]
fn robustness_grows_with_the_budget() {
    for lp in &toy_profile().layers {
        assert!(lp.rho.windows(2).all(|w| w[0] <= w[1]), "layer {}: {:?}", lp.layer, lp.rho);
    }
}
