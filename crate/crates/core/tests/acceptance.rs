//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines always reach the output.

use std::process::ExitCode;

use kllab::harness::presets::{paper_preset, EQUAL_REWARD_BETAS, FAMILY_SCENARIOS, FIG2_BETAS, MARA_BETAS};
use kllab::harness::{run_sweeps, RunRecord};
use kllab::mara::{augment_ref_view, augment_rewards, global_anchor, mara_target, AnchorTiebreak, MaraConfig};
use kllab::targets::{flip_beta, forward_kl_target, log_prob_ratio, reverse_kl_target};
use kllab::trainer::{exact_gradient, exact_objective, mc_gradient_reverse, Baseline, SoftmaxPolicy};
use kllab::{scenario_by_name, seeded_rng, Scenario, TargetKind, TargetSpec};
use rand::Rng;

struct Line {
    id: u8,
    ok: bool,
    detail: String,
}

fn tv(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn mode_masses(s: &Scenario, masses: &[f64]) -> (f64, f64) {
    let r = s.mode_ranges();
    (masses[r[0].clone()].iter().sum(), masses[r[1].clone()].iter().sum())
}

fn random_scenario(rng: &mut impl Rng, n: usize, lo: f64) -> Scenario {
    let m: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let r: Vec<f64> = (0..n).map(|_| rng.gen_range(lo..1.0)).collect();
    Scenario::from_parts("random", &m, &r).unwrap()
}

fn flip() -> Line {
    let s = scenario_by_name("fig2_two_mode").unwrap();
    let (i, j) = (20, 40);
    let b = flip_beta(&s, i, j).unwrap();
    // at the flip point both peaks carry the same target mass
    let g = reverse_kl_target(&s, b).unwrap();
    let equal = (g.log_mass(i) - g.log_mass(j)).abs() < 1e-9;
    let pref = |beta| {
        let g = reverse_kl_target(&s, beta).unwrap().masses();
        let (a, c) = mode_masses(&s, &g);
        a - c
    };
    let (lo, hi) = (pref(0.10), pref(0.15));
    Line {
        id: 1,
        ok: (b - 0.1316).abs() <= 5e-4 && equal && lo < 0.0 && hi > 0.0,
        detail: format!("flip beta {b:.5}; mode1-mode2 {lo:+.3} at 0.10, {hi:+.3} at 0.15"),
    }
}

fn extreme_ratio() -> Line {
    let s = Scenario::from_parts("pair", &[0.5, 0.5], &[0.1, 0.0]).unwrap();
    let r = log_prob_ratio(&s, 1e-3, 0, 1).unwrap();
    Line { id: 2, ok: r == 100.0, detail: format!("log ratio {r:?} (e^100 = {:.3e})", 100f64.exp()) }
}

fn equal_reward(records: &[RunRecord]) -> Line {
    let s = scenario_by_name("equal_reward_unequal_support").unwrap();
    let (a, b) = mode_masses(&s, &s.reference.masses());
    let ref_ratio = a / b;
    let mut analytic = 0.0f64;
    let mut trained = 0.0f64;
    let mut seen = 0;
    for &beta in &EQUAL_REWARD_BETAS {
        let (ga, gb) = mode_masses(&s, &reverse_kl_target(&s, beta).unwrap().masses());
        analytic = analytic.max((ga / gb / ref_ratio - 1.0).abs());
        for r in records.iter().filter(|r| {
            r.scenario == s.name && r.objective == TargetKind::ReverseKl && r.gradient_mode == "exact" && r.beta == beta
        }) {
            let (ta, tb) = mode_masses(&s, &r.final_masses);
            trained = trained.max((ta / tb / ref_ratio - 1.0).abs());
            seen += 1;
        }
    }
    Line {
        id: 3,
        ok: analytic <= 1e-9 && trained <= 0.10 && seen == EQUAL_REWARD_BETAS.len(),
        detail: format!("reference ratio {ref_ratio:.4}; target dev {analytic:.1e}; trained dev {trained:.4} over {seen} runs"),
    }
}

fn family(records: &[RunRecord]) -> Line {
    let mut worst_exact = 0.0f64;
    let mut exact_runs = 0;
    let mut mc: Vec<(String, TargetKind, f64, Vec<f64>)> = Vec::new();
    for r in records.iter().filter(|r| FAMILY_SCENARIOS.contains(&r.scenario.as_str()) && !r.mara_enabled) {
        let s = scenario_by_name(&r.scenario).unwrap();
        let target = match r.objective {
            TargetKind::ReverseKl => reverse_kl_target(&s, r.beta).unwrap(),
            TargetKind::ForwardKl => {
                let sol = forward_kl_target(&s, r.beta).unwrap();
                if sol.boundary_case {
                    continue;
                }
                sol.distribution
            }
            TargetKind::Generalized => continue,
        };
        let d = tv(&r.final_masses, &target.masses());
        if r.gradient_mode == "exact" {
            worst_exact = worst_exact.max(d);
            exact_runs += 1;
        } else {
            match mc.iter_mut().find(|c| c.0 == r.scenario && c.1 == r.objective && c.2 == r.beta) {
                Some(c) => c.3.push(d),
                None => mc.push((r.scenario.clone(), r.objective, r.beta, vec![d])),
            }
        }
    }
    let worst_mc = mc.iter().map(|c| c.3.iter().sum::<f64>() / c.3.len() as f64).fold(0.0, f64::max);
    let full_grid = mc.len() == 2 * FIG2_BETAS.len() && mc.iter().all(|c| c.3.len() == 3);
    Line {
        id: 4,
        ok: worst_exact <= 0.05 && worst_mc <= 0.15 && exact_runs > 0 && full_grid,
        detail: format!("exact max TV {worst_exact:.4} over {exact_runs} runs; Monte-Carlo max 3-seed mean TV {worst_mc:.4} over {} cells", mc.len()),
    }
}

fn forward_solver() -> Line {
    let two = scenario_by_name("two_point").unwrap();
    let lambda = forward_kl_target(&two, 1.0).unwrap().lambda;
    let closed = (lambda - (1.0 + 2f64.sqrt() / 2.0)).abs();
    let mut rng = seeded_rng(99, 3);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(2..=40);
        let s = random_scenario(&mut rng, n, -2.0);
        let beta = rng.gen_range(0.01..3.0);
        let g = forward_kl_target(&s, beta).unwrap().distribution;
        let v: Vec<f64> = (0..n).map(|i| s.reward(i) + beta * s.reference.mass(i) / g.mass(i)).collect();
        let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        worst = worst.max(spread);
    }
    let off = Scenario::from_parts("leftover", &[1.0, 0.0], &[0.0, 2.0]).unwrap();
    let m = forward_kl_target(&off, 1.0).unwrap().distribution.masses();
    Line {
        id: 5,
        ok: closed <= 1e-10 && worst <= 1e-8 && m == vec![0.5, 0.5],
        detail: format!("closed-form error {closed:.1e}; worst residual {worst:.1e}; leftover {m:?}"),
    }
}

fn gradients() -> Line {
    let mut rng = seeded_rng(5, 4);
    let (mut id_err, mut fd_err) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.gen_range(2..=16);
        let s = random_scenario(&mut rng, n, -1.0);
        let beta = rng.gen_range(0.02..2.0);
        let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let policy = SoftmaxPolicy::from_logits(logits.clone()).unwrap();
        let p = policy.distribution().masses();
        // KL(π || G) gradient from scratch: π_k (log π_k - log G_k - KL)
        let lg: Vec<f64> = (0..n).map(|i| s.reference.mass(i).ln() + s.reward(i) / beta).collect();
        let lz = lg.iter().map(|x| x.exp()).sum::<f64>().ln();
        let kl: f64 = (0..n).map(|i| p[i] * (p[i].ln() - (lg[i] - lz))).sum();
        let grad = exact_gradient(&policy, &s, &TargetSpec::reverse(beta)).unwrap();
        for k in 0..n {
            let dkl = p[k] * (p[k].ln() - (lg[k] - lz) - kl);
            id_err = id_err.max((grad[k] + beta * dkl).abs());
        }
        for obj in [TargetSpec::reverse(beta), TargetSpec::forward(beta), TargetSpec::generalized(beta, 0.3)] {
            let grad = exact_gradient(&policy, &s, &obj).unwrap();
            for k in 0..n {
                let shifted = |h: f64| {
                    let mut l = logits.clone();
                    l[k] += h;
                    exact_objective(&SoftmaxPolicy::from_logits(l).unwrap(), &s, &obj).unwrap()
                };
                let fd = (shifted(1e-5) - shifted(-1e-5)) / 2e-5;
                fd_err = fd_err.max((fd - grad[k]).abs() / grad[k].abs().max(1e-3));
            }
        }
    }
    Line {
        id: 6,
        ok: id_err <= 1e-9 && fd_err <= 1e-6,
        detail: format!("identity error {id_err:.1e}; finite-difference relative error {fd_err:.1e}"),
    }
}

fn mara(records: &[RunRecord]) -> Line {
    let s = scenario_by_name("mara_toy").unwrap();
    let tau = s.tau.unwrap();
    let z = global_anchor(&s, tau, AnchorTiebreak::LowestIndex).unwrap();
    let above = s.above(tau);
    let mut spread = 0.0f64;
    for &beta in &MARA_BETAS {
        let g = mara_target(&s, beta, tau, z).unwrap();
        for &i in &above {
            spread = spread.max((g.mass(i) / g.mass(above[0]) - 1.0).abs());
        }
    }
    let (mut with, mut without) = (0.0f64, f64::INFINITY);
    let mut kinds_with = Vec::new();
    for r in records.iter().filter(|r| r.scenario == s.name && r.gradient_mode == "exact") {
        let (a, b) = mode_masses(&s, &r.final_masses);
        if r.mara_enabled {
            with = with.max((a / b - 1.0).abs());
            kinds_with.push(r.objective);
        } else {
            without = without.min((a / b).max(b / a));
        }
    }
    let both = kinds_with.contains(&TargetKind::ReverseKl) && kinds_with.contains(&TargetKind::ForwardKl);
    Line {
        id: 7,
        ok: spread <= 1e-9 && with <= 0.10 && without >= 3.0 && both,
        detail: format!("target spread {spread:.1e}; MARA imbalance {with:.4}; baseline imbalance >= {without:.2}x"),
    }
}

fn coefficients() -> Line {
    let mut rng = seeded_rng(8, 8);
    let (mut count, mut worst) = (0, 0.0f64);
    while count < 10_000 {
        let s = random_scenario(&mut rng, 6, 0.0);
        let beta = rng.gen_range(1e-3..4.0);
        let tau = rng.gen_range(0.0..0.9);
        let batch: Vec<usize> = (0..6).map(|_| rng.gen_range(0..6)).collect();
        let cfg = MaraConfig::constant(tau, beta);
        let (a, b) = (augment_rewards(&batch, &s, &cfg), augment_ref_view(&batch, &s, &cfg));
        for p in 0..batch.len() {
            if s.reward(batch[p]) < tau {
                continue;
            }
            let lp = rng.gen_range(-15.0..0.0);
            let c1 = a.augmented_rewards[p] - beta * (lp - s.ref_log_prob(batch[p]));
            let c2 = b.augmented_rewards[p] - beta * (lp - b.augmented_ref_logprobs[p]);
            worst = worst.max((c1 - c2).abs() / c1.abs().max(1.0));
            count += 1;
        }
    }
    Line { id: 8, ok: worst <= 1e-12, detail: format!("{count} qualifying samples, worst scaled difference {worst:.1e}") }
}

fn unbiased() -> Line {
    let mut rng = seeded_rng(10, 10);
    let s = random_scenario(&mut rng, 10, 0.0);
    let policy = SoftmaxPolicy::from_logits((0..10).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    let beta = 0.3;
    let exact = exact_gradient(&policy, &s, &TargetSpec::reverse(beta)).unwrap();
    let m = 100_000u64;
    let (mut sum, mut sq) = ([0.0f64; 10], [0.0f64; 10]);
    for seed in 0..m {
        let g = mc_gradient_reverse(&policy, &s, beta, 32, Baseline::None, seed).unwrap();
        for k in 0..10 {
            sum[k] += g[k];
            sq[k] += g[k] * g[k];
        }
    }
    let mut worst = 0.0f64;
    for k in 0..10 {
        let mean = sum[k] / m as f64;
        let se = ((sq[k] / m as f64 - mean * mean) / (m as f64 - 1.0)).sqrt();
        worst = worst.max((mean - exact[k]).abs() / se);
    }
    Line { id: 9, ok: worst <= 3.0, detail: format!("worst coordinate {worst:.2} standard errors over {m} batches") }
}

fn main() -> ExitCode {
    let records = run_sweeps(&paper_preset(), std::thread::available_parallelism().map_or(1, |n| n.get())).unwrap();
    let failed_runs = records.iter().filter(|r| r.failed()).count();
    let lines = [
        flip(),
        extreme_ratio(),
        equal_reward(&records),
        family(&records),
        forward_solver(),
        gradients(),
        mara(&records),
        coefficients(),
        unbiased(),
    ];
    for l in &lines {
        println!("{} criterion {}: {}", if l.ok { "PASS" } else { "FAIL" }, l.id, l.detail);
    }
    println!("{} sweep runs, {failed_runs} failed", records.len());
    if lines.iter().all(|l| l.ok) && failed_runs == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
