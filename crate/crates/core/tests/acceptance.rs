//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use beamform_ee::conic::{AffineExpr, ConicProgram, Sense, SolveStatus};
use beamform_ee::experiment::{self, ExperimentKind, ExperimentSpec};
use beamform_ee::linalg::{CVector, C64};
use beamform_ee::metrics::{self, LinkEvaluator};
use beamform_ee::mmse::mmse_receivers;
use beamform_ee::sca::{self, linearize_inverse};
use beamform_ee::{BeamformerSet, ChannelSet, Execution, IterateState, Mode, ReceiverSet, Scenario, ScenarioConfig, SolverOptions};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn scenario(n: usize, m: usize, rate_mbps: f64, seed: u64) -> (Scenario, ChannelSet) {
    let s = ScenarioConfig {
        bs_antennas: n,
        rx_antennas: m,
        rate_target_mbps: rate_mbps,
        seed,
        ..Default::default()
    }
    .build()
    .unwrap();
    let ch = s.channels();
    (s, ch)
}

fn random_cvector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> CVector {
    CVector::from_fn(n, |_, _| C64::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * scale)
}

/// Random beams at roughly the per-BS budget, on B=2, N=4, K=4, L=2, M=2.
fn random_instance(seed: u64) -> (Scenario, ChannelSet, BeamformerSet) {
    let s = ScenarioConfig {
        num_users: 4,
        num_groups: 2,
        seed,
        ..Default::default()
    }
    .build()
    .unwrap();
    let ch = s.channels();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
    let mut beams = BeamformerSet::zeros(&s.topology);
    let per = (s.power.p_max_w / 8.0).sqrt() / 2f64.sqrt();
    for w in beams.private.iter_mut().flatten().chain(beams.common.iter_mut()) {
        *w = random_cvector(&mut rng, w.len(), per / 2f64.sqrt());
    }
    (s, ch, beams)
}

fn c1_duality() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let (s, ch, beams) = random_instance(seed);
        let n0 = s.radio.noise_power_w;
        let rx = mmse_receivers(&s.topology, &ch, &beams, n0, Execution::Sequential).unwrap();
        let eval = LinkEvaluator::new(&s.topology, &ch, &beams, &rx, n0).unwrap();
        for k in 0..s.topology.num_users() {
            for l in 0..s.topology.num_private_streams(k) {
                worst = worst.max((eval.mse_private(k, l) - 1.0 / (1.0 + eval.sinr_private(k, l))).abs());
            }
            worst = worst.max((eval.mse_common(k) - 1.0 / (1.0 + eval.sinr_common(k))).abs());
        }
    }
    outcome(worst <= 1e-9, format!("max |eps - 1/(1+sinr)| = {worst:.2e} over 100 instances (tol 1e-9)"))
}

fn c2_mmse_optimality() -> Outcome {
    let mut violations = 0usize;
    let mut margin = f64::INFINITY;
    let mut trials = 0usize;
    for seed in 0..100 {
        let (s, ch, beams) = random_instance(seed);
        let n0 = s.radio.noise_power_w;
        let rx = mmse_receivers(&s.topology, &ch, &beams, n0, Execution::Sequential).unwrap();
        let eval = LinkEvaluator::new(&s.topology, &ch, &beams, &rx, n0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        let topo = &s.topology;
        for k in 0..topo.num_users() {
            let streams: Vec<Option<usize>> = (0..topo.num_private_streams(k)).map(Some).chain([None]).collect();
            for stream in streams {
                let (optimal, u0) = match stream {
                    Some(l) => (eval.mse_private(k, l), rx.private[k][l].clone()),
                    None => (eval.mse_common(k), rx.common[k].clone()),
                };
                for t in 0..100 {
                    // half unrelated receivers, half perturbations of the MMSE receiver
                    let scale = u0.norm().max(1e-300);
                    let u = if t % 2 == 0 {
                        random_cvector(&mut rng, u0.len(), scale)
                    } else {
                        &u0 + random_cvector(&mut rng, u0.len(), scale * 1e-3)
                    };
                    let mut alt: ReceiverSet = rx.clone();
                    match stream {
                        Some(l) => alt.private[k][l] = u,
                        None => alt.common[k] = u,
                    }
                    let e = LinkEvaluator::new(topo, &ch, &beams, &alt, n0).unwrap();
                    let other = match stream {
                        Some(l) => e.mse_private(k, l),
                        None => e.mse_common(k),
                    };
                    trials += 1;
                    margin = margin.min(other - optimal);
                    if optimal > other + 1e-12 {
                        violations += 1;
                    }
                }
            }
        }
    }
    outcome(violations == 0, format!("{violations} of {trials} random receivers beat MMSE (min margin {margin:.2e})"))
}

fn c3_tangent() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst_gap = f64::NEG_INFINITY;
    let mut worst_touch: f64 = 0.0;
    for _ in 0..100 {
        let p: f64 = (rng.random::<f64>() * 8.0 - 4.0).exp();
        let t = linearize_inverse(p).unwrap();
        worst_touch = worst_touch.max((t.eval(p) - 1.0 / p).abs());
        for _ in 0..1000 {
            let nu: f64 = (rng.random::<f64>() * 12.0 - 6.0).exp();
            worst_gap = worst_gap.max(t.eval(nu) - 1.0 / nu);
        }
    }
    outcome(
        worst_gap <= 0.0 && worst_touch <= 1e-12,
        format!("max tangent - 1/nu = {worst_gap:.2e}, |tangent - 1/nu| at nu_pt <= {worst_touch:.2e}"),
    )
}

struct Run {
    scenario: Scenario,
    channels: ChannelSet,
    state: IterateState,
}

fn run_seeds(n: usize, m: usize, rate: f64, seeds: std::ops::Range<u64>, mode: Mode) -> Vec<Run> {
    let opts = SolverOptions { mode, ..Default::default() };
    seeds
        .map(|seed| {
            let (scenario, channels) = scenario(n, m, rate, seed);
            let state = sca::run(&scenario, &channels, &opts).unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            Run { scenario, channels, state }
        })
        .collect()
}

fn c4_convergence(runs: &[Run]) -> Outcome {
    let mut monotone = 0;
    let mut fast = 0;
    let mut ratios = Vec::new();
    for r in runs {
        let trace = r.state.ee_trace();
        if trace.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-6)) {
            monotone += 1;
        }
        let at10 = trace[trace.len().min(11) - 1];
        let ratio = at10 / r.state.ee();
        ratios.push(format!("{ratio:.3}"));
        if ratio >= 0.9 {
            fast += 1;
        }
    }
    outcome(
        monotone == runs.len() && fast >= 8,
        format!("monotone {monotone}/{}; EE(10)/EE(final) >= 0.9 on {fast}/{} (need 8) [{}]", runs.len(), runs.len(), ratios.join(" ")),
    )
}

fn c5_feasibility(runs: &[&Run]) -> Outcome {
    let mut checked = 0;
    let mut bad = Vec::new();
    for r in runs {
        let (s, ch, st) = (&r.scenario, &r.channels, &r.state);
        if st.termination == sca::Termination::SolverIterationLimit {
            continue;
        }
        checked += 1;
        let topo = &s.topology;
        let power_ok = (0..topo.num_bs()).all(|b| st.beams.bs_power(topo, b) <= s.power.p_max(b) * (1.0 + 1e-6));
        let rx = mmse_receivers(topo, ch, &st.beams, s.radio.noise_power_w, Execution::Sequential).unwrap();
        let eval = LinkEvaluator::new(topo, ch, &st.beams, &rx, s.radio.noise_power_w).unwrap();
        let report = metrics::rates(&eval, &s.radio, &s.power);
        let rate_ok = report.common_rates.iter().zip(&s.rate_targets_bps).all(|(r, t)| *r >= t * (1.0 - 1e-6));
        if !(power_ok && rate_ok) {
            bad.push(s.seed);
        }
    }
    outcome(bad.is_empty(), format!("{} of {checked} final solutions violate power or rate targets {bad:?}", bad.len()))
}

fn c6_charnes_cooper(runs: &[Run]) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for r in runs {
        for t in &r.state.trace {
            if let (Some(a), Some(b)) = (t.scaled_objective, t.recovered_objective) {
                worst = worst.max((a - b).abs() / a.abs().max(f64::MIN_POSITIVE));
                count += 1;
            }
        }
    }
    outcome(count > 0 && worst <= 1e-6, format!("max relative gap {worst:.2e} over {count} subproblems (tol 1e-6)"))
}

fn c7_single_antenna() -> Outcome {
    let mut streams = 0;
    let mut worst: f64 = 0.0;
    for seed in 0..10 {
        let (s, ch) = scenario(8, 1, 72.14, seed);
        let joint = sca::run(&s, &ch, &SolverOptions::default()).unwrap();
        let multicast = sca::run(&s, &ch, &SolverOptions { mode: Mode::MulticastOnly, ..Default::default() }).unwrap();
        streams += sca::count_active_unicast_streams(&joint, &s, 1e-6);
        worst = worst.max((joint.ee() - multicast.ee()).abs() / multicast.ee());
    }
    outcome(streams == 0 && worst <= 1e-6, format!("{streams} private streams; max relative EE gap to multicast-only {worst:.2e} (10 seeds, N=8)"))
}

fn c8_joint_vs_multicast(joint: &[Run], multicast: &[Run]) -> Outcome {
    let mut worse = Vec::new();
    let mut gains = 0;
    for (j, m) in joint.iter().zip(multicast) {
        let rel = (j.state.ee() - m.state.ee()) / m.state.ee();
        if rel < -1e-6 {
            worse.push(j.scenario.seed);
        }
        if rel > 1e-6 {
            gains += 1;
        }
    }
    let active: usize = joint.iter().map(|r| sca::count_active_unicast_streams(&r.state, &r.scenario, 1e-6)).sum();
    let mean_active = active as f64 / joint.len() as f64;
    outcome(
        worse.is_empty() && mean_active > 0.0,
        format!(
            "joint below multicast-only on {worse:?}; joint strictly better on {gains}/{}; mean active private streams {mean_active:.2}",
            joint.len()
        ),
    )
}

fn c9_rate_trend() -> Outcome {
    let spec = ExperimentSpec {
        grid: vec![36.0, 72.14, 115.42, 160.0],
        realizations: 3,
        execution: Execution::default(),
        ..ExperimentSpec::new(
            ExperimentKind::SweepRate,
            ScenarioConfig {
                bs_antennas: 8,
                rx_antennas: 2,
                ..Default::default()
            },
        )
    };
    let rows = match experiment::run_sweep_rate(&spec) {
        Ok(rows) => rows,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let mut increases = Vec::new();
    let infeasible = rows.iter().filter(|r| !r.is_feasible()).count();
    for seed in 0..3u64 {
        let ee: Vec<Option<f64>> = spec
            .grid
            .iter()
            .map(|g| rows.iter().find(|r| r.seed == seed && r.rate_target_mbps == *g).and_then(|r| r.ee_mbit_per_joule))
            .collect();
        let feasible: Vec<f64> = ee.iter().map_while(|e| *e).collect();
        // infeasibility must persist for stricter targets
        let tail_ok = ee[feasible.len()..].iter().all(|e| e.is_none());
        if !tail_ok || feasible.windows(2).any(|w| w[1] > w[0] * (1.0 + 1e-6)) {
            increases.push(seed);
        }
    }
    outcome(
        increases.is_empty() && rows.len() == 12,
        format!("{} rows, {infeasible} infeasible points flagged; seeds with EE increasing in target: {increases:?}", rows.len()),
    )
}

fn c10_conic() -> Outcome {
    let tol = 1e-8;
    let mut errors = Vec::new();

    let mut p = ConicProgram::new();
    let x = p.add_variable("x");
    p.add_linear(AffineExpr::var(x), Sense::Le, 2.0).unwrap();
    p.set_objective(x, 1.0).unwrap();
    let s = p.solve(tol);
    if s.objective.is_none_or(|o| (o - 2.0).abs() > 1e-6) {
        errors.push(format!("x <= 2: {:?}", s.objective));
    }

    let mut p = ConicProgram::new();
    let x = p.add_variable("x");
    p.add_soc(vec![AffineExpr::constant(3.0), AffineExpr::constant(4.0)], AffineExpr::var(x)).unwrap();
    p.set_objective(x, -1.0).unwrap();
    let s = p.solve(tol);
    if s.x.as_ref().is_none_or(|v| (v[x] - 5.0).abs() > 1e-6) {
        errors.push(format!("norm: {:?}", s.x));
    }

    let mut p = ConicProgram::new();
    let t = p.add_variable("t");
    p.add_exp(AffineExpr::var(t), AffineExpr::constant(1.0), AffineExpr::constant(std::f64::consts::E)).unwrap();
    p.set_objective(t, 1.0).unwrap();
    let s = p.solve(tol);
    if s.x.as_ref().is_none_or(|v| (v[t] - 1.0).abs() > 1e-6) {
        errors.push(format!("exp: {:?}", s.x));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut mismatches = 0;
    for _ in 0..20 {
        let n = rng.random_range(1..=3);
        let m = rng.random_range(1..=4);
        let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let mut rows: Vec<(Vec<f64>, f64)> = (0..m)
            .map(|_| {
                let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let b = a.iter().zip(&x0).map(|(a, x)| a * x).sum::<f64>() + rng.random_range(0.0..2.0);
                (a, b)
            })
            .collect();
        let c: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut p = ConicProgram::new();
        let vars = p.add_variables("x", n);
        for (i, v) in vars.clone().enumerate() {
            p.set_bounds(v, Some(-10.0), Some(10.0)).unwrap();
            p.set_objective(v, c[i]).unwrap();
        }
        for (a, b) in &rows {
            let mut e = AffineExpr::default();
            for (i, v) in vars.clone().enumerate() {
                e.push(v, a[i]);
            }
            p.add_linear(e, Sense::Le, *b).unwrap();
        }
        let got = p.solve(tol);

        for i in 0..n {
            let mut up = vec![0.0; n];
            up[i] = 1.0;
            let mut down = vec![0.0; n];
            down[i] = -1.0;
            rows.push((up, 10.0));
            rows.push((down, 10.0));
        }
        let oracle = vertex_enumeration(&rows, &c, n);
        match (got.status, got.objective) {
            (SolveStatus::Optimal, Some(o)) if (o - oracle).abs() <= 1e-6 * (1.0 + oracle.abs()) => {}
            _ => mismatches += 1,
        }
    }
    if mismatches > 0 {
        errors.push(format!("{mismatches}/20 LPs disagree with vertex enumeration"));
    }
    outcome(errors.is_empty(), if errors.is_empty() { "3 reference programs and 20 random LPs match".to_string() } else { errors.join("; ") })
}

/// Best objective over all feasible vertices of `{x : a x <= b}` (bounded).
fn vertex_enumeration(rows: &[(Vec<f64>, f64)], c: &[f64], n: usize) -> f64 {
    let mut best = f64::NEG_INFINITY;
    let idx: Vec<usize> = (0..rows.len()).collect();
    for subset in combinations(&idx, n) {
        let a = DMatrix::from_fn(n, n, |r, col| rows[subset[r]].0[col]);
        let b = DVector::from_fn(n, |r, _| rows[subset[r]].1);
        if a.determinant().abs() < 1e-10 {
            continue;
        }
        let Some(x) = a.lu().solve(&b) else { continue };
        if rows.iter().all(|(a, b)| a.iter().zip(x.iter()).map(|(a, x)| a * x).sum::<f64>() <= b + 1e-9) {
            best = best.max(c.iter().zip(x.iter()).map(|(c, x)| c * x).sum());
        }
    }
    best
}

fn combinations(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    if items.len() < k {
        return Vec::new();
    }
    let mut out: Vec<Vec<usize>> = combinations(&items[1..], k - 1)
        .into_iter()
        .map(|mut rest| {
            rest.insert(0, items[0]);
            rest
        })
        .collect();
    out.extend(combinations(&items[1..], k));
    out
}

fn report(id: usize, name: &str, started: Instant, o: Outcome) -> bool {
    println!(
        "criterion {id:>2} {} {name}: {} ({:.1} s)",
        if o.pass { "PASS" } else { "FAIL" },
        o.detail,
        started.elapsed().as_secs_f64()
    );
    o.pass
}

fn main() -> ExitCode {
    let mut all = true;
    let t = Instant::now();
    all &= report(1, "MSE-SINR duality", t, c1_duality());
    let t = Instant::now();
    all &= report(2, "MMSE optimality", t, c2_mmse_optimality());
    let t = Instant::now();
    all &= report(3, "tangent bound", t, c3_tangent());

    let t = Instant::now();
    let fig1 = run_seeds(4, 2, 72.14, 0..10, Mode::Joint);
    all &= report(4, "monotone convergence", t, c4_convergence(&fig1));

    let t = Instant::now();
    let joint = run_seeds(8, 2, 115.42, 0..20, Mode::Joint);
    let multicast = run_seeds(8, 2, 115.42, 0..20, Mode::MulticastOnly);
    let c8 = c8_joint_vs_multicast(&joint, &multicast);
    let c8_time = t;

    let t = Instant::now();
    let finals: Vec<&Run> = fig1.iter().chain(&joint).chain(&multicast).collect();
    all &= report(5, "feasibility of output", t, c5_feasibility(&finals));
    let t = Instant::now();
    all &= report(6, "Charnes-Cooper recovery", t, c6_charnes_cooper(&fig1));
    let t = Instant::now();
    all &= report(7, "single receive antenna", t, c7_single_antenna());
    all &= report(8, "joint vs multicast-only", c8_time, c8);
    let t = Instant::now();
    all &= report(9, "rate-target trend", t, c9_rate_trend());
    let t = Instant::now();
    all &= report(10, "conic backend", t, c10_conic());

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
