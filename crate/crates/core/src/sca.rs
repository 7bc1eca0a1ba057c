//! Alternating optimization of transmit beamformers, linearization points
//! and MMSE receivers.
//!
//! For fixed receivers the inverse-MSE constraints `eps <= 1/nu` are inner
//! approximated by the tangent of `1/nu`, which leaves a concave-convex
//! fractional program. Its Charnes-Cooper scaling is a conic program with
//! second-order and exponential cones; each solve is followed by an MMSE
//! receiver update and a new tangent point.
//!
//! Internally rates are in nats/s/Hz. The denominator constraint of the
//! scaled program is normalized by `kappa`, the total power of the current
//! iterate, so the scaling variable stays near one; the program's scaling
//! variable is therefore `kappa * phi` where `phi = 1 / P_tot`.

use std::f64::consts::LN_2;
use std::ops::Range;

use log::{debug, warn};
use serde::Serialize;

use crate::conic::{AffineExpr, ConicProgram, ConicSolution, Sense, SolveStatus, DEFAULT_TOLERANCE};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{filtered_channel, generalized_dominant, norm_sqr, right_singular_vectors, vstack, CMatrix, CVector, C64};
use crate::metrics::{self, BeamformerSet, LinkEvaluator, RateReport, ReceiverSet};
use crate::mmse::mmse_receivers;
use crate::scenario::{ChannelSet, Scenario};

/// Floor applied to linearization points of silent streams (`nu = 1`).
pub const NU_FLOOR: f64 = 1.0 + 1e-12;

/// Share of `P_b` given to the common beams of the initial point.
const INIT_COMMON_SHARE: f64 = 0.5;
/// Share of `P_b` given to the private beams of the initial point (joint mode).
const INIT_PRIVATE_SHARE: f64 = 0.1;
/// The feasibility phase stops once every group clears its target by this factor.
const FEASIBILITY_MARGIN: f64 = 1e-3;
/// Quarter-octave steps tried when rescaling the initial point.
const POWER_SCALE_STEPS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Common streams plus `M_k - 1` private streams per user.
    Joint,
    /// Common streams only; private beams are not optimization variables.
    MulticastOnly,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Joint => "joint",
            Mode::MulticastOnly => "multicast-only",
        }
    }

    fn has_private(self) -> bool {
        self == Mode::Joint
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(Mode::Joint),
            "multicast-only" | "multicast" => Ok(Mode::MulticastOnly),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// How the next tangent point of `1/nu` is chosen after each solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TangentUpdate {
    /// `1/eps` at the refreshed MMSE receivers (tightest point).
    InverseMse,
    /// The recovered subproblem value `nu_bar / phi`.
    Recovered,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iters: usize,
    /// Stop once the relative EE improvement of one iteration is below this.
    pub rel_objective_tol: f64,
    pub conic_tolerance: f64,
    /// A private stream counts as transmitted when `||w||^2 > threshold * P_b`.
    pub active_stream_threshold: f64,
    pub mode: Mode,
    /// Lower bound on the Charnes-Cooper scaling variable.
    pub phi_min: f64,
    pub feasibility_max_iters: usize,
    pub tangent_update: TangentUpdate,
    /// Joint mode also runs from the multicast-only solution and keeps the better point.
    pub multicast_start: bool,
    /// Dispatch of per-user receiver updates.
    pub execution: Execution,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_objective_tol: 1e-5,
            conic_tolerance: DEFAULT_TOLERANCE,
            active_stream_threshold: 1e-6,
            mode: Mode::Joint,
            phi_min: 1e-8,
            feasibility_max_iters: 100,
            tangent_update: TangentUpdate::InverseMse,
            multicast_start: true,
            execution: Execution::Sequential,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_objective_tol > 0.0 && self.conic_tolerance > 0.0 && self.phi_min > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        if !(self.active_stream_threshold >= 0.0) {
            return Err(Error::Config("active stream threshold must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Tangent of `1/nu` at `point`: `1/point - (nu - point)/point^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tangent {
    pub point: f64,
}

impl Tangent {
    pub fn eval(&self, nu: f64) -> f64 {
        1.0 / self.point - (nu - self.point) / (self.point * self.point)
    }
}

pub fn linearize_inverse(point: f64) -> Result<Tangent> {
    if point > 0.0 && point.is_finite() {
        Ok(Tangent { point })
    } else {
        Err(Error::Config(format!("linearization point must be positive, got {point}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    NotStarted,
    Converged,
    MaxIterations,
    /// The conic solver hit its iteration limit; the state is the best so far.
    SolverIterationLimit,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::NotStarted => "not-started",
            Termination::Converged => "converged",
            Termination::MaxIterations => "max-iterations",
            Termination::SolverIterationLimit => "solver-iteration-limit",
        }
    }
}

/// One point of the objective trace. Iteration 0 is the initial point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub iteration: usize,
    /// True EE of the iterate with MMSE receivers, bits/joule.
    pub ee: f64,
    pub sum_rate: f64,
    pub total_power: f64,
    /// Objective of the scaled conic program divided by its normalization, bits/joule.
    pub scaled_objective: Option<f64>,
    /// Fractional objective evaluated at the recovered unscaled variables, bits/joule.
    pub recovered_objective: Option<f64>,
    /// Largest `eps(w, u_old) - 1/nu` over all streams right after recovery.
    pub mse_excess: Option<f64>,
    pub solver_status: Option<SolveStatus>,
    pub active_streams: usize,
}

/// Current operating point of the optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub mode: Mode,
    pub beams: BeamformerSet,
    pub receivers: ReceiverSet,
    /// Inverse-MSE linearization points of the private streams.
    pub nu_private: Vec<Vec<f64>>,
    pub nu_common: Vec<f64>,
    /// Common rates `r_{g,c}` in bits/s.
    pub common_rates: Vec<f64>,
    /// Charnes-Cooper scaling `1 / P_tot`.
    pub phi: f64,
    pub trace: Vec<TraceRecord>,
    pub iteration: usize,
    pub termination: Termination,
}

impl IterateState {
    pub fn ee(&self) -> f64 {
        self.trace.last().map_or(0.0, |r| r.ee)
    }

    pub fn ee_trace(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.ee).collect()
    }
}

/// Variable indices of a scaled subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct SubproblemLayout {
    /// Interleaved re/im variables of each private beam, empty in multicast-only mode.
    pub private_beams: Vec<Vec<Range<usize>>>,
    pub common_beams: Vec<Range<usize>>,
    pub phi: usize,
    pub nu_private: Vec<Vec<usize>>,
    pub nu_common: Vec<usize>,
    pub rates: Vec<usize>,
    pub log_terms: Vec<Vec<usize>>,
    /// Rate-margin variable of the feasibility objective.
    pub margin: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Objective {
    EnergyEfficiency,
    RateMargin,
}

#[derive(Debug, Clone)]
pub struct Subproblem {
    pub program: ConicProgram,
    pub layout: SubproblemLayout,
    /// Normalization of the denominator constraint (total power of the iterate).
    pub kappa: f64,
    pub mode: Mode,
    pub receivers: ReceiverSet,
    pub phi_min: f64,
    objective: Objective,
}

/// Recovered unscaled solution of one subproblem.
#[derive(Debug, Clone, PartialEq)]
pub struct Recovered {
    pub beams: BeamformerSet,
    pub nu_private: Vec<Vec<f64>>,
    pub nu_common: Vec<f64>,
    /// `r_{g,c}` in bits/s.
    pub common_rates: Vec<f64>,
    /// Charnes-Cooper scaling `1 / P_tot`.
    pub phi: f64,
}

fn nats_to_bps(scenario: &Scenario) -> f64 {
    scenario.radio.bandwidth_hz / LN_2
}

struct BeamRef {
    bs: usize,
    vars: Range<usize>,
}

/// Real and imaginary parts of `sum_n c[n] w[n]` over interleaved variables.
fn complex_product(coeffs: &[C64], vars: &Range<usize>) -> (AffineExpr, AffineExpr) {
    let mut re = AffineExpr::default();
    let mut im = AffineExpr::default();
    for (n, c) in coeffs.iter().enumerate() {
        let (xr, xi) = (vars.start + 2 * n, vars.start + 2 * n + 1);
        re.push(xr, c.re);
        re.push(xi, -c.im);
        im.push(xr, c.im);
        im.push(xi, c.re);
    }
    (re, im)
}

struct MseTerm<'a> {
    user: usize,
    receiver: &'a CVector,
    desired: usize,
    interferers: Vec<usize>,
    nu: usize,
    nu_point: f64,
}

fn add_mse_block(
    program: &mut ConicProgram,
    scenario: &Scenario,
    channels: &ChannelSet,
    beams: &[BeamRef],
    phi: usize,
    term: &MseTerm<'_>,
) -> Result<()> {
    let n0 = scenario.radio.noise_power_w;
    let coeffs: Vec<Vec<C64>> = (0..scenario.topology.num_bs())
        .map(|b| filtered_channel(term.receiver, channels.h(b, term.user)))
        .collect();
    let scale = term.nu_point.sqrt();
    let mut rows = Vec::with_capacity(2 * term.interferers.len() + 3);
    let d = &beams[term.desired];
    let (re, im) = complex_product(&coeffs[d.bs], &d.vars);
    rows.push(AffineExpr::term(phi, 1.0).sub(&re).scaled(scale));
    rows.push(im.scaled(-scale));
    for &i in &term.interferers {
        let b = &beams[i];
        let (re, im) = complex_product(&coeffs[b.bs], &b.vars);
        rows.push(re.scaled(scale));
        rows.push(im.scaled(scale));
    }
    rows.push(AffineExpr::term(phi, scale * (n0 * norm_sqr(term.receiver)).sqrt()));
    // nu_pt ||v||^2 <= phi (2 phi - nu_bar / nu_pt)
    let rhs = AffineExpr::term(phi, 2.0).plus(term.nu, -1.0 / term.nu_point);
    program.add_rotated_soc(rows, AffineExpr::var(phi), rhs)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn build(
    scenario: &Scenario,
    channels: &ChannelSet,
    receivers: &ReceiverSet,
    nu_private: &[Vec<f64>],
    nu_common: &[f64],
    kappa: f64,
    mode: Mode,
    objective: Objective,
    phi_min: f64,
) -> Result<Subproblem> {
    let topo = &scenario.topology;
    receivers.validate(topo)?;
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Numerical(format!("invalid denominator normalization {kappa}")));
    }
    let mut p = ConicProgram::new();
    let mut beams: Vec<BeamRef> = Vec::new();

    let private_beams: Vec<Vec<Range<usize>>> = (0..topo.num_users())
        .map(|k| {
            if !mode.has_private() {
                return Vec::new();
            }
            let n = topo.bs_antennas(topo.serving_bs(k));
            (0..topo.num_private_streams(k)).map(|l| p.add_variables(&format!("w_{k}_{l}"), 2 * n)).collect()
        })
        .collect();
    let common_beams: Vec<Range<usize>> = (0..topo.num_groups())
        .map(|g| p.add_variables(&format!("wc_{g}"), 2 * topo.bs_antennas(topo.group(g).bs)))
        .collect();
    let mut private_ref: Vec<Vec<usize>> = vec![Vec::new(); topo.num_users()];
    for (k, streams) in private_beams.iter().enumerate() {
        for vars in streams {
            private_ref[k].push(beams.len());
            beams.push(BeamRef { bs: topo.serving_bs(k), vars: vars.clone() });
        }
    }
    let common_ref: Vec<usize> = common_beams
        .iter()
        .enumerate()
        .map(|(g, vars)| {
            beams.push(BeamRef { bs: topo.group(g).bs, vars: vars.clone() });
            beams.len() - 1
        })
        .collect();

    let phi = p.add_variable("phi");
    let nu_priv_vars: Vec<Vec<usize>> = private_beams
        .iter()
        .enumerate()
        .map(|(k, s)| (0..s.len()).map(|l| p.add_variable(format!("nu_{k}_{l}"))).collect())
        .collect();
    let nu_common_vars: Vec<usize> = (0..topo.num_users()).map(|k| p.add_variable(format!("nuc_{k}"))).collect();
    let rate_vars: Vec<usize> = (0..topo.num_groups()).map(|g| p.add_variable(format!("r_{g}"))).collect();
    let log_vars: Vec<Vec<usize>> = match objective {
        Objective::EnergyEfficiency => nu_priv_vars
            .iter()
            .enumerate()
            .map(|(k, s)| (0..s.len()).map(|l| p.add_variable(format!("t_{k}_{l}"))).collect())
            .collect(),
        Objective::RateMargin => vec![Vec::new(); topo.num_users()],
    };
    let margin = match objective {
        Objective::RateMargin => Some(p.add_variable("margin")),
        Objective::EnergyEfficiency => None,
    };

    match objective {
        Objective::EnergyEfficiency => {
            p.set_bounds(phi, Some(kappa * phi_min), None)?;
            for &t in log_vars.iter().flatten() {
                p.set_objective(t, 1.0)?;
            }
            for &r in &rate_vars {
                p.set_objective(r, 1.0)?;
            }
        }
        Objective::RateMargin => {
            p.set_bounds(phi, Some(1.0), Some(1.0))?;
            p.set_objective(margin.expect("margin variable"), 1.0)?;
        }
    }

    // per-BS power: ||w_b|| <= sqrt(P_b) phi
    for b in 0..topo.num_bs() {
        let rows: Vec<AffineExpr> = beams
            .iter()
            .filter(|r| r.bs == b)
            .flat_map(|r| r.vars.clone())
            .map(AffineExpr::var)
            .collect();
        p.add_soc(rows, AffineExpr::term(phi, scenario.power.p_max(b).sqrt()))?;
    }

    // denominator: (1/eta) ||w||^2 + phi^2 P_cir <= kappa phi
    if objective == Objective::EnergyEfficiency {
        let p_cir = metrics::circuit_power(topo, &scenario.power);
        let w_scale = 1.0 / (scenario.power.eta * kappa).sqrt();
        let mut rows: Vec<AffineExpr> = beams.iter().flat_map(|r| r.vars.clone()).map(|i| AffineExpr::term(i, w_scale)).collect();
        rows.push(AffineExpr::term(phi, (p_cir / kappa).sqrt()));
        p.add_rotated_soc(rows, AffineExpr::var(phi), AffineExpr::constant(1.0))?;
    }

    let all_private: Vec<usize> = private_ref.iter().flatten().copied().collect();
    for k in 0..topo.num_users() {
        for (l, &desired) in private_ref[k].iter().enumerate() {
            let term = MseTerm {
                user: k,
                receiver: &receivers.private[k][l],
                desired,
                interferers: all_private
                    .iter()
                    .copied()
                    .filter(|&i| i != desired)
                    .chain(common_ref.iter().copied())
                    .collect(),
                nu: nu_priv_vars[k][l],
                nu_point: nu_private[k][l].max(NU_FLOOR),
            };
            add_mse_block(&mut p, scenario, channels, &beams, phi, &term)?;
        }
    }
    for k in 0..topo.num_users() {
        let own = topo.group_of(k);
        let term = MseTerm {
            user: k,
            receiver: &receivers.common[k],
            desired: common_ref[own],
            interferers: all_private
                .iter()
                .copied()
                .chain(common_ref.iter().enumerate().filter(|(g, _)| *g != own).map(|(_, &i)| i))
                .collect(),
            nu: nu_common_vars[k],
            nu_point: nu_common[k].max(NU_FLOOR),
        };
        add_mse_block(&mut p, scenario, channels, &beams, phi, &term)?;
    }

    // t <= phi log(nu_bar / phi)
    for (k, ts) in log_vars.iter().enumerate() {
        for (l, &t) in ts.iter().enumerate() {
            p.add_exp(AffineExpr::var(t), AffineExpr::var(phi), AffineExpr::var(nu_priv_vars[k][l]))?;
        }
    }
    // r_bar_g <= phi log(nu_bar_{k,c} / phi) for every member
    for (g, info) in topo.groups().iter().enumerate() {
        for &k in &info.members {
            p.add_exp(AffineExpr::var(rate_vars[g]), AffineExpr::var(phi), AffineExpr::var(nu_common_vars[k]))?;
        }
    }

    let to_nats = 1.0 / nats_to_bps(scenario);
    for (g, &r) in rate_vars.iter().enumerate() {
        let target = scenario.rate_targets_bps[g] * to_nats;
        match (objective, margin) {
            // r_bar >= phi R
            (Objective::EnergyEfficiency, _) => {
                p.add_linear(AffineExpr::term(phi, target).plus(r, -1.0), Sense::Le, 0.0)?;
            }
            // r >= R (1 + margin), only for groups with a positive target
            (Objective::RateMargin, Some(s)) if target > 0.0 => {
                p.add_linear(AffineExpr::term(phi, target).plus(s, target).plus(r, -1.0), Sense::Le, 0.0)?;
            }
            _ => {}
        }
    }

    Ok(Subproblem {
        program: p,
        layout: SubproblemLayout {
            private_beams,
            common_beams,
            phi,
            nu_private: nu_priv_vars,
            nu_common: nu_common_vars,
            rates: rate_vars,
            log_terms: log_vars,
            margin,
        },
        kappa,
        mode,
        receivers: receivers.clone(),
        phi_min,
        objective,
    })
}

/// Scaled energy-efficiency subproblem around `state` with its receivers held fixed.
pub fn build_subproblem(state: &IterateState, scenario: &Scenario, channels: &ChannelSet, options: &SolverOptions) -> Result<Subproblem> {
    let kappa = metrics::total_power(&state.beams, &scenario.topology, &scenario.power);
    build(
        scenario,
        channels,
        &state.receivers,
        &state.nu_private,
        &state.nu_common,
        kappa,
        options.mode,
        Objective::EnergyEfficiency,
        options.phi_min,
    )
}

fn read_beam(x: &[f64], vars: &Range<usize>, phi: f64) -> CVector {
    CVector::from_iterator(vars.len() / 2, vars.clone().step_by(2).map(|i| C64::new(x[i], x[i + 1]) / phi))
}

/// Undo the Charnes-Cooper scaling of an optimal subproblem solution.
pub fn recover(sub: &Subproblem, solution: &ConicSolution, scenario: &Scenario) -> Result<Recovered> {
    let x = match (&solution.status, &solution.x) {
        (SolveStatus::Optimal, Some(x)) => x,
        _ => return Err(Error::Numerical(format!("cannot recover a {:?} solution", solution.status))),
    };
    let lay = &sub.layout;
    let scaled_phi = x[lay.phi];
    let lower = sub.program.bounds(lay.phi).0.unwrap_or(0.0);
    if !(scaled_phi > 0.0) || (sub.objective == Objective::EnergyEfficiency && scaled_phi <= lower * (1.0 + 1e-6)) {
        return Err(Error::Numerical(format!("degenerate scaling variable phi = {scaled_phi:e}")));
    }
    let topo = &scenario.topology;
    let mut beams = BeamformerSet::zeros(topo);
    for (k, streams) in lay.private_beams.iter().enumerate() {
        for (l, vars) in streams.iter().enumerate() {
            beams.private[k][l] = read_beam(x, vars, scaled_phi);
        }
    }
    for (g, vars) in lay.common_beams.iter().enumerate() {
        beams.common[g] = read_beam(x, vars, scaled_phi);
    }
    let nu_private = (0..topo.num_users())
        .map(|k| {
            if lay.nu_private[k].is_empty() {
                vec![1.0; topo.num_private_streams(k)]
            } else {
                lay.nu_private[k].iter().map(|&i| x[i] / scaled_phi).collect()
            }
        })
        .collect();
    let nu_common = lay.nu_common.iter().map(|&i| x[i] / scaled_phi).collect();
    let common_rates = lay.rates.iter().map(|&i| x[i] / scaled_phi * nats_to_bps(scenario)).collect();
    let phi = match sub.objective {
        Objective::EnergyEfficiency => scaled_phi / sub.kappa,
        Objective::RateMargin => 1.0 / metrics::total_power(&beams, topo, &scenario.power),
    };
    Ok(Recovered {
        beams,
        nu_private,
        nu_common,
        common_rates,
        phi,
    })
}

/// Objective of the scaled program converted to bits/joule.
pub fn scaled_objective_ee(sub: &Subproblem, solution: &ConicSolution, scenario: &Scenario) -> Option<f64> {
    solution.objective.map(|o| o / sub.kappa * nats_to_bps(scenario))
}

/// The fractional objective `(sum log nu + sum r) / P_tot` at a recovered
/// point, in bits/joule.
pub fn fractional_objective(rec: &Recovered, scenario: &Scenario, mode: Mode) -> f64 {
    let private: f64 = if mode.has_private() {
        rec.nu_private.iter().flatten().map(|v| v.ln()).sum::<f64>() * nats_to_bps(scenario)
    } else {
        0.0
    };
    let numerator = private + rec.common_rates.iter().sum::<f64>();
    numerator / metrics::total_power(&rec.beams, &scenario.topology, &scenario.power)
}

/// MMSE receivers of `beams` together with the inverse MSEs they achieve.
struct Operating {
    receivers: ReceiverSet,
    nu_private: Vec<Vec<f64>>,
    nu_common: Vec<f64>,
    report: RateReport,
}

fn operating_point(scenario: &Scenario, channels: &ChannelSet, beams: &BeamformerSet, exec: Execution) -> Result<Operating> {
    let n0 = scenario.radio.noise_power_w;
    let receivers = mmse_receivers(&scenario.topology, channels, beams, n0, exec)?;
    let topo = &scenario.topology;
    let eval = LinkEvaluator::new(topo, channels, beams, &receivers, n0)?;
    let nu_private = (0..topo.num_users())
        .map(|k| (0..topo.num_private_streams(k)).map(|l| 1.0 / eval.mse_private(k, l)).collect())
        .collect();
    let nu_common = (0..topo.num_users()).map(|k| 1.0 / eval.mse_common(k)).collect();
    let report = metrics::rates(&eval, &scenario.radio, &scenario.power);
    Ok(Operating {
        receivers,
        nu_private,
        nu_common,
        report,
    })
}

/// Largest `eps(w, u) - 1/nu` over all streams for the given receivers.
fn mse_excess(scenario: &Scenario, channels: &ChannelSet, rec: &Recovered, receivers: &ReceiverSet, mode: Mode) -> Result<f64> {
    let topo = &scenario.topology;
    let eval = LinkEvaluator::new(topo, channels, &rec.beams, receivers, scenario.radio.noise_power_w)?;
    let mut worst = f64::NEG_INFINITY;
    for k in 0..topo.num_users() {
        if mode.has_private() {
            for l in 0..topo.num_private_streams(k) {
                worst = worst.max(eval.mse_private(k, l) - 1.0 / rec.nu_private[k][l]);
            }
        }
        worst = worst.max(eval.mse_common(k) - 1.0 / rec.nu_common[k]);
    }
    Ok(worst)
}

fn common_rate_ratio(scenario: &Scenario, report: &RateReport) -> f64 {
    report
        .common_rates
        .iter()
        .zip(&scenario.rate_targets_bps)
        .filter(|(_, t)| **t > 0.0)
        .map(|(r, t)| r / t)
        .fold(f64::INFINITY, f64::min)
}

fn targets_met(scenario: &Scenario, report: &RateReport) -> bool {
    common_rate_ratio(scenario, report) >= 1.0
}

/// Rate targets above the single-user capacity at full power cannot be met
/// whatever the beamformers.
fn capacity_check(scenario: &Scenario, channels: &ChannelSet) -> Result<()> {
    let topo = &scenario.topology;
    for (g, info) in topo.groups().iter().enumerate() {
        let target = scenario.rate_targets_bps[g];
        for &k in &info.members {
            let h = channels.h(info.bs, k);
            let smax = right_singular_vectors(h).first().map_or(0.0, |s| s.0);
            let snr = scenario.power.p_max(info.bs) * smax * smax / scenario.radio.noise_power_w;
            let bound = scenario.radio.bandwidth_hz * (1.0 + snr).log2();
            if bound < target {
                return Err(Error::Infeasible(format!(
                    "group {g}: user {k} supports at most {:.3} Mbit/s, target {:.3} Mbit/s",
                    bound / 1e6,
                    target / 1e6
                )));
            }
        }
    }
    Ok(())
}

/// Signal-to-leakage direction of group `g`: maximizes the group's received
/// power over the power leaked to every other user plus noise. Falls back to
/// the dominant right singular vector of the stacked group channel.
fn common_direction(scenario: &Scenario, channels: &ChannelSet, g: usize, power: f64) -> CVector {
    let topo = &scenario.topology;
    let info = topo.group(g);
    let stacked = vstack(&info.members.iter().map(|&k| channels.h(info.bs, k)).collect::<Vec<_>>());
    let fallback = || right_singular_vectors(&stacked).remove(0).1;
    if !LEAKAGE_AWARE_INIT {
        return fallback();
    }
    let n = topo.bs_antennas(info.bs);
    let signal = stacked.adjoint() * &stacked;
    let mut leakage = CMatrix::identity(n, n) * C64::from(scenario.radio.noise_power_w / power);
    for k in (0..topo.num_users()).filter(|&k| topo.group_of(k) != g) {
        let h = channels.h(info.bs, k);
        leakage += h.adjoint() * h;
    }
    generalized_dominant(&signal, &leakage).unwrap_or_else(fallback)
}

const LEAKAGE_AWARE_INIT: bool = true;

fn initial_common_beams(scenario: &Scenario, channels: &ChannelSet) -> BeamformerSet {
    let topo = &scenario.topology;
    let mut beams = BeamformerSet::zeros(topo);
    for (g, info) in topo.groups().iter().enumerate() {
        let per_group = INIT_COMMON_SHARE * scenario.power.p_max(info.bs) / topo.served_groups(info.bs).count() as f64;
        let dir = common_direction(scenario, channels, g, per_group);
        beams.common[g] = dir * C64::from(per_group.sqrt());
    }
    beams
}

fn initial_private_beams(scenario: &Scenario, channels: &ChannelSet, beams: &mut BeamformerSet, scale: f64) {
    let topo = &scenario.topology;
    for b in 0..topo.num_bs() {
        let streams: usize = topo.served_users(b).map(|k| topo.num_private_streams(k)).sum();
        if streams == 0 {
            continue;
        }
        let per_stream = scale * INIT_PRIVATE_SHARE * scenario.power.p_max(b) / streams as f64;
        for k in topo.served_users(b).collect::<Vec<_>>() {
            let dirs = right_singular_vectors(channels.h(b, k));
            for l in 0..topo.num_private_streams(k) {
                let dir = &dirs[(l + 1) % dirs.len()].1;
                beams.private[k][l] = dir * C64::from(per_stream.sqrt());
            }
        }
    }
}

fn state_from(scenario: &Scenario, options: &SolverOptions, beams: BeamformerSet, op: Operating) -> IterateState {
    let mode = options.mode;
    let active_streams = active_streams(&beams, scenario, options.active_stream_threshold);
    let bps = nats_to_bps(scenario);
    let common_rates = scenario
        .topology
        .groups()
        .iter()
        .map(|g| g.members.iter().map(|&k| op.nu_common[k].ln() * bps).fold(f64::INFINITY, f64::min))
        .collect();
    let phi = 1.0 / op.report.total_power;
    let record = TraceRecord {
        iteration: 0,
        ee: op.report.energy_efficiency,
        sum_rate: op.report.sum_rate,
        total_power: op.report.total_power,
        scaled_objective: None,
        recovered_objective: None,
        mse_excess: None,
        solver_status: None,
        active_streams,
    };
    IterateState {
        mode,
        beams,
        receivers: op.receivers,
        nu_private: op.nu_private,
        nu_common: op.nu_common,
        common_rates,
        phi,
        trace: vec![record],
        iteration: 0,
        termination: Termination::NotStarted,
    }
}

/// Max-min rate-margin SCA over the common beams until every group meets its
/// target. Returns the common beams of the first point that does.
fn feasibility_phase(scenario: &Scenario, channels: &ChannelSet, beams: BeamformerSet, options: &SolverOptions) -> Result<BeamformerSet> {
    let mut beams = beams;
    let mut op = operating_point(scenario, channels, &beams, options.execution)?;
    let mut ratio = common_rate_ratio(scenario, &op.report);
    for it in 0..options.feasibility_max_iters {
        if ratio >= 1.0 + FEASIBILITY_MARGIN {
            return Ok(beams);
        }
        let sub = build(
            scenario,
            channels,
            &op.receivers,
            &op.nu_private,
            &op.nu_common,
            1.0,
            Mode::MulticastOnly,
            Objective::RateMargin,
            options.phi_min,
        )?;
        let sol = sub.program.solve(options.conic_tolerance);
        if sol.status != SolveStatus::Optimal {
            return Err(Error::Solver { iteration: it, status: sol.status });
        }
        let rec = recover(&sub, &sol, scenario)?;
        let next = operating_point(scenario, channels, &rec.beams, options.execution)?;
        let next_ratio = common_rate_ratio(scenario, &next.report);
        debug!("feasibility phase {it}: worst rate ratio {ratio:.6} -> {next_ratio:.6}");
        let stalled = next_ratio - ratio <= 1e-6 * ratio.abs().max(1e-12);
        beams = rec.beams;
        op = next;
        ratio = next_ratio;
        if stalled {
            break;
        }
    }
    if ratio >= 1.0 {
        Ok(beams)
    } else {
        Err(Error::Infeasible(format!(
            "common-rate targets unreachable: best worst-group rate is {:.4} of target",
            ratio
        )))
    }
}

/// Feasible starting point: common beams along the dominant right singular
/// vector of each stacked group channel at half the BS budget, repaired by
/// a max-min feasibility phase when the targets are missed; in joint mode,
/// private beams along the secondary singular directions of each user's
/// channel, backed off until the common targets still hold.
pub fn initialize(scenario: &Scenario, channels: &ChannelSet, options: &SolverOptions) -> Result<IterateState> {
    options.validate()?;
    let topo = &scenario.topology;
    let mut beams = initial_common_beams(scenario, channels);
    let op = operating_point(scenario, channels, &beams, options.execution)?;
    if !targets_met(scenario, &op.report) {
        capacity_check(scenario, channels)?;
        beams = feasibility_phase(scenario, channels, beams, options)?;
    }
    if options.mode.has_private() && topo.total_private_streams() > 0 {
        let mut scale = 1.0;
        for _ in 0..60 {
            let mut trial = beams.clone();
            initial_private_beams(scenario, channels, &mut trial, scale);
            let within_budget = (0..topo.num_bs()).all(|b| trial.bs_power(topo, b) <= scenario.power.p_max(b));
            if within_budget {
                let op = operating_point(scenario, channels, &trial, options.execution)?;
                if targets_met(scenario, &op.report) {
                    return finish_initial(scenario, channels, trial, op, options);
                }
            }
            scale *= 0.25;
        }
        warn!("no private-stream power keeps the common targets; starting without private streams");
    }
    let op = operating_point(scenario, channels, &beams, options.execution)?;
    finish_initial(scenario, channels, beams, op, options)
}

/// Rescale all beams by the common factor (up to the per-BS budgets) with
/// the best EE that still meets the common targets.
fn finish_initial(scenario: &Scenario, channels: &ChannelSet, beams: BeamformerSet, op: Operating, options: &SolverOptions) -> Result<IterateState> {
    let topo = &scenario.topology;
    let headroom = (0..topo.num_bs())
        .filter_map(|b| {
            let used = beams.bs_power(topo, b);
            (used > 0.0).then(|| scenario.power.p_max(b) / used)
        })
        .fold(f64::INFINITY, f64::min);
    let base = beams.clone();
    let mut best = (beams, op);
    if !headroom.is_finite() {
        return Ok(state_from(scenario, options, best.0, best.1));
    }
    for j in 0..=POWER_SCALE_STEPS {
        let factor = headroom * 0.5f64.powf(j as f64 / 4.0);
        let trial = base.scaled(factor.sqrt());
        let trial_op = operating_point(scenario, channels, &trial, options.execution)?;
        if targets_met(scenario, &trial_op.report) && trial_op.report.energy_efficiency > best.1.report.energy_efficiency {
            best = (trial, trial_op);
        }
    }
    Ok(state_from(scenario, options, best.0, best.1))
}

/// Iterate state at given beamformers, e.g. to warm start from an earlier
/// solution. Fails with an infeasibility error when the beams miss a common
/// target or exceed a per-BS budget.
pub fn state_from_beams(scenario: &Scenario, channels: &ChannelSet, beams: BeamformerSet, options: &SolverOptions) -> Result<IterateState> {
    options.validate()?;
    let topo = &scenario.topology;
    beams.validate(topo)?;
    let mut beams = beams;
    if options.mode == Mode::MulticastOnly {
        beams.private.iter_mut().flatten().for_each(|w| w.fill(C64::new(0.0, 0.0)));
    }
    // solver output may sit on the budget up to its tolerance
    let fit = (0..topo.num_bs())
        .map(|b| scenario.power.p_max(b) / beams.bs_power(topo, b).max(f64::MIN_POSITIVE))
        .fold(f64::INFINITY, f64::min);
    if fit < 1.0 - 1e-6 {
        return Err(Error::Infeasible("warm start exceeds a per-BS power budget".into()));
    }
    if fit < 1.0 {
        beams = beams.scaled(fit.sqrt());
    }
    let op = operating_point(scenario, channels, &beams, options.execution)?;
    if !targets_met(scenario, &op.report) {
        return Err(Error::Infeasible("warm start misses a common-rate target".into()));
    }
    Ok(state_from(scenario, options, beams, op))
}

/// One SCA iteration: solve the scaled subproblem around `state`, recover,
/// refresh MMSE receivers and linearization points.
pub fn step(state: &mut IterateState, scenario: &Scenario, channels: &ChannelSet, options: &SolverOptions) -> Result<SolveStatus> {
    let iteration = state.iteration + 1;
    let sub = build_subproblem(state, scenario, channels, options)?;
    let sol = sub.program.solve(options.conic_tolerance);
    if sol.status != SolveStatus::Optimal {
        return Ok(sol.status);
    }
    let rec = recover(&sub, &sol, scenario).map_err(|e| match e {
        Error::Numerical(msg) => Error::Numerical(format!("iteration {iteration}: {msg}")),
        other => other,
    })?;
    let excess = mse_excess(scenario, channels, &rec, &sub.receivers, options.mode)?;
    let scaled = scaled_objective_ee(&sub, &sol, scenario);
    let recovered = fractional_objective(&rec, scenario, options.mode);
    let op = operating_point(scenario, channels, &rec.beams, options.execution)?;
    let mut next = state_from(scenario, options, rec.beams.clone(), op);
    let record = TraceRecord {
        iteration,
        scaled_objective: scaled,
        recovered_objective: Some(recovered),
        mse_excess: Some(excess),
        solver_status: Some(sol.status),
        ..next.trace.remove(0)
    };
    debug!(
        "iteration {iteration}: EE {:.6e} bits/J (subproblem {:.6e}), P_tot {:.4} W",
        record.ee,
        scaled.unwrap_or(f64::NAN),
        record.total_power
    );
    state.beams = next.beams;
    state.receivers = next.receivers;
    match options.tangent_update {
        TangentUpdate::InverseMse => {
            state.nu_private = next.nu_private;
            state.nu_common = next.nu_common;
        }
        TangentUpdate::Recovered => {
            state.nu_private = rec.nu_private;
            state.nu_common = rec.nu_common;
        }
    }
    state.common_rates = next.common_rates;
    state.phi = next.phi;
    state.iteration = iteration;
    state.trace.push(record);
    Ok(SolveStatus::Optimal)
}

/// Run the optimizer from [`initialize`] until the relative EE improvement
/// drops below `rel_objective_tol` or `max_iters` is reached.
///
/// In joint mode with `multicast_start` set, the multicast-only solution
/// (all private beams zero) is a second candidate and the better of the two
/// is returned.
pub fn run(scenario: &Scenario, channels: &ChannelSet, options: &SolverOptions) -> Result<IterateState> {
    let state = initialize(scenario, channels, options)?;
    let joint = run_from(state, scenario, channels, options)?;
    if !(options.mode == Mode::Joint && options.multicast_start && scenario.topology.total_private_streams() > 0) {
        return Ok(joint);
    }
    let multicast_options = SolverOptions { mode: Mode::MulticastOnly, ..*options };
    let mut multicast = run_from(initialize(scenario, channels, &multicast_options)?, scenario, channels, &multicast_options)?;
    if multicast.ee() > joint.ee() {
        debug!("multicast-only start wins: {:e} > {:e} bits/J", multicast.ee(), joint.ee());
        multicast.mode = Mode::Joint;
        Ok(multicast)
    } else {
        Ok(joint)
    }
}

pub fn run_from(mut state: IterateState, scenario: &Scenario, channels: &ChannelSet, options: &SolverOptions) -> Result<IterateState> {
    state.termination = Termination::MaxIterations;
    for _ in 0..options.max_iters {
        let before = state.ee();
        match step(&mut state, scenario, channels, options)? {
            SolveStatus::Optimal => {}
            SolveStatus::IterationLimit => {
                state.termination = Termination::SolverIterationLimit;
                return Ok(state);
            }
            status => {
                return Err(Error::Solver {
                    iteration: state.iteration + 1,
                    status,
                })
            }
        }
        let after = state.ee();
        if after < before * (1.0 - 1e-6) {
            warn!("iteration {}: EE decreased from {before:e} to {after:e}", state.iteration);
        }
        if (after - before).abs() <= options.rel_objective_tol * before.abs() {
            state.termination = Termination::Converged;
            break;
        }
    }
    Ok(state)
}

/// Number of private streams with `||w_{k,l}||^2 > threshold * P_{b_k}`.
pub fn count_active_unicast_streams(state: &IterateState, scenario: &Scenario, threshold: f64) -> usize {
    active_streams(&state.beams, scenario, threshold)
}

fn active_streams(beams: &BeamformerSet, scenario: &Scenario, threshold: f64) -> usize {
    let topo = &scenario.topology;
    beams
        .private
        .iter()
        .enumerate()
        .map(|(k, streams)| {
            let cap = threshold * scenario.power.p_max(topo.serving_bs(k));
            streams.iter().filter(|w| norm_sqr(w) > cap).count()
        })
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conic::BlockKind;
    use crate::scenario::ScenarioConfig;

    fn scenario(m: usize, rate_mbps: f64, seed: u64) -> (Scenario, ChannelSet) {
        let cfg = ScenarioConfig {
            rx_antennas: m,
            rate_target_mbps: rate_mbps,
            seed,
            ..Default::default()
        };
        let s = cfg.build().unwrap();
        let ch = s.channels();
        (s, ch)
    }

    #[test]
    fn tangent_values() {
        let t = linearize_inverse(1.0).unwrap();
        assert_eq!(t.eval(1.0), 1.0);
        assert_eq!(t.eval(2.0), 0.0);
        assert_eq!(linearize_inverse(2.0).unwrap().eval(2.0), 0.5);
        assert!(linearize_inverse(0.0).is_err());
        assert!(linearize_inverse(-1.0).is_err());
    }

    #[test]
    fn subproblem_block_and_variable_counts() {
        let (s, ch) = scenario(2, 72.14, 1);
        let state = initialize(&s, &ch, &SolverOptions::default()).unwrap();
        let sub = build_subproblem(&state, &s, &ch, &SolverOptions::default()).unwrap();
        let p = &sub.program;
        assert_eq!(p.num_vars(), 125);
        assert_eq!(p.count(BlockKind::Soc), 2 + 1 + 16);
        assert_eq!(p.count(BlockKind::Exp), 16);
        assert_eq!(p.count(BlockKind::Linear), 4);
    }

    #[test]
    fn multicast_only_has_no_private_blocks() {
        let (s, ch) = scenario(2, 72.14, 1);
        let opts = SolverOptions { mode: Mode::MulticastOnly, ..Default::default() };
        let state = initialize(&s, &ch, &opts).unwrap();
        let sub = build_subproblem(&state, &s, &ch, &opts).unwrap();
        assert!(sub.layout.private_beams.iter().all(|v| v.is_empty()));
        assert_eq!(sub.program.num_vars(), 32 + 1 + 8 + 4);
        assert_eq!(sub.program.count(BlockKind::Soc), 2 + 1 + 8);
        assert_eq!(sub.program.count(BlockKind::Exp), 8);
        assert!(state.beams.private.iter().flatten().all(|w| norm_sqr(w) == 0.0));
    }

    #[test]
    fn recover_divides_by_phi() {
        let (s, ch) = scenario(1, 0.0, 2);
        let opts = SolverOptions::default();
        let state = initialize(&s, &ch, &opts).unwrap();
        let sub = build_subproblem(&state, &s, &ch, &opts).unwrap();
        let mut x = vec![0.0; sub.program.num_vars()];
        x[sub.layout.phi] = 2.0;
        let first = sub.layout.common_beams[0].start;
        x[first] = 2.0;
        for &v in &sub.layout.nu_common {
            x[v] = 2.0;
        }
        let sol = ConicSolution { status: SolveStatus::Optimal, objective: Some(0.0), x: Some(x.clone()), iterations: 0 };
        let rec = recover(&sub, &sol, &s).unwrap();
        assert_eq!(rec.beams.common[0][0], C64::new(1.0, 0.0));
        assert!(rec.nu_common.iter().all(|&v| v == 1.0));

        x[sub.layout.phi] = 1.0;
        let sol = ConicSolution { x: Some(x), ..sol };
        let rec = recover(&sub, &sol, &s).unwrap();
        assert_eq!(rec.beams.common[0][0], C64::new(2.0, 0.0));

        let failed = ConicSolution { status: SolveStatus::Infeasible, x: None, objective: None, iterations: 0 };
        assert!(recover(&sub, &failed, &s).is_err());
    }

    #[test]
    fn zero_targets_initialize_at_inverse_mse() {
        let (s, ch) = scenario(2, 0.0, 3);
        let state = initialize(&s, &ch, &SolverOptions::default()).unwrap();
        let eval = LinkEvaluator::new(&s.topology, &ch, &state.beams, &state.receivers, s.radio.noise_power_w).unwrap();
        for k in 0..s.topology.num_users() {
            assert!((state.nu_common[k] * eval.mse_common(k) - 1.0).abs() < 1e-12);
            for l in 0..s.topology.num_private_streams(k) {
                assert!((state.nu_private[k][l] * eval.mse_private(k, l) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_antenna_users_have_no_private_state() {
        let (s, ch) = scenario(1, 0.0, 4);
        let state = initialize(&s, &ch, &SolverOptions::default()).unwrap();
        assert!(state.beams.private.iter().all(|v| v.is_empty()));
        assert!(state.nu_private.iter().all(|v| v.is_empty()));
        assert_eq!(count_active_unicast_streams(&state, &s, 1e-6), 0);
    }

    #[test]
    fn unreachable_targets_are_infeasible() {
        let (s, ch) = scenario(2, 1e6, 5);
        let err = initialize(&s, &ch, &SolverOptions::default()).unwrap_err();
        assert!(err.is_infeasible(), "{err}");
    }

    #[test]
    fn active_stream_counting() {
        let (s, ch) = scenario(2, 0.0, 6);
        let mut state = initialize(&s, &ch, &SolverOptions { mode: Mode::MulticastOnly, ..Default::default() }).unwrap();
        assert_eq!(count_active_unicast_streams(&state, &s, 1e-6), 0);
        let n = state.beams.private[0][0].len();
        state.beams.private[0][0] = CVector::from_element(n, C64::new((s.power.p_max_w / n as f64).sqrt(), 0.0));
        assert_eq!(count_active_unicast_streams(&state, &s, 1e-6), 1);
    }

    #[test]
    fn short_run_is_monotone_and_feasible() {
        let (s, ch) = scenario(2, 72.14, 7);
        let opts = SolverOptions { max_iters: 5, ..Default::default() };
        let state = run(&s, &ch, &opts).unwrap();
        let trace = state.ee_trace();
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] * (1.0 - 1e-6), "{trace:?}");
        }
        for b in 0..s.topology.num_bs() {
            assert!(state.beams.bs_power(&s.topology, b) <= s.power.p_max_w * (1.0 + 1e-6));
        }
    }
}
