//! Network description and random channel realizations.
//!
//! A [`ScenarioConfig`] is the on-disk JSON form; [`ScenarioConfig::build`]
//! realizes the seeded group assignment and yields a [`Scenario`], which
//! together with [`generate_channels`] fully determines an optimization run.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};

const GROUPING_STREAM: u64 = 0;
const CHANNEL_STREAM: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserInfo {
    pub bs: usize,
    pub group: usize,
    pub rx_antennas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupInfo {
    pub bs: usize,
    pub members: Vec<usize>,
}

/// Base stations, users and multicast groups with their serving maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    bs_antennas: Vec<usize>,
    users: Vec<UserInfo>,
    groups: Vec<GroupInfo>,
}

impl Topology {
    pub fn new(bs_antennas: Vec<usize>, users: Vec<UserInfo>, groups: Vec<GroupInfo>) -> Result<Self> {
        if bs_antennas.is_empty() {
            return Err(Error::Config("at least one base station is required".into()));
        }
        if let Some(b) = bs_antennas.iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("base station {b} has no antennas")));
        }
        let num_bs = bs_antennas.len();
        for (k, u) in users.iter().enumerate() {
            if u.bs >= num_bs {
                return Err(Error::Config(format!("user {k} served by unknown base station {}", u.bs)));
            }
            if u.rx_antennas == 0 {
                return Err(Error::Config(format!("user {k} has no receive antennas")));
            }
            let g = groups
                .get(u.group)
                .ok_or_else(|| Error::Config(format!("user {k} assigned to unknown group {}", u.group)))?;
            if g.bs != u.bs {
                return Err(Error::Config(format!(
                    "user {k} is served by base station {} but its group {} by {}",
                    u.bs, u.group, g.bs
                )));
            }
        }
        for (gi, g) in groups.iter().enumerate() {
            if g.bs >= num_bs {
                return Err(Error::Config(format!("group {gi} served by unknown base station {}", g.bs)));
            }
            if g.members.is_empty() {
                return Err(Error::Config(format!("group {gi} has no members")));
            }
            for &k in &g.members {
                if users.get(k).map(|u| u.group) != Some(gi) {
                    return Err(Error::Config(format!("group {gi} lists user {k} which does not belong to it")));
                }
            }
        }
        let listed: usize = groups.iter().map(|g| g.members.len()).sum();
        if listed != users.len() {
            return Err(Error::Config("every user must belong to exactly one group".into()));
        }
        for (b, &n) in bs_antennas.iter().enumerate() {
            let served = groups.iter().filter(|g| g.bs == b).count();
            if n < served {
                return Err(Error::Infeasible(format!(
                    "base station {b} has {n} antennas but serves {served} groups"
                )));
            }
        }
        Ok(Self {
            bs_antennas,
            users,
            groups,
        })
    }

    pub fn num_bs(&self) -> usize {
        self.bs_antennas.len()
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn bs_antennas(&self, b: usize) -> usize {
        self.bs_antennas[b]
    }

    pub fn rx_antennas(&self, k: usize) -> usize {
        self.users[k].rx_antennas
    }

    pub fn serving_bs(&self, k: usize) -> usize {
        self.users[k].bs
    }

    pub fn group_of(&self, k: usize) -> usize {
        self.users[k].group
    }

    pub fn user(&self, k: usize) -> &UserInfo {
        &self.users[k]
    }

    pub fn users(&self) -> &[UserInfo] {
        &self.users
    }

    pub fn group(&self, g: usize) -> &GroupInfo {
        &self.groups[g]
    }

    pub fn groups(&self) -> &[GroupInfo] {
        &self.groups
    }

    pub fn served_users(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        self.users.iter().enumerate().filter(move |(_, u)| u.bs == b).map(|(k, _)| k)
    }

    pub fn served_groups(&self, b: usize) -> impl Iterator<Item = usize> + '_ {
        self.groups.iter().enumerate().filter(move |(_, g)| g.bs == b).map(|(g, _)| g)
    }

    /// Number of private streams `|L_k| = M_k - 1`.
    pub fn num_private_streams(&self, k: usize) -> usize {
        self.users[k].rx_antennas - 1
    }

    pub fn total_private_streams(&self) -> usize {
        (0..self.num_users()).map(|k| self.num_private_streams(k)).sum()
    }

    /// Member lists of every group, in group order.
    pub fn assignment(&self) -> Vec<Vec<usize>> {
        self.groups.iter().map(|g| g.members.clone()).collect()
    }
}

struct CellDims {
    num_bs: usize,
    users_per_bs: usize,
    groups_per_bs: usize,
}

fn cell_dims(b: usize, n: usize, k: usize, l: usize, m: usize) -> Result<CellDims> {
    if b == 0 || k == 0 || l == 0 || m == 0 || n == 0 {
        return Err(Error::Config("B, N, K, L and M must all be positive".into()));
    }
    if !k.is_multiple_of(b) {
        return Err(Error::Config(format!("K={k} is not divisible by B={b}")));
    }
    if !l.is_multiple_of(b) {
        return Err(Error::Config(format!("L={l} is not divisible by B={b}")));
    }
    let users_per_bs = k / b;
    let groups_per_bs = l / b;
    if !users_per_bs.is_multiple_of(groups_per_bs) {
        return Err(Error::Config(format!(
            "{users_per_bs} users per cell cannot form {groups_per_bs} equal groups"
        )));
    }
    if n < groups_per_bs {
        return Err(Error::Infeasible(format!(
            "N={n} antennas cannot serve {groups_per_bs} groups per base station"
        )));
    }
    Ok(CellDims {
        num_bs: b,
        users_per_bs,
        groups_per_bs,
    })
}

/// `B` base stations with `N` antennas each; `K/B` users per cell split into
/// `L/B` equal groups of consecutive user indices; every user has `M` antennas.
pub fn build_topology(b: usize, n: usize, k: usize, l: usize, m: usize) -> Result<Topology> {
    let d = cell_dims(b, n, k, l, m)?;
    let size = d.users_per_bs / d.groups_per_bs;
    let assignment: Vec<Vec<usize>> = (0..l).map(|g| (g * size..(g + 1) * size).collect()).collect();
    topology_with_assignment(b, n, k, l, m, &assignment)
}

/// Same dimensions as [`build_topology`], with the users of each cell
/// shuffled into groups by the given generator.
pub fn random_topology(b: usize, n: usize, k: usize, l: usize, m: usize, rng: &mut ChaCha8Rng) -> Result<Topology> {
    let d = cell_dims(b, n, k, l, m)?;
    let size = d.users_per_bs / d.groups_per_bs;
    let mut assignment = Vec::with_capacity(l);
    for cell in 0..d.num_bs {
        let mut users: Vec<usize> = (cell * d.users_per_bs..(cell + 1) * d.users_per_bs).collect();
        users.shuffle(rng);
        for chunk in users.chunks(size) {
            let mut members = chunk.to_vec();
            members.sort_unstable();
            assignment.push(members);
        }
    }
    topology_with_assignment(b, n, k, l, m, &assignment)
}

/// Evenly split topology with an explicit group assignment. Group `g` is served
/// by base station `g / (L/B)`, user `k` by `k / (K/B)`.
pub fn topology_with_assignment(
    b: usize,
    n: usize,
    k: usize,
    l: usize,
    m: usize,
    assignment: &[Vec<usize>],
) -> Result<Topology> {
    let d = cell_dims(b, n, k, l, m)?;
    if assignment.len() != l {
        return Err(Error::Config(format!("assignment lists {} groups, expected {l}", assignment.len())));
    }
    let mut users: Vec<Option<UserInfo>> = vec![None; k];
    let mut groups = Vec::with_capacity(l);
    for (g, members) in assignment.iter().enumerate() {
        let bs = g / d.groups_per_bs;
        for &user in members {
            let slot = users
                .get_mut(user)
                .ok_or_else(|| Error::Config(format!("assignment references unknown user {user}")))?;
            if slot.is_some() {
                return Err(Error::Config(format!("user {user} appears in more than one group")));
            }
            if user / d.users_per_bs != bs {
                return Err(Error::Config(format!("user {user} is not in the cell of group {g}")));
            }
            *slot = Some(UserInfo {
                bs,
                group: g,
                rx_antennas: m,
            });
        }
        groups.push(GroupInfo {
            bs,
            members: members.clone(),
        });
    }
    let users = users
        .into_iter()
        .enumerate()
        .map(|(i, u)| u.ok_or_else(|| Error::Config(format!("user {i} is not assigned to a group"))))
        .collect::<Result<Vec<_>>>()?;
    Topology::new(vec![n; d.num_bs], users, groups)
}

/// Transmit power model; all values in watts except the unitless efficiency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerModel {
    pub eta: f64,
    pub p_max_w: f64,
    pub p0_bs_w: f64,
    pub p0_ue_w: f64,
    pub prf_bs_w: f64,
    pub prf_ue_w: f64,
}

impl PowerModel {
    pub fn reference() -> Self {
        Self {
            eta: 0.35,
            p_max_w: dbw_to_watts(3.0),
            p0_bs_w: 1.0,
            p0_ue_w: 0.2,
            prf_bs_w: 0.4,
            prf_ue_w: 0.2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Config(format!("amplifier efficiency {} outside (0, 1]", self.eta)));
        }
        for (name, v) in [
            ("P_max", self.p_max_w),
            ("P0_bs", self.p0_bs_w),
            ("P0_ue", self.p0_ue_w),
            ("Prf_bs", self.prf_bs_w),
            ("Prf_ue", self.prf_ue_w),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be a nonnegative finite power, got {v}")));
            }
        }
        Ok(())
    }

    /// Per-BS transmit power budget `P_b`.
    pub fn p_max(&self, _bs: usize) -> f64 {
        self.p_max_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadioConfig {
    pub bandwidth_hz: f64,
    /// Noise power per receive antenna over the whole bandwidth.
    pub noise_power_w: f64,
    pub cell_separation_db: f64,
    pub distance_m: f64,
}

impl RadioConfig {
    pub fn reference() -> Self {
        Self {
            bandwidth_hz: 20e6,
            noise_power_w: dbw_to_watts(-125.0),
            cell_separation_db: 3.0,
            distance_m: 250.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_hz > 0.0 && self.noise_power_w > 0.0 && self.distance_m > 0.0) {
            return Err(Error::Config("bandwidth, noise power and distance must be positive".into()));
        }
        if !self.cell_separation_db.is_finite() {
            return Err(Error::Config("cell separation must be finite".into()));
        }
        Ok(())
    }
}

pub fn dbw_to_watts(dbw: f64) -> f64 {
    10f64.powf(dbw / 10.0)
}

/// Path loss in dB: `35 + 30 log10(d)`, plus the cell separation for links to
/// users of another cell.
pub fn pathloss_db(topology: &Topology, radio: &RadioConfig, bs: usize, user: usize) -> f64 {
    let base = 35.0 + 30.0 * radio.distance_m.log10();
    if topology.serving_bs(user) == bs {
        base
    } else {
        base + radio.cell_separation_db
    }
}

/// Channel matrices `H_{b,k}` (`M_k x N_b`) for every base station / user pair.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    links: Vec<Vec<CMatrix>>,
}

impl ChannelSet {
    pub fn new(topology: &Topology, links: Vec<Vec<CMatrix>>) -> Result<Self> {
        if links.len() != topology.num_bs() {
            return Err(Error::Shape(format!("{} channel rows for {} base stations", links.len(), topology.num_bs())));
        }
        for (b, row) in links.iter().enumerate() {
            if row.len() != topology.num_users() {
                return Err(Error::Shape(format!("base station {b}: {} links for {} users", row.len(), topology.num_users())));
            }
            for (k, h) in row.iter().enumerate() {
                if h.shape() != (topology.rx_antennas(k), topology.bs_antennas(b)) {
                    return Err(Error::Shape(format!("H[{b},{k}] has shape {:?}", h.shape())));
                }
                if h.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
                    return Err(Error::Numerical(format!("H[{b},{k}] has non-finite entries")));
                }
            }
        }
        Ok(Self { links })
    }

    /// Channel from base station `b` to user `k`.
    pub fn h(&self, b: usize, k: usize) -> &CMatrix {
        &self.links[b][k]
    }

    pub fn num_bs(&self) -> usize {
        self.links.len()
    }

    pub fn num_users(&self) -> usize {
        self.links.first().map_or(0, |r| r.len())
    }

    pub fn to_json(&self) -> serde_json::Value {
        let links: Vec<_> = self
            .links
            .iter()
            .enumerate()
            .flat_map(|(b, row)| {
                row.iter().enumerate().map(move |(k, h)| {
                    let rows: Vec<Vec<[f64; 2]>> = (0..h.nrows())
                        .map(|r| (0..h.ncols()).map(|c| [h[(r, c)].re, h[(r, c)].im]).collect())
                        .collect();
                    serde_json::json!({ "bs": b, "user": k, "h": rows })
                })
            })
            .collect();
        serde_json::json!({ "links": links })
    }
}

/// Rayleigh fading channels: i.i.d. `CN(0, 10^(-pathloss/10))` entries.
/// Pure function of `(topology, radio, seed)`.
pub fn generate_channels(topology: &Topology, radio: &RadioConfig, seed: u64) -> ChannelSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(CHANNEL_STREAM);
    let links = (0..topology.num_bs())
        .map(|b| {
            (0..topology.num_users())
                .map(|k| {
                    let variance = 10f64.powf(-pathloss_db(topology, radio, b, k) / 10.0);
                    let scale = (variance / 2.0).sqrt();
                    CMatrix::from_fn(topology.rx_antennas(k), topology.bs_antennas(b), |_, _| {
                        let re: f64 = StandardNormal.sample(&mut rng);
                        let im: f64 = StandardNormal.sample(&mut rng);
                        C64::new(scale * re, scale * im)
                    })
                })
                .collect()
        })
        .collect();
    ChannelSet { links }
}

fn default_b() -> usize {
    2
}
fn default_n() -> usize {
    4
}
fn default_k() -> usize {
    8
}
fn default_l() -> usize {
    4
}
fn default_m() -> usize {
    2
}
fn default_eta() -> f64 {
    0.35
}
fn default_p_max_dbw() -> f64 {
    3.0
}
fn default_p0_bs() -> f64 {
    1.0
}
fn default_p0_ue() -> f64 {
    0.2
}
fn default_prf_bs() -> f64 {
    0.4
}
fn default_prf_ue() -> f64 {
    0.2
}
fn default_w() -> f64 {
    20e6
}
fn default_n0_dbw() -> f64 {
    -125.0
}
fn default_mu() -> f64 {
    3.0
}
fn default_distance() -> f64 {
    250.0
}
fn default_rate() -> f64 {
    72.14
}

/// JSON scenario file. Missing keys take the reference values of the
/// two-cell evaluation setup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(rename = "B", default = "default_b")]
    pub num_bs: usize,
    #[serde(rename = "N", default = "default_n")]
    pub bs_antennas: usize,
    #[serde(rename = "K", default = "default_k")]
    pub num_users: usize,
    #[serde(rename = "L", default = "default_l")]
    pub num_groups: usize,
    #[serde(rename = "M", default = "default_m")]
    pub rx_antennas: usize,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(rename = "P_max_dbw", default = "default_p_max_dbw")]
    pub p_max_dbw: f64,
    #[serde(rename = "P0_bs_w", default = "default_p0_bs")]
    pub p0_bs_w: f64,
    #[serde(rename = "P0_ue_w", default = "default_p0_ue")]
    pub p0_ue_w: f64,
    #[serde(rename = "Prf_bs_w", default = "default_prf_bs")]
    pub prf_bs_w: f64,
    #[serde(rename = "Prf_ue_w", default = "default_prf_ue")]
    pub prf_ue_w: f64,
    #[serde(rename = "W_hz", default = "default_w")]
    pub bandwidth_hz: f64,
    #[serde(rename = "N0_dbw", default = "default_n0_dbw")]
    pub n0_dbw: f64,
    #[serde(default = "default_mu")]
    pub mu_db: f64,
    #[serde(default = "default_distance")]
    pub distance_m: f64,
    #[serde(default = "default_rate")]
    pub rate_target_mbps: f64,
    #[serde(default)]
    pub seed: u64,
    /// Realized group member lists; generated from `seed` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<Vec<usize>>>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all scenario keys have defaults")
    }
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Copy with a new seed; any stored assignment is dropped so that the
    /// grouping is redrawn from the new seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            assignment: None,
            ..self.clone()
        }
    }

    pub fn power_model(&self) -> PowerModel {
        PowerModel {
            eta: self.eta,
            p_max_w: dbw_to_watts(self.p_max_dbw),
            p0_bs_w: self.p0_bs_w,
            p0_ue_w: self.p0_ue_w,
            prf_bs_w: self.prf_bs_w,
            prf_ue_w: self.prf_ue_w,
        }
    }

    pub fn radio(&self) -> RadioConfig {
        RadioConfig {
            bandwidth_hz: self.bandwidth_hz,
            noise_power_w: dbw_to_watts(self.n0_dbw),
            cell_separation_db: self.mu_db,
            distance_m: self.distance_m,
        }
    }

    pub fn build(&self) -> Result<Scenario> {
        let (b, n, k, l, m) = (self.num_bs, self.bs_antennas, self.num_users, self.num_groups, self.rx_antennas);
        let topology = match &self.assignment {
            Some(a) => topology_with_assignment(b, n, k, l, m, a)?,
            None => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(GROUPING_STREAM);
                random_topology(b, n, k, l, m, &mut rng)?
            }
        };
        if !(self.rate_target_mbps >= 0.0 && self.rate_target_mbps.is_finite()) {
            return Err(Error::Config(format!("rate target {} Mbit/s must be nonnegative", self.rate_target_mbps)));
        }
        let targets = vec![self.rate_target_mbps * 1e6; topology.num_groups()];
        Scenario::new(topology, self.power_model(), self.radio(), targets, self.seed)
    }
}

/// A fully realized network: topology, power model, radio parameters and
/// per-group common-rate targets in bits/s.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub topology: Topology,
    pub power: PowerModel,
    pub radio: RadioConfig,
    pub rate_targets_bps: Vec<f64>,
    pub seed: u64,
}

impl Scenario {
    pub fn new(topology: Topology, power: PowerModel, radio: RadioConfig, rate_targets_bps: Vec<f64>, seed: u64) -> Result<Self> {
        power.validate()?;
        radio.validate()?;
        if rate_targets_bps.len() != topology.num_groups() {
            return Err(Error::Config(format!(
                "{} rate targets for {} groups",
                rate_targets_bps.len(),
                topology.num_groups()
            )));
        }
        if rate_targets_bps.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
            return Err(Error::Config("rate targets must be nonnegative".into()));
        }
        Ok(Self {
            topology,
            power,
            radio,
            rate_targets_bps,
            seed,
        })
    }

    pub fn channels(&self) -> ChannelSet {
        generate_channels(&self.topology, &self.radio, self.seed)
    }
}
