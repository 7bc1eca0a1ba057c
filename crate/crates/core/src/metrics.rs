//! Ground-truth link metrics: interference, SINR, MSE, rates, power and
//! energy efficiency for any pair of transmit and receive beamformers.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{effective_gain, norm_sqr, CVector};
use crate::scenario::{ChannelSet, PowerModel, RadioConfig, Topology};

/// Transmit beamformers: `private[k][l]` for stream `l` of user `k` and
/// `common[g]` for the multicast stream of group `g`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerSet {
    pub private: Vec<Vec<CVector>>,
    pub common: Vec<CVector>,
}

impl BeamformerSet {
    pub fn zeros(topology: &Topology) -> Self {
        let private = (0..topology.num_users())
            .map(|k| {
                let n = topology.bs_antennas(topology.serving_bs(k));
                vec![CVector::zeros(n); topology.num_private_streams(k)]
            })
            .collect();
        let common = topology
            .groups()
            .iter()
            .map(|g| CVector::zeros(topology.bs_antennas(g.bs)))
            .collect();
        Self { private, common }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if self.private.len() != topology.num_users() || self.common.len() != topology.num_groups() {
            return Err(Error::Shape("beamformer set does not match user/group counts".into()));
        }
        for (k, streams) in self.private.iter().enumerate() {
            if streams.len() != topology.num_private_streams(k) {
                return Err(Error::Shape(format!("user {k}: {} private beams, expected {}", streams.len(), topology.num_private_streams(k))));
            }
            let n = topology.bs_antennas(topology.serving_bs(k));
            if streams.iter().any(|w| w.len() != n) {
                return Err(Error::Shape(format!("user {k}: private beam length differs from {n}")));
            }
        }
        for (g, w) in self.common.iter().enumerate() {
            if w.len() != topology.bs_antennas(topology.group(g).bs) {
                return Err(Error::Shape(format!("group {g}: common beam has length {}", w.len())));
            }
        }
        Ok(())
    }

    /// `sum ||w||^2` over every private and common beam.
    pub fn transmit_power(&self) -> f64 {
        self.private.iter().flatten().map(norm_sqr).sum::<f64>() + self.common.iter().map(norm_sqr).sum::<f64>()
    }

    /// Transmit power radiated by base station `b`.
    pub fn bs_power(&self, topology: &Topology, b: usize) -> f64 {
        let private: f64 = topology.served_users(b).flat_map(|k| self.private[k].iter()).map(norm_sqr).sum();
        let common: f64 = topology.served_groups(b).map(|g| norm_sqr(&self.common[g])).sum();
        private + common
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            private: self.private.iter().map(|s| s.iter().map(|w| w * crate::linalg::C64::from(factor)).collect()).collect(),
            common: self.common.iter().map(|w| w * crate::linalg::C64::from(factor)).collect(),
        }
    }
}

/// Receive beamformers: `private[k][l]` and `common[k]`, each of length `M_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiverSet {
    pub private: Vec<Vec<CVector>>,
    pub common: Vec<CVector>,
}

impl ReceiverSet {
    pub fn zeros(topology: &Topology) -> Self {
        let private = (0..topology.num_users())
            .map(|k| vec![CVector::zeros(topology.rx_antennas(k)); topology.num_private_streams(k)])
            .collect();
        let common = (0..topology.num_users()).map(|k| CVector::zeros(topology.rx_antennas(k))).collect();
        Self { private, common }
    }

    pub fn validate(&self, topology: &Topology) -> Result<()> {
        if self.private.len() != topology.num_users() || self.common.len() != topology.num_users() {
            return Err(Error::Shape("receiver set does not match user count".into()));
        }
        for k in 0..topology.num_users() {
            let m = topology.rx_antennas(k);
            if self.private[k].len() != topology.num_private_streams(k) {
                return Err(Error::Shape(format!("user {k}: wrong number of private receivers")));
            }
            if self.common[k].len() != m || self.private[k].iter().any(|u| u.len() != m) {
                return Err(Error::Shape(format!("user {k}: receiver length differs from {m}")));
            }
        }
        Ok(())
    }
}

/// Shape-checked view over one (topology, channels, beams, receivers) tuple.
/// Construction validates every dimension once so the per-stream queries
/// below cannot fail.
pub struct LinkEvaluator<'a> {
    pub topology: &'a Topology,
    pub channels: &'a ChannelSet,
    pub beams: &'a BeamformerSet,
    pub receivers: &'a ReceiverSet,
    pub noise_power: f64,
}

impl<'a> LinkEvaluator<'a> {
    pub fn new(
        topology: &'a Topology,
        channels: &'a ChannelSet,
        beams: &'a BeamformerSet,
        receivers: &'a ReceiverSet,
        noise_power: f64,
    ) -> Result<Self> {
        if channels.num_bs() != topology.num_bs() || channels.num_users() != topology.num_users() {
            return Err(Error::Shape("channel set does not match topology".into()));
        }
        beams.validate(topology)?;
        receivers.validate(topology)?;
        Ok(Self {
            topology,
            channels,
            beams,
            receivers,
            noise_power,
        })
    }

    fn private_leak(&self, u: &CVector, k: usize, skip: Option<(usize, usize)>) -> f64 {
        let mut total = 0.0;
        for (i, streams) in self.beams.private.iter().enumerate() {
            let h = self.channels.h(self.topology.serving_bs(i), k);
            for (j, w) in streams.iter().enumerate() {
                if skip != Some((i, j)) {
                    total += effective_gain(u, h, w).norm_sqr();
                }
            }
        }
        total
    }

    fn common_leak(&self, u: &CVector, k: usize, skip_group: Option<usize>) -> f64 {
        self.beams
            .common
            .iter()
            .enumerate()
            .filter(|(g, _)| Some(*g) != skip_group)
            .map(|(g, w)| effective_gain(u, self.channels.h(self.topology.group(g).bs, k), w).norm_sqr())
            .sum()
    }

    /// Interference `I_{k,l}` on private stream `l` of user `k`: every other
    /// private stream plus every common stream.
    pub fn interference_private(&self, k: usize, l: usize) -> f64 {
        let u = &self.receivers.private[k][l];
        self.private_leak(u, k, Some((k, l))) + self.common_leak(u, k, None)
    }

    /// Interference `I_{k,c}` on the common stream of user `k`: all private
    /// streams plus the common streams of other groups.
    pub fn interference_common(&self, k: usize) -> f64 {
        let u = &self.receivers.common[k];
        self.private_leak(u, k, None) + self.common_leak(u, k, Some(self.topology.group_of(k)))
    }

    fn desired_private(&self, k: usize, l: usize) -> num_complex::Complex<f64> {
        let h = self.channels.h(self.topology.serving_bs(k), k);
        effective_gain(&self.receivers.private[k][l], h, &self.beams.private[k][l])
    }

    fn desired_common(&self, k: usize) -> num_complex::Complex<f64> {
        let h = self.channels.h(self.topology.serving_bs(k), k);
        effective_gain(&self.receivers.common[k], h, &self.beams.common[self.topology.group_of(k)])
    }

    pub fn sinr_private(&self, k: usize, l: usize) -> f64 {
        let u = &self.receivers.private[k][l];
        let denom = norm_sqr(u) * self.noise_power + self.interference_private(k, l);
        ratio(self.desired_private(k, l).norm_sqr(), denom)
    }

    pub fn sinr_common(&self, k: usize) -> f64 {
        let u = &self.receivers.common[k];
        let denom = norm_sqr(u) * self.noise_power + self.interference_common(k);
        ratio(self.desired_common(k).norm_sqr(), denom)
    }

    pub fn mse_private(&self, k: usize, l: usize) -> f64 {
        let u = &self.receivers.private[k][l];
        (1.0 - self.desired_private(k, l)).norm_sqr() + self.interference_private(k, l) + self.noise_power * norm_sqr(u)
    }

    pub fn mse_common(&self, k: usize) -> f64 {
        let u = &self.receivers.common[k];
        (1.0 - self.desired_common(k)).norm_sqr() + self.interference_common(k) + self.noise_power * norm_sqr(u)
    }
}

// A zero receiver carries nothing: SINR 0 instead of 0/0.
fn ratio(signal: f64, denom: f64) -> f64 {
    if denom > 0.0 {
        signal / denom
    } else {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateReport {
    /// `R_{k,l}` in bits/s.
    pub private_rates: Vec<Vec<f64>>,
    pub common_sinrs: Vec<f64>,
    /// `R_{g,c}` in bits/s: the worst member of each group.
    pub common_rates: Vec<f64>,
    pub sum_rate: f64,
    pub total_power: f64,
    pub energy_efficiency: f64,
}

/// Rates, power and energy efficiency of one operating point.
pub fn rates(eval: &LinkEvaluator<'_>, radio: &RadioConfig, power: &PowerModel) -> RateReport {
    let bw = radio.bandwidth_hz;
    let topology = eval.topology;
    let private_rates: Vec<Vec<f64>> = (0..topology.num_users())
        .map(|k| (0..topology.num_private_streams(k)).map(|l| bw * (1.0 + eval.sinr_private(k, l)).log2()).collect())
        .collect();
    let common_sinrs: Vec<f64> = (0..topology.num_users()).map(|k| eval.sinr_common(k)).collect();
    let common_rates: Vec<f64> = topology
        .groups()
        .iter()
        .map(|g| {
            g.members
                .iter()
                .map(|&k| bw * (1.0 + common_sinrs[k]).log2())
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let sum_rate = private_rates.iter().flatten().sum::<f64>() + common_rates.iter().sum::<f64>();
    let total_power = total_power(eval.beams, topology, power);
    RateReport {
        private_rates,
        common_sinrs,
        common_rates,
        sum_rate,
        total_power,
        energy_efficiency: sum_rate / total_power,
    }
}

/// `P_cir`: fixed plus per-RF-chain power of every base station and user.
pub fn circuit_power(topology: &Topology, power: &PowerModel) -> f64 {
    let bs: f64 = (0..topology.num_bs())
        .map(|b| power.p0_bs_w + topology.bs_antennas(b) as f64 * power.prf_bs_w)
        .sum();
    let ue: f64 = (0..topology.num_users())
        .map(|k| power.p0_ue_w + topology.rx_antennas(k) as f64 * power.prf_ue_w)
        .sum();
    bs + ue
}

/// `P_tot = (1/eta) sum ||w||^2 + P_cir`.
pub fn total_power(beams: &BeamformerSet, topology: &Topology, power: &PowerModel) -> f64 {
    beams.transmit_power() / power.eta + circuit_power(topology, power)
}

/// Sum rate over total consumed power, in bits/joule.
pub fn energy_efficiency(eval: &LinkEvaluator<'_>, radio: &RadioConfig, power: &PowerModel) -> f64 {
    rates(eval, radio, power).energy_efficiency
}
