//! MMSE receive beamformers for fixed transmit beamformers.

use nalgebra::{Cholesky, SymmetricEigen};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{CMatrix, CVector, C64};
use crate::metrics::{BeamformerSet, ReceiverSet};
use crate::scenario::{ChannelSet, Topology};

/// Largest condition number accepted for a receive covariance.
pub const MAX_CONDITION: f64 = 1e13;

fn add_outer(acc: &mut CMatrix, v: &CVector) {
    acc.ger(C64::new(1.0, 0.0), v, &v.conjugate(), C64::new(1.0, 0.0));
}

/// Total receive covariance `C_k` of user `k`: every private and common
/// stream of the network plus `N0 I`.
pub fn receive_covariance(topology: &Topology, channels: &ChannelSet, beams: &BeamformerSet, k: usize, n0: f64) -> Result<CMatrix> {
    beams.validate(topology)?;
    Ok(covariance_unchecked(topology, channels, beams, k, n0))
}

fn covariance_unchecked(topology: &Topology, channels: &ChannelSet, beams: &BeamformerSet, k: usize, n0: f64) -> CMatrix {
    let m = topology.rx_antennas(k);
    let mut cov = CMatrix::identity(m, m) * C64::new(n0, 0.0);
    for (i, streams) in beams.private.iter().enumerate() {
        let h = channels.h(topology.serving_bs(i), k);
        for w in streams {
            add_outer(&mut cov, &(h * w));
        }
    }
    for (g, w) in beams.common.iter().enumerate() {
        let h = channels.h(topology.group(g).bs, k);
        add_outer(&mut cov, &(h * w));
    }
    cov
}

fn user_receivers(topology: &Topology, channels: &ChannelSet, beams: &BeamformerSet, k: usize, n0: f64) -> Result<(Vec<CVector>, CVector)> {
    let cov = covariance_unchecked(topology, channels, beams, k, n0);
    let eig = SymmetricEigen::new(cov.clone());
    let (lo, hi) = eig
        .eigenvalues
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    if !(lo > 0.0) || hi / lo > MAX_CONDITION {
        return Err(Error::Numerical(format!("receive covariance of user {k} is ill-conditioned ({lo:e}..{hi:e})")));
    }
    let chol = Cholesky::new(cov).ok_or_else(|| Error::Numerical(format!("receive covariance of user {k} is not positive definite")))?;
    let h = channels.h(topology.serving_bs(k), k);
    let private = beams.private[k].iter().map(|w| chol.solve(&(h * w))).collect();
    let common = chol.solve(&(h * &beams.common[topology.group_of(k)]));
    Ok((private, common))
}

/// `u = C_k^{-1} H_{b_k,k} w` for every stream, one Cholesky factorization per user.
pub fn mmse_receivers(topology: &Topology, channels: &ChannelSet, beams: &BeamformerSet, n0: f64, exec: Execution) -> Result<ReceiverSet> {
    if !(n0 > 0.0) {
        return Err(Error::Config("MMSE receivers need a positive noise power".into()));
    }
    beams.validate(topology)?;
    let per_user = exec.map_range(topology.num_users(), |k| user_receivers(topology, channels, beams, k, n0));
    let mut private = Vec::with_capacity(per_user.len());
    let mut common = Vec::with_capacity(per_user.len());
    for r in per_user {
        let (p, c) = r?;
        private.push(p);
        common.push(c);
    }
    Ok(ReceiverSet { private, common })
}
