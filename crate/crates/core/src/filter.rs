//! Online estimators: the distributed predictor with its covariance
//! recursion, the fixed-gain variant, the centralized Kalman predictor and
//! the exact error-covariance propagation used as a reference.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rayon::prelude::*;

use crate::error::{DkfError, Result};
use crate::network::{GlobalMatrices, NetworkModel, SubsystemId};
use crate::riccati::{kalman_gain, riccati_term, riccati_update, symmetrize, Mat};

pub type Vector = DVector<f64>;

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorState {
    /// One-step prediction of `x_i`.
    pub xhat: Vector,
    /// Covariance bound `P_i`.
    pub p: Mat,
}

pub type States = BTreeMap<SubsystemId, EstimatorState>;
pub type Outputs = BTreeMap<SubsystemId, Vector>;
pub type Covariances = BTreeMap<SubsystemId, Mat>;
/// Gains `L_ij` of one subsystem, keyed by neighbor id.
pub type LocalGains = BTreeMap<SubsystemId, Mat>;

/// What subsystem `sender` broadcasts to its successors each round.
#[derive(Clone, Debug, PartialEq)]
pub struct BroadcastMessage {
    pub sender: SubsystemId,
    pub y: Vector,
    pub xhat: Vector,
    pub p: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CentralizedState {
    pub xhat: Vector,
    pub pi: Mat,
}

fn missing(i: SubsystemId, j: SubsystemId) -> DkfError {
    DkfError::MissingNeighbor {
        subsystem: i,
        neighbor: j,
    }
}

/// `L_ij = A_ij P_j C_jᵀ (C_j P_j C_jᵀ + R_j)⁻¹` for every `j ∈ 𝓝_i`.
pub fn local_gains(
    network: &NetworkModel,
    i: SubsystemId,
    covs: &Covariances,
) -> Result<LocalGains> {
    let mut gains = LocalGains::new();
    for &j in network.neighbors(i)? {
        let p_j = covs.get(&j).ok_or_else(|| missing(i, j))?;
        let sj = network.subsystem(j)?;
        let a_ij = network.block(i, j)?.expect("neighbor block");
        gains.insert(j, kalman_gain(p_j, a_ij, &sj.c, &sj.r)?);
    }
    Ok(gains)
}

/// Prediction sum over `j ∈ 𝓝_i` in ascending id order, using supplied gains.
pub fn predict_with_gains(
    network: &NetworkModel,
    i: SubsystemId,
    messages: &BTreeMap<SubsystemId, BroadcastMessage>,
    gains: &LocalGains,
) -> Result<Vector> {
    let mut acc = Vector::zeros(network.subsystem(i)?.n());
    for &j in network.neighbors(i)? {
        let m = messages.get(&j).ok_or_else(|| missing(i, j))?;
        let l_ij = gains.get(&j).ok_or_else(|| missing(i, j))?;
        let a_ij = network.block(i, j)?.expect("neighbor block");
        let c_j = &network.subsystem(j)?.c;
        acc += a_ij * &m.xhat + l_ij * (&m.y - c_j * &m.xhat);
    }
    Ok(acc)
}

/// Distributed prediction `x̂_i(k+1)` with gains from the covariances carried
/// by the messages.
pub fn dkf_predict(
    network: &NetworkModel,
    i: SubsystemId,
    messages: &BTreeMap<SubsystemId, BroadcastMessage>,
) -> Result<Vector> {
    let mut covs = Covariances::new();
    for &j in network.neighbors(i)? {
        let m = messages.get(&j).ok_or_else(|| missing(i, j))?;
        covs.insert(j, m.p.clone());
    }
    let gains = local_gains(network, i, &covs)?;
    predict_with_gains(network, i, messages, &gains)
}

/// `P_i(k+1) = Σ_{j∈𝓝_i} 𝓡(P_j, Ã_ij, C̃_j, 0, R̃_j) + Q_i`.
pub fn dkf_cov_update(network: &NetworkModel, i: SubsystemId, covs: &Covariances) -> Result<Mat> {
    let si = network.subsystem(i)?;
    let mut acc = Mat::zeros(si.n(), si.n());
    for &j in network.neighbors(i)? {
        let p_j = covs.get(&j).ok_or_else(|| missing(i, j))?;
        let sj = network.subsystem(j)?;
        let varsigma = network.varsigma(j)? as f64;
        let a_ij = network.block(i, j)?.expect("neighbor block");
        acc += riccati_term(
            p_j,
            &(a_ij * varsigma.sqrt()),
            &(&sj.c * varsigma.sqrt()),
            &(&sj.r * varsigma),
        )?;
    }
    Ok(symmetrize(&(acc + &si.q)))
}

fn broadcast(
    network: &NetworkModel,
    states: &States,
    measurements: &Outputs,
    covs: Option<&Covariances>,
) -> Result<BTreeMap<SubsystemId, BroadcastMessage>> {
    network
        .ids()
        .into_iter()
        .map(|j| {
            let s = states.get(&j).ok_or(DkfError::UnknownSubsystem(j))?;
            let y = measurements.get(&j).ok_or(DkfError::UnknownSubsystem(j))?;
            let p = match covs {
                Some(c) => c.get(&j).ok_or(DkfError::UnknownSubsystem(j))?.clone(),
                None => s.p.clone(),
            };
            Ok((
                j,
                BroadcastMessage {
                    sender: j,
                    y: y.clone(),
                    xhat: s.xhat.clone(),
                    p,
                },
            ))
        })
        .collect()
}

/// One synchronous round for every subsystem: broadcast, gather, gains,
/// prediction and covariance update. Per-subsystem work runs on the rayon
/// pool after all messages of the round exist.
pub fn network_round(
    network: &NetworkModel,
    states: &States,
    measurements: &Outputs,
) -> Result<States> {
    let messages = broadcast(network, states, measurements, None)?;
    let covs: Covariances = messages.iter().map(|(&j, m)| (j, m.p.clone())).collect();
    let ids = network.ids();
    let updated: Vec<(SubsystemId, EstimatorState)> = ids
        .par_iter()
        .map(|&i| {
            let xhat = dkf_predict(network, i, &messages)?;
            let p = dkf_cov_update(network, i, &covs)?;
            Ok((i, EstimatorState { xhat, p }))
        })
        .collect::<Result<_>>()?;
    Ok(updated.into_iter().collect())
}

/// Constant gains `L̄_ij = 𝓛(P̄_j, A_ij, C_j, R_j)` for every subsystem.
pub fn fixed_gains(
    network: &NetworkModel,
    fixed: &Covariances,
) -> Result<BTreeMap<SubsystemId, LocalGains>> {
    network
        .ids()
        .into_iter()
        .map(|i| Ok((i, local_gains(network, i, fixed)?)))
        .collect()
}

/// Fixed-gain round with precomputed gains; covariances are left untouched.
pub fn fixed_gain_round(
    network: &NetworkModel,
    states: &States,
    measurements: &Outputs,
    gains: &BTreeMap<SubsystemId, LocalGains>,
) -> Result<States> {
    let messages = broadcast(network, states, measurements, None)?;
    let ids = network.ids();
    let updated: Vec<(SubsystemId, EstimatorState)> = ids
        .par_iter()
        .map(|&i| {
            let g = gains.get(&i).ok_or(DkfError::UnknownSubsystem(i))?;
            let xhat = predict_with_gains(network, i, &messages, g)?;
            Ok((
                i,
                EstimatorState {
                    xhat,
                    p: states[&i].p.clone(),
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(updated.into_iter().collect())
}

/// Simplified DKF round with fixed covariances `P̄_i`.
pub fn simplified_round(
    network: &NetworkModel,
    states: &States,
    measurements: &Outputs,
    fixed: &Covariances,
) -> Result<States> {
    fixed_gain_round(network, states, measurements, &fixed_gains(network, fixed)?)
}

/// Assembled block gain `L` (`n × p`), block `(i, j)` equal to `L_ij`.
pub fn assemble_gain(
    network: &NetworkModel,
    global: &GlobalMatrices,
    covs: &Covariances,
) -> Result<Mat> {
    let mut l = Mat::zeros(global.a.nrows(), global.c.nrows());
    let offsets: BTreeMap<_, _> = global.layout.iter().map(|b| (b.id, *b)).collect();
    for i in network.ids() {
        for (j, l_ij) in local_gains(network, i, covs)? {
            let (bi, bj) = (offsets[&i], offsets[&j]);
            l.view_mut((bi.x_offset, bj.y_offset), (bi.n, bj.p))
                .copy_from(&l_ij);
        }
    }
    Ok(l)
}

/// `blockdiag(P_i)` in global layout.
pub fn block_diagonal(global: &GlobalMatrices, covs: &Covariances) -> Result<Mat> {
    let n = global.a.nrows();
    let mut out = Mat::zeros(n, n);
    for b in &global.layout {
        let p = covs.get(&b.id).ok_or(DkfError::UnknownSubsystem(b.id))?;
        out.view_mut((b.x_offset, b.x_offset), (b.n, b.n))
            .copy_from(p);
    }
    Ok(out)
}

pub fn centralized_step(
    global: &GlobalMatrices,
    state: &CentralizedState,
    y: &Vector,
) -> Result<CentralizedState> {
    let l = kalman_gain(&state.pi, &global.a, &global.c, &global.r)?;
    let xhat = &global.a * &state.xhat + l * (y - &global.c * &state.xhat);
    let pi = riccati_update(&state.pi, &global.a, &global.c, &global.q, &global.r)?;
    Ok(CentralizedState { xhat, pi })
}

/// `(A − LC) Π (A − LC)ᵀ + L R Lᵀ + Q`.
pub fn error_cov_step(global: &GlobalMatrices, pi: &Mat, l: &Mat) -> Mat {
    let f = &global.a - l * &global.c;
    symmetrize(&(&f * pi * f.transpose() + l * &global.r * l.transpose() + &global.q))
}
