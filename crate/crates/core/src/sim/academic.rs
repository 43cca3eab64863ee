//! The academic example: identical second-order subsystems with
//! `A_ij = diag(α, −α)` couplings.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::network::{build_network, NetworkModel, SubsystemId, SubsystemModel};
use crate::pnp::{PlugRequest, PnPEvent, PnPEventKind, UnplugRequest};
use crate::riccati::Mat;
use crate::sim::scenario::Scenario;

/// Coupling pattern over ids `1..=M`. An edge `(i, j)` means `A_ij ≠ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Complete,
    /// `i` and `i + 1` influence each other.
    Chain,
    /// `i + 1` is influenced by `i` only.
    Cascade,
    Custom(Vec<(SubsystemId, SubsystemId)>),
}

impl Topology {
    pub fn neighbors(&self, m: usize, i: SubsystemId) -> Vec<SubsystemId> {
        let ids = 1..=m;
        match self {
            Self::Complete => ids.filter(|&j| j != i).collect(),
            Self::Chain => ids.filter(|&j| j + 1 == i || i + 1 == j).collect(),
            Self::Cascade => ids.filter(|&j| j + 1 == i).collect(),
            Self::Custom(edges) => {
                let mut out: Vec<SubsystemId> = edges
                    .iter()
                    .filter(|e| e.0 == i && e.1 != i)
                    .map(|e| e.1)
                    .collect();
                out.sort_unstable();
                out.dedup();
                out
            }
        }
    }
}

pub fn coupling_block(alpha: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[alpha, 0.0, 0.0, -alpha])
}

pub fn academic_subsystem(
    id: SubsystemId,
    neighbors: &[SubsystemId],
    alpha: f64,
) -> SubsystemModel {
    let mut s = SubsystemModel::new(
        id,
        Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.1, -0.9]),
        Mat::from_row_slice(1, 2, &[1.0, 1.0]),
        Mat::identity(2, 2),
        Mat::identity(1, 1),
    );
    for &j in neighbors {
        s = s.with_coupling(j, coupling_block(alpha));
    }
    s
}

/// Subsystems `1..=m` coupled per `topology`.
pub fn academic_network(m: usize, alpha: f64, topology: &Topology) -> Result<NetworkModel> {
    build_network(
        (1..=m)
            .map(|i| academic_subsystem(i, &topology.neighbors(m, i), alpha))
            .collect(),
    )
}

pub fn academic_scenario(
    m: usize,
    alpha: f64,
    topology: Topology,
    horizon: usize,
    seed: u64,
) -> Result<Scenario> {
    Ok(Scenario::new(
        &academic_network(m, alpha, &topology)?,
        horizon,
        seed,
    ))
}

/// Three phases: 1 and 2 coupled with 3 isolated; 3 connects to 2 at step
/// 100; 1 is disconnected (kept as an isolated subsystem) at step 200.
pub fn academic_pnp_scenario(horizon: usize, seed: u64) -> Scenario {
    let alpha = 0.1;
    let net = build_network(vec![
        academic_subsystem(1, &[2], alpha),
        academic_subsystem(2, &[1], alpha),
        academic_subsystem(3, &[], alpha),
    ])
    .expect("valid network");
    let mut sc = Scenario::new(&net, horizon, seed);
    sc.pnp_events = vec![
        PnPEvent {
            time: 100,
            kind: PnPEventKind::PlugSubsystem(PlugRequest {
                subsystem: (&academic_subsystem(3, &[2], alpha)).into(),
                outgoing: [(2, coupling_block(alpha))].into(),
                updated_subsystems: Vec::new(),
            }),
        },
        PnPEvent {
            time: 200,
            kind: PnPEventKind::UnplugSubsystem(UnplugRequest {
                id: 1,
                keep_isolated: true,
            }),
        },
    ];
    sc
}
