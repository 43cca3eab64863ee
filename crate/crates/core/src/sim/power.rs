//! Power-network benchmark: generation areas with primary control coupled
//! through tie-lines. States are `(Δθ, Δω, ΔP_m, ΔP_v)`; the angle and the
//! frequency deviation are measured.
//!
//! The default parameters are placeholders that give Hurwitz areas, not the
//! values of any published benchmark.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::design::DesignOptions;
use crate::error::{DkfError, Result};
use crate::io::SubsystemSpec;
use crate::network::{NetworkModel, SubsystemId};
use crate::pnp::{PlugRequest, PnPEvent, PnPEventKind};
use crate::riccati::Mat;
use crate::sim::discretize::DiscretizationMethod;
use crate::sim::scenario::{ContinuousSpec, DenialPolicy, Scenario};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AreaParams {
    /// Inertia constant `H`.
    pub inertia: f64,
    /// Speed droop `R`.
    pub droop: f64,
    /// Damping `D`.
    pub damping: f64,
    /// Turbine time constant `T_t`.
    pub t_turbine: f64,
    /// Governor time constant `T_g`.
    pub t_governor: f64,
}

impl Default for AreaParams {
    fn default() -> Self {
        Self {
            inertia: 12.0,
            droop: 0.05,
            damping: 0.7,
            t_turbine: 0.65,
            t_governor: 0.1,
        }
    }
}

impl AreaParams {
    fn check(&self) -> Result<()> {
        let fields = [
            ("inertia", self.inertia),
            ("droop", self.droop),
            ("turbine time constant", self.t_turbine),
            ("governor time constant", self.t_governor),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DkfError::InvalidScenario(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PowerParams {
    /// Parameters of every area without an override.
    pub area: AreaParams,
    pub overrides: BTreeMap<SubsystemId, AreaParams>,
    /// Tie-line coefficient `P_ij` of every connected pair.
    pub tie: f64,
    /// Sampling interval.
    pub t: f64,
    pub method: DiscretizationMethod,
}

impl Default for PowerParams {
    fn default() -> Self {
        Self {
            area: AreaParams::default(),
            overrides: BTreeMap::new(),
            tie: 4.0,
            t: 1.0,
            method: DiscretizationMethod::default(),
        }
    }
}

impl PowerParams {
    pub fn area_params(&self, id: SubsystemId) -> AreaParams {
        self.overrides.get(&id).copied().unwrap_or(self.area)
    }
}

/// Continuous `A^c_ii` for total tie-line coefficient `sum_p`.
pub fn area_matrix(p: &AreaParams, sum_p: f64) -> Mat {
    let h2 = 2.0 * p.inertia;
    Mat::from_row_slice(
        4,
        4,
        &[
            0.0,
            1.0,
            0.0,
            0.0,
            -sum_p / h2,
            -p.damping / h2,
            1.0 / h2,
            0.0,
            0.0,
            0.0,
            -1.0 / p.t_turbine,
            1.0 / p.t_turbine,
            0.0,
            -1.0 / (p.droop * p.t_governor),
            0.0,
            -1.0 / p.t_governor,
        ],
    )
}

/// Continuous `A^c_ij`: the single entry `P_ij / (2 H_i)` in the frequency
/// row, angle column.
pub fn tie_matrix(p: &AreaParams, tie: f64) -> Mat {
    let mut m = Mat::zeros(4, 4);
    m[(1, 0)] = tie / (2.0 * p.inertia);
    m
}

pub fn output_matrix() -> Mat {
    Mat::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0])
}

/// Continuous area `id` connected to `neighbors`.
pub fn continuous_area(
    id: SubsystemId,
    neighbors: &[SubsystemId],
    params: &PowerParams,
) -> Result<SubsystemSpec> {
    let p = params.area_params(id);
    p.check()?;
    let sum_p = params.tie * neighbors.len() as f64;
    Ok(SubsystemSpec {
        id,
        a_ii: area_matrix(&p, sum_p),
        c: output_matrix(),
        q: Mat::identity(4, 4) * 3.0,
        r: Mat::identity(2, 2),
        coupling: neighbors
            .iter()
            .map(|&j| (j, tie_matrix(&p, params.tie)))
            .collect(),
    })
}

/// Continuous blocks of areas `ids` with undirected tie-lines `edges`.
pub fn continuous_network(
    ids: &[SubsystemId],
    edges: &[(SubsystemId, SubsystemId)],
    params: &PowerParams,
) -> Result<ContinuousSpec> {
    if params.t.is_nan() || params.t <= 0.0 {
        return Err(DkfError::InvalidScenario(format!(
            "sampling interval must be positive, got {}",
            params.t
        )));
    }
    let subsystems = ids
        .iter()
        .map(|&i| {
            let mut nbrs: Vec<SubsystemId> = edges
                .iter()
                .filter_map(|&(a, b)| match (a == i, b == i) {
                    (true, false) => Some(b),
                    (false, true) => Some(a),
                    _ => None,
                })
                .collect();
            nbrs.sort_unstable();
            nbrs.dedup();
            continuous_area(i, &nbrs, params)
        })
        .collect::<Result<_>>()?;
    Ok(ContinuousSpec {
        t: params.t,
        method: params.method,
        subsystems,
    })
}

pub fn power_network(
    ids: &[SubsystemId],
    edges: &[(SubsystemId, SubsystemId)],
    params: &PowerParams,
) -> Result<NetworkModel> {
    continuous_network(ids, edges, params)?.discretized()
}

const FOUR_AREA_EDGES: [(SubsystemId, SubsystemId); 3] = [(1, 2), (2, 3), (3, 4)];

/// Four areas in a chain `1 – 2 – 3 – 4`.
pub fn power_network_scenario(params: &PowerParams, horizon: usize, seed: u64) -> Result<Scenario> {
    let continuous = continuous_network(&[1, 2, 3, 4], &FOUR_AREA_EDGES, params)?;
    let mut sc = Scenario::new(&continuous.discretized()?, horizon, seed);
    sc.network = None;
    sc.continuous = Some(continuous);
    sc.design = DesignOptions::kalman_only();
    Ok(sc)
}

/// The four-area chain plus area 5, which runs disconnected and untracked
/// until it connects to area 2 at `plug_time`. Admission is evaluated and
/// logged but the connection happens regardless of the outcome.
pub fn power_pnp_scenario(
    params: &PowerParams,
    horizon: usize,
    seed: u64,
    plug_time: usize,
) -> Result<Scenario> {
    let ids = [1, 2, 3, 4, 5];
    let before = power_network(&ids, &FOUR_AREA_EDGES, params)?;
    let mut edges = FOUR_AREA_EDGES.to_vec();
    edges.push((2, 5));
    let after = power_network(&ids, &edges, params)?;
    let mut sc = Scenario::new(&before, horizon, seed);
    sc.untracked = vec![5];
    sc.on_denial = DenialPolicy::Apply;
    sc.design = DesignOptions::kalman_only();
    let mut row2: SubsystemSpec = after.subsystem(2)?.into();
    let outgoing = row2
        .coupling
        .remove(&5)
        .into_iter()
        .map(|a| (2, a))
        .collect();
    sc.pnp_events.push(PnPEvent {
        time: plug_time,
        kind: PnPEventKind::PlugSubsystem(PlugRequest {
            subsystem: after.subsystem(5)?.into(),
            outgoing,
            updated_subsystems: vec![row2],
        }),
    });
    Ok(sc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::assemble_global;
    use crate::riccati::{eigenvalues, spectral_radius};

    #[test]
    fn areas_are_hurwitz() {
        let p = AreaParams::default();
        for sum_p in [4.0, 8.0, 12.0] {
            let eig = eigenvalues(&area_matrix(&p, sum_p)).unwrap();
            assert!(eig.iter().all(|z| z.re < 0.0), "{eig:?}");
        }
        // A disconnected area keeps a pure angle integrator.
        let eig = eigenvalues(&area_matrix(&p, 0.0)).unwrap();
        assert!(eig.iter().any(|z| z.norm() < 1e-12));
    }

    #[test]
    fn tie_matrix_has_single_entry() {
        let m = tie_matrix(&AreaParams::default(), 4.0);
        assert_eq!(m.iter().filter(|&&v| v != 0.0).count(), 1);
        assert_eq!(m[(1, 0)], 4.0 / 24.0);
    }

    #[test]
    fn four_area_adjacency() {
        let net = power_network_scenario(&PowerParams::default(), 100, 0)
            .unwrap()
            .plant_network()
            .unwrap();
        let expected = [[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0]];
        for i in 1..=4 {
            for j in 1..=4 {
                let coupled = i != j && net.block(i, j).unwrap().is_some();
                assert_eq!(coupled as i32, expected[i - 1][j - 1], "({i}, {j})");
            }
        }
        // Shifting every angle by the same amount is an equilibrium.
        let sigma = spectral_radius(&assemble_global(&net).a).unwrap();
        assert!((sigma - 1.0).abs() < 1e-9, "{sigma}");
    }

    #[test]
    fn five_area_plug_in_event() {
        let sc = power_pnp_scenario(&PowerParams::default(), 100, 0, 50).unwrap();
        let plant = sc.plant_network().unwrap();
        assert!(plant.is_isolated(5).unwrap());
        let PnPEventKind::PlugSubsystem(req) = &sc.pnp_events[0].kind else {
            panic!("expected plug-in");
        };
        assert_eq!(sc.pnp_events[0].time, 50);
        assert_eq!(
            req.subsystem.coupling.keys().copied().collect::<Vec<_>>(),
            vec![2]
        );
        assert_eq!(req.outgoing.keys().copied().collect::<Vec<_>>(), vec![2]);
        assert_eq!(req.updated_subsystems[0].id, 2);
        // Area 2 gains tie-line weight, so its local dynamics change.
        assert_ne!(
            req.updated_subsystems[0].a_ii,
            plant.subsystem(2).unwrap().a_ii
        );
    }

    #[test]
    fn bad_parameters() {
        let mut params = PowerParams::default();
        params.overrides.insert(
            3,
            AreaParams {
                t_governor: 0.0,
                ..AreaParams::default()
            },
        );
        assert!(power_network_scenario(&params, 10, 0).is_err());
        let params = PowerParams {
            t: -1.0,
            ..PowerParams::default()
        };
        assert!(power_network_scenario(&params, 10, 0).is_err());
    }
}
