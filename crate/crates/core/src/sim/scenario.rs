//! Scenario description and its JSON form.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::design::{DesignOptions, InitializationMode};
use crate::error::{DkfError, Result};
use crate::io::{NetworkSpec, SubsystemSpec};
use crate::network::{build_network, NetworkModel, SubsystemId, SubsystemModel};
use crate::pnp::PnPEvent;
use crate::sim::discretize::{discretize, DiscretizationMethod};

/// Which estimators run alongside the plant.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunFlags {
    pub dkf: bool,
    /// Fixed-gain filter with the converged covariances of the current
    /// topology.
    pub simplified: bool,
    pub centralized: bool,
}

impl Default for RunFlags {
    fn default() -> Self {
        Self {
            dkf: true,
            simplified: false,
            centralized: true,
        }
    }
}

/// What to do with a plug-in or sensor request that fails its admission
/// test.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenialPolicy {
    /// Log the decision and keep the current configuration.
    #[default]
    Skip,
    /// Log the decision and stop the run.
    Halt,
    /// Log the decision and reconfigure anyway.
    Apply,
}

/// Continuous-time subsystem blocks, discretized with interval `T` before
/// the run. `Q` and `R` are taken as the discrete noise covariances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousSpec {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(default)]
    pub method: DiscretizationMethod,
    pub subsystems: Vec<SubsystemSpec>,
}

impl ContinuousSpec {
    pub fn discretized(&self) -> Result<NetworkModel> {
        let models = self
            .subsystems
            .iter()
            .map(|s| {
                let (a_ii, coupling) = discretize(&s.a_ii, &s.coupling, self.t, self.method)?;
                Ok(SubsystemModel {
                    a_ii,
                    coupling,
                    ..s.clone().into()
                })
            })
            .collect::<Result<_>>()?;
        build_network(models)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub network: Option<NetworkSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<ContinuousSpec>,
    pub horizon: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub init_mode: InitializationMode,
    #[serde(default)]
    pub pnp_events: Vec<PnPEvent>,
    #[serde(default)]
    pub runs: RunFlags,
    /// Plant subsystems the estimators ignore until they are plugged in.
    /// They must be isolated.
    #[serde(default)]
    pub untracked: Vec<SubsystemId>,
    #[serde(default)]
    pub on_denial: DenialPolicy,
    /// Initial plant state per subsystem (zero when absent).
    #[serde(default)]
    pub x0: BTreeMap<SubsystemId, Vec<f64>>,
    /// Initial estimate per tracked subsystem (zero when absent).
    #[serde(default)]
    pub xhat0: BTreeMap<SubsystemId, Vec<f64>>,
    #[serde(default)]
    pub design: DesignOptions,
    /// Run the `(θ, H)` search for the initial certificate instead of the
    /// default design.
    #[serde(default)]
    pub design_search: bool,
}

impl Scenario {
    pub fn new(network: &NetworkModel, horizon: usize, seed: u64) -> Self {
        Self {
            network: Some(network.into()),
            continuous: None,
            horizon,
            seed,
            init_mode: InitializationMode::default(),
            pnp_events: Vec::new(),
            runs: RunFlags::default(),
            untracked: Vec::new(),
            on_denial: DenialPolicy::default(),
            x0: BTreeMap::new(),
            xhat0: BTreeMap::new(),
            design: DesignOptions::default(),
            design_search: false,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Self = serde_json::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(DkfError::InvalidScenario(
                "horizon must be at least 1".into(),
            ));
        }
        if self.network.is_some() == self.continuous.is_some() {
            return Err(DkfError::InvalidScenario(
                "exactly one of `network` and `continuous` must be given".into(),
            ));
        }
        if self.pnp_events.windows(2).any(|w| w[0].time > w[1].time) {
            return Err(DkfError::InvalidScenario(
                "PnP events must be sorted by time".into(),
            ));
        }
        Ok(())
    }

    /// Plant network at time zero, untracked subsystems included.
    pub fn plant_network(&self) -> Result<NetworkModel> {
        match (&self.network, &self.continuous) {
            (Some(n), None) => n.clone().build(),
            (None, Some(c)) => c.discretized(),
            _ => Err(DkfError::InvalidScenario(
                "exactly one of `network` and `continuous` must be given".into(),
            )),
        }
    }
}
