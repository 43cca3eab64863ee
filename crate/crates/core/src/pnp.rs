//! Plug-and-play reconfiguration: subsystem plug-in with local admission
//! test, unplug, sensor addition and replacement, and the covariance
//! re-initialization schedules that go with them.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::design::{
    compute_envelope, coupling_norm_sq, initial_covariance, local_candidate, scaled_kalman_gain,
    DesignCertificate, DesignOptions, InitializationMode, LocalCertificate,
};
use crate::error::{DkfError, Result};
use crate::filter::{dkf_cov_update, Covariances, EstimatorState, States, Vector};
use crate::io::SubsystemSpec;
use crate::network::{
    build_network, condition_number, is_detectable, scaled, NetworkModel, SubsystemId,
    SubsystemModel, INVERTIBILITY_COND,
};
use crate::riccati::{block_diag, spectral_radius, Mat};

/// Largest tolerated `‖P_i(k+1) − P_i(k)‖` at a reconfiguration instant
/// before a steady-state warning is attached to the decision.
pub const STEADY_STATE_TOL: f64 = 1e-6;

/// Phase-1 convergence threshold of the sensor covariance procedure.
pub const SENSOR_PHASE_TOL: f64 = 1e-9;

/// Phase-1 iteration cap of the sensor covariance procedure.
pub const SENSOR_PHASE_CAP: usize = 50_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlugRequest {
    /// The new subsystem with its incoming couplings `A_{new,j}`.
    pub subsystem: SubsystemSpec,
    /// Outgoing couplings `A_{j,new}`, keyed by successor id.
    #[serde(default, with = "crate::io::row_map")]
    pub outgoing: BTreeMap<SubsystemId, Mat>,
    /// Replacement rows of existing subsystems whose `A_jj` or coupling
    /// values change with the new connection. Sensors, noise and the set of
    /// existing neighbors must stay the same; a coupling to the new
    /// subsystem may be given here instead of in `outgoing`.
    #[serde(default)]
    pub updated_subsystems: Vec<SubsystemSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnplugRequest {
    pub id: SubsystemId,
    /// Keep the subsystem as an isolated member instead of removing it.
    #[serde(default)]
    pub keep_isolated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AddSensorRequest {
    pub id: SubsystemId,
    #[serde(with = "crate::io::rows")]
    pub c_add: Mat,
    #[serde(with = "crate::io::rows")]
    pub r_add: Mat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplaceSensorsRequest {
    pub id: SubsystemId,
    #[serde(rename = "C", with = "crate::io::rows")]
    pub c: Mat,
    #[serde(rename = "R", with = "crate::io::rows")]
    pub r: Mat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum PnPEventKind {
    PlugSubsystem(PlugRequest),
    UnplugSubsystem(UnplugRequest),
    AddSensor(AddSensorRequest),
    ReplaceSensors(ReplaceSensorsRequest),
}

impl PnPEventKind {
    pub fn subsystem(&self) -> SubsystemId {
        match self {
            Self::PlugSubsystem(r) => r.subsystem.id,
            Self::UnplugSubsystem(r) => r.id,
            Self::AddSensor(r) => r.id,
            Self::ReplaceSensors(r) => r.id,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PlugSubsystem(_) => "PLUG_SUBSYSTEM",
            Self::UnplugSubsystem(_) => "UNPLUG_SUBSYSTEM",
            Self::AddSensor(_) => "ADD_SENSOR",
            Self::ReplaceSensors(_) => "REPLACE_SENSORS",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PnPEvent {
    pub time: usize,
    #[serde(flatten)]
    pub kind: PnPEventKind,
}

/// How an existing subsystem relates to the subsystem being plugged or
/// unplugged.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateCase {
    Unaffected,
    /// Influenced by the event subsystem only (its ς is unchanged).
    SuccessorOnly,
    /// Influences the event subsystem only (its ς changes).
    NeighborOnly,
    Both,
    Added,
    Removed,
    Detached,
    SensorChanged,
}

fn classify(
    i: SubsystemId,
    successors: &BTreeSet<SubsystemId>,
    neighbors: &BTreeSet<SubsystemId>,
) -> UpdateCase {
    match (successors.contains(&i), neighbors.contains(&i)) {
        (false, false) => UpdateCase::Unaffected,
        (true, false) => UpdateCase::SuccessorOnly,
        (false, true) => UpdateCase::NeighborOnly,
        (true, true) => UpdateCase::Both,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsystemUpdate {
    pub id: SubsystemId,
    pub case: UpdateCase,
    pub varsigma_before: Option<usize>,
    pub varsigma_after: Option<usize>,
    pub lambda_before: Option<f64>,
    pub lambda_after: Option<f64>,
    pub rho_before: Option<f64>,
    pub rho_after: Option<f64>,
    pub schur: bool,
}

/// Quantities a predecessor `j ∈ 𝓝_new` sends to the new subsystem.
#[derive(Clone, Debug, PartialEq)]
pub struct PredecessorDesignData {
    pub id: SubsystemId,
    pub a_new_j: Mat,
    pub a_jj: Mat,
    pub h_j: Mat,
}

/// Quantities a successor `j ∈ 𝓢_new` sends to the new subsystem.
#[derive(Clone, Debug, PartialEq)]
pub struct SuccessorDesignData {
    pub id: SubsystemId,
    pub a_j_new: Mat,
    pub h_j: Mat,
    /// `μ_j² / (1 − λ_j⁺²)`.
    pub gain_factor: f64,
    /// `1 − (1 − λ_j²)/(1 − λ_j⁺²) ρ_j`.
    pub slack: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalDesignOutcome {
    pub feasible: bool,
    /// Best feasible design, or the best infeasible one as evidence.
    pub certificate: Option<LocalCertificate>,
    pub rho: f64,
    /// `‖Â_{j,new} Â_{new,new}⁻¹‖²` per successor.
    pub successor_norms: BTreeMap<SubsystemId, f64>,
    /// `γ_{j,new}⁺` per successor.
    pub successor_gammas: BTreeMap<SubsystemId, f64>,
    pub objective: f64,
    pub candidates: usize,
    pub note: Option<String>,
}

impl LocalDesignOutcome {
    fn failed(note: String) -> Self {
        Self {
            feasible: false,
            certificate: None,
            rho: f64::INFINITY,
            successor_norms: BTreeMap::new(),
            successor_gammas: BTreeMap::new(),
            objective: f64::INFINITY,
            candidates: 0,
            note: Some(note),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdmissionDecision {
    pub event: String,
    pub subsystem: SubsystemId,
    pub accepted: bool,
    pub reasons: Vec<String>,
    pub warnings: Vec<String>,
    pub updates: Vec<SubsystemUpdate>,
    pub local_design: Option<LocalDesignOutcome>,
    /// Post-event certificate, also reported for denied requests when it
    /// can be formed.
    pub certificate: Option<DesignCertificate>,
    #[serde(skip)]
    pub network: Option<NetworkModel>,
}

impl AdmissionDecision {
    pub fn reason_text(&self) -> String {
        self.reasons.join("; ")
    }
}

/// `max_i ‖𝓡-update(P)_i − P_i‖`, the distance from steady state.
pub fn steady_state_gap(network: &NetworkModel, covs: &Covariances) -> Result<f64> {
    let mut gap: f64 = 0.0;
    for i in network.ids() {
        let next = dkf_cov_update(network, i, covs)?;
        let p = covs.get(&i).ok_or(DkfError::UnknownSubsystem(i))?;
        gap = gap.max((next - p).norm());
    }
    Ok(gap)
}

/// Attaches a warning when the covariances are not at steady state.
pub fn check_steady_state(
    decision: &mut AdmissionDecision,
    network: &NetworkModel,
    covs: &Covariances,
) -> Result<()> {
    let gap = steady_state_gap(network, covs)?;
    if gap >= STEADY_STATE_TOL {
        decision.warnings.push(format!(
            "covariances not at steady state (max change {gap:.3e})"
        ));
    }
    Ok(())
}

/// Local design of a joining subsystem from neighbor data only: minimizes
/// `ρ_new⁺ + Σ_j γ_{j,new}⁺` over the restricted `(θ, H)` family subject to
/// `ρ_new⁺ < 1` and `γ_{j,new}⁺ < slack_j`.
pub fn local_plugin_design(
    model: &SubsystemModel,
    varsigma: usize,
    predecessors: &[PredecessorDesignData],
    successors: &[SuccessorDesignData],
    opts: &DesignOptions,
) -> Result<LocalDesignOutcome> {
    if condition_number(&model.a_ii) >= INVERTIBILITY_COND {
        return Ok(LocalDesignOutcome::failed(format!(
            "A_ii of subsystem {} is not invertible",
            model.id
        )));
    }
    let base = match scaled_kalman_gain(&model.a_ii, &model.c, &model.q, &model.r, varsigma, opts) {
        Ok(g) => g,
        Err(e) => {
            return Ok(LocalDesignOutcome::failed(format!(
                "no scaled Kalman gain for subsystem {}: {e}",
                model.id
            )))
        }
    };
    let mut best_feasible: Option<LocalDesignOutcome> = None;
    let mut best_any: Option<LocalDesignOutcome> = None;
    let mut tried = 0;
    for &theta in &opts.thetas {
        for &mode in &opts.h_modes {
            let Some(mut cand) = local_candidate(
                model.id,
                &model.a_ii,
                &model.c,
                varsigma,
                &base,
                theta,
                mode,
                opts,
            )?
            else {
                continue;
            };
            tried += 1;
            for p in predecessors {
                cand.coupling_norms.insert(
                    p.id,
                    coupling_norm_sq(&p.a_new_j, &p.a_jj, &cand.h, &p.h_j)?,
                );
            }
            let rho = cand.rho();
            let mut norms = BTreeMap::new();
            let mut gammas = BTreeMap::new();
            let mut feasible = rho < 1.0;
            for s in successors {
                let norm = coupling_norm_sq(&s.a_j_new, &model.a_ii, &s.h_j, &cand.h)?;
                let gamma = if norm == 0.0 {
                    0.0
                } else {
                    s.gain_factor * norm
                };
                feasible &= gamma < s.slack;
                norms.insert(s.id, norm);
                gammas.insert(s.id, gamma);
            }
            let objective = rho + gammas.values().sum::<f64>();
            let outcome = LocalDesignOutcome {
                feasible,
                certificate: Some(cand),
                rho,
                successor_norms: norms,
                successor_gammas: gammas,
                objective,
                candidates: 0,
                note: None,
            };
            let better = |cur: &Option<LocalDesignOutcome>| {
                cur.as_ref().is_none_or(|c| objective < c.objective)
            };
            if feasible && better(&best_feasible) {
                best_feasible = Some(outcome.clone());
            }
            if better(&best_any) {
                best_any = Some(outcome);
            }
        }
    }
    let mut out = match (best_feasible, best_any) {
        (Some(f), _) => f,
        (None, Some(mut a)) => {
            a.note = Some("no candidate satisfies the local small-gain constraints".into());
            a
        }
        (None, None) => LocalDesignOutcome::failed(format!(
            "no Schur-stable local design for subsystem {}",
            model.id
        )),
    };
    out.candidates = tried;
    Ok(out)
}

/// Re-evaluates a local certificate after its `A_ii` changed, keeping `L̄`
/// and `H`.
fn refit_local(
    network: &NetworkModel,
    i: SubsystemId,
    local: &LocalCertificate,
    opts: &DesignOptions,
) -> Result<LocalCertificate> {
    let s = network.subsystem(i)?;
    let mut out = local.clone();
    out.varsigma = network.varsigma(i)?;
    let f_hat = out.f_hat(&s.a_ii, &s.c)?;
    out.radius = spectral_radius(&f_hat)?;
    if out.radius < 1.0 {
        (out.mu, out.lambda) = compute_envelope(&f_hat, opts.margin, opts.h_max)?;
    } else {
        // μ is kept; λ ≥ 1 marks the design as failed.
        out.lambda = out.radius;
    }
    Ok(out)
}

fn not_schur_reason(id: SubsystemId, l: &LocalCertificate) -> String {
    format!(
        "F̄⁺ of subsystem {id} not Schur (σ = {:.4}, λ⁺ = {:.4})",
        l.radius, l.lambda
    )
}

fn pre_locals(
    network: &NetworkModel,
    certificate: &DesignCertificate,
) -> Result<BTreeMap<SubsystemId, LocalCertificate>> {
    let locals = certificate.locals();
    for id in network.ids() {
        if !locals.contains_key(&id) {
            return Err(DkfError::InvalidScenario(format!(
                "certificate has no entry for subsystem {id}"
            )));
        }
    }
    Ok(locals)
}

fn set_without(ids: &[SubsystemId], id: SubsystemId) -> BTreeSet<SubsystemId> {
    ids.iter().copied().filter(|&j| j != id).collect()
}

/// Admission test for a plug-in request. Re-plugging a subsystem that is
/// currently isolated treats it as a new subsystem.
pub fn evaluate_plugin(
    network: &NetworkModel,
    certificate: &DesignCertificate,
    request: &PlugRequest,
    opts: &DesignOptions,
) -> Result<AdmissionDecision> {
    let new_model: SubsystemModel = request.subsystem.clone().into();
    let new_id = new_model.id;
    let (base_net, base_cert) = if network.contains(new_id) {
        if !network.is_isolated(new_id)? {
            return Err(DkfError::InvalidScenario(format!(
                "subsystem {new_id} is already connected"
            )));
        }
        (network.without(new_id)?, certificate.without(new_id)?)
    } else {
        (network.clone(), certificate.clone())
    };
    let before = pre_locals(&base_net, &base_cert)?;
    for &j in request.outgoing.keys() {
        if !base_net.contains(j) {
            return Err(DkfError::DanglingCoupling {
                from: j,
                to: new_id,
            });
        }
    }
    let mut updated = BTreeSet::new();
    let mut refit = BTreeSet::new();
    let mut models = base_net.to_models();
    for u in &request.updated_subsystems {
        let old = base_net.subsystem(u.id)?;
        let same_neighbors = old
            .coupling
            .keys()
            .eq(u.coupling.keys().filter(|&&j| j != new_id));
        if u.c != old.c || u.r != old.r || !same_neighbors {
            return Err(DkfError::InvalidScenario(format!(
                "update of subsystem {} may only change A_ii, Q and coupling values",
                u.id
            )));
        }
        let m = models
            .iter_mut()
            .find(|m| m.id == u.id)
            .expect("existing subsystem");
        *m = u.clone().into();
        updated.insert(u.id);
        if u.a_ii != old.a_ii {
            refit.insert(u.id);
        }
    }
    for m in &mut models {
        if let Some(a) = request.outgoing.get(&m.id) {
            m.coupling.insert(new_id, a.clone());
        }
    }
    models.push(new_model.clone());
    let post = build_network(models)?;
    let neighbors = set_without(post.neighbors(new_id)?, new_id);
    let successors = set_without(post.successors(new_id)?, new_id);

    let mut reasons = Vec::new();
    let mut locals = BTreeMap::new();
    for i in base_net.ids() {
        let lp = if refit.contains(&i) {
            refit_local(&post, i, &before[&i], opts)?
        } else {
            before[&i].rescaled(post.varsigma(i)?)
        };
        if !lp.is_schur() {
            reasons.push(not_schur_reason(i, &lp));
        }
        locals.insert(i, lp);
    }
    if !updated.is_empty() {
        let hs: BTreeMap<SubsystemId, Mat> =
            locals.iter().map(|(&k, l)| (k, l.h.clone())).collect();
        for (&i, l) in locals.iter_mut() {
            let targets: Vec<SubsystemId> = l.coupling_norms.keys().copied().collect();
            for j in targets {
                if updated.contains(&i) || updated.contains(&j) {
                    let a_ij = post.block(i, j)?.expect("neighbor block");
                    let norm = coupling_norm_sq(a_ij, &post.subsystem(j)?.a_ii, &l.h, &hs[&j])?;
                    l.coupling_norms.insert(j, norm);
                }
            }
        }
    }

    let pred_data: Vec<PredecessorDesignData> = neighbors
        .iter()
        .map(|&j| {
            Ok(PredecessorDesignData {
                id: j,
                a_new_j: post.block(new_id, j)?.expect("neighbor block").clone(),
                a_jj: post.subsystem(j)?.a_ii.clone(),
                h_j: locals[&j].h.clone(),
            })
        })
        .collect::<Result<_>>()?;
    let succ_data: Vec<SuccessorDesignData> = successors
        .iter()
        .map(|&j| {
            let l = &locals[&j];
            Ok(SuccessorDesignData {
                id: j,
                a_j_new: post.block(j, new_id)?.expect("successor block").clone(),
                h_j: l.h.clone(),
                gain_factor: l.gain_factor(),
                slack: 1.0 - l.rho(),
            })
        })
        .collect::<Result<_>>()?;
    let outcome = local_plugin_design(
        &new_model,
        post.varsigma(new_id)?,
        &pred_data,
        &succ_data,
        opts,
    )?;
    if !outcome.feasible {
        reasons.push(format!(
            "local design of subsystem {new_id} infeasible{}",
            outcome
                .note
                .as_ref()
                .map_or(String::new(), |n| format!(": {n}"))
        ));
    }

    let certificate = match &outcome.certificate {
        Some(nc) => {
            locals.insert(new_id, nc.clone());
            for (&j, &norm) in &outcome.successor_norms {
                locals
                    .get_mut(&j)
                    .expect("successor")
                    .coupling_norms
                    .insert(new_id, norm);
            }
            let cert = DesignCertificate::from_locals(locals.values().cloned().collect())?;
            for (k, l) in cert.subsystems.iter().enumerate() {
                if cert.rho[k] >= 1.0 {
                    reasons.push(format!(
                        "ρ⁺ of subsystem {} is {:.4} ≥ 1",
                        l.id, cert.rho[k]
                    ));
                }
            }
            Some(cert)
        }
        None => None,
    };

    let mut updates = Vec::new();
    for i in post.ids() {
        let after = certificate.as_ref().and_then(|c| c.local(i).ok().cloned());
        let rho_after = certificate.as_ref().and_then(|c| c.rho_of(i).ok());
        let prior = before.get(&i);
        updates.push(SubsystemUpdate {
            id: i,
            case: if i == new_id {
                UpdateCase::Added
            } else {
                classify(i, &successors, &neighbors)
            },
            varsigma_before: base_net.varsigma(i).ok(),
            varsigma_after: post.varsigma(i).ok(),
            lambda_before: prior.map(|l| l.lambda),
            lambda_after: after
                .as_ref()
                .map(|l| l.lambda)
                .or(locals.get(&i).map(|l| l.lambda)),
            rho_before: base_cert.rho_of(i).ok(),
            rho_after,
            schur: locals.get(&i).is_some_and(LocalCertificate::is_schur),
        });
    }
    Ok(AdmissionDecision {
        event: "PLUG_SUBSYSTEM".into(),
        subsystem: new_id,
        accepted: reasons.is_empty() && certificate.is_some(),
        reasons,
        warnings: Vec::new(),
        updates,
        local_design: Some(outcome),
        certificate,
        network: Some(post),
    })
}

/// Result of applying a reconfiguration to the running estimator.
#[derive(Clone, Debug)]
pub struct Reconfigured {
    pub network: NetworkModel,
    pub certificate: Option<DesignCertificate>,
    pub states: States,
}

fn require(decision: &AdmissionDecision, force: bool) -> Result<&NetworkModel> {
    if !decision.accepted && !force {
        return Err(DkfError::Rejected(decision.reason_text()));
    }
    decision
        .network
        .as_ref()
        .ok_or_else(|| DkfError::Rejected("decision carries no post-event network".into()))
}

/// Applies a plug-in: existing covariances are kept, the joining subsystem
/// starts from `init` and keeps its estimate if it was already tracked
/// (zero otherwise). `force` applies a denied request.
pub fn apply_plugin(
    decision: &AdmissionDecision,
    states: &States,
    init: InitializationMode,
    force: bool,
) -> Result<Reconfigured> {
    let post = require(decision, force)?;
    let id = decision.subsystem;
    let n = post.subsystem(id)?.n();
    let mut next = States::new();
    for i in post.ids() {
        if i == id {
            let xhat = states
                .get(&id)
                .filter(|s| s.xhat.len() == n)
                .map_or_else(|| Vector::zeros(n), |s| s.xhat.clone());
            let p = initial_covariance(post, id, init)?;
            next.insert(id, EstimatorState { xhat, p });
        } else {
            next.insert(
                i,
                states.get(&i).ok_or(DkfError::UnknownSubsystem(i))?.clone(),
            );
        }
    }
    Ok(Reconfigured {
        network: post.clone(),
        certificate: decision.certificate.clone(),
        states: next,
    })
}

/// Unplug evaluation; always accepted.
pub fn evaluate_unplug(
    network: &NetworkModel,
    certificate: &DesignCertificate,
    request: &UnplugRequest,
) -> Result<AdmissionDecision> {
    let id = request.id;
    network.subsystem(id)?;
    let before = pre_locals(network, certificate)?;
    let post = if request.keep_isolated {
        network.detached(id)?
    } else {
        network.without(id)?
    };
    let neighbors = set_without(network.neighbors(id)?, id);
    let successors = set_without(network.successors(id)?, id);
    let mut locals = BTreeMap::new();
    for i in post.ids() {
        let mut l = before[&i].rescaled(post.varsigma(i)?);
        if i == id {
            l.coupling_norms.clear();
        } else {
            l.coupling_norms.remove(&id);
        }
        locals.insert(i, l);
    }
    let cert = DesignCertificate::from_locals(locals.into_values().collect())?;
    let mut warnings = Vec::new();
    let mut updates = Vec::new();
    for i in network.ids() {
        let rho_before = certificate.rho_of(i).ok();
        let rho_after = cert.rho_of(i).ok();
        if let (Some(b), Some(a)) = (rho_before, rho_after) {
            if a > b * (1.0 + 1e-12) + 1e-15 {
                warnings.push(format!("ρ of subsystem {i} grew from {b:.6} to {a:.6}"));
            }
        }
        let case = if i == id {
            if request.keep_isolated {
                UpdateCase::Detached
            } else {
                UpdateCase::Removed
            }
        } else {
            classify(i, &successors, &neighbors)
        };
        updates.push(SubsystemUpdate {
            id: i,
            case,
            varsigma_before: network.varsigma(i).ok(),
            varsigma_after: post.varsigma(i).ok(),
            lambda_before: before.get(&i).map(|l| l.lambda),
            lambda_after: cert.local(i).ok().map(|l| l.lambda),
            rho_before,
            rho_after,
            schur: cert.local(i).map_or(true, LocalCertificate::is_schur),
        });
    }
    Ok(AdmissionDecision {
        event: "UNPLUG_SUBSYSTEM".into(),
        subsystem: id,
        accepted: true,
        reasons: Vec::new(),
        warnings,
        updates,
        local_design: None,
        certificate: Some(cert),
        network: Some(post),
    })
}

/// Applies an unplug: remaining covariances and estimates are kept.
pub fn apply_unplug(decision: &AdmissionDecision, states: &States) -> Result<Reconfigured> {
    let post = require(decision, false)?;
    let next = post
        .ids()
        .into_iter()
        .map(|i| {
            Ok((
                i,
                states.get(&i).ok_or(DkfError::UnknownSubsystem(i))?.clone(),
            ))
        })
        .collect::<Result<_>>()?;
    Ok(Reconfigured {
        network: post.clone(),
        certificate: decision.certificate.clone(),
        states: next,
    })
}

/// Copy of the network with new sensors `C`, `R` for subsystem `id`.
pub fn with_sensors(
    network: &NetworkModel,
    id: SubsystemId,
    c: Mat,
    r: Mat,
) -> Result<NetworkModel> {
    let models = network
        .to_models()
        .into_iter()
        .map(|mut m| {
            if m.id == id {
                m.c = c.clone();
                m.r = r.clone();
            }
            m
        })
        .collect();
    build_network(models)
}

fn sensor_decision(
    event: &str,
    id: SubsystemId,
    network: &NetworkModel,
    before: &DesignCertificate,
    cert: Option<DesignCertificate>,
    post: NetworkModel,
    reasons: Vec<String>,
) -> AdmissionDecision {
    let after = cert.as_ref().and_then(|c| c.local(id).ok().cloned());
    AdmissionDecision {
        event: event.into(),
        subsystem: id,
        accepted: reasons.is_empty() && cert.is_some(),
        reasons,
        warnings: Vec::new(),
        updates: vec![SubsystemUpdate {
            id,
            case: UpdateCase::SensorChanged,
            varsigma_before: network.varsigma(id).ok(),
            varsigma_after: post.varsigma(id).ok(),
            lambda_before: before.local(id).ok().map(|l| l.lambda),
            lambda_after: after.as_ref().map(|l| l.lambda),
            rho_before: before.rho_of(id).ok(),
            rho_after: cert.as_ref().and_then(|c| c.rho_of(id).ok()),
            schur: after.as_ref().is_some_and(LocalCertificate::is_schur),
        }],
        local_design: None,
        certificate: cert,
        network: Some(post),
    }
}

/// Adds measurement rows `c_add` with noise `r_add`; the gain is padded with
/// zero columns so the certificate is unchanged.
pub fn add_sensor(
    network: &NetworkModel,
    certificate: &DesignCertificate,
    request: &AddSensorRequest,
) -> Result<AdmissionDecision> {
    let id = request.id;
    let s = network.subsystem(id)?;
    if request.c_add.ncols() != s.n()
        || request.r_add.shape() != (request.c_add.nrows(), request.c_add.nrows())
    {
        return Err(DkfError::DimensionMismatch(format!(
            "sensor rows for subsystem {id} must be k×{} with a k×k noise block",
            s.n()
        )));
    }
    let mut c = Mat::zeros(s.p() + request.c_add.nrows(), s.n());
    c.view_mut((0, 0), s.c.shape()).copy_from(&s.c);
    c.view_mut((s.p(), 0), request.c_add.shape())
        .copy_from(&request.c_add);
    let r = block_diag(&[s.r.clone(), request.r_add.clone()]);
    let post = with_sensors(network, id, c, r)?;
    let sc = scaled(&post, id)?;
    let ps = post.subsystem(id)?;
    if !is_detectable(&ps.a_ii, &ps.c)? || !is_detectable(sc.a_ii(id), &sc.c)? {
        return Err(DkfError::Assumption(format!(
            "detectability of subsystem {id} lost after adding a sensor"
        )));
    }
    let mut locals = certificate.locals();
    let l = locals.get_mut(&id).ok_or(DkfError::UnknownSubsystem(id))?;
    let mut gain = Mat::zeros(s.n(), ps.p());
    gain.view_mut((0, 0), l.gain.shape()).copy_from(&l.gain);
    l.gain = gain;
    let cert = DesignCertificate::from_locals(locals.into_values().collect())?;
    Ok(sensor_decision(
        "ADD_SENSOR",
        id,
        network,
        certificate,
        Some(cert),
        post,
        Vec::new(),
    ))
}

/// Sensor replacement: a new `L̄` is searched with `H` fixed. Candidates are
/// the current gain (when dimensions allow), multiples of the scaled Kalman
/// gain of the new pair and, for square invertible `C`, the deadbeat gain.
pub fn replace_sensors(
    network: &NetworkModel,
    certificate: &DesignCertificate,
    request: &ReplaceSensorsRequest,
    opts: &DesignOptions,
) -> Result<AdmissionDecision> {
    let id = request.id;
    let s = network.subsystem(id)?;
    if request.c.ncols() != s.n() || request.r.shape() != (request.c.nrows(), request.c.nrows()) {
        return Err(DkfError::DimensionMismatch(format!(
            "replacement sensors of subsystem {id} must be p×{} with a p×p noise block",
            s.n()
        )));
    }
    let post = with_sensors(network, id, request.c.clone(), request.r.clone())?;
    let current = certificate.local(id)?.clone();
    let varsigma = post.varsigma(id)?;
    let mut gains: Vec<(f64, Mat)> = Vec::new();
    if current.gain.ncols() == request.c.nrows() {
        gains.push((current.theta, current.gain.clone()));
    }
    if let Ok(base) = scaled_kalman_gain(&s.a_ii, &request.c, &s.q, &request.r, varsigma, opts) {
        gains.extend(opts.thetas.iter().map(|&t| (t, &base * t)));
    }
    if request.c.is_square() {
        if let Some(c_inv) = request.c.clone().try_inverse() {
            if condition_number(&request.c) < INVERTIBILITY_COND {
                gains.push((f64::NAN, &s.a_ii * c_inv));
            }
        }
    }
    let h_inv = current
        .h
        .clone()
        .try_inverse()
        .ok_or_else(|| DkfError::Singular("H".into()))?;
    let mut best: Option<LocalCertificate> = None;
    for (k, (theta, gain)) in gains.into_iter().enumerate() {
        let f = (&s.a_ii - &gain * &request.c) * (varsigma as f64).sqrt();
        let f_hat = &current.h * f * &h_inv;
        let radius = spectral_radius(&f_hat)?;
        if radius >= 1.0 {
            continue;
        }
        let (mu, lambda) = compute_envelope(&f_hat, opts.margin, opts.h_max)?;
        let cand = LocalCertificate {
            gain,
            theta,
            radius,
            mu,
            lambda,
            ..current.clone()
        };
        if !cand.is_schur() || cand.rho() >= 1.0 {
            continue;
        }
        // The current gain is kept whenever it remains admissible.
        if k == 0 && current.gain.ncols() == request.c.nrows() {
            best = Some(cand);
            break;
        }
        if best.as_ref().is_none_or(|b| cand.rho() < b.rho()) {
            best = Some(cand);
        }
    }
    let (cert, reasons) = match best {
        Some(l) => {
            let mut locals = certificate.locals();
            locals.insert(id, l);
            (
                Some(DesignCertificate::from_locals(
                    locals.into_values().collect(),
                )?),
                Vec::new(),
            )
        }
        None => (
            None,
            vec![format!(
                "no gain with H fixed makes F̄ of subsystem {id} Schur with ρ⁺ < 1"
            )],
        ),
    };
    Ok(sensor_decision(
        "REPLACE_SENSORS",
        id,
        network,
        certificate,
        cert,
        post,
        reasons,
    ))
}

/// Applies an accepted sensor change; estimates and covariances carry over.
pub fn apply_sensor_change(decision: &AdmissionDecision, states: &States) -> Result<Reconfigured> {
    let post = require(decision, false)?;
    Ok(Reconfigured {
        network: post.clone(),
        certificate: decision.certificate.clone(),
        states: states.clone(),
    })
}

/// Online two-phase covariance schedule after a sensor change of `id`:
/// first the others evolve as if `id` were unplugged while `P_id` is
/// frozen; once they settle, `P_id` restarts from the scaled local DARE
/// solution and the full recursion resumes.
#[derive(Clone, Debug)]
pub struct SensorProcedure {
    pub id: SubsystemId,
    reduced: NetworkModel,
    post: NetworkModel,
    frozen: Mat,
    pub threshold: f64,
    pub cap: usize,
    pub steps: usize,
}

impl SensorProcedure {
    pub fn new(
        post: &NetworkModel,
        id: SubsystemId,
        frozen: Mat,
        threshold: f64,
        cap: usize,
    ) -> Result<Self> {
        Ok(Self {
            id,
            reduced: post.without(id)?,
            post: post.clone(),
            frozen,
            threshold,
            cap,
            steps: 0,
        })
    }

    /// One phase-1 step. Returns the next covariances and whether the
    /// others have settled.
    pub fn step(&mut self, covs: &Covariances) -> Result<(Covariances, bool)> {
        let mut next = Covariances::new();
        let mut gap: f64 = 0.0;
        for i in self.reduced.ids() {
            let p = dkf_cov_update(&self.reduced, i, covs)?;
            gap = gap.max((&p - &covs[&i]).norm());
            next.insert(i, p);
        }
        next.insert(self.id, self.frozen.clone());
        self.steps += 1;
        if gap < self.threshold {
            return Ok((next, true));
        }
        if self.steps >= self.cap {
            return Err(DkfError::NonConvergence {
                iterations: self.cap,
                residual: gap,
            });
        }
        Ok((next, false))
    }

    /// Covariances that start phase 2.
    pub fn reinsert(&self, covs: &Covariances) -> Result<Covariances> {
        let mut out = covs.clone();
        out.insert(
            self.id,
            initial_covariance(&self.post, self.id, InitializationMode::ScaledDare)?,
        );
        Ok(out)
    }
}

#[derive(Clone, Debug)]
pub struct SensorSchedule {
    pub phase1_steps: usize,
    pub phase1_final: Covariances,
    pub phase2_initial: Covariances,
}

/// Runs phase 1 to convergence and returns the phase-2 starting point.
pub fn sensor_pnp_covariance_procedure(
    post: &NetworkModel,
    covs: &Covariances,
    id: SubsystemId,
    threshold: f64,
    cap: usize,
) -> Result<SensorSchedule> {
    let frozen = covs.get(&id).ok_or(DkfError::UnknownSubsystem(id))?.clone();
    let mut proc = SensorProcedure::new(post, id, frozen, threshold, cap)?;
    let mut current = covs.clone();
    loop {
        let (next, done) = proc.step(&current)?;
        current = next;
        if done {
            break;
        }
    }
    Ok(SensorSchedule {
        phase1_steps: proc.steps,
        phase2_initial: proc.reinsert(&current)?,
        phase1_final: current,
    })
}

/// Admission decision for any event kind against the current network.
pub fn evaluate_event(
    network: &NetworkModel,
    certificate: &DesignCertificate,
    kind: &PnPEventKind,
    opts: &DesignOptions,
) -> Result<AdmissionDecision> {
    match kind {
        PnPEventKind::PlugSubsystem(req) => evaluate_plugin(network, certificate, req, opts),
        PnPEventKind::UnplugSubsystem(req) => evaluate_unplug(network, certificate, req),
        PnPEventKind::AddSensor(req) => add_sensor(network, certificate, req),
        PnPEventKind::ReplaceSensors(req) => replace_sensors(network, certificate, req, opts),
    }
}

/// `true` when every local `F̂` of the certificate is Schur.
pub fn all_schur(cert: &DesignCertificate) -> bool {
    cert.subsystems.iter().all(LocalCertificate::is_schur)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{default_certificate, verify_pbar_default};
    use crate::filter::network_round;
    use crate::riccati::psd_geq;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn academic(id: SubsystemId, nbrs: &[SubsystemId], alpha: f64) -> SubsystemModel {
        let mut s = SubsystemModel::new(
            id,
            Mat::from_row_slice(2, 2, &[0.9, 0.1, 0.1, -0.9]),
            Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            Mat::identity(2, 2),
            Mat::identity(1, 1),
        );
        for &j in nbrs {
            s = s.with_coupling(j, diag(alpha));
        }
        s
    }

    fn diag(alpha: f64) -> Mat {
        Mat::from_row_slice(2, 2, &[alpha, 0.0, 0.0, -alpha])
    }

    fn three_isolated() -> NetworkModel {
        build_network(vec![
            academic(1, &[2], 0.1),
            academic(2, &[1], 0.1),
            academic(3, &[], 0.1),
        ])
        .unwrap()
    }

    fn plug_three() -> PlugRequest {
        PlugRequest {
            subsystem: (&academic(3, &[2], 0.1)).into(),
            outgoing: [(2, diag(0.1))].into(),
            updated_subsystems: Vec::new(),
        }
    }

    fn pattern(m: &Mat) -> Vec<Vec<bool>> {
        m.row_iter()
            .map(|r| r.iter().map(|&v| v != 0.0).collect())
            .collect()
    }

    fn steady(
        network: &NetworkModel,
        covs: Covariances,
        steps: usize,
    ) -> (Covariances, bool, bool) {
        let mut states: States = covs
            .into_iter()
            .map(|(i, p)| {
                (
                    i,
                    EstimatorState {
                        xhat: Vector::zeros(p.nrows()),
                        p,
                    },
                )
            })
            .collect();
        let ys = network
            .subsystems()
            .map(|s| (s.id, Vector::zeros(s.p())))
            .collect();
        let (mut up, mut down) = (true, true);
        for _ in 0..steps {
            let next = network_round(network, &states, &ys).unwrap();
            for i in network.ids() {
                up &= psd_geq(&next[&i].p, &states[&i].p, 1e-8).unwrap();
                down &= psd_geq(&states[&i].p, &next[&i].p, 1e-8).unwrap();
            }
            states = next;
        }
        (
            states.into_iter().map(|(i, s)| (i, s.p)).collect(),
            up,
            down,
        )
    }

    #[test]
    fn academic_plug_in_is_accepted_with_expected_pattern() {
        let net = three_isolated();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let decision =
            evaluate_plugin(&net, &cert, &plug_three(), &DesignOptions::default()).unwrap();
        assert!(decision.accepted, "{:?}", decision.reasons);
        let post = decision.certificate.as_ref().unwrap();
        assert_eq!(
            pattern(&post.gamma),
            vec![
                vec![false, true, false],
                vec![true, false, true],
                vec![false, true, false]
            ]
        );
        assert!(post.rho.iter().all(|&r| r < 1.0));

        // Case formulas: 1 is unaffected, 2 is both successor and neighbor.
        let l2 = cert.local(2).unwrap();
        let l2p = post.local(2).unwrap();
        assert_abs_diff_eq!(l2p.lambda / l2.lambda, 1.5f64.sqrt(), epsilon = 1e-14);
        assert_eq!(l2p.mu, l2.mu);
        assert_abs_diff_eq!(
            post.rho_of(1).unwrap(),
            cert.rho_of(1).unwrap(),
            epsilon = 1e-15
        );
        let factor = (1.0 - l2.lambda.powi(2)) / (1.0 - l2p.lambda.powi(2));
        let expected = factor * cert.rho_of(2).unwrap() + post.gamma_entry(2, 3).unwrap();
        assert_abs_diff_eq!(post.rho_of(2).unwrap(), expected, epsilon = 1e-12);
        let cases: BTreeMap<_, _> = decision.updates.iter().map(|u| (u.id, u.case)).collect();
        assert_eq!(cases[&1], UpdateCase::Unaffected);
        assert_eq!(cases[&2], UpdateCase::Both);
        assert_eq!(cases[&3], UpdateCase::Added);
    }

    #[test]
    fn updated_rows_are_refit() {
        let net = three_isolated();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let opts = DesignOptions::default();
        let plain = evaluate_plugin(&net, &cert, &plug_three(), &opts).unwrap();
        let mut row: SubsystemSpec = net.subsystem(2).unwrap().into();
        row.coupling.insert(3, diag(0.1));
        let req = PlugRequest {
            outgoing: BTreeMap::new(),
            updated_subsystems: vec![row.clone()],
            ..plug_three()
        };
        let same = evaluate_plugin(&net, &cert, &req, &opts).unwrap();
        let (a, b) = (plain.certificate.unwrap(), same.certificate.unwrap());
        assert!((&a.gamma - &b.gamma).amax() < 1e-10);

        row.a_ii *= 0.5;
        let req = PlugRequest {
            outgoing: BTreeMap::new(),
            updated_subsystems: vec![row.clone()],
            ..plug_three()
        };
        let d = evaluate_plugin(&net, &cert, &req, &opts).unwrap();
        let post = d.network.as_ref().unwrap();
        let l2 = d.certificate.as_ref().unwrap().local(2).unwrap();
        let s2 = post.subsystem(2).unwrap();
        let f_hat = l2.f_hat(&s2.a_ii, &s2.c).unwrap();
        assert_abs_diff_eq!(l2.radius, spectral_radius(&f_hat).unwrap(), epsilon = 1e-12);
        let expected = coupling_norm_sq(
            post.block(1, 2).unwrap().unwrap(),
            &s2.a_ii,
            &cert.local(1).unwrap().h,
            &l2.h,
        )
        .unwrap();
        assert_abs_diff_eq!(
            d.certificate
                .as_ref()
                .unwrap()
                .local(1)
                .unwrap()
                .coupling_norms[&2],
            expected,
            epsilon = 1e-14
        );

        row.c = Mat::from_row_slice(1, 2, &[1.0, 0.0]);
        let req = PlugRequest {
            outgoing: BTreeMap::new(),
            updated_subsystems: vec![row],
            ..plug_three()
        };
        assert!(evaluate_plugin(&net, &cert, &req, &opts).is_err());
    }

    #[test]
    fn isolated_plug_in_leaves_rho_unchanged() {
        let net = build_network(vec![academic(1, &[2], 0.1), academic(2, &[1], 0.1)]).unwrap();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let req = PlugRequest {
            subsystem: (&academic(7, &[], 0.0)).into(),
            outgoing: BTreeMap::new(),
            updated_subsystems: Vec::new(),
        };
        let d = evaluate_plugin(&net, &cert, &req, &DesignOptions::default()).unwrap();
        assert!(d.accepted);
        let post = d.certificate.unwrap();
        for i in [1, 2] {
            assert_eq!(post.rho_of(i).unwrap(), cert.rho_of(i).unwrap());
        }
        assert_eq!(post.rho_of(7).unwrap(), 0.0);
    }

    #[test]
    fn neighbor_only_scaling_past_one_is_denied() {
        let one = |x: f64| Mat::from_element(1, 1, x);
        let s1 = SubsystemModel::new(1, one(0.8), one(0.01), one(1.0), one(1.0));
        let net = build_network(vec![s1]).unwrap();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let lambda = cert.local(1).unwrap().lambda;
        assert!(lambda * 2f64.sqrt() >= 1.0, "λ = {lambda}");
        let s2 = SubsystemModel::new(2, one(0.5), one(1.0), one(1.0), one(1.0))
            .with_coupling(1, one(0.1));
        let req = PlugRequest {
            subsystem: (&s2).into(),
            outgoing: BTreeMap::new(),
            updated_subsystems: Vec::new(),
        };
        let d = evaluate_plugin(&net, &cert, &req, &DesignOptions::default()).unwrap();
        assert!(!d.accepted);
        assert!(
            d.reasons.iter().any(|r| r.contains("not Schur")),
            "{:?}",
            d.reasons
        );
        let u1 = d.updates.iter().find(|u| u.id == 1).unwrap();
        assert_eq!(u1.case, UpdateCase::NeighborOnly);
    }

    #[test]
    fn heavy_coupling_plug_in_is_denied() {
        let net = build_network(vec![academic(1, &[2], 0.1), academic(2, &[1], 0.1)]).unwrap();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let req = PlugRequest {
            subsystem: (&academic(3, &[2], 3.0)).into(),
            outgoing: [(2, diag(3.0))].into(),
            updated_subsystems: Vec::new(),
        };
        let d = evaluate_plugin(&net, &cert, &req, &DesignOptions::default()).unwrap();
        assert!(!d.accepted);
        assert!(!d.reasons.is_empty());
    }

    #[test]
    fn academic_unplug_pattern_and_monotone_rho() {
        let net = three_isolated();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let plug = evaluate_plugin(&net, &cert, &plug_three(), &DesignOptions::default()).unwrap();
        let net2 = plug.network.clone().unwrap();
        let cert2 = plug.certificate.clone().unwrap();
        let d = evaluate_unplug(
            &net2,
            &cert2,
            &UnplugRequest {
                id: 1,
                keep_isolated: true,
            },
        )
        .unwrap();
        assert!(d.accepted && d.warnings.is_empty());
        let post = d.certificate.unwrap();
        assert_eq!(
            pattern(&post.gamma),
            vec![
                vec![false, false, false],
                vec![false, false, true],
                vec![false, true, false]
            ]
        );
        for i in [1, 2, 3] {
            assert!(post.rho_of(i).unwrap() <= cert2.rho_of(i).unwrap() + 1e-15);
        }
        // 2 returns to ς = 2, so its λ is back to the pre-plug value.
        assert_abs_diff_eq!(
            post.local(2).unwrap().lambda,
            cert.local(2).unwrap().lambda,
            epsilon = 1e-14
        );

        let removed = evaluate_unplug(
            &net2,
            &cert2,
            &UnplugRequest {
                id: 1,
                keep_isolated: false,
            },
        )
        .unwrap();
        assert_eq!(removed.certificate.unwrap().ids(), vec![2, 3]);
    }

    #[test]
    fn unplug_of_isolated_subsystem_changes_nothing() {
        let net = three_isolated();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let d = evaluate_unplug(
            &net,
            &cert,
            &UnplugRequest {
                id: 3,
                keep_isolated: false,
            },
        )
        .unwrap();
        let post = d.certificate.unwrap();
        for i in [1, 2] {
            assert_eq!(post.rho_of(i).unwrap(), cert.rho_of(i).unwrap());
        }
    }

    #[test]
    fn post_event_initializations_and_monotonicity() {
        let net = three_isolated();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let init =
            crate::design::initialize_covariances(&net, InitializationMode::ScaledDare).unwrap();
        let (pbar, up, _) = steady(&net, init, 400);
        assert!(up);
        let states: States = pbar
            .iter()
            .map(|(&i, p)| {
                (
                    i,
                    EstimatorState {
                        xhat: Vector::from_element(2, i as f64),
                        p: p.clone(),
                    },
                )
            })
            .collect();
        let d = evaluate_plugin(&net, &cert, &plug_three(), &DesignOptions::default()).unwrap();
        let zero = apply_plugin(&d, &states, InitializationMode::Zero, false).unwrap();
        assert_eq!(zero.states[&3].p, Mat::zeros(2, 2));
        assert_eq!(zero.states[&3].xhat, states[&3].xhat);
        let fresh = evaluate_plugin(
            &net.without(3).unwrap(),
            &cert.without(3).unwrap(),
            &plug_three(),
            &DesignOptions::default(),
        )
        .unwrap();
        let fresh_states: States = states
            .iter()
            .filter(|(&i, _)| i != 3)
            .map(|(&i, s)| (i, s.clone()))
            .collect();
        let applied =
            apply_plugin(&fresh, &fresh_states, InitializationMode::ScaledDare, false).unwrap();
        assert_eq!(applied.states[&3].xhat, Vector::zeros(2));

        let c = apply_plugin(&d, &states, InitializationMode::ScaledDare, false).unwrap();
        let covs = c.states.iter().map(|(&i, s)| (i, s.p.clone())).collect();
        let (after, up, _) = steady(&c.network, covs, 400);
        assert!(up);
        assert!(verify_pbar_default(&c.network, &after).unwrap().passed);

        let u = evaluate_unplug(
            &c.network,
            c.certificate.as_ref().unwrap(),
            &UnplugRequest {
                id: 1,
                keep_isolated: true,
            },
        )
        .unwrap();
        let r = apply_unplug(
            &u,
            &c.states
                .iter()
                .map(|(&i, s)| {
                    (
                        i,
                        EstimatorState {
                            xhat: s.xhat.clone(),
                            p: after[&i].clone(),
                        },
                    )
                })
                .collect(),
        )
        .unwrap();
        let covs = r.states.iter().map(|(&i, s)| (i, s.p.clone())).collect();
        let (_, _, down) = steady(&r.network, covs, 400);
        assert!(down);
    }

    #[test]
    fn denied_plug_in_requires_force() {
        let net = build_network(vec![academic(1, &[2], 0.1), academic(2, &[1], 0.1)]).unwrap();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let req = PlugRequest {
            subsystem: (&academic(3, &[2], 3.0)).into(),
            outgoing: [(2, diag(3.0))].into(),
            updated_subsystems: Vec::new(),
        };
        let d = evaluate_plugin(&net, &cert, &req, &DesignOptions::default()).unwrap();
        let states: States = net
            .ids()
            .into_iter()
            .map(|i| {
                (
                    i,
                    EstimatorState {
                        xhat: Vector::zeros(2),
                        p: Mat::identity(2, 2),
                    },
                )
            })
            .collect();
        assert!(matches!(
            apply_plugin(&d, &states, InitializationMode::Zero, false),
            Err(DkfError::Rejected(_))
        ));
        let forced = apply_plugin(&d, &states, InitializationMode::Zero, true).unwrap();
        assert_eq!(forced.network.ids(), vec![1, 2, 3]);
    }

    #[test]
    fn adding_a_sensor_keeps_certificate() {
        let net = build_network(vec![academic(1, &[2], 0.1), academic(2, &[1], 0.1)]).unwrap();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let req = AddSensorRequest {
            id: 2,
            c_add: Mat::from_row_slice(1, 2, &[1.0, 1.0]),
            r_add: Mat::identity(1, 1),
        };
        let d = add_sensor(&net, &cert, &req).unwrap();
        assert!(d.accepted);
        let post = d.certificate.as_ref().unwrap();
        assert_eq!(post.rho, cert.rho);
        let post_net = d.network.as_ref().unwrap();
        let s = post_net.subsystem(2).unwrap();
        assert_eq!(s.c.shape(), (2, 2));
        let before = cert.local(2).unwrap();
        let after = post.local(2).unwrap();
        let old = net.subsystem(2).unwrap();
        assert_eq!(after.f_bar(&s.a_ii, &s.c), before.f_bar(&old.a_ii, &old.c));
        assert!(add_sensor(
            &net,
            &cert,
            &AddSensorRequest {
                id: 2,
                c_add: Mat::zeros(1, 3),
                r_add: Mat::identity(1, 1)
            }
        )
        .is_err());
    }

    #[test]
    fn replacing_sensors() {
        let net = build_network(vec![academic(1, &[2], 0.1), academic(2, &[1], 0.1)]).unwrap();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let opts = DesignOptions::default();
        let same = replace_sensors(
            &net,
            &cert,
            &ReplaceSensorsRequest {
                id: 1,
                c: net.subsystem(1).unwrap().c.clone(),
                r: Mat::identity(1, 1),
            },
            &opts,
        )
        .unwrap();
        assert!(same.accepted);
        assert_eq!(same.certificate.as_ref().unwrap(), &cert);

        let blind = replace_sensors(
            &net,
            &cert,
            &ReplaceSensorsRequest {
                id: 1,
                c: Mat::zeros(1, 2),
                r: Mat::identity(1, 1),
            },
            &opts,
        )
        .unwrap();
        assert!(!blind.accepted);

        // Full-rank scrambled map: the deadbeat gain A C⁻¹ zeroes F̄.
        let t: f64 = 0.7;
        let c = Mat::from_row_slice(2, 2, &[t.cos(), -t.sin(), t.sin(), t.cos()])
            * Mat::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 0.5]);
        let full = replace_sensors(
            &net,
            &cert,
            &ReplaceSensorsRequest {
                id: 1,
                c,
                r: Mat::identity(2, 2),
            },
            &opts,
        )
        .unwrap();
        assert!(full.accepted, "{:?}", full.reasons);
        let l = full.certificate.as_ref().unwrap().local(1).unwrap();
        assert!(l.rho() <= cert.local(1).unwrap().rho());
        // Rows of other subsystems are unchanged.
        assert_eq!(
            full.certificate.as_ref().unwrap().gamma.row(1),
            cert.gamma.row(1)
        );
    }

    #[test]
    fn sensor_procedure_phases() {
        let one = |x: f64| Mat::from_element(1, 1, x);
        let iso = build_network(vec![SubsystemModel::new(
            0,
            one(0.7),
            one(1.0),
            one(1.0),
            one(1.0),
        )])
        .unwrap();
        let init =
            crate::design::initialize_covariances(&iso, InitializationMode::ScaledDare).unwrap();
        let sched =
            sensor_pnp_covariance_procedure(&iso, &init, 0, SENSOR_PHASE_TOL, SENSOR_PHASE_CAP)
                .unwrap();
        assert_eq!(sched.phase1_steps, 1);
        assert!((&sched.phase2_initial[&0] - &init[&0]).amax() < 1e-9);

        let net = build_network(vec![academic(1, &[2], 0.1), academic(2, &[1], 0.1)]).unwrap();
        let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
        let init =
            crate::design::initialize_covariances(&net, InitializationMode::ScaledDare).unwrap();
        let (pbar, _, _) = steady(&net, init, 400);
        let d = replace_sensors(
            &net,
            &cert,
            &ReplaceSensorsRequest {
                id: 2,
                c: Mat::from_row_slice(1, 2, &[1.0, 0.8]),
                r: Mat::identity(1, 1),
            },
            &DesignOptions::default(),
        )
        .unwrap();
        assert!(d.accepted, "{:?}", d.reasons);
        let post = d.network.clone().unwrap();
        let sched =
            sensor_pnp_covariance_procedure(&post, &pbar, 2, SENSOR_PHASE_TOL, SENSOR_PHASE_CAP)
                .unwrap();
        assert!(sched.phase1_steps > 1);
        assert_eq!(sched.phase1_final[&2], pbar[&2]);
        let (fin, up, _) = steady(&post, sched.phase2_initial.clone(), 500);
        assert!(up);
        assert!(verify_pbar_default(&post, &fin).unwrap().passed);

        // No-op replacement returns to the original steady state.
        let sched =
            sensor_pnp_covariance_procedure(&net, &pbar, 2, SENSOR_PHASE_TOL, SENSOR_PHASE_CAP)
                .unwrap();
        let (fin, _, _) = steady(&net, sched.phase2_initial, 600);
        for i in [1, 2] {
            assert!((&fin[&i] - &pbar[&i]).amax() < 1e-8);
        }
    }

    #[test]
    fn event_json_shape() {
        let ev = PnPEvent {
            time: 200,
            kind: PnPEventKind::UnplugSubsystem(UnplugRequest {
                id: 1,
                keep_isolated: true,
            }),
        };
        let text = serde_json::to_string(&ev).unwrap();
        assert_eq!(
            text,
            r#"{"time":200,"kind":"UNPLUG_SUBSYSTEM","payload":{"id":1,"keep_isolated":true}}"#
        );
        let back: PnPEvent = serde_json::from_str(&text).unwrap();
        assert_eq!(back, ev);
        let plug = PnPEvent {
            time: 100,
            kind: PnPEventKind::PlugSubsystem(plug_three()),
        };
        let back: PnPEvent = serde_json::from_str(&serde_json::to_string(&plug).unwrap()).unwrap();
        assert_eq!(back, plug);
    }

    mod props {
        use super::*;
        use proptest::prelude::{any, prop_assert, prop_assume, proptest, ProptestConfig};

        fn random_network(rng: &mut ChaCha8Rng, m: usize) -> NetworkModel {
            let mut subs = Vec::new();
            for i in 0..m {
                let mut s = academic(i, &[], 0.0);
                for j in 0..m {
                    if j != i && rng.random_bool(0.5) {
                        s = s.with_coupling(j, diag(rng.random_range(0.01..0.1)));
                    }
                }
                subs.push(s);
            }
            build_network(subs).unwrap()
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]

            #[test]
            fn unplug_never_increases_rho(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let net = random_network(&mut rng, 4);
                let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
                let id = rng.random_range(0..4);
                let keep = rng.random_bool(0.5);
                let d = evaluate_unplug(&net, &cert, &UnplugRequest { id, keep_isolated: keep }).unwrap();
                let post = d.certificate.unwrap();
                for i in post.ids() {
                    prop_assert!(post.rho_of(i).unwrap() <= cert.rho_of(i).unwrap() * (1.0 + 1e-12) + 1e-15);
                }
                for u in &d.updates {
                    if let (Some(b), Some(a)) = (u.lambda_before, u.lambda_after) {
                        if let (Some(sb), Some(sa)) = (u.varsigma_before, u.varsigma_after) {
                            prop_assert!((a / b - (sa as f64 / sb as f64).sqrt()).abs() < 1e-12);
                        }
                    }
                }
            }

            #[test]
            fn plug_in_never_decreases_rho_of_affected(seed in any::<u64>()) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let net = random_network(&mut rng, 3);
                let cert = default_certificate(&net, &DesignOptions::default()).unwrap();
                let mut new = academic(9, &[], 0.0);
                let mut outgoing = BTreeMap::new();
                for j in 0..3 {
                    if rng.random_bool(0.5) {
                        new = new.with_coupling(j, diag(0.05));
                    }
                    if rng.random_bool(0.5) {
                        outgoing.insert(j, diag(0.05));
                    }
                }
                let req = PlugRequest { subsystem: (&new).into(), outgoing, updated_subsystems: Vec::new() };
                let d = evaluate_plugin(&net, &cert, &req, &DesignOptions::kalman_only()).unwrap();
                prop_assume!(d.certificate.is_some());
                for u in &d.updates {
                    if let (Some(b), Some(a)) = (u.rho_before, u.rho_after) {
                        match u.case {
                            UpdateCase::Unaffected => prop_assert!((a - b).abs() <= 1e-12),
                            UpdateCase::SuccessorOnly | UpdateCase::NeighborOnly | UpdateCase::Both => {
                                prop_assert!(a >= b - 1e-12)
                            }
                            _ => {}
                        }
                    }
                    if let (Some(b), Some(a), Some(sb), Some(sa)) = (u.lambda_before, u.lambda_after, u.varsigma_before, u.varsigma_after) {
                        prop_assert!((a / b - (sa as f64 / sb as f64).sqrt()).abs() < 1e-12);
                    }
                }
            }
        }
    }
}
