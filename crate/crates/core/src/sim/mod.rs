//! Plant simulation with the distributed, simplified and centralized
//! estimators running side by side, plus PnP event injection.

pub mod academic;
pub mod discretize;
pub mod export;
pub mod metrics;
pub mod power;
pub mod scenario;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::design::{
    centralized_design_search, default_certificate, initial_covariance, initialize_covariances,
    DesignCertificate, InitializationMode,
};
use crate::error::{DkfError, Result};
use crate::filter::{
    block_diagonal, centralized_step, dkf_cov_update, fixed_gain_round, fixed_gains, network_round,
    CentralizedState, Covariances, EstimatorState, LocalGains, Outputs, States, Vector,
};
use crate::network::{assemble_global, build_network, GlobalMatrices, NetworkModel, SubsystemId};
use crate::pnp::{
    apply_plugin, apply_unplug, check_steady_state, evaluate_event, AdmissionDecision, PnPEvent,
    PnPEventKind, SensorProcedure, SENSOR_PHASE_CAP, SENSOR_PHASE_TOL,
};
use crate::riccati::{factor_psd, Mat, DARE_MAX_ITER, DARE_TOL};

pub use scenario::{ContinuousSpec, DenialPolicy, RunFlags, Scenario};

/// Everything stored for one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// Plant state of every plant subsystem, tracked or not.
    pub x: BTreeMap<SubsystemId, Vector>,
    /// Subsystems the estimators track at this step.
    pub tracked: Vec<SubsystemId>,
    pub dkf: Option<States>,
    pub central: Option<BTreeMap<SubsystemId, Vector>>,
    pub simplified: Option<BTreeMap<SubsystemId, Vector>>,
    /// Measurements of this step; empty at the final step.
    pub y: Outputs,
}

#[derive(Clone, Debug)]
pub struct DecisionRecord {
    pub time: usize,
    pub decision: AdmissionDecision,
    pub applied: bool,
}

/// A stretch of the run with a fixed topology.
#[derive(Clone, Debug)]
pub struct Phase {
    pub start: usize,
    pub ids: Vec<SubsystemId>,
    pub certificate: Option<DesignCertificate>,
}

#[derive(Clone, Debug)]
pub struct SimResult {
    pub records: Vec<StepRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub phases: Vec<Phase>,
    /// Step at which a denied request stopped the run.
    pub halted_at: Option<usize>,
    pub warnings: Vec<String>,
}

impl SimResult {
    fn error_series(
        &self,
        pick: impl Fn(&StepRecord, SubsystemId) -> Option<Vector>,
    ) -> Option<Vec<f64>> {
        self.records
            .iter()
            .map(|r| {
                let mut sq = 0.0;
                for &i in &r.tracked {
                    sq += (&r.x[&i] - pick(r, i)?).norm_squared();
                }
                Some((sq / r.tracked.len().max(1) as f64).sqrt())
            })
            .collect()
    }

    /// `e(t)` of the distributed filter over the tracked subsystems.
    pub fn e_dkf(&self) -> Option<Vec<f64>> {
        self.error_series(|r, i| r.dkf.as_ref().map(|s| s[&i].xhat.clone()))
    }

    pub fn e_central(&self) -> Option<Vec<f64>> {
        self.error_series(|r, i| r.central.as_ref().map(|s| s[&i].clone()))
    }

    pub fn e_simplified(&self) -> Option<Vec<f64>> {
        self.error_series(|r, i| r.simplified.as_ref().map(|s| s[&i].clone()))
    }

    /// Aligned plant and distributed-estimate series of subsystem `id` over
    /// the steps where it is tracked.
    pub fn dkf_series(&self, id: SubsystemId) -> (Vec<Vector>, Vec<Vector>) {
        self.records
            .iter()
            .filter_map(|r| {
                Some((
                    r.x.get(&id)?.clone(),
                    r.dkf.as_ref()?.get(&id)?.xhat.clone(),
                ))
            })
            .unzip()
    }

    pub fn rmse_dkf(&self, id: SubsystemId) -> Result<f64> {
        let (x, xhat) = self.dkf_series(id);
        metrics::rmse(&x, &xhat)
    }
}

/// Iterates the distributed covariance recursion from `init` until the
/// largest change is below `tol · max(1, ‖P‖)`.
pub fn converge_covariances(
    network: &NetworkModel,
    init: Covariances,
    tol: f64,
    max_iter: usize,
) -> Result<Covariances> {
    let mut covs = init;
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        let mut next = Covariances::new();
        residual = 0.0;
        for i in network.ids() {
            let p = dkf_cov_update(network, i, &covs)?;
            let scale = p.norm().max(1.0);
            residual = f64::max(residual, (&p - &covs[&i]).norm() / scale);
            next.insert(i, p);
        }
        covs = next;
        if residual < tol {
            return Ok(covs);
        }
    }
    Err(DkfError::NonConvergence {
        iterations: max_iter,
        residual,
    })
}

struct Simplified {
    states: States,
    gains: BTreeMap<SubsystemId, LocalGains>,
}

struct Runner<'a> {
    sc: &'a Scenario,
    plant: NetworkModel,
    untracked: BTreeSet<SubsystemId>,
    network: NetworkModel,
    certificate: Option<DesignCertificate>,
    x: BTreeMap<SubsystemId, Vector>,
    dkf: Option<States>,
    central: Option<(GlobalMatrices, CentralizedState)>,
    simplified: Option<Simplified>,
    sensor: Option<SensorProcedure>,
    noise: BTreeMap<SubsystemId, (Mat, Mat)>,
    rng: ChaCha8Rng,
    warnings: Vec<String>,
}

fn vector_or_zero(
    values: Option<&Vec<f64>>,
    n: usize,
    what: &str,
    id: SubsystemId,
) -> Result<Vector> {
    match values {
        None => Ok(Vector::zeros(n)),
        Some(v) if v.len() == n => Ok(Vector::from_column_slice(v)),
        Some(v) => Err(DkfError::DimensionMismatch(format!(
            "{what} of subsystem {id} has {} entries, expected {n}",
            v.len()
        ))),
    }
}

fn covariances(states: &States) -> Covariances {
    states.iter().map(|(&i, s)| (i, s.p.clone())).collect()
}

impl<'a> Runner<'a> {
    fn new(sc: &'a Scenario) -> Result<Self> {
        let plant = sc.plant_network()?;
        let untracked: BTreeSet<SubsystemId> = sc.untracked.iter().copied().collect();
        let mut network = plant.clone();
        for &u in &untracked {
            if !plant.is_isolated(u)? {
                return Err(DkfError::InvalidScenario(format!(
                    "untracked subsystem {u} must be isolated"
                )));
            }
            network = network.without(u)?;
        }
        if network.is_empty() {
            return Err(DkfError::InvalidScenario("no tracked subsystems".into()));
        }
        let mut warnings = Vec::new();
        let certificate = match if sc.design_search {
            centralized_design_search(&network, &sc.design)
        } else {
            default_certificate(&network, &sc.design)
        } {
            Ok(c) => Some(c),
            Err(e) => {
                warnings.push(format!(
                    "no design certificate for the initial network: {e}"
                ));
                None
            }
        };
        let x = plant
            .subsystems()
            .map(|s| Ok((s.id, vector_or_zero(sc.x0.get(&s.id), s.n(), "x0", s.id)?)))
            .collect::<Result<_>>()?;
        let xhat0: BTreeMap<SubsystemId, Vector> = network
            .subsystems()
            .map(|s| {
                Ok((
                    s.id,
                    vector_or_zero(sc.xhat0.get(&s.id), s.n(), "xhat0", s.id)?,
                ))
            })
            .collect::<Result<_>>()?;
        let covs = initialize_covariances(&network, sc.init_mode)?;
        let dkf = sc.runs.dkf.then(|| {
            xhat0
                .iter()
                .map(|(&i, xh)| {
                    (
                        i,
                        EstimatorState {
                            xhat: xh.clone(),
                            p: covs[&i].clone(),
                        },
                    )
                })
                .collect()
        });
        let central = if sc.runs.centralized {
            let g = assemble_global(&network);
            let pi = block_diagonal(&g, &covs)?;
            let xhat = g.stack_states(&xhat0)?;
            Some((g, CentralizedState { xhat, pi }))
        } else {
            None
        };
        let mut runner = Self {
            sc,
            plant,
            untracked,
            network,
            certificate,
            x,
            dkf,
            central,
            simplified: None,
            sensor: None,
            noise: BTreeMap::new(),
            rng: ChaCha8Rng::seed_from_u64(sc.seed),
            warnings,
        };
        if sc.runs.simplified {
            runner.rebuild_simplified(&xhat0)?;
        }
        runner.rebuild_noise()?;
        Ok(runner)
    }

    fn rebuild_noise(&mut self) -> Result<()> {
        self.noise = self
            .plant
            .subsystems()
            .map(|s| Ok((s.id, (factor_psd(&s.q)?, factor_psd(&s.r)?))))
            .collect::<Result<_>>()?;
        Ok(())
    }

    fn rebuild_simplified(&mut self, previous: &BTreeMap<SubsystemId, Vector>) -> Result<()> {
        let init = initialize_covariances(&self.network, InitializationMode::Zero)?;
        let pbar = converge_covariances(&self.network, init, DARE_TOL, DARE_MAX_ITER)?;
        let gains = fixed_gains(&self.network, &pbar)?;
        let states = self
            .network
            .subsystems()
            .map(|s| {
                let xhat = previous
                    .get(&s.id)
                    .filter(|v| v.len() == s.n())
                    .cloned()
                    .unwrap_or_else(|| Vector::zeros(s.n()));
                (
                    s.id,
                    EstimatorState {
                        xhat,
                        p: pbar[&s.id].clone(),
                    },
                )
            })
            .collect();
        self.simplified = Some(Simplified { states, gains });
        Ok(())
    }

    /// Plant after a reconfiguration: the estimator network plus the
    /// subsystems that are still untracked.
    fn rebuild_plant(&mut self) -> Result<()> {
        let mut models = self.network.to_models();
        for &u in &self.untracked {
            models.push(self.plant.subsystem(u)?.clone());
        }
        let plant = build_network(models)?;
        let mut x = BTreeMap::new();
        for s in plant.subsystems() {
            let v = self
                .x
                .get(&s.id)
                .filter(|v| v.len() == s.n())
                .cloned()
                .unwrap_or_else(|| Vector::zeros(s.n()));
            x.insert(s.id, v);
        }
        self.plant = plant;
        self.x = x;
        self.rebuild_noise()
    }

    /// Carries the centralized filter over to the new network. Blocks of
    /// subsystems present before are kept; `fresh` restarts from its
    /// initial covariance with zero cross terms.
    fn rebuild_central(&mut self, fresh: Option<SubsystemId>) -> Result<()> {
        let Some((old_g, old)) = self.central.take() else {
            return Ok(());
        };
        let g = assemble_global(&self.network);
        let old_blocks: BTreeMap<SubsystemId, _> =
            old_g.layout.iter().map(|b| (b.id, *b)).collect();
        let n = g.a.nrows();
        let mut pi = Mat::zeros(n, n);
        let mut xhat = Vector::zeros(n);
        for bi in &g.layout {
            let prev_i = old_blocks.get(&bi.id).filter(|b| b.n == bi.n);
            if let Some(pb) = prev_i {
                xhat.rows_mut(bi.x_offset, bi.n)
                    .copy_from(&old.xhat.rows(pb.x_offset, pb.n));
            }
            if Some(bi.id) == fresh || prev_i.is_none() {
                let p = match &self.dkf {
                    Some(states) => states[&bi.id].p.clone(),
                    None => initial_covariance(&self.network, bi.id, self.sc.init_mode)?,
                };
                pi.view_mut((bi.x_offset, bi.x_offset), (bi.n, bi.n))
                    .copy_from(&p);
                continue;
            }
            let pb = prev_i.expect("checked above");
            for bj in &g.layout {
                if Some(bj.id) == fresh {
                    continue;
                }
                if let Some(qb) = old_blocks.get(&bj.id).filter(|b| b.n == bj.n) {
                    pi.view_mut((bi.x_offset, bj.x_offset), (bi.n, bj.n))
                        .copy_from(&old.pi.view((pb.x_offset, qb.x_offset), (pb.n, qb.n)));
                }
            }
        }
        self.central = Some((g, CentralizedState { xhat, pi }));
        Ok(())
    }

    fn finish_sensor_procedure(&mut self) -> Result<()> {
        if let (Some(proc), Some(states)) = (self.sensor.take(), self.dkf.as_mut()) {
            let covs = proc.reinsert(&covariances(states))?;
            for (i, p) in covs {
                if let Some(s) = states.get_mut(&i) {
                    s.p = p;
                }
            }
        }
        Ok(())
    }

    fn apply_event(&mut self, ev: &PnPEvent) -> Result<DecisionRecord> {
        self.finish_sensor_procedure()?;
        let cert = self.certificate.as_ref().ok_or_else(|| {
            DkfError::InvalidScenario(format!(
                "{} at step {} needs a design certificate for the current network",
                ev.kind.name(),
                ev.time
            ))
        })?;
        let opts = &self.sc.design;
        let mut decision = evaluate_event(&self.network, cert, &ev.kind, opts)?;
        if let Some(states) = &self.dkf {
            check_steady_state(&mut decision, &self.network, &covariances(states))?;
        }
        let apply = decision.accepted || self.sc.on_denial == DenialPolicy::Apply;
        if apply {
            self.reconfigure(&ev.kind, &decision)?;
        }
        Ok(DecisionRecord {
            time: ev.time,
            decision,
            applied: apply,
        })
    }

    fn reconfigure(&mut self, kind: &PnPEventKind, decision: &AdmissionDecision) -> Result<()> {
        let post = decision
            .network
            .clone()
            .ok_or_else(|| DkfError::Rejected("decision carries no post-event network".into()))?;
        let previous_simplified: BTreeMap<SubsystemId, Vector> = self
            .simplified
            .as_ref()
            .map(|s| {
                s.states
                    .iter()
                    .map(|(&i, st)| (i, st.xhat.clone()))
                    .collect()
            })
            .unwrap_or_default();
        let id = kind.subsystem();
        let mut fresh = None;
        match kind {
            PnPEventKind::PlugSubsystem(_) => {
                if let Some(states) = &self.dkf {
                    self.dkf =
                        Some(apply_plugin(decision, states, self.sc.init_mode, true)?.states);
                }
                self.untracked.remove(&id);
                fresh = Some(id);
            }
            PnPEventKind::UnplugSubsystem(_) => {
                if let Some(states) = &self.dkf {
                    self.dkf = Some(apply_unplug(decision, states)?.states);
                }
            }
            PnPEventKind::AddSensor(_) | PnPEventKind::ReplaceSensors(_) => {
                if let Some(states) = &self.dkf {
                    let frozen = states[&id].p.clone();
                    self.sensor = Some(SensorProcedure::new(
                        &post,
                        id,
                        frozen,
                        SENSOR_PHASE_TOL,
                        SENSOR_PHASE_CAP,
                    )?);
                }
            }
        }
        self.network = post;
        self.certificate = decision.certificate.clone();
        self.rebuild_plant()?;
        self.rebuild_central(fresh)?;
        if self.simplified.is_some() {
            self.rebuild_simplified(&previous_simplified)?;
        }
        Ok(())
    }

    fn draw(&mut self, g: &Mat) -> Vector {
        let z = Vector::from_iterator(
            g.ncols(),
            (0..g.ncols()).map(|_| self.rng.sample::<f64, _>(StandardNormal)),
        );
        g * z
    }

    /// Draws `w` and `v` for every plant subsystem in ascending id order.
    fn draw_noise(&mut self) -> BTreeMap<SubsystemId, (Vector, Vector)> {
        let factors: Vec<(SubsystemId, Mat, Mat)> = self
            .noise
            .iter()
            .map(|(&i, (gq, gr))| (i, gq.clone(), gr.clone()))
            .collect();
        factors
            .into_iter()
            .map(|(i, gq, gr)| {
                let w = self.draw(&gq);
                let v = self.draw(&gr);
                (i, (w, v))
            })
            .collect()
    }

    fn record(&self, step: usize, y: Outputs) -> StepRecord {
        StepRecord {
            step,
            x: self.x.clone(),
            tracked: self.network.ids(),
            dkf: self.dkf.clone(),
            central: self.central.as_ref().map(|(g, s)| g.split_states(&s.xhat)),
            simplified: self.simplified.as_ref().map(|s| {
                s.states
                    .iter()
                    .map(|(&i, st)| (i, st.xhat.clone()))
                    .collect()
            }),
            y,
        }
    }

    fn measure(&self, noise: &BTreeMap<SubsystemId, (Vector, Vector)>) -> Outputs {
        self.plant
            .subsystems()
            .map(|s| (s.id, &s.c * &self.x[&s.id] + &noise[&s.id].1))
            .collect()
    }

    fn advance(
        &mut self,
        y: &Outputs,
        noise: &BTreeMap<SubsystemId, (Vector, Vector)>,
    ) -> Result<()> {
        let tracked: Outputs = self
            .network
            .ids()
            .into_iter()
            .map(|i| (i, y[&i].clone()))
            .collect();
        if let Some(states) = &self.dkf {
            let mut next = network_round(&self.network, states, &tracked)?;
            if let Some(proc) = self.sensor.as_mut() {
                let (mut covs, done) = proc.step(&covariances(states))?;
                if done {
                    covs = proc.reinsert(&covs)?;
                    self.sensor = None;
                }
                for (i, p) in covs {
                    next.get_mut(&i).expect("tracked subsystem").p = p;
                }
            }
            self.dkf = Some(next);
        }
        if let Some(simple) = &mut self.simplified {
            simple.states =
                fixed_gain_round(&self.network, &simple.states, &tracked, &simple.gains)?;
        }
        if let Some((g, state)) = &self.central {
            let yv = g.stack_outputs(&tracked)?;
            let next = centralized_step(g, state, &yv)?;
            self.central = Some((g.clone(), next));
        }
        let mut x_next = BTreeMap::new();
        for s in self.plant.subsystems() {
            let mut acc = noise[&s.id].0.clone();
            for &j in self.plant.neighbors(s.id)? {
                acc += self.plant.block(s.id, j)?.expect("neighbor block") * &self.x[&j];
            }
            x_next.insert(s.id, acc);
        }
        self.x = x_next;
        Ok(())
    }
}

/// Runs a scenario. The result depends only on the scenario contents.
pub fn simulate(sc: &Scenario) -> Result<SimResult> {
    sc.validate()?;
    let mut runner = Runner::new(sc)?;
    let mut records = Vec::with_capacity(sc.horizon + 1);
    let mut decisions = Vec::new();
    let mut phases = vec![Phase {
        start: 0,
        ids: runner.network.ids(),
        certificate: runner.certificate.clone(),
    }];
    let mut events = sc.pnp_events.iter().peekable();
    let mut halted_at = None;
    'steps: for t in 0..=sc.horizon {
        while let Some(ev) = events.next_if(|e| e.time <= t) {
            let rec = runner.apply_event(ev)?;
            let halt = !rec.applied && sc.on_denial == DenialPolicy::Halt;
            if rec.applied {
                phases.push(Phase {
                    start: t,
                    ids: runner.network.ids(),
                    certificate: runner.certificate.clone(),
                });
            }
            decisions.push(rec);
            if halt {
                halted_at = Some(t);
                break 'steps;
            }
        }
        if t == sc.horizon {
            records.push(runner.record(t, Outputs::new()));
            break;
        }
        let noise = runner.draw_noise();
        let y = runner.measure(&noise);
        records.push(runner.record(t, y.clone()));
        runner.advance(&y, &noise)?;
    }
    for ev in events {
        runner.warnings.push(format!(
            "{} at step {} is past the horizon and was ignored",
            ev.kind.name(),
            ev.time
        ));
    }
    Ok(SimResult {
        records,
        decisions,
        phases,
        halted_at,
        warnings: runner.warnings,
    })
}
