//! Gossip dual averaging.
//!
//! Every agent keeps a dual accumulator `z_i` of its own log-likelihood
//! gradients. In each slot the gossiping pair replaces both accumulators by
//! their average before adding their fresh gradients; everybody else only adds
//! its own gradient. Each agent then projects `z_i` through the KL proximal
//! map with its own prior. Stacking the accumulators gives the linear system
//! `Z_{t+1} = (W(t) ⊗ I) Z_t + G_t`, whose unrolled solution yields the Gibbs
//! form of the belief computed by [`closed_form_belief`].

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::centralized::StepSchedule;
use crate::model::{ObservationModel, SignalProfile, SignalSampler};
use crate::network::{gossip_matrix, ContactMatrix, GossipEvent, GossipSampler};
use crate::simplex::{check_dims, proximal_projection, Belief, LogWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub z: LogWeights,
    pub belief: Belief,
}

/// Everything that happened in one slot: the gossip pair (if any) and the
/// signal each agent observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotRecord {
    pub slot: u64,
    pub event: Option<GossipEvent>,
    pub signals: SignalProfile,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub agents: Vec<AgentState>,
    pub slot: u64,
    /// Present when the run records its events and signals for replay.
    pub event_log: Option<Vec<SlotRecord>>,
}

impl NetworkState {
    /// All accumulators at zero, beliefs at the priors.
    pub fn initial(priors: &[Belief]) -> Result<Self> {
        let m = priors
            .first()
            .map(Belief::len)
            .ok_or(Error::DimensionMismatch {
                expected: 1,
                got: 0,
            })?;
        let agents = priors
            .iter()
            .map(|p| {
                check_dims(m, p.len())?;
                Ok(AgentState {
                    z: LogWeights::zeros(m),
                    belief: p.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            agents,
            slot: 0,
            event_log: None,
        })
    }

    pub fn with_event_log(mut self) -> Self {
        self.event_log = Some(Vec::new());
        self
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_states(&self) -> usize {
        self.agents[0].z.len()
    }

    pub fn beliefs(&self) -> Vec<Belief> {
        self.agents.iter().map(|a| a.belief.clone()).collect()
    }

    /// In-place form of [`gossip_step`].
    pub fn step(
        &mut self,
        event: Option<&GossipEvent>,
        profile: &SignalProfile,
        model: &ObservationModel,
        schedule: &StepSchedule,
        priors: &[Belief],
    ) -> Result<()> {
        let n = self.num_agents();
        let m = self.num_states();
        check_dims(n, model.num_agents())?;
        check_dims(n, profile.len())?;
        check_dims(n, priors.len())?;
        check_dims(m, model.num_states())?;
        for (agent, &symbol) in model.agents().iter().zip(&profile.signals) {
            if symbol >= agent.alphabet_size() {
                return Err(Error::SymbolOutOfRange {
                    symbol,
                    alphabet: agent.alphabet_size(),
                });
            }
        }
        if let Some(e) = event {
            if e.slot != self.slot {
                return Err(Error::SlotMismatch {
                    expected: self.slot,
                    got: e.slot,
                });
            }
            if e.i == e.j || e.i >= n || e.j >= n {
                return Err(Error::InvalidEvent(format!(
                    "pair ({}, {}) invalid for {n} agents",
                    e.i, e.j
                )));
            }
            // Both old accumulators are read before either is written.
            let avg: Vec<f64> = self.agents[e.i]
                .z
                .values()
                .iter()
                .zip(self.agents[e.j].z.values())
                .map(|(a, b)| (a + b) / 2.0)
                .collect();
            self.agents[e.i].z.values_mut().copy_from_slice(&avg);
            self.agents[e.j].z.values_mut().copy_from_slice(&avg);
        }
        for ((state, lik), &symbol) in self
            .agents
            .iter_mut()
            .zip(model.agents())
            .zip(&profile.signals)
        {
            for (z, g) in state.z.values_mut().iter_mut().zip(lik.log_column(symbol)) {
                *z += g;
            }
        }
        let alpha = schedule.alpha(self.slot);
        for (state, prior) in self.agents.iter_mut().zip(priors) {
            state.belief = proximal_projection(&state.z, alpha, prior)?;
        }
        if let Some(log) = self.event_log.as_mut() {
            log.push(SlotRecord {
                slot: self.slot,
                event: event.copied(),
                signals: profile.clone(),
            });
        }
        self.slot += 1;
        Ok(())
    }
}

/// One slot of gossip dual averaging; `event = None` is a slot in which no
/// pair communicates.
pub fn gossip_step(
    state: &NetworkState,
    event: Option<&GossipEvent>,
    profile: &SignalProfile,
    model: &ObservationModel,
    schedule: &StepSchedule,
    priors: &[Belief],
) -> Result<NetworkState> {
    let mut next = state.clone();
    next.step(event, profile, model, schedule, priors)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub horizon: u64,
    /// Beliefs are snapshotted at slot 0, every `snapshot_cadence` slots, and
    /// at the horizon.
    pub snapshot_cadence: u64,
    pub record_log: bool,
}

impl RunOptions {
    pub fn new(horizon: u64) -> Self {
        Self {
            horizon,
            snapshot_cadence: 1,
            record_log: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSnapshot {
    pub slot: u64,
    pub beliefs: Vec<Belief>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributedTrajectory {
    pub snapshots: Vec<BeliefSnapshot>,
    pub final_state: NetworkState,
}

pub fn is_snapshot_slot(slot: u64, options: &RunOptions) -> bool {
    slot.is_multiple_of(options.snapshot_cadence.max(1)) || slot == options.horizon
}

/// Runs gossip dual averaging for `options.horizon` slots. Each slot draws
/// the gossip event first and the signal profile second from `rng`.
pub fn run_distributed<R: Rng + ?Sized>(
    model: &ObservationModel,
    contact: &ContactMatrix,
    schedule: &StepSchedule,
    priors: &[Belief],
    options: &RunOptions,
    rng: &mut R,
) -> Result<DistributedTrajectory> {
    run_distributed_observed(model, contact, schedule, priors, options, rng, |_| {})
}

/// [`run_distributed`] that also hands every state (slot 0 included) to
/// `observer`.
pub fn run_distributed_observed<R: Rng + ?Sized, F: FnMut(&NetworkState)>(
    model: &ObservationModel,
    contact: &ContactMatrix,
    schedule: &StepSchedule,
    priors: &[Belief],
    options: &RunOptions,
    rng: &mut R,
    mut observer: F,
) -> Result<DistributedTrajectory> {
    if options.horizon == 0 {
        return Err(Error::InvalidScenario("horizon must be at least 1".into()));
    }
    check_dims(model.num_agents(), contact.size())?;
    let signals = SignalSampler::new(model)?;
    let events = GossipSampler::new(contact);
    let mut state = NetworkState::initial(priors)?;
    if options.record_log {
        state = state.with_event_log();
    }
    let mut snapshots = vec![BeliefSnapshot {
        slot: 0,
        beliefs: state.beliefs(),
    }];
    observer(&state);
    for slot in 0..options.horizon {
        let event = events.sample(slot, rng);
        let profile = signals.sample(rng);
        state.step(event.as_ref(), &profile, model, schedule, priors)?;
        observer(&state);
        if is_snapshot_slot(state.slot, options) {
            snapshots.push(BeliefSnapshot {
                slot: state.slot,
                beliefs: state.beliefs(),
            });
        }
    }
    Ok(DistributedTrajectory {
        snapshots,
        final_state: state,
    })
}

/// Re-applies a recorded log from the initial state.
pub fn replay(
    log: &[SlotRecord],
    model: &ObservationModel,
    schedule: &StepSchedule,
    priors: &[Belief],
) -> Result<NetworkState> {
    let mut state = NetworkState::initial(priors)?;
    for record in log {
        if record.slot != state.slot {
            return Err(Error::SlotMismatch {
                expected: state.slot,
                got: record.slot,
            });
        }
        state.step(
            record.event.as_ref(),
            &record.signals,
            model,
            schedule,
            priors,
        )?;
    }
    Ok(state)
}

/// `z_i / t`, the network-weighted running average of log-likelihoods.
pub fn phi(state: &NetworkState, agent: usize) -> Result<Vec<f64>> {
    if state.slot == 0 {
        return Err(Error::ZeroSlot);
    }
    let t = state.slot as f64;
    Ok(state.agents[agent]
        .z
        .values()
        .iter()
        .map(|z| z / t)
        .collect())
}

fn check_log(log: &[SlotRecord], t: u64) -> Result<()> {
    if (log.len() as u64) < t {
        return Err(Error::IncompleteLog {
            required: t,
            available: log.len() as u64,
        });
    }
    for (tau, record) in log.iter().take(t as usize).enumerate() {
        if record.slot != tau as u64 {
            return Err(Error::SlotMismatch {
                expected: tau as u64,
                got: record.slot,
            });
        }
    }
    Ok(())
}

/// `Φ_{i,t}` from the log by explicit backward products of gossip matrices:
/// `(1/t) Σ_τ Σ_k [W(t-1) ··· W(τ+1)]_{ik} ln l_k(s_k^τ | ·)`.
pub fn closed_form_phi(
    log: &[SlotRecord],
    agent: usize,
    model: &ObservationModel,
    t: u64,
) -> Result<Vec<f64>> {
    if t == 0 {
        return Err(Error::ZeroSlot);
    }
    check_log(log, t)?;
    let n = model.num_agents();
    let m = model.num_states();
    let mut acc = vec![0.0; m];
    let mut product = DMatrix::<f64>::identity(n, n);
    for tau in (0..t as usize).rev() {
        let record = &log[tau];
        check_dims(n, record.signals.len())?;
        for k in 0..n {
            let weight = product[(agent, k)];
            if weight == 0.0 {
                continue;
            }
            let lik = model.agent(k);
            let symbol = record.signals.signals[k];
            if symbol >= lik.alphabet_size() {
                return Err(Error::SymbolOutOfRange {
                    symbol,
                    alphabet: lik.alphabet_size(),
                });
            }
            for (a, g) in acc.iter_mut().zip(lik.log_column(symbol)) {
                *a += weight * g;
            }
        }
        if tau > 0 {
            if let Some(e) = &record.event {
                product *= gossip_matrix(e, n);
            }
        }
    }
    let t = t as f64;
    Ok(acc.into_iter().map(|a| a / t).collect())
}

/// Gibbs belief `μ_{i,0} ⊙ exp(α t Φ_{i,t})`, normalized. At `t = 0` this is
/// the prior.
pub fn closed_form_belief(
    log: &[SlotRecord],
    agent: usize,
    priors: &[Belief],
    model: &ObservationModel,
    schedule: &StepSchedule,
    t: u64,
) -> Result<Belief> {
    let prior = priors.get(agent).ok_or(Error::DimensionMismatch {
        expected: agent + 1,
        got: priors.len(),
    })?;
    if t == 0 {
        return Ok(prior.clone());
    }
    let phi = closed_form_phi(log, agent, model, t)?;
    let scaled = LogWeights::new(phi.iter().map(|p| p * t as f64).collect())?;
    proximal_projection(&scaled, schedule.alpha(t - 1), prior)
}

/// [`closed_form_phi`] for every agent at once, sharing the backward
/// products. Row `i` is agent `i`.
pub fn closed_form_phi_all(
    log: &[SlotRecord],
    model: &ObservationModel,
    t: u64,
) -> Result<Vec<Vec<f64>>> {
    if t == 0 {
        return Err(Error::ZeroSlot);
    }
    check_log(log, t)?;
    let n = model.num_agents();
    let m = model.num_states();
    let mut acc = DMatrix::<f64>::zeros(n, m);
    let mut product = DMatrix::<f64>::identity(n, n);
    for tau in (0..t as usize).rev() {
        let record = &log[tau];
        check_dims(n, record.signals.len())?;
        let mut g = DMatrix::<f64>::zeros(n, m);
        for k in 0..n {
            let lik = model.agent(k);
            let symbol = record.signals.signals[k];
            if symbol >= lik.alphabet_size() {
                return Err(Error::SymbolOutOfRange {
                    symbol,
                    alphabet: lik.alphabet_size(),
                });
            }
            for (j, v) in lik.log_column(symbol).iter().enumerate() {
                g[(k, j)] = *v;
            }
        }
        acc += &product * g;
        if tau > 0 {
            if let Some(e) = &record.event {
                product *= gossip_matrix(e, n);
            }
        }
    }
    let t = t as f64;
    Ok((0..n)
        .map(|i| (0..m).map(|j| acc[(i, j)] / t).collect())
        .collect())
}

/// Closed-form beliefs of every agent at slot `t`.
pub fn closed_form_beliefs_all(
    log: &[SlotRecord],
    priors: &[Belief],
    model: &ObservationModel,
    schedule: &StepSchedule,
    t: u64,
) -> Result<Vec<Belief>> {
    check_dims(model.num_agents(), priors.len())?;
    if t == 0 {
        return Ok(priors.to_vec());
    }
    closed_form_phi_all(log, model, t)?
        .into_iter()
        .zip(priors)
        .map(|(phi, prior)| {
            let scaled = LogWeights::new(phi.iter().map(|p| p * t as f64).collect())?;
            proximal_projection(&scaled, schedule.alpha(t - 1), prior)
        })
        .collect()
}

/// One step of the stacked linear system `Z' = (W ⊗ I_m) Z + G`, with `Z`
/// and `G` stacked agent by agent.
pub fn matrix_form_step(
    stacked_z: &DVector<f64>,
    w: &DMatrix<f64>,
    stacked_g: &DVector<f64>,
    m: usize,
) -> DVector<f64> {
    let lifted = w.kronecker(&DMatrix::<f64>::identity(m, m));
    lifted * stacked_z + stacked_g
}

/// Stacks per-agent vectors into one column.
pub fn stack(rows: &[&[f64]]) -> DVector<f64> {
    DVector::from_iterator(
        rows.iter().map(|r| r.len()).sum(),
        rows.iter().flat_map(|r| r.iter().copied()),
    )
}
