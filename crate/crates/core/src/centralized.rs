//! Centralized dual averaging with the KL proximal function, and the Bayes
//! recursion it reduces to under a unit step size.

use rand::Rng;

use crate::model::{ObservationModel, SignalProfile, SignalSampler};
use crate::simplex::{check_dims, proximal_projection, Belief, LogWeights};
use crate::{Error, Result};

/// Positive, non-increasing step sizes `alpha_0, alpha_1, ...`.
#[derive(Debug, Clone, PartialEq)]
pub enum StepSchedule {
    Constant(f64),
    /// Explicit prefix; the last value repeats forever.
    Sequence(Vec<f64>),
}

impl StepSchedule {
    /// `alpha_t = 1` for all `t`, the setting under which dual averaging is
    /// exactly Bayesian updating.
    pub fn unit() -> Self {
        StepSchedule::Constant(1.0)
    }

    pub fn constant(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidStepSize(alpha));
        }
        Ok(StepSchedule::Constant(alpha))
    }

    pub fn sequence(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSchedule("empty sequence".into()));
        }
        if let Some(&bad) = values.iter().find(|a| !(**a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidStepSize(bad));
        }
        if values.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::InvalidSchedule(
                "step sizes must be non-increasing".into(),
            ));
        }
        Ok(StepSchedule::Sequence(values))
    }

    pub fn alpha(&self, t: u64) -> f64 {
        match self {
            StepSchedule::Constant(a) => *a,
            StepSchedule::Sequence(v) => v[(t as usize).min(v.len() - 1)],
        }
    }
}

impl Default for StepSchedule {
    fn default() -> Self {
        Self::unit()
    }
}

/// Iterate of centralized dual averaging after `slot` observations.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedState {
    pub z: LogWeights,
    pub belief: Belief,
    pub slot: u64,
}

impl CentralizedState {
    /// `z_0 = 0`; the belief is the prior.
    pub fn initial(prior: &Belief) -> Self {
        Self {
            z: LogWeights::zeros(prior.len()),
            belief: prior.clone(),
            slot: 0,
        }
    }
}

/// Sum of the agents' log-likelihood vectors at their observed symbols.
/// Agents observe independently, so the joint table is never needed.
pub fn joint_gradient(model: &ObservationModel, profile: &SignalProfile) -> Result<LogWeights> {
    check_dims(model.num_agents(), profile.len())?;
    let mut g = vec![0.0; model.num_states()];
    for (agent, &symbol) in model.agents().iter().zip(&profile.signals) {
        if symbol >= agent.alphabet_size() {
            return Err(Error::SymbolOutOfRange {
                symbol,
                alphabet: agent.alphabet_size(),
            });
        }
        for (acc, v) in g.iter_mut().zip(agent.log_column(symbol)) {
            *acc += v;
        }
    }
    LogWeights::new(g)
}

/// Posterior `belief ⊙ exp(ll)`, normalized, computed in log space.
///
/// Zero entries are allowed (they stay zero); a belief that has underflowed
/// on some states after many updates can therefore keep being updated.
pub fn bayes_update(belief: &Belief, joint_log_likelihood: &LogWeights) -> Result<Belief> {
    check_dims(belief.len(), joint_log_likelihood.len())?;
    if !belief.weights().iter().any(|&w| w > 0.0) {
        return Err(Error::InvalidBelief("belief has no positive entry".into()));
    }
    let scores: Vec<f64> = belief
        .ln()
        .iter()
        .zip(joint_log_likelihood.values())
        .map(|(lb, ll)| lb + ll)
        .collect();
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= sum);
    Ok(Belief::from_normalized(out))
}

/// `z' = z + g`, `belief' = Π(z', alpha_slot)`.
pub fn dual_averaging_step(
    state: &CentralizedState,
    g: &LogWeights,
    schedule: &StepSchedule,
    prior: &Belief,
) -> Result<CentralizedState> {
    let z = state.z.add(g)?;
    let belief = proximal_projection(&z, schedule.alpha(state.slot), prior)?;
    Ok(CentralizedState {
        z,
        belief,
        slot: state.slot + 1,
    })
}

/// Dual-averaging trajectory over given signal profiles, including slot 0.
pub fn dual_averaging_path(
    model: &ObservationModel,
    profiles: &[SignalProfile],
    schedule: &StepSchedule,
    prior: &Belief,
) -> Result<Vec<CentralizedState>> {
    let mut out = Vec::with_capacity(profiles.len() + 1);
    let mut state = CentralizedState::initial(prior);
    for profile in profiles {
        let next = dual_averaging_step(&state, &joint_gradient(model, profile)?, schedule, prior)?;
        out.push(std::mem::replace(&mut state, next));
    }
    out.push(state);
    Ok(out)
}

/// Sequential Bayes posteriors over given signal profiles, including the prior.
pub fn bayes_path(
    model: &ObservationModel,
    profiles: &[SignalProfile],
    prior: &Belief,
) -> Result<Vec<Belief>> {
    let mut out = Vec::with_capacity(profiles.len() + 1);
    out.push(prior.clone());
    for profile in profiles {
        let next = bayes_update(out.last().unwrap(), &joint_gradient(model, profile)?)?;
        out.push(next);
    }
    Ok(out)
}

/// Samples `horizon` signal profiles and runs dual averaging over them.
pub fn run_centralized<R: Rng + ?Sized>(
    model: &ObservationModel,
    horizon: u64,
    schedule: &StepSchedule,
    prior: &Belief,
    rng: &mut R,
) -> Result<Vec<CentralizedState>> {
    if horizon == 0 {
        return Err(Error::InvalidScenario("horizon must be at least 1".into()));
    }
    let sampler = SignalSampler::new(model)?;
    let profiles: Vec<SignalProfile> = (0..horizon).map(|_| sampler.sample(rng)).collect();
    dual_averaging_path(model, &profiles, schedule, prior)
}
