//! Cross-checks of the gossip recursion against the stacked matrix form and
//! the closed-form Gibbs belief, on small instances.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::centralized::StepSchedule;
use crate::distributed::{
    closed_form_beliefs_all, closed_form_phi_all, gossip_step, matrix_form_step, stack,
    NetworkState, SlotRecord,
};
use crate::model::{AgentLikelihood, ObservationModel, SignalProfile, SignalSampler, StateSpace};
use crate::network::{
    gossip_matrix, uniform_neighbor_contact, ContactMatrix, GossipEvent, GossipSampler, Graph,
};
use crate::simplex::{proximal_projection, Belief, LogWeights};
use crate::{Error, Result};

/// Agreement required between the three computations.
pub const ORACLE_TOL: f64 = 1e-10;

pub const MAX_AGENTS: usize = 8;
pub const MAX_STATES: usize = 6;
pub const MAX_SLOTS: u64 = 200;

/// Signature of a single gossip slot, so a faulty implementation can be
/// substituted to exercise the checker itself.
pub trait StepFn:
    Fn(
    &NetworkState,
    Option<&GossipEvent>,
    &SignalProfile,
    &ObservationModel,
    &StepSchedule,
    &[Belief],
) -> Result<NetworkState>
{
}

impl<F> StepFn for F where
    F: Fn(
        &NetworkState,
        Option<&GossipEvent>,
        &SignalProfile,
        &ObservationModel,
        &StepSchedule,
        &[Belief],
    ) -> Result<NetworkState>
{
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleInstance {
    pub model: ObservationModel,
    pub contact: ContactMatrix,
    pub priors: Vec<Belief>,
    pub schedule: StepSchedule,
}

impl OracleInstance {
    /// Random connected instance with `2..=max_agents` agents and
    /// `2..=max_states` states: random strictly positive likelihood tables
    /// over 2 to 4 symbols, random strictly positive priors, uniform
    /// neighbour contact on a random spanning tree plus extra edges.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, max_agents: usize, max_states: usize) -> Self {
        let n = rng.random_range(2..=max_agents.max(2));
        let m = rng.random_range(2..=max_states.max(2));
        let agents = (0..n)
            .map(|_| {
                let symbols = rng.random_range(2..=4);
                let table = (0..m)
                    .map(|_| random_simplex_point(rng, symbols, 0.05))
                    .collect();
                AgentLikelihood::new(table).expect("shape is consistent")
            })
            .collect();
        let model = ObservationModel::new(
            StateSpace::numbered(m).expect("m >= 2"),
            agents,
            rng.random_range(0..m),
        )
        .expect("dimensions are consistent");
        let graph = random_connected_graph(rng, n, 0.3);
        let contact =
            uniform_neighbor_contact(&graph).expect("connected graph has no isolated node");
        let priors = (0..n)
            .map(|_| Belief::new(random_simplex_point(rng, m, 0.05)).expect("normalized"))
            .collect();
        Self {
            model,
            contact,
            priors,
            schedule: StepSchedule::unit(),
        }
    }
}

fn random_simplex_point<R: Rng + ?Sized>(rng: &mut R, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| floor + rng.random::<f64>()).collect();
    let sum: f64 = raw.iter().sum();
    let mut out: Vec<f64> = raw.iter().map(|x| x / sum).collect();
    let head: f64 = out[..len - 1].iter().sum();
    out[len - 1] = 1.0 - head;
    out
}

/// Random spanning tree (random attachment order) plus each remaining pair
/// with probability `extra`.
pub fn random_connected_graph<R: Rng + ?Sized>(rng: &mut R, n: usize, extra: f64) -> Graph {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for k in 1..n {
        let parent = order[rng.random_range(0..k)];
        edges.push((order[k], parent));
    }
    for a in 0..n {
        for b in a + 1..n {
            if rng.random::<f64>() < extra {
                edges.push((a, b));
            }
        }
    }
    Graph::new(n, edges).expect("edges are in range and loop-free")
}

/// Draws `t_max` slots of gossip events and signals.
pub fn sample_log<R: Rng + ?Sized>(
    instance: &OracleInstance,
    t_max: u64,
    rng: &mut R,
) -> Result<Vec<SlotRecord>> {
    let signals = SignalSampler::new(&instance.model)?;
    let events = GossipSampler::new(&instance.contact);
    Ok((0..t_max)
        .map(|slot| {
            let event = events.sample(slot, rng);
            SlotRecord {
                slot,
                event,
                signals: signals.sample(rng),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct OracleReport {
    /// Largest belief gap between recursion and closed form.
    pub recursion_vs_closed_form: f64,
    /// Largest belief or accumulator gap between recursion and matrix form.
    pub recursion_vs_matrix: f64,
    /// Largest belief gap between matrix form and closed form.
    pub matrix_vs_closed_form: f64,
    /// Largest gap between `z_i / t` and the closed-form `Φ_i`.
    pub phi_deviation: f64,
}

impl OracleReport {
    pub fn max_deviation(&self) -> f64 {
        [
            self.recursion_vs_closed_form,
            self.recursion_vs_matrix,
            self.matrix_vs_closed_form,
            self.phi_deviation,
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }

    pub fn passes(&self, tol: f64) -> bool {
        // NaN must fail, hence the negated comparison.
        !(self.max_deviation() >= tol)
    }

    pub fn merge(&self, other: &OracleReport) -> OracleReport {
        OracleReport {
            recursion_vs_closed_form: self
                .recursion_vs_closed_form
                .max(other.recursion_vs_closed_form),
            recursion_vs_matrix: self.recursion_vs_matrix.max(other.recursion_vs_matrix),
            matrix_vs_closed_form: self.matrix_vs_closed_form.max(other.matrix_vs_closed_form),
            phi_deviation: self.phi_deviation.max(other.phi_deviation),
        }
    }
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, |acc, d| if d.is_nan() { f64::NAN } else { acc.max(d) })
}

fn max_belief_gap(a: &[Belief], b: &[Belief]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| max_gap(x.weights(), y.weights()))
        .fold(0.0, f64::max)
}

/// Runs `step` over a freshly sampled log and compares it, slot by slot,
/// with the matrix form and the closed form.
pub fn check_instance_with<R: Rng + ?Sized, F: StepFn>(
    instance: &OracleInstance,
    t_max: u64,
    rng: &mut R,
    step: &F,
) -> Result<OracleReport> {
    if t_max == 0 {
        return Err(Error::ZeroSlot);
    }
    let log = sample_log(instance, t_max, rng)?;
    check_log_with(instance, &log, step)
}

pub fn check_instance<R: Rng + ?Sized>(
    instance: &OracleInstance,
    t_max: u64,
    rng: &mut R,
) -> Result<OracleReport> {
    check_instance_with(instance, t_max, rng, &gossip_step)
}

/// Compares the three computations over a given log.
pub fn check_log_with<F: StepFn>(
    instance: &OracleInstance,
    log: &[SlotRecord],
    step: &F,
) -> Result<OracleReport> {
    let OracleInstance {
        model,
        priors,
        schedule,
        ..
    } = instance;
    let n = model.num_agents();
    let m = model.num_states();
    let mut report = OracleReport::default();
    let mut state = NetworkState::initial(priors)?;
    let mut stacked = stack(&vec![&vec![0.0; m][..]; n]);
    let identity = DMatrix::<f64>::identity(n, n);
    for (idx, record) in log.iter().enumerate() {
        let t = idx as u64 + 1;
        state = step(
            &state,
            record.event.as_ref(),
            &record.signals,
            model,
            schedule,
            priors,
        )?;
        if state.slot != t {
            return Err(Error::SlotMismatch {
                expected: t,
                got: state.slot,
            });
        }

        let w = record
            .event
            .as_ref()
            .map_or_else(|| identity.clone(), |e| gossip_matrix(e, n));
        let grads: Vec<&[f64]> = (0..n)
            .map(|k| model.agent(k).log_column(record.signals.signals[k]))
            .collect();
        stacked = matrix_form_step(&stacked, &w, &stack(&grads), m);
        let alpha = schedule.alpha(t - 1);
        let matrix_beliefs = (0..n)
            .map(|i| {
                let z = LogWeights::new(stacked.rows(i * m, m).iter().copied().collect())?;
                proximal_projection(&z, alpha, &priors[i])
            })
            .collect::<Result<Vec<_>>>()?;
        let closed = closed_form_beliefs_all(log, priors, model, schedule, t)?;
        let phis = closed_form_phi_all(log, model, t)?;

        let recursion = state.beliefs();
        for (i, agent) in state.agents.iter().enumerate() {
            let zi: Vec<f64> = stacked.rows(i * m, m).iter().copied().collect();
            report.recursion_vs_matrix = report
                .recursion_vs_matrix
                .max(max_gap(agent.z.values(), &zi));
            let phi: Vec<f64> = agent.z.values().iter().map(|z| z / t as f64).collect();
            report.phi_deviation = report.phi_deviation.max(max_gap(&phi, &phis[i]));
        }
        report.recursion_vs_matrix = report
            .recursion_vs_matrix
            .max(max_belief_gap(&recursion, &matrix_beliefs));
        report.recursion_vs_closed_form = report
            .recursion_vs_closed_form
            .max(max_belief_gap(&recursion, &closed));
        report.matrix_vs_closed_form = report
            .matrix_vs_closed_form
            .max(max_belief_gap(&matrix_beliefs, &closed));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn random_instances_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let inst = OracleInstance::random(&mut rng, 5, 4);
            let report = check_instance(&inst, 30, &mut rng).unwrap();
            assert!(report.passes(ORACLE_TOL), "{report:?}");
        }
    }

    #[test]
    fn corrupted_step_is_caught() {
        // Averages with weight 0.6 / 0.4 instead of a half each.
        let bad = |s: &NetworkState,
                   e: Option<&GossipEvent>,
                   p: &SignalProfile,
                   model: &ObservationModel,
                   sch: &StepSchedule,
                   priors: &[Belief]|
         -> Result<NetworkState> {
            let mut next = gossip_step(s, None, p, model, sch, priors)?;
            if let Some(e) = e {
                let zi = s.agents[e.i].z.values().to_vec();
                let zj = s.agents[e.j].z.values().to_vec();
                for k in 0..zi.len() {
                    let gi = next.agents[e.i].z.values()[k] - zi[k];
                    let gj = next.agents[e.j].z.values()[k] - zj[k];
                    next.agents[e.i].z = {
                        let mut v = next.agents[e.i].z.values().to_vec();
                        v[k] = 0.6 * zi[k] + 0.4 * zj[k] + gi;
                        LogWeights::new(v)?
                    };
                    next.agents[e.j].z = {
                        let mut v = next.agents[e.j].z.values().to_vec();
                        v[k] = 0.4 * zi[k] + 0.6 * zj[k] + gj;
                        LogWeights::new(v)?
                    };
                }
            }
            Ok(next)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inst = OracleInstance::random(&mut rng, 4, 3);
        let report = check_instance_with(&inst, 20, &mut rng, &bad).unwrap();
        assert!(!report.passes(ORACLE_TOL));
    }

    #[test]
    fn random_graphs_are_connected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in 2..10 {
            assert!(random_connected_graph(&mut rng, n, 0.2).is_connected());
        }
    }

    #[test]
    fn zero_slots_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let inst = OracleInstance::random(&mut rng, 3, 3);
        assert_eq!(check_instance(&inst, 0, &mut rng), Err(Error::ZeroSlot));
    }
}
