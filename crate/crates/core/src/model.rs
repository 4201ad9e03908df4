//! Observation model: candidate states, per-agent likelihood tables over
//! finite signal alphabets, signal sampling, and identifiability.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::simplex::LogWeights;
use crate::{Error, Result, EQUIVALENCE_TOL, SIMPLEX_TOL};

/// Labels of the `m >= 2` candidate states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSpace {
    labels: Vec<String>,
}

impl StateSpace {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::InvalidStateSpace(format!(
                "need at least 2 states, got {}",
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(Error::InvalidStateSpace(format!(
                    "duplicate state label {label:?}"
                )));
            }
        }
        Ok(Self { labels })
    }

    /// States labelled `theta_1`, ..., `theta_m`.
    pub fn numbered(m: usize) -> Result<Self> {
        Self::new((1..=m).map(|j| format!("theta_{j}")).collect())
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }
}

/// One agent's signal distributions: row `j` is `l_i(. | theta_j)`.
///
/// Construction only checks the shape. Positivity and stochasticity are
/// reported by [`validate_model`] so that invalid files can be diagnosed in
/// full rather than failing on the first problem.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLikelihood {
    table: Vec<Vec<f64>>,
    // log_columns[s][j] = ln l(s | theta_j)
    log_columns: Vec<Vec<f64>>,
}

impl AgentLikelihood {
    pub fn new(table: Vec<Vec<f64>>) -> Result<Self> {
        let alphabet = table.first().map(Vec::len).unwrap_or(0);
        if table.is_empty() || alphabet == 0 {
            return Err(Error::InvalidTable(
                "table must have at least one row and one symbol".into(),
            ));
        }
        if let Some(row) = table.iter().position(|r| r.len() != alphabet) {
            return Err(Error::InvalidTable(format!(
                "row {row} has {} symbols, expected {alphabet}",
                table[row].len()
            )));
        }
        let log_columns = (0..alphabet)
            .map(|s| table.iter().map(|row| row[s].ln()).collect())
            .collect();
        Ok(Self { table, log_columns })
    }

    pub fn alphabet_size(&self) -> usize {
        self.table[0].len()
    }

    pub fn num_states(&self) -> usize {
        self.table.len()
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn row(&self, state: usize) -> &[f64] {
        &self.table[state]
    }

    /// `[ln l(symbol | theta_1), ..., ln l(symbol | theta_m)]` without
    /// validation, for hot loops over a validated model.
    pub fn log_column(&self, symbol: usize) -> &[f64] {
        &self.log_columns[symbol]
    }
}

/// Stochastic gradient of an agent's log-likelihood at an observed symbol.
pub fn log_likelihood_vector(agent: &AgentLikelihood, symbol: usize) -> Result<LogWeights> {
    if symbol >= agent.alphabet_size() {
        return Err(Error::SymbolOutOfRange {
            symbol,
            alphabet: agent.alphabet_size(),
        });
    }
    LogWeights::new(agent.log_column(symbol).to_vec())
}

/// `E_{s ~ l(.|theta*)}[ln l(s | theta_j)]` for every state `j`.
pub fn expected_log_likelihood(agent: &AgentLikelihood, true_state: usize) -> Vec<f64> {
    let truth = agent.row(true_state);
    (0..agent.num_states())
        .map(|j| {
            truth
                .iter()
                .zip(agent.row(j))
                .map(|(p, q)| p * q.ln())
                .sum()
        })
        .collect()
}

/// Variance of `ln l(s | theta_j)` under `s ~ l(.|theta*)`, per state.
pub fn log_likelihood_variance(agent: &AgentLikelihood, true_state: usize) -> Vec<f64> {
    let truth = agent.row(true_state);
    let means = expected_log_likelihood(agent, true_state);
    (0..agent.num_states())
        .map(|j| {
            truth
                .iter()
                .zip(agent.row(j))
                .map(|(p, q)| p * (q.ln() - means[j]).powi(2))
                .sum()
        })
        .collect()
}

/// States, agents and the true state.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationModel {
    states: StateSpace,
    agents: Vec<AgentLikelihood>,
    true_state: usize,
}

impl ObservationModel {
    /// Checks dimensions only; see [`validate_model`] for the value checks.
    pub fn new(
        states: StateSpace,
        agents: Vec<AgentLikelihood>,
        true_state: usize,
    ) -> Result<Self> {
        let m = states.len();
        if agents.is_empty() {
            return Err(Error::InvalidTable("model needs at least one agent".into()));
        }
        for agent in &agents {
            if agent.num_states() != m {
                return Err(Error::DimensionMismatch {
                    expected: m,
                    got: agent.num_states(),
                });
            }
        }
        if true_state >= m {
            return Err(Error::StateOutOfRange {
                index: true_state,
                m,
            });
        }
        Ok(Self {
            states,
            agents,
            true_state,
        })
    }

    pub fn states(&self) -> &StateSpace {
        &self.states
    }

    pub fn agents(&self) -> &[AgentLikelihood] {
        &self.agents
    }

    pub fn agent(&self, i: usize) -> &AgentLikelihood {
        &self.agents[i]
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn true_state(&self) -> usize {
        self.true_state
    }

    /// Same tables with the true state moved to `true_state`.
    pub fn with_true_state(&self, true_state: usize) -> Result<Self> {
        Self::new(self.states.clone(), self.agents.clone(), true_state)
    }

    /// Keeps only the listed agents, in the given order.
    pub fn restrict_agents(&self, keep: &[usize]) -> Result<Self> {
        let agents = keep.iter().map(|&i| self.agents[i].clone()).collect();
        Self::new(self.states.clone(), agents, self.true_state)
    }
}

/// Two agents, three states, binary signals. Agent 1 cannot tell `theta_1`
/// from `theta_2`, agent 2 cannot tell `theta_1` from `theta_3`; together
/// they identify `theta_1`, the true state.
pub fn canonical_model() -> ObservationModel {
    let hi = vec![0.7, 0.3];
    let lo = vec![0.3, 0.7];
    let agent1 = AgentLikelihood::new(vec![hi.clone(), hi.clone(), lo.clone()]).unwrap();
    let agent2 = AgentLikelihood::new(vec![hi.clone(), lo, hi]).unwrap();
    ObservationModel::new(StateSpace::numbered(3).unwrap(), vec![agent1, agent2], 0).unwrap()
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelViolation {
    NonPositive {
        agent: usize,
        state: usize,
        symbol: usize,
        value: f64,
    },
    NonFinite {
        agent: usize,
        state: usize,
        symbol: usize,
    },
    RowNotStochastic {
        agent: usize,
        state: usize,
        sum: f64,
    },
}

impl fmt::Display for ModelViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModelViolation::NonPositive { agent, state, symbol, value } => write!(
                f,
                "non-positive likelihood at (agent {agent}, state {state}, symbol {symbol}): {value}"
            ),
            ModelViolation::NonFinite { agent, state, symbol } => {
                write!(f, "non-finite likelihood at (agent {agent}, state {state}, symbol {symbol})")
            }
            ModelViolation::RowNotStochastic { agent, state, sum } => {
                write!(f, "row not stochastic at (agent {agent}, state {state}): sums to {sum}")
            }
        }
    }
}

/// Every positivity and stochasticity violation, with its location.
pub fn validate_model(model: &ObservationModel) -> Vec<ModelViolation> {
    let mut out = Vec::new();
    for (agent, lik) in model.agents().iter().enumerate() {
        for (state, row) in lik.table().iter().enumerate() {
            for (symbol, &value) in row.iter().enumerate() {
                if !value.is_finite() {
                    out.push(ModelViolation::NonFinite {
                        agent,
                        state,
                        symbol,
                    });
                } else if value <= 0.0 {
                    out.push(ModelViolation::NonPositive {
                        agent,
                        state,
                        symbol,
                        value,
                    });
                }
            }
            let sum: f64 = row.iter().sum();
            if !((sum - 1.0).abs() <= SIMPLEX_TOL) {
                out.push(ModelViolation::RowNotStochastic { agent, state, sum });
            }
        }
    }
    out
}

/// One signal per agent for a single slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignalProfile {
    pub signals: Vec<usize>,
}

impl SignalProfile {
    pub fn new(signals: Vec<usize>) -> Self {
        Self { signals }
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }
}

/// Draws signal profiles under the true state. Build once per model; the
/// per-agent samplers are precomputed.
#[derive(Debug, Clone)]
pub struct SignalSampler {
    per_agent: Vec<WeightedIndex<f64>>,
}

impl SignalSampler {
    pub fn new(model: &ObservationModel) -> Result<Self> {
        let per_agent = model
            .agents()
            .iter()
            .enumerate()
            .map(|(i, a)| {
                WeightedIndex::new(a.row(model.true_state()).iter().copied())
                    .map_err(|e| Error::InvalidTable(format!("agent {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_agent })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SignalProfile {
        SignalProfile::new(self.per_agent.iter().map(|d| d.sample(rng)).collect())
    }
}

/// One-shot convenience over [`SignalSampler`].
pub fn sample_signal_profile<R: Rng + ?Sized>(
    model: &ObservationModel,
    rng: &mut R,
) -> Result<SignalProfile> {
    Ok(SignalSampler::new(model)?.sample(rng))
}

/// States agent `agent` cannot distinguish from the true state.
pub fn observationally_equivalent_set(model: &ObservationModel, agent: usize) -> BTreeSet<usize> {
    let lik = model.agent(agent);
    let truth = lik.row(model.true_state());
    (0..model.num_states())
        .filter(|&j| {
            lik.row(j)
                .iter()
                .zip(truth)
                .all(|(a, b)| (a - b).abs() <= EQUIVALENCE_TOL)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identifiability {
    pub identifiable: bool,
    /// Intersection of all agents' equivalent sets.
    pub equivalent: BTreeSet<usize>,
    /// States other than the truth that survive the intersection.
    pub witness: Vec<usize>,
}

pub fn check_global_identifiability(model: &ObservationModel) -> Identifiability {
    let mut equivalent = observationally_equivalent_set(model, 0);
    for i in 1..model.num_agents() {
        let next = observationally_equivalent_set(model, i);
        equivalent = equivalent.intersection(&next).copied().collect();
    }
    let witness: Vec<usize> = equivalent
        .iter()
        .copied()
        .filter(|&j| j != model.true_state())
        .collect();
    Identifiability {
        identifiable: witness.is_empty(),
        equivalent,
        witness,
    }
}

/// `Σ_i E*[ln l_i(. | theta_j)]` per state.
pub fn aggregate_expected_log_likelihood(model: &ObservationModel) -> Vec<f64> {
    let mut total = vec![0.0; model.num_states()];
    for agent in model.agents() {
        for (t, v) in total
            .iter_mut()
            .zip(expected_log_likelihood(agent, model.true_state()))
        {
            *t += v;
        }
    }
    total
}

/// State indices by descending aggregate expected log-likelihood, ties kept
/// in index order.
pub fn order_states(model: &ObservationModel) -> Vec<usize> {
    let scores = aggregate_expected_log_likelihood(model);
    let mut order: Vec<usize> = (0..model.num_states()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simplex::kl_divergence_raw;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single_agent(rows: Vec<Vec<f64>>, truth: usize) -> ObservationModel {
        let m = rows.len();
        ObservationModel::new(
            StateSpace::numbered(m).unwrap(),
            vec![AgentLikelihood::new(rows).unwrap()],
            truth,
        )
        .unwrap()
    }

    #[test]
    fn state_space_rules() {
        assert!(StateSpace::new(vec!["a".into()]).is_err());
        assert!(StateSpace::new(vec!["a".into(), "a".into()]).is_err());
        let s = StateSpace::new(vec!["a".into(), "b".into()]).unwrap();
        assert_eq!(s.index_of("b"), Some(1));
    }

    #[test]
    fn validate_flags_zero_entry_and_bad_row() {
        let model = single_agent(vec![vec![1.0, 0.0], vec![0.5, 0.5]], 0);
        let v = validate_model(&model);
        assert_eq!(v.len(), 1);
        assert!(v[0]
            .to_string()
            .starts_with("non-positive likelihood at (agent 0, state 0, symbol 1)"));

        let model = single_agent(vec![vec![0.6, 0.3], vec![0.5, 0.5]], 0);
        let v = validate_model(&model);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("row not stochastic"));
    }

    #[test]
    fn canonical_model_is_valid() {
        assert!(validate_model(&canonical_model()).is_empty());
    }

    #[test]
    fn degenerate_alphabet_always_yields_symbol_zero() {
        let model = single_agent(vec![vec![1.0], vec![1.0]], 0);
        let sampler = SignalSampler::new(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(sampler.sample(&mut rng).signals, vec![0]);
        }
    }

    #[test]
    fn bernoulli_frequency() {
        let model = single_agent(vec![vec![0.7, 0.3], vec![0.3, 0.7]], 0);
        let sampler = SignalSampler::new(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let draws = 100_000;
        let zeros = (0..draws)
            .filter(|_| sampler.sample(&mut rng).signals[0] == 0)
            .count();
        let freq = zeros as f64 / draws as f64;
        assert!((freq - 0.7).abs() < 0.01, "freq {freq}");
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let model = canonical_model();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|_| sample_signal_profile(&model, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn log_likelihood_vector_examples() {
        let uniform = AgentLikelihood::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        assert_eq!(
            log_likelihood_vector(&uniform, 0).unwrap().values(),
            &[0.5f64.ln(), 0.5f64.ln()]
        );

        let bern = AgentLikelihood::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
        let g = log_likelihood_vector(&bern, 0).unwrap();
        assert!((g[0] + 0.356675).abs() < 1e-6);
        assert!((g[1] + 1.203973).abs() < 1e-6);
        for (j, v) in g.values().iter().enumerate() {
            assert!((v.exp() - bern.row(j)[0]).abs() < 1e-15);
        }
        assert_eq!(
            log_likelihood_vector(&bern, 2),
            Err(Error::SymbolOutOfRange {
                symbol: 2,
                alphabet: 2
            })
        );
    }

    #[test]
    fn expected_log_likelihood_examples() {
        let flat = AgentLikelihood::new(vec![vec![0.2, 0.8]; 3]).unwrap();
        let e = expected_log_likelihood(&flat, 1);
        assert!(e.iter().all(|v| (v - e[0]).abs() < 1e-15));

        let bern = AgentLikelihood::new(vec![vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
        let e = expected_log_likelihood(&bern, 0);
        let hand = 0.7 * 0.7f64.ln() + 0.3 * 0.3f64.ln();
        assert!((e[0] - hand).abs() < 1e-15);
        assert!((e[0] + 0.610864).abs() < 1e-6);
        assert!(e[0] >= e[1]);
    }

    #[test]
    fn expected_gap_equals_kl_of_rows() {
        let model = canonical_model();
        for agent in model.agents() {
            let e = expected_log_likelihood(agent, 0);
            for j in 0..3 {
                let kl = kl_divergence_raw(agent.row(0), agent.row(j)).unwrap();
                assert!((e[0] - e[j] - kl).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn equivalent_sets() {
        let flat = single_agent(vec![vec![0.5, 0.5]; 3], 0);
        assert_eq!(
            observationally_equivalent_set(&flat, 0),
            BTreeSet::from([0, 1, 2])
        );

        let model = canonical_model();
        assert_eq!(
            observationally_equivalent_set(&model, 0),
            BTreeSet::from([0, 1])
        );
        assert_eq!(
            observationally_equivalent_set(&model, 1),
            BTreeSet::from([0, 2])
        );

        let sharp = single_agent(vec![vec![0.1, 0.9], vec![0.5, 0.5], vec![0.9, 0.1]], 1);
        assert_eq!(
            observationally_equivalent_set(&sharp, 0),
            BTreeSet::from([1])
        );
    }

    #[test]
    fn equivalent_set_ignores_symbol_order() {
        let a = single_agent(
            vec![
                vec![0.2, 0.3, 0.5],
                vec![0.2, 0.3, 0.5],
                vec![0.5, 0.3, 0.2],
            ],
            0,
        );
        let b = single_agent(
            vec![
                vec![0.5, 0.2, 0.3],
                vec![0.5, 0.2, 0.3],
                vec![0.2, 0.5, 0.3],
            ],
            0,
        );
        assert_eq!(
            observationally_equivalent_set(&a, 0),
            observationally_equivalent_set(&b, 0)
        );
    }

    #[test]
    fn identifiability_examples() {
        let id = check_global_identifiability(&canonical_model());
        assert!(id.identifiable);
        assert_eq!(id.equivalent, BTreeSet::from([0]));

        let flat = single_agent(vec![vec![0.5, 0.5]; 2], 0);
        let id = check_global_identifiability(&flat);
        assert!(!id.identifiable);
        assert_eq!(id.witness, vec![1]);

        let only_first = canonical_model().restrict_agents(&[0, 0]).unwrap();
        assert!(!check_global_identifiability(&only_first).identifiable);
    }

    #[test]
    fn order_states_examples() {
        let model = canonical_model();
        let order = order_states(&model);
        assert_eq!(order[0], 0);
        let scores = aggregate_expected_log_likelihood(&model);
        assert!(scores[order[0]] > scores[order[1]]);

        let flat = single_agent(vec![vec![0.5, 0.5]; 4], 2);
        assert_eq!(order_states(&flat), vec![0, 1, 2, 3]);
    }

    #[test]
    fn order_states_is_equivariant() {
        // Relabel states by the permutation [2, 0, 1]: new state k is old perm[k].
        let model = canonical_model();
        let perm = [2usize, 0, 1];
        let agents: Vec<AgentLikelihood> = model
            .agents()
            .iter()
            .map(|a| {
                AgentLikelihood::new(perm.iter().map(|&old| a.row(old).to_vec()).collect()).unwrap()
            })
            .collect();
        let truth = perm
            .iter()
            .position(|&old| old == model.true_state())
            .unwrap();
        let permuted =
            ObservationModel::new(StateSpace::numbered(3).unwrap(), agents, truth).unwrap();
        let mapped: Vec<usize> = order_states(&permuted).iter().map(|&k| perm[k]).collect();
        let original = order_states(&model);
        assert_eq!(mapped[0], original[0]);
        let s = aggregate_expected_log_likelihood(&model);
        for w in mapped.windows(2) {
            assert!(s[w[0]] >= s[w[1]]);
        }
    }
}
