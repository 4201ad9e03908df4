//! Experiment descriptions, the validation pipeline, and seeded multi-trial
//! execution.
//!
//! A scenario file is JSON:
//!
//! ```json
//! {
//!   "states": ["theta_1", "theta_2", "theta_3"],
//!   "agents": [{ "likelihoods": [[0.7, 0.3], [0.7, 0.3], [0.3, 0.7]] },
//!              { "likelihoods": [[0.7, 0.3], [0.3, 0.7], [0.7, 0.3]] }],
//!   "true_state": "theta_1",
//!   "edges": [[0, 1]],
//!   "horizon": 4000, "trials": 100, "seed": 7,
//!   "alpha": 1.0, "snapshot_cadence": 100, "oracle_replay": false
//! }
//! ```
//!
//! Optional keys: `contact` (row-stochastic matrix, default uniform over
//! neighbours), `priors` (one vector per agent, default uniform), `epsilon`
//! (rate-bound slack, default half of `D(θ_2)`), `checkpoints` (slots for the
//! rate-bound check, default a quarter, half and all of the horizon) and
//! `rate_window` (inclusive slot range for slope fits, default the second
//! half of the horizon). Agents and edges are indexed from 0.

use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    consensus_diameter, discrimination, discrimination_vector, empirical_rate, log_gap, median,
    phi_infinity, rate_bound, second_likeliest_state, variance_constant, RateBound, SlopeEstimate,
};
use crate::centralized::{run_centralized, CentralizedState, StepSchedule};
use crate::distributed::{is_snapshot_slot, run_distributed_observed, RunOptions, SlotRecord};
use crate::model::{
    canonical_model, check_global_identifiability, observationally_equivalent_set, order_states,
    validate_model, AgentLikelihood, Identifiability, ModelViolation, ObservationModel, StateSpace,
};
use crate::network::{
    uniform_neighbor_contact, validate_network, ContactMatrix, Graph, NetworkReport,
};
use crate::seed::{trial_rng, Stream};
use crate::simplex::{log_proximal_projection, Belief};
use crate::{Error, Result};

/// Belief level that counts as having learned the true state.
pub const LEARNED_THRESHOLD: f64 = 0.99;

/// Consensus diameter below which agents count as agreeing.
pub const CONSENSUS_THRESHOLD: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid key {key}: {message}")]
    Schema { key: String, message: String },
}

impl ScenarioError {
    fn schema(key: impl Into<String>, err: impl std::fmt::Display) -> Self {
        ScenarioError::Schema {
            key: key.into(),
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StateRef {
    Index(usize),
    Label(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub likelihoods: Vec<Vec<f64>>,
}

/// On-disk form of a [`Scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub states: Vec<String>,
    pub agents: Vec<AgentSpec>,
    pub true_state: StateRef,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contact: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<Vec<f64>>>,
    pub horizon: u64,
    pub trials: u64,
    pub seed: u64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_cadence")]
    pub snapshot_cadence: u64,
    #[serde(default)]
    pub oracle_replay: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_window: Option<[u64; 2]>,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_cadence() -> u64 {
    1
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub model: ObservationModel,
    pub graph: Graph,
    pub contact: Option<ContactMatrix>,
    pub priors: Vec<Belief>,
    pub horizon: u64,
    pub trials: u64,
    pub master_seed: u64,
    /// Constant step size; 1 reproduces Bayesian updating.
    pub alpha: f64,
    pub snapshot_cadence: u64,
    pub oracle_replay: bool,
    pub epsilon: Option<f64>,
    pub checkpoints: Option<Vec<u64>>,
    pub rate_window: Option<(u64, u64)>,
}

impl Scenario {
    pub fn from_json_str(text: &str) -> std::result::Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn from_path(path: impl AsRef<Path>) -> std::result::Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json_str(&text)
    }

    pub fn from_file(file: ScenarioFile) -> std::result::Result<Self, ScenarioError> {
        let states =
            StateSpace::new(file.states).map_err(|e| ScenarioError::schema("states", e))?;
        let m = states.len();
        let agents = file
            .agents
            .into_iter()
            .enumerate()
            .map(|(i, a)| {
                let key = format!("agents[{i}].likelihoods");
                if a.likelihoods.len() != m {
                    return Err(ScenarioError::schema(
                        key,
                        format!("{} rows for {m} states", a.likelihoods.len()),
                    ));
                }
                AgentLikelihood::new(a.likelihoods).map_err(|e| ScenarioError::schema(key, e))
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let true_state = match &file.true_state {
            StateRef::Index(k) => *k,
            StateRef::Label(l) => states.index_of(l).ok_or_else(|| {
                ScenarioError::schema("true_state", format!("unknown state {l:?}"))
            })?,
        };
        let model = ObservationModel::new(states, agents, true_state)
            .map_err(|e| ScenarioError::schema("agents", e))?;
        let n = model.num_agents();
        let graph = Graph::new(n, file.edges.iter().map(|e| (e[0], e[1])))
            .map_err(|e| ScenarioError::schema("edges", e))?;
        let contact = file
            .contact
            .map(|rows| {
                if rows.len() != n {
                    return Err(ScenarioError::schema(
                        "contact",
                        format!("{} rows for {n} agents", rows.len()),
                    ));
                }
                ContactMatrix::from_rows(&rows).map_err(|e| ScenarioError::schema("contact", e))
            })
            .transpose()?;
        let priors = match file.priors {
            None => vec![Belief::uniform(m); n],
            Some(rows) => {
                if rows.len() != n {
                    return Err(ScenarioError::schema(
                        "priors",
                        format!("{} priors for {n} agents", rows.len()),
                    ));
                }
                rows.into_iter()
                    .enumerate()
                    .map(|(i, r)| {
                        if r.len() != m {
                            return Err(ScenarioError::schema(
                                format!("priors[{i}]"),
                                format!("{} weights for {m} states", r.len()),
                            ));
                        }
                        Belief::new(r).map_err(|e| ScenarioError::schema(format!("priors[{i}]"), e))
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()?
            }
        };
        if !(file.alpha > 0.0) || !file.alpha.is_finite() {
            return Err(ScenarioError::schema(
                "alpha",
                Error::InvalidStepSize(file.alpha),
            ));
        }
        Ok(Self {
            model,
            graph,
            contact,
            priors,
            horizon: file.horizon,
            trials: file.trials,
            master_seed: file.seed,
            alpha: file.alpha,
            snapshot_cadence: file.snapshot_cadence,
            oracle_replay: file.oracle_replay,
            epsilon: file.epsilon,
            checkpoints: file.checkpoints,
            rate_window: file.rate_window.map(|w| (w[0], w[1])),
        })
    }

    pub fn to_file(&self) -> ScenarioFile {
        let uniform = Belief::uniform(self.model.num_states());
        ScenarioFile {
            states: self.model.states().labels().to_vec(),
            agents: self
                .model
                .agents()
                .iter()
                .map(|a| AgentSpec {
                    likelihoods: a.table().to_vec(),
                })
                .collect(),
            true_state: StateRef::Label(
                self.model.states().labels()[self.model.true_state()].clone(),
            ),
            edges: self.graph.edges().iter().map(|&(a, b)| [a, b]).collect(),
            contact: self.contact.as_ref().map(ContactMatrix::rows),
            priors: if self.priors.iter().all(|p| *p == uniform) {
                None
            } else {
                Some(self.priors.iter().map(|p| p.weights().to_vec()).collect())
            },
            horizon: self.horizon,
            trials: self.trials,
            seed: self.master_seed,
            alpha: self.alpha,
            snapshot_cadence: self.snapshot_cadence,
            oracle_replay: self.oracle_replay,
            epsilon: self.epsilon,
            checkpoints: self.checkpoints.clone(),
            rate_window: self.rate_window.map(|(a, b)| [a, b]),
        }
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("scenario serializes") + "\n"
    }

    pub fn schedule(&self) -> StepSchedule {
        StepSchedule::Constant(self.alpha)
    }

    /// Explicit contact matrix, else uniform over neighbours (zero rows for
    /// isolated agents).
    pub fn effective_contact(&self) -> ContactMatrix {
        self.contact
            .clone()
            .unwrap_or_else(|| ContactMatrix::uniform_allowing_isolated(&self.graph))
    }

    /// Rate-bound checkpoints, sorted, deduplicated and within `1..=horizon`.
    pub fn checkpoint_slots(&self) -> Vec<u64> {
        let raw = self
            .checkpoints
            .clone()
            .unwrap_or_else(|| vec![self.horizon / 4, self.horizon / 2, self.horizon]);
        raw.into_iter()
            .filter(|&t| t >= 1 && t <= self.horizon)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn fit_window(&self) -> (u64, u64) {
        self.rate_window.unwrap_or((self.horizon / 2, self.horizon))
    }
}

/// Two agents joined by a single edge, the canonical three-state model,
/// uniform priors and unit step size.
pub fn canonical_scenario() -> Scenario {
    Scenario {
        model: canonical_model(),
        graph: Graph::path(2),
        contact: None,
        priors: vec![Belief::uniform(3); 2],
        horizon: 4000,
        trials: 100,
        master_seed: 7,
        alpha: 1.0,
        snapshot_cadence: 100,
        oracle_replay: false,
        epsilon: None,
        checkpoints: None,
        rate_window: None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub model_violations: Vec<ModelViolation>,
    pub network: NetworkReport,
    /// Problems with the scenario's own settings (priors, horizon, ...).
    pub setting_violations: Vec<String>,
    pub identifiability: Identifiability,
    pub equivalent_sets: Vec<BTreeSet<usize>>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn violations(&self) -> Vec<String> {
        self.model_violations
            .iter()
            .map(ToString::to_string)
            .chain(self.network.violations.iter().map(ToString::to_string))
            .chain(self.setting_violations.iter().cloned())
            .collect()
    }

    pub fn is_ok(&self) -> bool {
        self.model_violations.is_empty()
            && self.network.is_ok()
            && self.setting_violations.is_empty()
    }
}

/// Runs every check. A true state that is not globally identifiable is only a
/// warning, so negative-control scenarios can still be run.
pub fn validate_scenario(s: &Scenario) -> ValidationReport {
    let model_violations = validate_model(&s.model);
    let mut setting_violations = Vec::new();
    let contact = match &s.contact {
        Some(c) => c.clone(),
        None => match uniform_neighbor_contact(&s.graph) {
            Ok(c) => c,
            Err(e) => {
                setting_violations.push(e.to_string());
                ContactMatrix::uniform_allowing_isolated(&s.graph)
            }
        },
    };
    let network = validate_network(&s.graph, &contact);
    for (i, p) in s.priors.iter().enumerate() {
        if !p.is_strictly_positive() {
            setting_violations.push(format!("prior of agent {i} has a zero entry"));
        }
    }
    if s.horizon == 0 {
        setting_violations.push("horizon must be at least 1".into());
    }
    if s.trials == 0 {
        setting_violations.push("trials must be at least 1".into());
    }
    if s.snapshot_cadence == 0 {
        setting_violations.push("snapshot_cadence must be at least 1".into());
    }
    if let Some(eps) = s.epsilon {
        if !(eps > 0.0) || !eps.is_finite() {
            setting_violations.push(format!("epsilon must be positive, got {eps}"));
        }
    }
    let (ws, we) = s.fit_window();
    if ws > we || we > s.horizon {
        setting_violations.push(format!(
            "rate_window [{ws}, {we}] must lie within [0, {}]",
            s.horizon
        ));
    }
    let identifiability = check_global_identifiability(&s.model);
    let equivalent_sets = (0..s.model.num_agents())
        .map(|i| observationally_equivalent_set(&s.model, i))
        .collect();
    let mut warnings = Vec::new();
    if !identifiability.identifiable {
        let labels = s.model.states().labels();
        let names: Vec<&str> = identifiability
            .witness
            .iter()
            .map(|&j| labels[j].as_str())
            .collect();
        warnings.push(format!(
            "not globally identifiable: also equivalent {names:?}"
        ));
    }
    ValidationReport {
        model_violations,
        network,
        setting_violations,
        identifiability,
        equivalent_sets,
        warnings,
    }
}

/// Quantities that do not depend on the trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub scenario: Scenario,
    pub contact: ContactMatrix,
    pub schedule: StepSchedule,
    pub options: RunOptions,
    pub checkpoints: Vec<u64>,
    pub fit_window: (u64, u64),
    /// Per-agent rate bound; `None` when the true state is not identifiable.
    pub bounds: Vec<Option<RateBound>>,
    pub epsilon: Option<f64>,
    pub warnings: Vec<String>,
}

impl ExperimentPlan {
    pub fn new(s: &Scenario) -> Result<Self> {
        if s.horizon == 0 || s.trials == 0 || s.snapshot_cadence == 0 {
            return Err(Error::InvalidScenario(
                "horizon, trials and snapshot_cadence must be positive".into(),
            ));
        }
        let violations = validate_model(&s.model);
        if let Some(v) = violations.first() {
            return Err(Error::InvalidScenario(v.to_string()));
        }
        let mut warnings = Vec::new();
        let identifiable = check_global_identifiability(&s.model).identifiable;
        let d2 = identifiable.then(|| discrimination(&s.model, second_likeliest_state(&s.model)));
        let epsilon = s.epsilon.or(d2.map(|d| d / 2.0));
        let bounds = s
            .priors
            .iter()
            .map(|prior| match (identifiable, epsilon) {
                (true, Some(eps)) => {
                    let out = rate_bound(&s.model, prior, eps)?;
                    if let Some(w) = out.warning {
                        warnings.push(w.to_string());
                    }
                    Ok(Some(out.bound))
                }
                _ => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        warnings.dedup();
        Ok(Self {
            scenario: s.clone(),
            contact: s.effective_contact(),
            schedule: s.schedule(),
            options: RunOptions {
                horizon: s.horizon,
                snapshot_cadence: s.snapshot_cadence,
                record_log: s.oracle_replay,
            },
            checkpoints: s.checkpoint_slots(),
            fit_window: s.fit_window(),
            bounds,
            epsilon,
            warnings,
        })
    }

    fn log_gaps(&self, z_of: impl Fn(usize) -> Vec<f64>, slot: u64) -> Vec<f64> {
        let s = &self.scenario;
        let alpha = self.schedule.alpha(slot.saturating_sub(1));
        (0..s.model.num_agents())
            .map(|i| {
                let z = crate::simplex::LogWeights::new(z_of(i))
                    .expect("dual accumulators stay finite");
                let logs =
                    log_proximal_projection(&z, alpha, &s.priors[i]).expect("priors validated");
                log_gap(&logs, s.model.true_state())
            })
            .collect()
    }

    pub fn run_trial(&self, trial_index: u64) -> Result<TrialResult> {
        let s = &self.scenario;
        let n = s.model.num_agents();
        let (ws, we) = self.fit_window;
        let mut rng = trial_rng(s.master_seed, trial_index, Stream::Simulation);
        let mut gap_series: Vec<Vec<(u64, f64)>> = vec![Vec::new(); n];
        let mut snapshot_gaps: Vec<Vec<f64>> = Vec::new();
        let mut checkpoint_gaps: Vec<(u64, Vec<f64>)> = Vec::new();
        let trajectory = run_distributed_observed(
            &s.model,
            &self.contact,
            &self.schedule,
            &s.priors,
            &self.options,
            &mut rng,
            |state| {
                let t = state.slot;
                let snap = is_snapshot_slot(t, &self.options);
                let check = self.checkpoints.binary_search(&t).is_ok();
                let fit = (ws..=we).contains(&t);
                if !(snap || check || fit) {
                    return;
                }
                let gaps = self.log_gaps(|i| state.agents[i].z.values().to_vec(), t);
                if fit {
                    for (series, &g) in gap_series.iter_mut().zip(&gaps) {
                        series.push((t, g));
                    }
                }
                if check {
                    checkpoint_gaps.push((t, gaps.clone()));
                }
                if snap {
                    snapshot_gaps.push(gaps);
                }
            },
        )?;
        let snapshots: Vec<TrialSnapshot> = trajectory
            .snapshots
            .into_iter()
            .zip(snapshot_gaps)
            .map(|(snap, log_gaps)| TrialSnapshot {
                slot: snap.slot,
                consensus_diameter: consensus_diameter(&snap.beliefs),
                beliefs: snap.beliefs,
                log_gaps,
            })
            .collect();
        let checkpoints = checkpoint_gaps
            .into_iter()
            .map(|(slot, log_gaps)| {
                let within = log_gaps
                    .iter()
                    .zip(&self.bounds)
                    .map(|(g, b)| b.map(|b| *g <= b.log_bound_at(slot)))
                    .collect();
                CheckpointResult {
                    slot,
                    log_gaps,
                    within,
                }
            })
            .collect();
        let slopes = gap_series
            .iter()
            .map(|pts| empirical_rate(pts, ws, we).ok())
            .collect();
        let last = snapshots
            .last()
            .expect("horizon snapshot is always recorded");
        Ok(TrialResult {
            trial_index,
            final_beliefs: last.beliefs.clone(),
            final_log_gaps: last.log_gaps.clone(),
            final_consensus_diameter: last.consensus_diameter,
            snapshots,
            checkpoints,
            slopes,
            event_log: trajectory.final_state.event_log,
        })
    }

    /// Centralized dual averaging on trial `trial_index`'s own stream, with
    /// agent 0's prior, snapshotted at the scenario cadence.
    pub fn run_centralized_trial(&self, trial_index: u64) -> Result<Vec<CentralizedState>> {
        let s = &self.scenario;
        let mut rng = trial_rng(s.master_seed, trial_index, Stream::Centralized);
        let full = run_centralized(&s.model, s.horizon, &self.schedule, &s.priors[0], &mut rng)?;
        Ok(full
            .into_iter()
            .filter(|st| is_snapshot_slot(st.slot, &self.options))
            .collect())
    }

    /// Runs the listed trials (in parallel on the current rayon pool) and
    /// returns them ordered by trial index.
    pub fn run_trials(&self, indices: &[u64]) -> Result<Vec<TrialResult>> {
        let mut out = indices
            .par_iter()
            .map(|&k| self.run_trial(k))
            .collect::<Result<Vec<_>>>()?;
        out.sort_by_key(|t| t.trial_index);
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialSnapshot {
    pub slot: u64,
    pub beliefs: Vec<Belief>,
    /// `ln(1 - μ_i(θ*))` per agent.
    pub log_gaps: Vec<f64>,
    pub consensus_diameter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointResult {
    pub slot: u64,
    pub log_gaps: Vec<f64>,
    /// Whether each agent is within its rate bound (`None` without a bound).
    pub within: Vec<Option<bool>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial_index: u64,
    pub final_beliefs: Vec<Belief>,
    pub final_log_gaps: Vec<f64>,
    pub final_consensus_diameter: f64,
    pub snapshots: Vec<TrialSnapshot>,
    pub checkpoints: Vec<CheckpointResult>,
    pub slopes: Vec<Option<SlopeEstimate>>,
    pub event_log: Option<Vec<SlotRecord>>,
}

pub fn run_trial(s: &Scenario, trial_index: u64) -> Result<TrialResult> {
    ExperimentPlan::new(s)?.run_trial(trial_index)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioMeta {
    pub agents: usize,
    pub states: Vec<String>,
    pub true_state: String,
    pub edges: Vec<[usize; 2]>,
    pub horizon: u64,
    pub trials: u64,
    pub seed: u64,
    pub alpha: f64,
    pub snapshot_cadence: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostics {
    pub identifiable: bool,
    pub equivalent_sets: Vec<Vec<String>>,
    pub global_equivalent_set: Vec<String>,
    pub lambda2: Option<f64>,
    pub state_order: Vec<String>,
    pub phi_infinity: Vec<f64>,
    pub discrimination: Vec<f64>,
    pub variance_constant: f64,
    pub d2: Option<f64>,
    pub epsilon: Option<f64>,
    pub k: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

impl Diagnostics {
    pub fn compute(
        s: &Scenario,
        plan_warnings: &[String],
        epsilon: Option<f64>,
        bounds: &[Option<RateBound>],
    ) -> Self {
        let report = validate_scenario(s);
        let labels = s.model.states().labels();
        let names =
            |set: &BTreeSet<usize>| set.iter().map(|&j| labels[j].clone()).collect::<Vec<_>>();
        let mut warnings = report.warnings.clone();
        warnings.extend(plan_warnings.iter().cloned());
        Diagnostics {
            identifiable: report.identifiability.identifiable,
            equivalent_sets: report.equivalent_sets.iter().map(names).collect(),
            global_equivalent_set: names(&report.identifiability.equivalent),
            lambda2: report.network.lambda2,
            state_order: order_states(&s.model)
                .into_iter()
                .map(|j| labels[j].clone())
                .collect(),
            phi_infinity: phi_infinity(&s.model),
            discrimination: discrimination_vector(&s.model),
            variance_constant: variance_constant(&s.model),
            d2: report
                .identifiability
                .identifiable
                .then(|| discrimination(&s.model, second_likeliest_state(&s.model))),
            epsilon,
            k: bounds.iter().map(|b| b.map(|b| b.k)).collect(),
            warnings,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckpointSummary {
    pub slot: u64,
    pub delta: Vec<Option<f64>>,
    /// `1 - δ(ε, t)` per agent: the fraction of trials the bound promises.
    pub promised_fraction: Vec<Option<f64>>,
    /// Observed fraction of trials within the bound, per agent.
    pub within_fraction: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeSummary {
    pub window_start: u64,
    pub window_end: u64,
    /// `-D(θ_2)`, the rate the slopes should approach.
    pub target_slope: Option<f64>,
    pub median_slope: Vec<Option<f64>>,
    pub fitted_trials: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalSummary {
    pub mean_true_belief: Vec<f64>,
    pub std_error_true_belief: Vec<f64>,
    /// Fraction of trials in which every agent's belief in the true state
    /// exceeds [`LEARNED_THRESHOLD`].
    pub learned_fraction: f64,
    /// Fraction of trials in which every agent's argmax is the true state.
    pub argmax_fraction: f64,
    /// Fraction of trials with consensus diameter below [`CONSENSUS_THRESHOLD`].
    pub consensus_fraction: f64,
    pub mean_consensus_diameter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub trial: u64,
    pub final_beliefs: Vec<Vec<f64>>,
    pub final_log_gaps: Vec<f64>,
    pub final_consensus_diameter: f64,
    pub slopes: Vec<Option<f64>>,
    pub within_bound: Vec<Vec<Option<bool>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scenario: ScenarioMeta,
    pub diagnostics: Diagnostics,
    pub checkpoints: Vec<CheckpointSummary>,
    pub slopes: SlopeSummary,
    #[serde(rename = "final")]
    pub final_stats: FinalSummary,
    pub trials: Vec<TrialSummary>,
}

fn mean_and_std_error(values: &[f64]) -> (f64, f64) {
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
    (mean, (var / count).sqrt())
}

fn fraction(hits: usize, total: usize) -> f64 {
    hits as f64 / total as f64
}

/// Folds trial results, which must be sorted by trial index, into a summary.
pub fn summarize(plan: &ExperimentPlan, trials: &[TrialResult]) -> Summary {
    let s = &plan.scenario;
    let n = s.model.num_agents();
    let truth = s.model.true_state();
    let labels = s.model.states().labels();
    let count = trials.len();

    let checkpoints = plan
        .checkpoints
        .iter()
        .enumerate()
        .map(|(c, &slot)| {
            let within_fraction = (0..n)
                .map(|i| {
                    plan.bounds[i]?;
                    let hits = trials
                        .iter()
                        .filter(|t| t.checkpoints[c].within[i] == Some(true))
                        .count();
                    Some(fraction(hits, count))
                })
                .collect();
            CheckpointSummary {
                slot,
                delta: plan
                    .bounds
                    .iter()
                    .map(|b| b.map(|b| b.delta_at(slot)))
                    .collect(),
                promised_fraction: plan
                    .bounds
                    .iter()
                    .map(|b| b.map(|b| b.confidence_at(slot)))
                    .collect(),
                within_fraction,
            }
        })
        .collect();

    let (ws, we) = plan.fit_window;
    let per_agent_slopes: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            trials
                .iter()
                .filter_map(|t| t.slopes[i].map(|e| e.slope))
                .collect()
        })
        .collect();
    let slopes = SlopeSummary {
        window_start: ws,
        window_end: we,
        target_slope: plan.bounds.first().copied().flatten().map(|b| -b.d2),
        median_slope: per_agent_slopes.iter().map(|v| median(v)).collect(),
        fitted_trials: per_agent_slopes.iter().map(Vec::len).collect(),
    };

    let mut mean_true_belief = Vec::with_capacity(n);
    let mut std_error_true_belief = Vec::with_capacity(n);
    for i in 0..n {
        let vals: Vec<f64> = trials.iter().map(|t| t.final_beliefs[i][truth]).collect();
        let (mean, se) = mean_and_std_error(&vals);
        mean_true_belief.push(mean);
        std_error_true_belief.push(se);
    }
    let learned = trials
        .iter()
        .filter(|t| t.final_beliefs.iter().all(|b| b[truth] > LEARNED_THRESHOLD))
        .count();
    let argmax = trials
        .iter()
        .filter(|t| t.final_beliefs.iter().all(|b| b.argmax() == truth))
        .count();
    let agree = trials
        .iter()
        .filter(|t| t.final_consensus_diameter < CONSENSUS_THRESHOLD)
        .count();
    let final_stats = FinalSummary {
        mean_true_belief,
        std_error_true_belief,
        learned_fraction: fraction(learned, count),
        argmax_fraction: fraction(argmax, count),
        consensus_fraction: fraction(agree, count),
        mean_consensus_diameter: trials
            .iter()
            .map(|t| t.final_consensus_diameter)
            .sum::<f64>()
            / count as f64,
    };

    let trial_summaries = trials
        .iter()
        .map(|t| TrialSummary {
            trial: t.trial_index,
            final_beliefs: t
                .final_beliefs
                .iter()
                .map(|b| b.weights().to_vec())
                .collect(),
            final_log_gaps: t.final_log_gaps.clone(),
            final_consensus_diameter: t.final_consensus_diameter,
            slopes: t.slopes.iter().map(|e| e.map(|e| e.slope)).collect(),
            within_bound: t.checkpoints.iter().map(|c| c.within.clone()).collect(),
        })
        .collect();

    Summary {
        scenario: ScenarioMeta {
            agents: n,
            states: labels.to_vec(),
            true_state: labels[truth].clone(),
            edges: s.graph.edges().iter().map(|&(a, b)| [a, b]).collect(),
            horizon: s.horizon,
            trials: count as u64,
            seed: s.master_seed,
            alpha: s.alpha,
            snapshot_cadence: s.snapshot_cadence,
        },
        diagnostics: Diagnostics::compute(s, &plan.warnings, plan.epsilon, &plan.bounds),
        checkpoints,
        slopes,
        final_stats,
        trials: trial_summaries,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub plan: ExperimentPlan,
    pub trials: Vec<TrialResult>,
    pub summary: Summary,
}

/// Runs every trial and merges them in trial-index order.
pub fn run_experiment(s: &Scenario) -> Result<ExperimentReport> {
    let plan = ExperimentPlan::new(s)?;
    let indices: Vec<u64> = (0..s.trials).collect();
    let trials = plan.run_trials(&indices)?;
    let summary = summarize(&plan, &trials);
    Ok(ExperimentReport {
        plan,
        trials,
        summary,
    })
}
