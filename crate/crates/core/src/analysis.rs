//! Limits and rates: the asymptotic average log-likelihood `Φ_∞`, the average
//! discrimination `D(θ_j)`, the exponential rate bound with its confidence,
//! slope estimation on simulated trajectories, and the consensus diameter.

use std::fmt;

use serde::Serialize;

use crate::distributed::NetworkState;
use crate::model::{
    check_global_identifiability, expected_log_likelihood, log_likelihood_variance, order_states,
    ObservationModel,
};
use crate::simplex::{check_dims, log_sum_exp, Belief};
use crate::{Error, Result};

/// Floor applied to `1 - μ` before taking its log.
pub const GAP_FLOOR: f64 = 1e-300;

/// Minimum number of points in a slope-fit window.
pub const MIN_FIT_POINTS: usize = 10;

/// `(1/n) Σ_k E*[ln l_k(s_k | θ)]`, the limit of every agent's `Φ_{i,t}`.
pub fn phi_infinity(model: &ObservationModel) -> Vec<f64> {
    let n = model.num_agents() as f64;
    let mut out = vec![0.0; model.num_states()];
    for agent in model.agents() {
        for (o, v) in out
            .iter_mut()
            .zip(expected_log_likelihood(agent, model.true_state()))
        {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= n);
    out
}

fn row_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            acc += pi * (pi / qi).ln();
        }
    }
    acc.max(0.0)
}

/// Average over agents of `KL(l_i(.|θ*) || l_i(.|θ_j))`. State `j` is an
/// index into the model's own labelling.
pub fn discrimination(model: &ObservationModel, j: usize) -> f64 {
    let truth = model.true_state();
    let total: f64 = model
        .agents()
        .iter()
        .map(|a| row_kl(a.row(truth), a.row(j)))
        .sum();
    total / model.num_agents() as f64
}

pub fn discrimination_vector(model: &ObservationModel) -> Vec<f64> {
    (0..model.num_states())
        .map(|j| discrimination(model, j))
        .collect()
}

/// The state with the second largest aggregate expected log-likelihood.
pub fn second_likeliest_state(model: &ObservationModel) -> usize {
    order_states(model)[1]
}

/// `max_j Σ_k Var[ln l_k(s_k | θ_j)]` under the true signal distribution.
pub fn variance_constant(model: &ObservationModel) -> f64 {
    let mut sums = vec![0.0; model.num_states()];
    for agent in model.agents() {
        for (s, v) in sums
            .iter_mut()
            .zip(log_likelihood_variance(agent, model.true_state()))
        {
            *s += v;
        }
    }
    sums.into_iter().fold(0.0, f64::max)
}

/// High-probability bound `|μ_{i,t}(θ*) - 1| <= K exp((-D2 + ε) t)`.
///
/// The bound is assembled from two deviations of size `ε/2` each, so the
/// Chebyshev confidence uses `ε/2`: `δ(t) = 4C / ((ε/2)² t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateBound {
    pub d2: f64,
    pub k: f64,
    pub c: f64,
    pub epsilon: f64,
}

impl RateBound {
    pub fn delta_at(&self, t: u64) -> f64 {
        if t == 0 {
            return 1.0;
        }
        let half = self.epsilon / 2.0;
        (4.0 * self.c / (half * half * t as f64)).clamp(0.0, 1.0)
    }

    pub fn confidence_at(&self, t: u64) -> f64 {
        1.0 - self.delta_at(t)
    }

    /// `ln K + (-D2 + ε) t`.
    pub fn log_bound_at(&self, t: u64) -> f64 {
        self.k.ln() + (self.epsilon - self.d2) * t as f64
    }

    pub fn bound_at(&self, t: u64) -> f64 {
        self.log_bound_at(t).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RateBoundWarning {
    /// `ε >= D2`: the bound does not decay.
    Vacuous { epsilon: f64, d2: f64 },
}

impl fmt::Display for RateBoundWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateBoundWarning::Vacuous { epsilon, d2 } => {
                write!(
                    f,
                    "slack {epsilon} is not below D(theta_2) = {d2}; the bound is vacuous"
                )
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateBoundOutcome {
    pub bound: RateBound,
    pub warning: Option<RateBoundWarning>,
}

/// `K = (m-1) max_k μ_0(θ_k) / μ_0(θ*)`.
pub fn prior_constant(prior: &Belief, true_state: usize) -> Result<f64> {
    let anchor = prior[true_state];
    if !(anchor > 0.0) {
        return Err(Error::NonPositive(true_state));
    }
    let max = prior.weights().iter().copied().fold(0.0, f64::max);
    Ok((prior.len() - 1) as f64 * max / anchor)
}

pub fn rate_bound(
    model: &ObservationModel,
    prior: &Belief,
    epsilon: f64,
) -> Result<RateBoundOutcome> {
    check_dims(model.num_states(), prior.len())?;
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::InvalidSlack(epsilon));
    }
    if !check_global_identifiability(model).identifiable {
        return Err(Error::NotIdentifiable);
    }
    let d2 = discrimination(model, second_likeliest_state(model));
    let bound = RateBound {
        d2,
        k: prior_constant(prior, model.true_state())?,
        c: variance_constant(model),
        epsilon,
    };
    let warning = (epsilon >= d2).then_some(RateBoundWarning::Vacuous { epsilon, d2 });
    Ok(RateBoundOutcome { bound, warning })
}

/// `ln(1 - μ(θ*)) = ln Σ_{j != *} μ_j`, from log-beliefs.
pub fn log_gap(log_belief: &[f64], true_state: usize) -> f64 {
    let others: Vec<f64> = log_belief
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != true_state)
        .map(|(_, &v)| v)
        .collect();
    log_sum_exp(&others)
}

/// `ln max(1 - μ, GAP_FLOOR)` for beliefs already in probability space.
pub fn floored_log_gap(mu_true: f64) -> f64 {
    (1.0 - mu_true).max(GAP_FLOOR).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeEstimate {
    pub slope: f64,
    pub intercept: f64,
    pub window_start: u64,
    pub window_end: u64,
    pub r_squared: f64,
}

/// Least-squares slope of `(slot, log_gap)` points inside `[start, end]`.
///
/// `points` must be sorted by slot. The window must lie within the covered
/// slots and contain at least [`MIN_FIT_POINTS`] points.
pub fn empirical_rate(points: &[(u64, f64)], start: u64, end: u64) -> Result<SlopeEstimate> {
    let invalid = |reason: &str| Error::InvalidWindow {
        start,
        end,
        reason: reason.into(),
    };
    if start > end {
        return Err(invalid("start after end"));
    }
    let (first, last) = match (points.first(), points.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(invalid("trajectory is empty")),
    };
    if start < first || end > last {
        return Err(invalid(&format!(
            "outside trajectory slots {first}..={last}"
        )));
    }
    let window: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, _)| (start..=end).contains(t))
        .map(|&(t, y)| (t as f64, y))
        .collect();
    if window.len() < MIN_FIT_POINTS {
        return Err(invalid(&format!(
            "{} points, need at least {MIN_FIT_POINTS}",
            window.len()
        )));
    }
    if let Some((t, _)) = window.iter().find(|(_, y)| !y.is_finite()) {
        return Err(invalid(&format!("non-finite log gap at slot {t}")));
    }
    let floor = GAP_FLOOR.ln();
    if window.iter().all(|&(_, y)| y <= floor) {
        return Err(Error::SaturatedWindow);
    }
    let count = window.len() as f64;
    let mean_t = window.iter().map(|p| p.0).sum::<f64>() / count;
    let mean_y = window.iter().map(|p| p.1).sum::<f64>() / count;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for &(t, y) in &window {
        let (dt, dy) = (t - mean_t, y - mean_y);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    if stt == 0.0 {
        return Err(invalid("all points share one slot"));
    }
    let slope = sty / stt;
    let intercept = mean_y - slope * mean_t;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sty * sty / (stt * syy)).clamp(0.0, 1.0)
    };
    Ok(SlopeEstimate {
        slope,
        intercept,
        window_start: start,
        window_end: end,
        r_squared,
    })
}

/// Largest pairwise total-variation distance between agents' beliefs.
pub fn consensus_diameter(beliefs: &[Belief]) -> f64 {
    let mut worst: f64 = 0.0;
    for (a, x) in beliefs.iter().enumerate() {
        for y in &beliefs[a + 1..] {
            worst = worst.max(x.total_variation(y).unwrap_or(1.0));
        }
    }
    worst
}

pub fn consensus_diameter_of(state: &NetworkState) -> f64 {
    consensus_diameter(&state.beliefs())
}

/// Median of a sample; the mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}
