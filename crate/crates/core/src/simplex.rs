//! Probability-simplex geometry: beliefs, KL divergence and the KL-proximal
//! projection that maps a dual (log-likelihood) vector back to a belief.
//!
//! Everything that touches likelihoods stays in log space. Dual accumulators
//! grow linearly with the number of observations, so exponentiating them
//! directly would overflow after a few hundred slots.

use serde::{Deserialize, Serialize};

use crate::{Error, Result, SIMPLEX_TOL};

/// A probability vector over the `m` candidate states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Belief(Vec<f64>);

impl Belief {
    /// Validates nonnegativity, finiteness and unit sum (within [`SIMPLEX_TOL`]).
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidBelief("empty weight vector".into()));
        }
        for (idx, &w) in weights.iter().enumerate() {
            if !w.is_finite() {
                return Err(Error::NonFinite(idx));
            }
            if w < 0.0 {
                return Err(Error::InvalidBelief(format!(
                    "negative weight {w} at index {idx}"
                )));
            }
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(Error::InvalidBelief(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "uniform belief needs at least one state");
        Self(vec![1.0 / m as f64; m])
    }

    /// Point mass on state `k`.
    pub fn dirac(m: usize, k: usize) -> Self {
        assert!(k < m, "dirac index {k} out of range for {m} states");
        let mut w = vec![0.0; m];
        w[k] = 1.0;
        Self(w)
    }

    /// Wraps weights produced by an internal normalization.
    pub(crate) fn from_normalized(weights: Vec<f64>) -> Self {
        debug_assert!(
            (weights.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL * weights.len() as f64
        );
        Self(weights)
    }

    pub fn weights(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.0.iter().all(|&w| w > 0.0)
    }

    /// Index of the largest weight; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (j, &w) in self.0.iter().enumerate() {
            if w > self.0[best] {
                best = j;
            }
        }
        best
    }

    /// Natural logarithm of each weight (`-inf` for zero weights).
    pub fn ln(&self) -> Vec<f64> {
        self.0.iter().map(|w| w.ln()).collect()
    }

    /// Total-variation distance `(1/2) Σ |a_j - b_j|`.
    pub fn total_variation(&self, other: &Belief) -> Result<f64> {
        check_dims(self.len(), other.len())?;
        Ok(0.5
            * self
                .0
                .iter()
                .zip(&other.0)
                .map(|(a, b)| (a - b).abs())
                .sum::<f64>())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl TryFrom<Vec<f64>> for Belief {
    type Error = Error;

    fn try_from(weights: Vec<f64>) -> Result<Self> {
        Self::new(weights)
    }
}

impl From<Belief> for Vec<f64> {
    fn from(b: Belief) -> Self {
        b.0
    }
}

impl std::ops::Index<usize> for Belief {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

/// A finite real vector on the natural-log scale (nats).
#[derive(Debug, Clone, PartialEq)]
pub struct LogWeights(Vec<f64>);

impl LogWeights {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(idx));
        }
        Ok(Self(values))
    }

    pub fn zeros(m: usize) -> Self {
        Self(vec![0.0; m])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entrywise sum.
    pub fn add(&self, other: &LogWeights) -> Result<LogWeights> {
        check_dims(self.len(), other.len())?;
        Ok(Self(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn scale(&self, factor: f64) -> Result<LogWeights> {
        LogWeights::new(self.0.iter().map(|v| v * factor).collect())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Index<usize> for LogWeights {
    type Output = f64;

    fn index(&self, j: usize) -> &f64 {
        &self.0[j]
    }
}

pub(crate) fn check_dims(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Relative entropy `Σ x_j ln(x_j / q_j)` with `0 ln 0 = 0`.
pub fn kl_divergence(x: &Belief, q: &Belief) -> Result<f64> {
    check_dims(x.len(), q.len())?;
    kl_divergence_raw(x.weights(), q.weights())
}

/// Same as [`kl_divergence`] on raw slices (likelihood rows, for example).
pub fn kl_divergence_raw(x: &[f64], q: &[f64]) -> Result<f64> {
    check_dims(x.len(), q.len())?;
    if let Some(idx) = q.iter().position(|&v| !(v > 0.0)) {
        return Err(Error::NonPositive(idx));
    }
    let mut acc = 0.0;
    for (&xi, &qi) in x.iter().zip(q) {
        if xi > 0.0 {
            acc += xi * (xi / qi).ln();
        }
    }
    // Rounding can leave a tiny negative residue when x == q.
    Ok(acc.max(0.0))
}

/// `ln Σ exp(v_j)`, stable for large magnitudes. Entries equal to `-inf`
/// contribute nothing; an all-`-inf` input yields `-inf`.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    max + sum.ln()
}

/// Log-softmax: `v_j - ln Σ exp(v)`. Tolerates `-inf` entries as long as one
/// entry is finite.
pub(crate) fn log_normalize(values: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(values);
    values.iter().map(|v| v - lse).collect()
}

fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for w in &mut out {
        *w /= sum;
    }
    out
}

/// Numerically stable softmax of a finite log-weight vector.
pub fn normalize_log_weights(lw: &LogWeights) -> Belief {
    Belief::from_normalized(softmax(lw.values()))
}

fn prox_log_scores(z: &LogWeights, alpha: f64, prior: &Belief) -> Result<Vec<f64>> {
    check_dims(prior.len(), z.len())?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidStepSize(alpha));
    }
    if let Some(idx) = prior.weights().iter().position(|&p| !(p > 0.0)) {
        return Err(Error::NonPositive(idx));
    }
    if let Some(idx) = z.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(idx));
    }
    Ok(prior
        .weights()
        .iter()
        .zip(z.values())
        .map(|(p, zj)| p.ln() + alpha * zj)
        .collect())
}

/// Minimizer of `-<z, x> + (1/alpha) KL(x || prior)` over the simplex.
///
/// The minimizer is the Gibbs vector `prior ⊙ exp(alpha z)`, normalized.
/// Mathematically every entry is positive; entries whose score trails the
/// leader by more than ~745 nats underflow to zero in double precision.
pub fn proximal_projection(z: &LogWeights, alpha: f64, prior: &Belief) -> Result<Belief> {
    let scores = prox_log_scores(z, alpha, prior)?;
    Ok(Belief::from_normalized(softmax(&scores)))
}

/// Natural log of [`proximal_projection`], computed without underflow.
pub fn log_proximal_projection(z: &LogWeights, alpha: f64, prior: &Belief) -> Result<Vec<f64>> {
    let scores = prox_log_scores(z, alpha, prior)?;
    Ok(log_normalize(&scores))
}

/// Value of the proximal objective `-<z, x> + (1/alpha) KL(x || prior)`.
pub fn proximal_objective(x: &Belief, z: &LogWeights, alpha: f64, prior: &Belief) -> Result<f64> {
    check_dims(x.len(), z.len())?;
    let inner: f64 = x.weights().iter().zip(z.values()).map(|(a, b)| a * b).sum();
    Ok(-inner + kl_divergence(x, prior)? / alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(w: &[f64]) -> Belief {
        Belief::new(w.to_vec()).unwrap()
    }

    fn lw(v: &[f64]) -> LogWeights {
        LogWeights::new(v.to_vec()).unwrap()
    }

    #[test]
    fn kl_identity_is_zero() {
        assert_eq!(
            kl_divergence(&b(&[0.5, 0.5]), &b(&[0.5, 0.5])).unwrap(),
            0.0
        );
    }

    #[test]
    fn kl_point_mass_against_uniform() {
        let d = kl_divergence(&b(&[1.0, 0.0]), &b(&[0.5, 0.5])).unwrap();
        assert!((d - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn kl_hand_value() {
        // 0.5 ln 2 + 0.5 ln(2/3)
        let d = kl_divergence(&b(&[0.5, 0.5]), &b(&[0.25, 0.75])).unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((d - expected).abs() < 1e-15);
        assert!((d - 0.143841).abs() < 5e-7);
    }

    #[test]
    fn kl_rejects_zero_reference_and_mismatch() {
        assert_eq!(
            kl_divergence(&b(&[0.5, 0.5]), &b(&[1.0, 0.0])),
            Err(Error::NonPositive(1))
        );
        assert!(matches!(
            kl_divergence(&b(&[0.5, 0.5]), &b(&[0.2, 0.3, 0.5])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn projection_of_zero_dual_is_prior() {
        let prior = Belief::uniform(3);
        let out = proximal_projection(&LogWeights::zeros(3), 1.0, &prior).unwrap();
        for w in out.weights() {
            assert!((w - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_hand_value() {
        let out =
            proximal_projection(&lw(&[2f64.ln(), 0.0, 0.0]), 1.0, &Belief::uniform(3)).unwrap();
        let expected = [0.5, 0.25, 0.25];
        for (w, e) in out.weights().iter().zip(expected) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_rejects_bad_inputs() {
        let prior = Belief::uniform(2);
        assert_eq!(
            proximal_projection(&LogWeights::zeros(2), 0.0, &prior),
            Err(Error::InvalidStepSize(0.0))
        );
        assert!(proximal_projection(&LogWeights::zeros(2), -1.0, &prior).is_err());
        assert_eq!(
            LogWeights::new(vec![0.0, f64::NAN]),
            Err(Error::NonFinite(1))
        );
        assert_eq!(
            proximal_projection(&LogWeights::zeros(2), 1.0, &b(&[1.0, 0.0])),
            Err(Error::NonPositive(1))
        );
    }

    #[test]
    fn normalize_examples() {
        let out = normalize_log_weights(&lw(&[0.0, 0.0]));
        assert_eq!(out.weights(), &[0.5, 0.5]);

        // 1000 + ln 3 is itself rounded to about 1e-13.
        let out = normalize_log_weights(&lw(&[1000.0, 1000.0 + 3f64.ln()]));
        assert!((out[0] - 0.25).abs() < 1e-12);
        assert!((out[1] - 0.75).abs() < 1e-12);

        let out = normalize_log_weights(&lw(&[1e6, -1e6, 0.0]));
        assert_eq!(out.weights(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn log_projection_survives_underflow() {
        let z = lw(&[0.0, -2000.0]);
        let logs = log_proximal_projection(&z, 1.0, &Belief::uniform(2)).unwrap();
        assert_eq!(logs[0], 0.0);
        assert!((logs[1] + 2000.0).abs() < 1e-9);
    }

    #[test]
    fn log_sum_exp_handles_neg_infinity() {
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY, 0.0]), 0.0);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn belief_validation() {
        assert!(Belief::new(vec![0.5, 0.4]).is_err());
        assert!(Belief::new(vec![1.5, -0.5]).is_err());
        assert!(Belief::new(vec![]).is_err());
        assert!(Belief::new(vec![0.25, 0.75]).is_ok());
        let json = serde_json::to_string(&Belief::uniform(2)).unwrap();
        assert_eq!(json, "[0.5,0.5]");
        assert!(serde_json::from_str::<Belief>("[0.5,0.6]").is_err());
    }

    fn interior_belief(m: usize) -> impl Strategy<Value = Belief> {
        prop::collection::vec(0.01f64..1.0, m).prop_map(|raw| {
            let s: f64 = raw.iter().sum();
            Belief::from_normalized(raw.iter().map(|r| r / s).collect())
        })
    }

    fn instance() -> impl Strategy<Value = (LogWeights, Belief, f64)> {
        (2usize..=10).prop_flat_map(|m| {
            (
                prop::collection::vec(-5.0f64..5.0, m).prop_map(LogWeights),
                interior_belief(m),
                0.05f64..4.0,
            )
        })
    }

    proptest! {
        #[test]
        fn projection_lies_in_simplex((z, prior, alpha) in instance()) {
            let x = proximal_projection(&z, alpha, &prior).unwrap();
            let sum: f64 = x.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() <= SIMPLEX_TOL);
            prop_assert!(x.is_strictly_positive());
        }

        #[test]
        fn projection_beats_random_simplex_points(
            (z, prior, alpha) in instance(),
            seeds in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 10), 100),
        ) {
            let x = proximal_projection(&z, alpha, &prior).unwrap();
            let best = proximal_objective(&x, &z, alpha, &prior).unwrap();
            for raw in seeds {
                let raw = &raw[..z.len()];
                let s: f64 = raw.iter().sum::<f64>().max(1e-300);
                let y = Belief::from_normalized(raw.iter().map(|r| r / s).collect());
                let val = proximal_objective(&y, &z, alpha, &prior).unwrap();
                prop_assert!(best <= val + 1e-9);
            }
        }

        #[test]
        fn step_size_folds_into_dual((z, prior, alpha) in instance()) {
            let a = proximal_projection(&z, alpha, &prior).unwrap();
            let b = proximal_projection(&z.scale(alpha).unwrap(), 1.0, &prior).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn projection_is_shift_invariant((z, prior, alpha) in instance(), c in -50.0f64..50.0) {
            let shifted = LogWeights::new(z.values().iter().map(|v| v + c).collect()).unwrap();
            let a = proximal_projection(&z, alpha, &prior).unwrap();
            let b = proximal_projection(&shifted, alpha, &prior).unwrap();
            for (x, y) in a.weights().iter().zip(b.weights()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn normalize_is_shift_invariant(v in prop::collection::vec(-100.0f64..100.0, 3), k in -1e3f64..1e3) {
            let a = normalize_log_weights(&LogWeights(v.clone()));
            let b = normalize_log_weights(&LogWeights(v.iter().map(|x| x + k).collect()));
            for (x, y) in a.weights().iter().zip(b.weights()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn kl_is_nonnegative((x, q) in (2usize..=8).prop_flat_map(|m| (interior_belief(m), interior_belief(m)))) {
            let d = kl_divergence(&x, &q).unwrap();
            prop_assert!(d >= 0.0);
            let gap = x.weights().iter().zip(q.weights()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if gap >= 1e-12 {
                prop_assert!(d > 0.0);
            }
            prop_assert_eq!(kl_divergence(&x, &x).unwrap(), 0.0);
        }
    }
}
