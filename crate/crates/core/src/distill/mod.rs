//! Behavior cloning of the reference policy, the pairwise preference (DPO)
//! objective and the DAgger aggregation loop that distills a teacher into the
//! student.

mod dagger;

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dagger::{collect_demos, dagger_distill, evaluate, run_episode, DaggerOutcome, Episode, Performer, RoundStats};

use crate::policy::{action_log_probs, FeatureVector, PolicyError, PolicyParams, NUM_ACTIONS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistillError {
    #[error("no demonstrations")]
    EmptyDataset,
    #[error("teacher gave no usable action on any rollout state")]
    NoSupervision,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid preference pair: {0}")]
    InvalidPair(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    World(#[from] crate::world::WorldError),
}

impl DistillError {
    pub fn kind(&self) -> &'static str {
        match self {
            DistillError::EmptyDataset => "EmptyDataset",
            DistillError::NoSupervision => "NoSupervision",
            DistillError::InvalidConfig(_) => "ConfigError",
            DistillError::InvalidPair(_) => "InvalidPair",
            DistillError::Parse { .. } => "ParseError",
            DistillError::Policy(e) => e.kind(),
            DistillError::World(e) => e.kind(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub bc_l2_lambda: f64,
    pub bc_epochs: usize,
    pub bc_learning_rate: f64,
    pub dagger_rounds: u32,
    pub rollouts_per_round: usize,
    pub mixing_decay: f64,
    /// Passes over the aggregated dataset after each round.
    pub epochs_per_round: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            beta: 0.1,
            learning_rate: 0.1,
            bc_l2_lambda: 1e-3,
            bc_epochs: 300,
            bc_learning_rate: 1.0,
            dagger_rounds: 5,
            rollouts_per_round: 20,
            mixing_decay: 0.5,
            epochs_per_round: 3,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<(), DistillError> {
        let bad = |m: &str| Err(DistillError::InvalidConfig(m.to_string()));
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.bc_learning_rate > 0.0) {
            return bad("bc_learning_rate must be positive");
        }
        if !(self.bc_l2_lambda >= 0.0) {
            return bad("bc_l2_lambda must be non-negative");
        }
        if !(self.mixing_decay > 0.0 && self.mixing_decay <= 1.0) {
            return bad("mixing_decay must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Behavior-cloned parameters plus the loss after every epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct BcFit {
    pub params: PolicyParams,
    pub curve: Vec<f64>,
}

fn bc_objective(params: &PolicyParams, demos: &[(FeatureVector, usize)], lambda: f64) -> Result<(f64, Vec<f64>), DistillError> {
    let mut grad = vec![0.0; params.weights.len()];
    let mut nll = 0.0;
    let inv_n = 1.0 / demos.len() as f64;
    for (phi, a) in demos {
        let lp = action_log_probs(params, phi)?;
        nll -= lp[*a] * inv_n;
        for (r, l) in lp.iter().enumerate() {
            let coef = (l.exp() - f64::from(r == *a)) * inv_n;
            for &j in &phi.active {
                grad[r * params.dim + j] += coef;
            }
        }
    }
    let mut sq = 0.0;
    for (g, w) in grad.iter_mut().zip(&params.weights) {
        *g += 2.0 * lambda * w;
        sq += w * w;
    }
    Ok((nll + lambda * sq, grad))
}

/// Fit the reference policy: minimise mean negative log-likelihood plus
/// `lambda * ||W||^2` by full-batch gradient descent starting at zero. The
/// step is halved whenever it would raise the loss, so the curve never
/// increases.
pub fn bc_fit(demos: &[(FeatureVector, usize)], lambda: f64, epochs: usize, lr: f64) -> Result<BcFit, DistillError> {
    let first = demos.first().ok_or(DistillError::EmptyDataset)?;
    let dim = first.0.dim;
    for (phi, a) in demos {
        if phi.dim != dim {
            return Err(PolicyError::Schema(format!("demo feature dim {} vs {dim}", phi.dim)).into());
        }
        if *a >= NUM_ACTIONS {
            return Err(DistillError::InvalidPair(format!("action index {a} out of range")));
        }
    }
    if !(lr > 0.0) || !(lambda >= 0.0) {
        return Err(DistillError::InvalidConfig("bc needs lr > 0 and lambda >= 0".into()));
    }
    let mut params = PolicyParams::zeros(NUM_ACTIONS, dim);
    let (mut loss, mut grad) = bc_objective(&params, demos, lambda)?;
    let mut curve = vec![loss];
    let mut step = lr;
    for _ in 0..epochs {
        let mut accepted = false;
        for _ in 0..60 {
            let mut next = params.clone();
            for (w, g) in next.weights.iter_mut().zip(&grad) {
                *w -= step * g;
            }
            let (l, g) = bc_objective(&next, demos, lambda)?;
            if l <= loss {
                params = next;
                loss = l;
                grad = g;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        curve.push(loss);
        if !accepted {
            break;
        }
    }
    Ok(BcFit { params, curve })
}

/// One preference: the teacher's action is preferred over the student's at
/// state features `phi`, with reference log-probabilities cached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub phi: FeatureVector,
    pub preferred: usize,
    pub dispreferred: usize,
    pub ref_logp_preferred: f64,
    pub ref_logp_dispreferred: f64,
}

impl PreferencePair {
    pub fn new(
        phi: FeatureVector,
        preferred: usize,
        dispreferred: usize,
        reference: &PolicyParams,
    ) -> Result<Self, DistillError> {
        if preferred == dispreferred {
            return Err(DistillError::InvalidPair("preferred equals dispreferred".into()));
        }
        if preferred >= reference.actions || dispreferred >= reference.actions {
            return Err(DistillError::InvalidPair("action index out of range".into()));
        }
        let lp = action_log_probs(reference, &phi)?;
        Ok(PreferencePair {
            phi,
            preferred,
            dispreferred,
            ref_logp_preferred: lp[preferred],
            ref_logp_dispreferred: lp[dispreferred],
        })
    }
}

/// `-ln sigmoid(-x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_beta(beta: f64) -> Result<(), DistillError> {
    if beta > 0.0 && beta.is_finite() {
        Ok(())
    } else {
        Err(DistillError::InvalidConfig(format!("beta must be positive, got {beta}")))
    }
}

/// Scaled log-ratio margin `beta * [(lt(a*) - lr(a*)) - (lt(a) - lr(a))]`
/// with the reference terms supplied.
fn margin(theta: &PolicyParams, pair: &PreferencePair, ref_pref: f64, ref_dis: f64, beta: f64) -> Result<f64, DistillError> {
    check_beta(beta)?;
    let lp = action_log_probs(theta, &pair.phi)?;
    let m = beta * ((lp[pair.preferred] - ref_pref) - (lp[pair.dispreferred] - ref_dis));
    if m.is_finite() {
        Ok(m)
    } else {
        Err(PolicyError::Numerical("preference margin".into()).into())
    }
}

fn ref_terms(reference: &PolicyParams, pair: &PreferencePair) -> Result<(f64, f64), DistillError> {
    let lp = action_log_probs(reference, &pair.phi)?;
    Ok((lp[pair.preferred], lp[pair.dispreferred]))
}

/// Preference loss `-ln sigmoid(margin)` against reference parameters.
pub fn dpo_loss(theta: &PolicyParams, reference: &PolicyParams, pair: &PreferencePair, beta: f64) -> Result<f64, DistillError> {
    let (rp, rd) = ref_terms(reference, pair)?;
    Ok(softplus(-margin(theta, pair, rp, rd, beta)?))
}

/// Gradient of [`dpo_loss`] with respect to `theta`'s weights (row-major
/// `actions x dim`). Only the preferred and dispreferred rows are non-zero:
/// the softmax normaliser cancels in the log-ratio difference.
pub fn dpo_grad(theta: &PolicyParams, reference: &PolicyParams, pair: &PreferencePair, beta: f64) -> Result<Vec<f64>, DistillError> {
    let (rp, rd) = ref_terms(reference, pair)?;
    grad_with(theta, pair, rp, rd, beta)
}

fn grad_with(theta: &PolicyParams, pair: &PreferencePair, rp: f64, rd: f64, beta: f64) -> Result<Vec<f64>, DistillError> {
    let m = margin(theta, pair, rp, rd, beta)?;
    let coef = sigmoid(-m) * beta;
    let mut g = vec![0.0; theta.weights.len()];
    for &j in &pair.phi.active {
        g[pair.preferred * theta.dim + j] -= coef;
        g[pair.dispreferred * theta.dim + j] += coef;
    }
    Ok(g)
}

/// Loss using the pair's cached reference log-probabilities.
pub fn dpo_loss_cached(theta: &PolicyParams, pair: &PreferencePair, beta: f64) -> Result<f64, DistillError> {
    Ok(softplus(-margin(theta, pair, pair.ref_logp_preferred, pair.ref_logp_dispreferred, beta)?))
}

/// Gradient using the pair's cached reference log-probabilities.
pub fn dpo_grad_cached(theta: &PolicyParams, pair: &PreferencePair, beta: f64) -> Result<Vec<f64>, DistillError> {
    grad_with(theta, pair, pair.ref_logp_preferred, pair.ref_logp_dispreferred, beta)
}

/// Append-only list of preference pairs tagged with the round that added them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    pub pairs: Vec<(u32, PreferencePair)>,
}

impl PreferenceDataset {
    pub fn push(&mut self, round: u32, pair: PreferencePair) {
        self.pairs.push((round, pair));
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// One line per pair: `round dim idx,idx,... preferred dispreferred
    /// ref_logp_preferred ref_logp_dispreferred` (feature list `-` when empty).
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (round, p) in &self.pairs {
            let idx = if p.phi.active.is_empty() {
                "-".to_string()
            } else {
                p.phi.active.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
            };
            writeln!(
                out,
                "{round} {} {idx} {} {} {:.14e} {:.14e}",
                p.phi.dim, p.preferred, p.dispreferred, p.ref_logp_preferred, p.ref_logp_dispreferred
            )
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, DistillError> {
        let mut ds = PreferenceDataset::default();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |msg: &str| DistillError::Parse { line: i + 1, msg: msg.to_string() };
            let f: Vec<&str> = line.split_whitespace().collect();
            let [round, dim, idx, pref, dis, lp1, lp2] = f[..] else {
                return Err(bad("expected 7 fields"));
            };
            let dim: usize = dim.parse().map_err(|_| bad("bad dim"))?;
            let active = if idx == "-" {
                Vec::new()
            } else {
                idx.split(',').map(|s| s.parse::<usize>()).collect::<Result<Vec<_>, _>>().map_err(|_| bad("bad index"))?
            };
            if active.iter().any(|&j| j >= dim) {
                return Err(bad("feature index out of range"));
            }
            let pair = PreferencePair {
                phi: FeatureVector::new(dim, active),
                preferred: pref.parse().map_err(|_| bad("bad preferred"))?,
                dispreferred: dis.parse().map_err(|_| bad("bad dispreferred"))?,
                ref_logp_preferred: lp1.parse().map_err(|_| bad("bad log-prob"))?,
                ref_logp_dispreferred: lp2.parse().map_err(|_| bad("bad log-prob"))?,
            };
            if pair.preferred == pair.dispreferred {
                return Err(bad("preferred equals dispreferred"));
            }
            ds.push(round.parse().map_err(|_| bad("bad round"))?, pair);
        }
        Ok(ds)
    }
}

/// One pass of per-pair gradient steps over the dataset, in stored order.
pub fn dpo_epoch(theta: &mut PolicyParams, data: &PreferenceDataset, beta: f64, lr: f64) -> Result<f64, DistillError> {
    let mut total = 0.0;
    for (_, pair) in &data.pairs {
        total += dpo_loss_cached(theta, pair, beta)?;
        let g = dpo_grad_cached(theta, pair, beta)?;
        for (w, gi) in theta.weights.iter_mut().zip(&g) {
            *w -= lr * gi;
        }
    }
    Ok(if data.is_empty() { 0.0 } else { total / data.len() as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_action_pair() -> (PolicyParams, PreferencePair) {
        let reference = PolicyParams::zeros(2, 1);
        let pair = PreferencePair::new(FeatureVector::new(1, vec![0]), 0, 1, &reference).unwrap();
        (reference, pair)
    }

    #[test]
    fn anchor_and_hand_case() {
        let (reference, pair) = two_action_pair();
        assert_eq!(dpo_loss(&reference, &reference, &pair, 0.1).unwrap(), std::f64::consts::LN_2);
        // Logit gap of 1 between preferred and dispreferred gives margin beta.
        let mut theta = reference.clone();
        theta.set(0, 0, 1.0);
        let expected = (1.0 + (-0.1f64).exp()).ln();
        assert!((dpo_loss(&theta, &reference, &pair, 0.1).unwrap() - expected).abs() < 1e-15);
        assert!((dpo_loss(&theta, &reference, &pair, 1e-12).unwrap() - std::f64::consts::LN_2).abs() < 1e-9);
        assert!(dpo_loss(&theta, &reference, &pair, 0.0).is_err());
    }

    #[test]
    fn zero_features_zero_gradient() {
        let reference = PolicyParams::zeros(4, 3);
        let pair = PreferencePair::new(FeatureVector::new(3, vec![]), 1, 2, &reference).unwrap();
        assert!(dpo_grad(&reference, &reference, &pair, 0.5).unwrap().iter().all(|g| *g == 0.0));
    }

    #[test]
    fn bc_edge_cases() {
        assert_eq!(bc_fit(&[], 0.0, 10, 1.0).unwrap_err(), DistillError::EmptyDataset);
        let demos = vec![(FeatureVector::new(3, vec![0, 2]), 4); 10];
        let fit = bc_fit(&demos, 0.0, 50, 1.0).unwrap();
        assert!(fit.curve.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn dataset_text_round_trip() {
        let (_, pair) = two_action_pair();
        let mut ds = PreferenceDataset::default();
        ds.push(0, pair.clone());
        ds.push(2, PreferencePair { phi: FeatureVector::new(1, vec![]), ..pair });
        let back = PreferenceDataset::parse(&ds.to_text()).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back.pairs[1].0, 2);
        assert!((back.pairs[0].1.ref_logp_preferred - ds.pairs[0].1.ref_logp_preferred).abs() < 1e-14);
    }
}
