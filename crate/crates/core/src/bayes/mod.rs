//! Metropolis–Hastings inversion of material parameters from
//! load-displacement curves.
//!
//! Parameters are sampled in log space, `θ = (log μ, log K, log Gc)`. Priors
//! are expressed as densities over θ, so a uniform box on the physical values
//! carries the Jacobian `e^θ`.

mod diagnostics;
mod forward;
mod inversion;

pub use diagnostics::{acceptance_rate, acf, acf_series, least_squares_slope, posterior_summary, Histogram, Histogram2D, PosteriorSummary};
pub use forward::{FieldForward, FieldUpdate, ForwardModel, UniformForward};
pub use inversion::{run_chain, run_multi_dimensional, run_one_dimensional, OneDimensionalResult, Posterior, ProposalKind};

use crate::solver::LoadDispCurve;
use rand::Rng;
use rand_distr::StandardNormal;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BayesError {
    #[error("simulated and observed curves share no steps")]
    EmptyOverlap,
    #[error("chain component has zero variance")]
    ZeroVariance,
    #[error("lag {tau} out of range for a chain of length {len}")]
    Lag { tau: usize, len: usize },
    #[error("no samples left after burn-in")]
    EmptyChain,
    #[error("invalid setting: {0}")]
    Invalid(String),
    #[error("forward model failed at the starting point: {0}")]
    StartingPoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Log-parameters in a fixed component order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    pub theta: Vec<f64>,
}

impl ParamPoint {
    pub fn new(theta: Vec<f64>) -> Self {
        Self { theta }
    }

    pub fn from_physical(values: &[f64]) -> Self {
        Self { theta: values.iter().map(|v| v.ln()).collect() }
    }

    pub fn physical(&self) -> Vec<f64> {
        self.theta.iter().map(|t| t.exp()).collect()
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }
}

/// Reference curve and noise model.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub curve: LoadDispCurve,
    pub sigma2: f64,
    /// Log-likelihood charged per step present in only one of the curves.
    pub missing_step_penalty: f64,
}

impl ObservationSet {
    pub fn new(curve: LoadDispCurve, sigma2: f64) -> Result<Self, BayesError> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(BayesError::Invalid(format!("sigma2 must be positive, got {sigma2}")));
        }
        Ok(Self { curve, sigma2, missing_step_penalty: 0.0 })
    }
}

/// Gaussian log-likelihood over the common prefix of the two curves.
pub fn log_likelihood(sim: &LoadDispCurve, obs: &ObservationSet) -> Result<f64, BayesError> {
    let n = sim.len().min(obs.curve.len());
    if n == 0 {
        return Err(BayesError::EmptyOverlap);
    }
    let s2 = obs.sigma2;
    let misfit: f64 = sim.steps[..n].iter().zip(&obs.curve.steps[..n]).map(|(a, b)| (b.force - a.force).powi(2)).sum();
    let missing = sim.len().max(obs.curve.len()) - n;
    Ok(-(n as f64) / 2.0 * (2.0 * std::f64::consts::PI * s2).ln() - misfit / (2.0 * s2)
        - obs.missing_step_penalty * missing as f64)
}

/// L2 distance between two force sequences over their common prefix.
pub fn curve_misfit(a: &LoadDispCurve, b: &LoadDispCurve) -> f64 {
    a.steps.iter().zip(&b.steps).map(|(x, y)| (x.force - y.force).powi(2)).sum::<f64>().sqrt()
}

/// Density over θ.
#[derive(Debug, Clone, PartialEq)]
pub enum Prior {
    /// Uniform on the physical box `[lo, hi]` per component.
    UniformBox(Vec<(f64, f64)>),
    /// Independent normals on θ.
    Normal { mean: Vec<f64>, sd: Vec<f64> },
}

impl Prior {
    pub fn dim(&self) -> usize {
        match self {
            Prior::UniformBox(b) => b.len(),
            Prior::Normal { mean, .. } => mean.len(),
        }
    }

    pub fn validate(&self) -> Result<(), BayesError> {
        match self {
            Prior::UniformBox(bounds) => {
                for &(lo, hi) in bounds {
                    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
                        return Err(BayesError::Invalid(format!("prior box [{lo}, {hi}] must satisfy 0 < lo <= hi")));
                    }
                }
            }
            Prior::Normal { mean, sd } => {
                if mean.len() != sd.len() || sd.iter().any(|s| !(*s > 0.0)) || mean.iter().any(|m| !m.is_finite()) {
                    return Err(BayesError::Invalid("normal prior needs finite means and positive sd".into()));
                }
            }
        }
        Ok(())
    }

    pub fn log_density(&self, theta: &[f64]) -> f64 {
        match self {
            Prior::UniformBox(bounds) => {
                let mut lp = 0.0;
                for (&t, &(lo, hi)) in theta.iter().zip(bounds) {
                    let x = t.exp();
                    // tolerate the round trip exp(ln(x)) at the box edges
                    let slack = 1e-12 * hi;
                    if !(x >= lo - slack && x <= hi + slack) {
                        return f64::NEG_INFINITY;
                    }
                    if hi > lo {
                        lp += t - (hi - lo).ln();
                    }
                }
                lp
            }
            Prior::Normal { mean, sd } => theta
                .iter()
                .zip(mean.iter().zip(sd))
                .map(|(t, (m, s))| -0.5 * ((t - m) / s).powi(2) - (s * (2.0 * std::f64::consts::PI).sqrt()).ln())
                .sum(),
        }
    }

    /// Prior mean of the physical values.
    pub fn mean_physical(&self) -> Vec<f64> {
        match self {
            Prior::UniformBox(b) => b.iter().map(|(lo, hi)| 0.5 * (lo + hi)).collect(),
            Prior::Normal { mean, sd } => mean.iter().zip(sd).map(|(m, s)| (m + 0.5 * s * s).exp()).collect(),
        }
    }

    /// Prior mean mapped to θ (log of the physical mean).
    pub fn mean_point(&self) -> ParamPoint {
        ParamPoint::from_physical(&self.mean_physical())
    }
}

/// Proposal kernel `K(θ → θ*)`.
pub trait Proposal {
    fn propose(&self, current: &ParamPoint, rng: &mut dyn rand::RngCore) -> ParamPoint;
    /// `log K(from → to)` up to a constant shared by all pairs.
    fn log_density(&self, from: &ParamPoint, to: &ParamPoint) -> f64;
}

/// Independence sampler drawing uniformly on a physical box.
#[derive(Debug, Clone, PartialEq)]
pub struct UniformProposal {
    pub bounds: Vec<(f64, f64)>,
}

/// Uniform draw on the physical box, returned in log space.
pub fn propose_uniform<R: Rng + ?Sized>(bounds: &[(f64, f64)], rng: &mut R) -> ParamPoint {
    ParamPoint {
        theta: bounds
            .iter()
            .map(|&(lo, hi)| if hi > lo { rng.random_range(lo..hi).ln() } else { lo.ln() })
            .collect(),
    }
}

/// Gaussian random walk in log space.
pub fn propose_normal<R: Rng + ?Sized>(current: &ParamPoint, step: &[f64], rng: &mut R) -> ParamPoint {
    ParamPoint {
        theta: current
            .theta
            .iter()
            .zip(step)
            .map(|(t, s)| t + s * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    }
}

impl Proposal for UniformProposal {
    fn propose(&self, _current: &ParamPoint, rng: &mut dyn rand::RngCore) -> ParamPoint {
        propose_uniform(&self.bounds, rng)
    }

    fn log_density(&self, _from: &ParamPoint, to: &ParamPoint) -> f64 {
        // density of θ = ln(x) with x uniform: e^θ / (hi − lo)
        Prior::UniformBox(self.bounds.clone()).log_density(&to.theta)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalProposal {
    pub step: Vec<f64>,
}

impl Proposal for NormalProposal {
    fn propose(&self, current: &ParamPoint, rng: &mut dyn rand::RngCore) -> ParamPoint {
        propose_normal(current, &self.step, rng)
    }

    fn log_density(&self, from: &ParamPoint, to: &ParamPoint) -> f64 {
        from.theta
            .iter()
            .zip(&to.theta)
            .zip(&self.step)
            .map(|((a, b), s)| if *s > 0.0 { -0.5 * ((b - a) / s).powi(2) - s.ln() } else { 0.0 })
            .sum()
    }
}

/// Accept with probability `min(1, exp(log_ratio))`.
pub fn metropolis_accept<R: Rng + ?Sized>(log_ratio: f64, rng: &mut R) -> bool {
    if log_ratio.is_nan() || log_ratio == f64::NEG_INFINITY {
        return false;
    }
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

#[derive(Debug, Clone, PartialEq)]
pub struct MhOutcome {
    pub point: ParamPoint,
    pub log_target: f64,
    pub accepted: bool,
    /// Whatever the target attached to the returned point.
    pub extra: f64,
}

/// One Metropolis–Hastings transition. `target` returns the log-posterior
/// (−∞ outside the support) and an auxiliary value carried along with the
/// state.
pub fn mh_step<P, T>(
    current: &ParamPoint,
    current_log_target: f64,
    current_extra: f64,
    proposal: &P,
    mut target: T,
    rng: &mut dyn rand::RngCore,
) -> MhOutcome
where
    P: Proposal + ?Sized,
    T: FnMut(&ParamPoint) -> (f64, f64),
{
    let candidate = proposal.propose(current, rng);
    let (lt, extra) = target(&candidate);
    let log_ratio = if lt == f64::NEG_INFINITY {
        f64::NEG_INFINITY
    } else {
        lt - current_log_target + proposal.log_density(&candidate, current) - proposal.log_density(current, &candidate)
    };
    if metropolis_accept(log_ratio, rng) {
        MhOutcome { point: candidate, log_target: lt, accepted: true, extra }
    } else {
        MhOutcome { point: current.clone(), log_target: current_log_target, accepted: false, extra: current_extra }
    }
}

/// Sequence of MH states. `samples` hold full θ vectors; the first three
/// components are `(μ*, K*, Gc*)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Chain {
    pub samples: Vec<Vec<f64>>,
    pub accepted: Vec<bool>,
    pub log_likelihoods: Vec<f64>,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, theta: Vec<f64>, accepted: bool, log_likelihood: f64) {
        self.samples.push(theta);
        self.accepted.push(accepted);
        self.log_likelihoods.push(log_likelihood);
    }

    pub fn component(&self, k: usize) -> Vec<f64> {
        self.samples.iter().map(|s| s[k]).collect()
    }

    pub fn extend(&mut self, other: &Chain) {
        self.samples.extend(other.samples.iter().cloned());
        self.accepted.extend(&other.accepted);
        self.log_likelihoods.extend(&other.log_likelihoods);
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<(), BayesError> {
        writeln!(out, "i,mu_star,K_star,Gc_star,accepted,loglik")?;
        for (i, ((s, a), l)) in self.samples.iter().zip(&self.accepted).zip(&self.log_likelihoods).enumerate() {
            let c = |k: usize| s.get(k).copied().unwrap_or(f64::NAN);
            writeln!(out, "{},{:e},{:e},{:e},{},{:e}", i + 1, c(0), c(1), c(2), u8::from(*a), l)?;
        }
        Ok(())
    }
}
