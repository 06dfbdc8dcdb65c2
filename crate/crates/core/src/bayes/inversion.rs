use super::{
    log_likelihood, mh_step, BayesError, Chain, NormalProposal, ObservationSet, ParamPoint, Prior, Proposal,
    UniformProposal,
};
use super::forward::ForwardModel;
use super::diagnostics::posterior_summary;
use std::collections::HashMap;

/// Unnormalized log-posterior over a subset of the full parameter vector,
/// with the remaining components held fixed.
pub struct Posterior<'a, M: ForwardModel + ?Sized> {
    model: &'a mut M,
    obs: &'a ObservationSet,
    prior: &'a Prior,
    /// Full θ; entries listed in `free` are overwritten by the sampled values.
    base: Vec<f64>,
    free: Vec<usize>,
    cache: HashMap<Vec<i64>, f64>,
    pub forward_solves: usize,
    pub forward_failures: usize,
}

fn cache_key(theta: &[f64]) -> Vec<i64> {
    theta.iter().map(|t| (t * 1e10).round() as i64).collect()
}

impl<'a, M: ForwardModel + ?Sized> Posterior<'a, M> {
    pub fn new(model: &'a mut M, obs: &'a ObservationSet, prior: &'a Prior, base: Vec<f64>, free: Vec<usize>) -> Self {
        Self { model, obs, prior, base, free, cache: HashMap::new(), forward_solves: 0, forward_failures: 0 }
    }

    pub fn embed(&self, sub: &[f64]) -> Vec<f64> {
        let mut full = self.base.clone();
        for (&k, &v) in self.free.iter().zip(sub) {
            full[k] = v;
        }
        full
    }

    /// Log-likelihood of the full parameter vector, −∞ when the forward
    /// solve fails.
    pub fn log_likelihood(&mut self, full: &[f64]) -> f64 {
        let key = cache_key(full);
        if let Some(&v) = self.cache.get(&key) {
            return v;
        }
        self.forward_solves += 1;
        let ll = match self.model.simulate(full) {
            Ok(curve) => log_likelihood(&curve, self.obs).unwrap_or(f64::NEG_INFINITY),
            Err(e) => {
                self.forward_failures += 1;
                log::warn!("forward solve failed at theta={full:?}: {e}; proposal rejected");
                f64::NEG_INFINITY
            }
        };
        self.cache.insert(key, ll);
        ll
    }

    /// `(log posterior, log likelihood)` at the sub-vector.
    pub fn evaluate(&mut self, sub: &[f64]) -> (f64, f64) {
        let full = self.embed(sub);
        let lp = self.prior.log_density(&full);
        if lp == f64::NEG_INFINITY {
            return (f64::NEG_INFINITY, f64::NEG_INFINITY);
        }
        let ll = self.log_likelihood(&full);
        (lp + ll, ll)
    }
}

/// `n_samples` MH transitions from `start`. The chain records full θ
/// vectors.
pub fn run_chain<M, P>(
    posterior: &mut Posterior<'_, M>,
    start: ParamPoint,
    proposal: &P,
    n_samples: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<Chain, BayesError>
where
    M: ForwardModel + ?Sized,
    P: Proposal + ?Sized,
{
    let (mut lt, mut ll) = posterior.evaluate(&start.theta);
    if !lt.is_finite() {
        return Err(BayesError::StartingPoint(format!("log posterior {lt} at {:?}", start.physical())));
    }
    let mut current = start;
    let mut chain = Chain::default();
    for i in 0..n_samples {
        let out = mh_step(&current, lt, ll, proposal, |p: &ParamPoint| posterior.evaluate(&p.theta), rng);
        current = out.point;
        lt = out.log_target;
        ll = out.extra;
        chain.push(posterior.embed(&current.theta), out.accepted, ll);
        log::debug!("sample {}: accepted={} loglik={ll:.4e} theta={:?}", i + 1, out.accepted, current.physical());
    }
    Ok(chain)
}

/// How candidates are drawn.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProposalKind {
    /// Independence sampler on the physical prior box.
    Uniform,
    /// Random walk in log space with per-component standard deviations.
    Normal { step: Vec<f64> },
}

impl ProposalKind {
    /// Kernel acting on the components `free` of θ.
    pub fn build(&self, prior: &Prior, free: &[usize]) -> Result<Box<dyn Proposal>, BayesError> {
        match self {
            ProposalKind::Uniform => match prior {
                Prior::UniformBox(b) => Ok(Box::new(UniformProposal { bounds: free.iter().map(|&k| b[k]).collect() })),
                Prior::Normal { .. } => {
                    Err(BayesError::Invalid("the uniform proposal needs a uniform-box prior".into()))
                }
            },
            ProposalKind::Normal { step } => {
                let s: Vec<f64> = free
                    .iter()
                    .map(|&k| step.get(k).or(step.last()).copied().unwrap_or(0.0))
                    .collect();
                if s.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(BayesError::Invalid(format!("proposal steps must be non-negative, got {step:?}")));
                }
                Ok(Box::new(NormalProposal { step: s }))
            }
        }
    }
}

/// Joint sampling of all components, starting at the prior mean.
pub fn run_multi_dimensional<M: ForwardModel + ?Sized>(
    model: &mut M,
    obs: &ObservationSet,
    prior: &Prior,
    start: ParamPoint,
    proposal: &ProposalKind,
    n_samples: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<Chain, BayesError> {
    prior.validate()?;
    let free: Vec<usize> = (0..start.dim()).collect();
    let kernel = proposal.build(prior, &free)?;
    let mut post = Posterior::new(model, obs, prior, start.theta.clone(), free);
    let chain = run_chain(&mut post, start, kernel.as_ref(), n_samples, rng)?;
    log::info!("{} forward solves, {} failures", post.forward_solves, post.forward_failures);
    Ok(chain)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneDimensionalResult {
    /// (μ*, K*) sampled with Gc at its prior mean.
    pub phase_a: Chain,
    /// Gc* sampled with (μ*, K*) at the phase-A posterior mean.
    pub phase_b: Chain,
    /// Physical (μ, K) used during phase B.
    pub fitted_pair: [f64; 2],
}

impl OneDimensionalResult {
    pub fn combined(&self) -> Chain {
        let mut c = self.phase_a.clone();
        c.extend(&self.phase_b);
        c
    }
}

/// Sequential inversion: (μ*, K*) first, then Gc* with the fitted pair.
/// Each phase runs `n_samples` transitions.
pub fn run_one_dimensional<M: ForwardModel + ?Sized>(
    model: &mut M,
    obs: &ObservationSet,
    prior: &Prior,
    proposal: &ProposalKind,
    n_samples: usize,
    burn_in: f64,
    rng: &mut dyn rand::RngCore,
) -> Result<OneDimensionalResult, BayesError> {
    prior.validate()?;
    if prior.dim() != 3 {
        return Err(BayesError::Invalid("one-dimensional mode needs (mu, K, Gc)".into()));
    }
    let mean = prior.mean_point();

    let free_a = vec![0, 1];
    let kernel_a = proposal.build(prior, &free_a)?;
    let phase_a = {
        let mut post = Posterior::new(&mut *model, obs, prior, mean.theta.clone(), free_a);
        run_chain(&mut post, ParamPoint::new(mean.theta[..2].to_vec()), kernel_a.as_ref(), n_samples, rng)?
    };
    let summary = posterior_summary(&phase_a, burn_in, 1)?;
    let fitted_pair = [summary.mean_physical[0], summary.mean_physical[1]];

    let base = vec![fitted_pair[0].ln(), fitted_pair[1].ln(), mean.theta[2]];
    let free_b = vec![2];
    let kernel_b = proposal.build(prior, &free_b)?;
    let phase_b = {
        let mut post = Posterior::new(&mut *model, obs, prior, base, free_b);
        run_chain(&mut post, ParamPoint::new(vec![mean.theta[2]]), kernel_b.as_ref(), n_samples, rng)?
    };
    Ok(OneDimensionalResult { phase_a, phase_b, fitted_pair })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{LoadDispCurve, LoadStep, Termination};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Toy forward model: a piecewise-linear curve whose slope and peak depend
    /// on the parameters.
    fn toy(theta: &[f64]) -> Result<LoadDispCurve, String> {
        let p = ParamPoint::new(theta.to_vec()).physical();
        let stiffness = p[0] + 0.5 * p[1];
        let peak_step = (p[2] * 1e4) as usize;
        let steps = (1..=60)
            .map(|n| {
                let u = n as f64 * 1e-4;
                let force = if n <= peak_step { stiffness * u } else { stiffness * peak_step as f64 * 1e-4 * 0.5 };
                LoadStep { step: n, u_bar: u, force }
            })
            .collect();
        Ok(LoadDispCurve::new(steps, Termination::MaxSteps))
    }

    fn bounds() -> Vec<(f64, f64)> {
        vec![(60.0, 100.0), (140.0, 200.0), (2.1e-3, 3.3e-3)]
    }

    struct Forced(ParamPoint);

    impl Proposal for Forced {
        fn propose(&self, _: &ParamPoint, _: &mut dyn rand::RngCore) -> ParamPoint {
            self.0.clone()
        }
        fn log_density(&self, _: &ParamPoint, _: &ParamPoint) -> f64 {
            0.0
        }
    }

    #[test]
    fn forced_true_parameters_are_accepted() {
        let truth = ParamPoint::from_physical(&[70.0, 150.0, 3.0e-3]);
        let obs = ObservationSet::new(toy(&truth.theta).unwrap(), 1e-3).unwrap();
        let prior = Prior::UniformBox(bounds());
        let mut model = toy;
        let mut post = Posterior::new(&mut model, &obs, &prior, prior.mean_point().theta, vec![0, 1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let chain = run_chain(&mut post, prior.mean_point(), &Forced(truth.clone()), 1, &mut rng).unwrap();
        assert!(chain.accepted[0]);
        assert_eq!(chain.samples[0], truth.theta);
    }

    #[test]
    fn uniform_chain_stays_in_support_and_improves_fit() {
        let truth = ParamPoint::from_physical(&[70.0, 150.0, 3.0e-3]);
        let obs = ObservationSet::new(toy(&truth.theta).unwrap(), 1e-3).unwrap();
        let prior = Prior::UniformBox(bounds());
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut model = toy;
        let chain =
            run_multi_dimensional(&mut model, &obs, &prior, prior.mean_point(), &ProposalKind::Uniform, 400, &mut rng)
                .unwrap();
        for s in &chain.samples {
            assert!(prior.log_density(s).is_finite());
        }
        let ll_start = log_likelihood(&toy(&prior.mean_point().theta).unwrap(), &obs).unwrap();
        assert!(chain.log_likelihoods.last().unwrap() > &ll_start);
    }

    #[test]
    fn cache_avoids_repeat_solves() {
        let obs = ObservationSet::new(toy(&ParamPoint::from_physical(&[70.0, 150.0, 3e-3]).theta).unwrap(), 1e-3).unwrap();
        let prior = Prior::UniformBox(bounds());
        let mut calls = 0;
        let mut model = |t: &[f64]| {
            calls += 1;
            toy(t)
        };
        let mut post = Posterior::new(&mut model, &obs, &prior, prior.mean_point().theta, vec![0, 1, 2]);
        let p = prior.mean_point().theta;
        let a = post.evaluate(&p);
        let b = post.evaluate(&p);
        assert_eq!(a, b);
        assert_eq!(post.forward_solves, 1);
        drop(post);
        assert_eq!(calls, 1);
    }

    #[test]
    fn forward_failure_is_a_rejection() {
        let obs = ObservationSet::new(toy(&ParamPoint::from_physical(&[70.0, 150.0, 3e-3]).theta).unwrap(), 1e-3).unwrap();
        let prior = Prior::UniformBox(bounds());
        let start = prior.mean_point();
        let start_theta = start.theta.clone();
        let mut model = move |t: &[f64]| if t == start_theta.as_slice() { toy(t) } else { Err("diverged".to_string()) };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let chain = run_multi_dimensional(&mut model, &obs, &prior, start.clone(), &ProposalKind::Uniform, 20, &mut rng)
            .unwrap();
        assert!(chain.accepted.iter().all(|a| !a));
        assert!(chain.samples.iter().all(|s| *s == start.theta));
    }

    #[test]
    fn one_dimensional_mode_fixes_components() {
        let truth = ParamPoint::from_physical(&[70.0, 150.0, 3.0e-3]);
        let obs = ObservationSet::new(toy(&truth.theta).unwrap(), 1e-3).unwrap();
        let prior = Prior::UniformBox(bounds());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut model = toy;
        let r = run_one_dimensional(&mut model, &obs, &prior, &ProposalKind::Uniform, 100, 0.2, &mut rng).unwrap();
        let gc_mean = prior.mean_point().theta[2];
        assert!(r.phase_a.samples.iter().all(|s| s[2] == gc_mean));
        let pair = [r.fitted_pair[0].ln(), r.fitted_pair[1].ln()];
        assert!(r.phase_b.samples.iter().all(|s| s[0] == pair[0] && s[1] == pair[1]));
        assert_eq!(r.combined().len(), 200);
    }

    #[test]
    fn normal_proposal_subset_steps() {
        let prior = Prior::UniformBox(bounds());
        let k = ProposalKind::Normal { step: vec![0.1, 0.2, 0.3] };
        assert!(k.build(&prior, &[2]).is_ok());
        assert!(ProposalKind::Normal { step: vec![-1.0] }.build(&prior, &[0]).is_err());
        let normal_prior = Prior::Normal { mean: vec![0.0], sd: vec![1.0] };
        assert!(ProposalKind::Uniform.build(&normal_prior, &[0]).is_err());
    }
}
