//! Mean-variance mapping optimization, swarm hybrid variant (MVMO-SH).
//!
//! A bounded, derivative-free minimizer for expensive fitness functions. The
//! search runs in the normalized unit box. Each particle keeps a small archive
//! of its best solutions; new candidates copy the particle's best and
//! resample a few dimensions through the mapping function [`mapping_h`],
//! which concentrates samples around the archive mean with a spread that
//! shrinks as the archive variance shrinks.
//!
//! Per generation:
//!
//! 1. particles are ranked by their best value; the worst third are "bad"
//!    and take a multi-parent crossover `x_RG + beta * (x_GB - x_LG)` as their
//!    parent (random good, global best, last good) instead of their own best;
//! 2. every particle mutates `m` randomly chosen dimensions of its parent,
//!    where `m` falls linearly from `m_initial` to `m_final`;
//! 3. with probability `local_search_probability` a coordinate descent of at
//!    most `2 d` evaluations polishes the global incumbent.
//!
//! The first generation evaluates one uniform random point per particle.
//! Fitness values of `+inf` mark invalid candidates and are simply never
//! preferred over finite ones.

use std::convert::Infallible;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MvmoError<E = Infallible> {
    #[error("invalid optimizer configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid search space: {0}")]
    InvalidSpace(String),
    #[error("fitness returned NaN at {point:?}")]
    NanFitness { point: Vec<f64> },
    #[error("fitness failed at {point:?}: {source}")]
    Fitness { point: Vec<f64>, source: E },
}

/// Box bounds of the search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    bounds: Vec<(f64, f64)>,
}

impl SearchSpace {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, MvmoError> {
        if bounds.is_empty() {
            return Err(MvmoError::InvalidSpace("no dimensions".into()));
        }
        for (i, (lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(MvmoError::InvalidSpace(format!(
                    "dimension {i}: need finite lower < upper, got ({lo}, {hi})"
                )));
            }
        }
        Ok(Self { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Maps a unit-box point to original units.
    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| (lo + v.clamp(0.0, 1.0) * (hi - lo)).clamp(*lo, *hi))
            .collect()
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.bounds)
            .map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.bounds)
                .all(|(v, (lo, hi))| *v >= *lo && *v <= *hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub generations: usize,
    pub particles: usize,
    pub archive_size: usize,
    /// Mutated dimensions in the first generation; `None` means all of them.
    pub mutated_dims_initial: Option<usize>,
    pub mutated_dims_final: usize,
    /// Shaping scaling factor, ramped linearly from `initial` to `final`.
    pub shaping_initial: f64,
    pub shaping_final: f64,
    pub seed: u64,
    pub local_search_probability: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            generations: 600,
            particles: 5,
            archive_size: 4,
            mutated_dims_initial: None,
            mutated_dims_final: 1,
            shaping_initial: 1.0,
            shaping_final: 10.0,
            seed: 0,
            local_search_probability: 0.1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self, dim: usize) -> Result<(), MvmoError> {
        let bad = |m: &str| Err(MvmoError::InvalidConfig(m.to_string()));
        if self.generations < 1 {
            return bad("generations must be >= 1");
        }
        if self.particles < 1 {
            return bad("particles must be >= 1");
        }
        if self.archive_size < 2 {
            return bad("archive_size must be >= 2");
        }
        let m0 = self.mutated_dims_initial.unwrap_or(dim);
        if m0 < 1 || m0 > dim || self.mutated_dims_final < 1 || self.mutated_dims_final > dim {
            return bad("mutated dimensions must lie in 1..=d");
        }
        if !(self.shaping_initial > 0.0 && self.shaping_final > 0.0)
            || !self.shaping_initial.is_finite()
            || !self.shaping_final.is_finite()
        {
            return bad("shaping factors must be positive and finite");
        }
        if !(0.0..=1.0).contains(&self.local_search_probability) {
            return bad("local_search_probability must lie in [0, 1]");
        }
        Ok(())
    }

    /// Fitness evaluations per generation, excluding local search.
    pub fn evaluations_per_generation(&self) -> usize {
        self.particles
    }

    /// Most evaluations one local search may spend.
    pub fn local_search_budget(dim: usize) -> usize {
        2 * dim
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    /// Best point in original units.
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub evaluations_used: u64,
    pub local_search_evaluations: u64,
    pub seed: u64,
    /// Best-so-far value after each generation.
    pub trace: Vec<f64>,
}

/// Result of [`best_of_restarts`]: the winning run plus a summary of all runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestartResult {
    pub best: OptimizationResult,
    pub runs: Vec<RunSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub best_value: f64,
    pub evaluations_used: u64,
}

impl RestartResult {
    pub fn total_evaluations(&self) -> u64 {
        self.runs.iter().map(|r| r.evaluations_used).sum()
    }
}

/// The MVMO mapping. `h(x) = xbar (1 - e^{-x s1}) + (1 - xbar) e^{-(1-x) s2}`,
/// and the offspring coordinate is `h(x) + (1 - h(1) + h(0)) x - h(0)`,
/// clamped to the unit interval.
pub fn mapping_h(xbar: f64, s1: f64, s2: f64, x: f64) -> f64 {
    let h = |x: f64| xbar * (1.0 - (-x * s1).exp()) + (1.0 - xbar) * (-(1.0 - x) * s2).exp();
    let h0 = h(0.0);
    let h1 = h(1.0);
    (h(x) + (1.0 - h1 + h0) * x - h0).clamp(0.0, 1.0)
}

#[derive(Debug, Clone)]
struct Particle {
    /// Sorted ascending by value; at most `archive_size` entries.
    archive: Vec<(Vec<f64>, f64)>,
    /// Last usable shaping factor per dimension.
    shape: Vec<f64>,
}

impl Particle {
    fn best(&self) -> &(Vec<f64>, f64) {
        &self.archive[0]
    }

    fn offer(&mut self, x: Vec<f64>, v: f64, cap: usize) {
        if self.archive.len() >= cap {
            if !(v < self.archive[cap - 1].1) {
                return;
            }
            self.archive.pop();
        }
        let pos = self.archive.partition_point(|(_, av)| *av <= v);
        self.archive.insert(pos, (x, v));
    }

    /// Per-dimension mean and population variance of the archive.
    fn stats(&self, dim: usize) -> (Vec<f64>, Vec<f64>) {
        let n = self.archive.len() as f64;
        let mut mean = vec![0.0; dim];
        for (x, _) in &self.archive {
            for (m, xi) in mean.iter_mut().zip(x) {
                *m += xi / n;
            }
        }
        let mut var = vec![0.0; dim];
        for (x, _) in &self.archive {
            for ((v, xi), m) in var.iter_mut().zip(x).zip(&mean) {
                *v += (xi - m) * (xi - m) / n;
            }
        }
        (mean, var)
    }
}

struct Evaluator<'a, F, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    fitness: F,
    space: &'a SearchSpace,
    evaluations: u64,
    _e: std::marker::PhantomData<E>,
}

impl<F, E> Evaluator<'_, F, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    fn eval(&mut self, x: &[f64]) -> Result<f64, MvmoError<E>> {
        let point = self.space.denormalize(x);
        self.evaluations += 1;
        match (self.fitness)(&point) {
            Ok(v) if v.is_nan() => Err(MvmoError::NanFitness { point }),
            Ok(v) => Ok(v),
            Err(source) => Err(MvmoError::Fitness { point, source }),
        }
    }
}

fn lift<E>(e: MvmoError) -> MvmoError<E> {
    match e {
        MvmoError::InvalidConfig(s) => MvmoError::InvalidConfig(s),
        MvmoError::InvalidSpace(s) => MvmoError::InvalidSpace(s),
        MvmoError::NanFitness { point } => MvmoError::NanFitness { point },
        MvmoError::Fitness { source, .. } => match source {},
    }
}

/// Minimizes an infallible fitness over the box.
pub fn optimize<F>(
    mut fitness: F,
    space: &SearchSpace,
    config: &OptimizerConfig,
) -> Result<OptimizationResult, MvmoError>
where
    F: FnMut(&[f64]) -> f64,
{
    try_optimize(|x| Ok::<_, Infallible>(fitness(x)), space, config)
}

/// Minimizes a fallible fitness; the first fitness error aborts the run and
/// is returned with the offending point.
pub fn try_optimize<F, E>(
    fitness: F,
    space: &SearchSpace,
    config: &OptimizerConfig,
) -> Result<OptimizationResult, MvmoError<E>>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    let d = space.dim();
    config.validate(d).map_err(lift)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut ev = Evaluator {
        fitness,
        space,
        evaluations: 0,
        _e: std::marker::PhantomData,
    };
    let cap = config.archive_size;
    let np = config.particles;
    let m_initial = config.mutated_dims_initial.unwrap_or(d);
    let mut local_evals = 0u64;

    let mut particles: Vec<Particle> = Vec::with_capacity(np);
    for _ in 0..np {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let v = ev.eval(&x)?;
        particles.push(Particle {
            archive: vec![(x, v)],
            shape: vec![0.0; d],
        });
    }

    let global_best = |ps: &[Particle]| -> usize {
        (0..ps.len())
            .min_by(|&a, &b| ps[a].best().1.total_cmp(&ps[b].best().1))
            .unwrap()
    };
    let mut trace = Vec::with_capacity(config.generations);
    trace.push(particles[global_best(&particles)].best().1);

    for g in 1..config.generations {
        let progress = g as f64 / (config.generations - 1).max(1) as f64;
        let fs = config.shaping_initial + (config.shaping_final - config.shaping_initial) * progress;
        let m = (m_initial as f64 - (m_initial as f64 - config.mutated_dims_final as f64) * progress)
            .round()
            .clamp(1.0, d as f64) as usize;

        // rank particles, best first; ties keep index order
        let mut order: Vec<usize> = (0..np).collect();
        order.sort_by(|&a, &b| {
            particles[a]
                .best()
                .1
                .total_cmp(&particles[b].best().1)
                .then(a.cmp(&b))
        });
        let n_bad = np / 3;
        let n_good = np - n_bad;
        let gb = order[0];
        let lg = order[n_good - 1];

        for k in 0..np {
            let rank = order.iter().position(|&i| i == k).unwrap();
            let parent: Vec<f64> = if rank >= n_good {
                let rg = order[rng.random_range(0..n_good)];
                let beta: f64 = rng.random();
                let (xrg, xgb, xlg) = (
                    &particles[rg].best().0,
                    &particles[gb].best().0,
                    &particles[lg].best().0,
                );
                (0..d)
                    .map(|i| (xrg[i] + beta * (xgb[i] - xlg[i])).clamp(0.0, 1.0))
                    .collect()
            } else {
                particles[k].best().0.clone()
            };

            let (mean, var) = particles[k].stats(d);
            let mut child = parent;
            for i in sample(&mut rng, d, m).iter() {
                if var[i] > 0.0 {
                    particles[k].shape[i] = -var[i].ln() * fs;
                }
                let s = particles[k].shape[i];
                let u: f64 = rng.random();
                child[i] = mapping_h(mean[i], s, s, u);
            }
            let v = ev.eval(&child)?;
            particles[k].offer(child, v, cap);
        }

        if config.local_search_probability > 0.0
            && rng.random::<f64>() < config.local_search_probability
        {
            let gb = global_best(&particles);
            let before = ev.evaluations;
            let (x, v) = coordinate_descent(&mut ev, &particles[gb], d)?;
            local_evals += ev.evaluations - before;
            particles[gb].offer(x, v, cap);
        }

        let best = particles[global_best(&particles)].best().1;
        trace.push(best.min(*trace.last().unwrap()));
    }

    let gb = global_best(&particles);
    let (x, v) = particles[gb].best().clone();
    Ok(OptimizationResult {
        best_point: space.denormalize(&x),
        best_value: v,
        evaluations_used: ev.evaluations,
        local_search_evaluations: local_evals,
        seed: config.seed,
        trace,
    })
}

/// One sweep of +/- steps per coordinate from the particle's best, at most
/// two evaluations per dimension. Step sizes follow the archive spread.
fn coordinate_descent<F, E>(
    ev: &mut Evaluator<'_, F, E>,
    p: &Particle,
    d: usize,
) -> Result<(Vec<f64>, f64), MvmoError<E>>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    let (_, var) = p.stats(d);
    let (mut x, mut v) = p.best().clone();
    for i in 0..d {
        let step = (0.5 * var[i].sqrt()).clamp(1e-6, 0.1);
        for dir in [1.0, -1.0] {
            let mut y = x.clone();
            y[i] = (y[i] + dir * step).clamp(0.0, 1.0);
            if y[i] == x[i] {
                continue;
            }
            let vy = ev.eval(&y)?;
            if vy < v {
                x = y;
                v = vy;
                break;
            }
        }
    }
    Ok((x, v))
}

/// Runs [`try_optimize`] with seeds `seed, seed + 1, ...` and keeps the run
/// with the lowest best value (lowest seed on ties).
pub fn try_best_of_restarts<F, E>(
    mut fitness: F,
    space: &SearchSpace,
    config: &OptimizerConfig,
    n_restarts: usize,
) -> Result<RestartResult, MvmoError<E>>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
{
    if n_restarts < 1 {
        return Err(MvmoError::InvalidConfig("n_restarts must be >= 1".into()));
    }
    let mut best: Option<OptimizationResult> = None;
    let mut runs = Vec::with_capacity(n_restarts);
    for r in 0..n_restarts {
        let cfg = OptimizerConfig {
            seed: config.seed.wrapping_add(r as u64),
            ..config.clone()
        };
        let res = try_optimize(&mut fitness, space, &cfg)?;
        runs.push(RunSummary {
            seed: res.seed,
            best_value: res.best_value,
            evaluations_used: res.evaluations_used,
        });
        if best.as_ref().map_or(true, |b| res.best_value < b.best_value) {
            best = Some(res);
        }
    }
    Ok(RestartResult {
        best: best.unwrap(),
        runs,
    })
}

pub fn best_of_restarts<F>(
    mut fitness: F,
    space: &SearchSpace,
    config: &OptimizerConfig,
    n_restarts: usize,
) -> Result<RestartResult, MvmoError>
where
    F: FnMut(&[f64]) -> f64,
{
    try_best_of_restarts(
        |x| Ok::<_, Infallible>(fitness(x)),
        space,
        config,
        n_restarts,
    )
}
