//! Random-word estimators: forward orbits, backward iteration of interval
//! images, and martingale traces along a random word.
//!
//! Every trial draws from its own ChaCha stream keyed by `(seed, trial)`, so
//! ensembles give identical results whatever the thread count.

use std::io::Write;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measures::GridMeasure;
use crate::system::IfsSystem;
use crate::transfer::pairing;

/// Default margin of the backward starting interval `[η, 1 - η]`.
pub const DEFAULT_ETA: f64 = 0.01;

/// Generator for one trial of an experiment.
pub fn rng_for(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Draws symbols `0..k` i.i.d. with the system's probabilities.
#[derive(Debug, Clone)]
pub struct SymbolSampler {
    cumulative: Vec<f64>,
    last: usize,
}

impl SymbolSampler {
    pub fn new(probs: &[f64]) -> Self {
        let mut acc = 0.0;
        let cumulative = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        // Rounding can leave the total just under 1; the overflow goes to
        // the last symbol that has positive weight.
        let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        Self { cumulative, last }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.gen();
        self.cumulative.iter().position(|&c| u < c).unwrap_or(self.last)
    }
}

/// A forward orbit `x_t = g_{i_t}(x_{t-1})` and its empirical measure.
#[derive(Debug, Clone)]
pub struct OrbitRun {
    pub seed: u64,
    pub trial: u64,
    /// Symbols `i_1, ..., i_n` (0-based).
    pub word: Vec<usize>,
    pub length: usize,
    pub burn: usize,
    /// Empirical measure of `x_{burn+1}, ..., x_n`.
    pub measure: GridMeasure,
}

/// Run `n` forward steps from `x0` and bin the points after `burn`.
pub fn forward_orbit(
    system: &IfsSystem,
    x0: f64,
    n: usize,
    burn: usize,
    seed: u64,
    trial: u64,
    n_cells: usize,
) -> Result<OrbitRun> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(Error::Domain { value: x0 });
    }
    if n <= burn {
        return Err(Error::InvalidMeasure(format!("orbit length {n} does not exceed burn-in {burn}")));
    }
    let mut rng = rng_for(seed, trial);
    let sampler = SymbolSampler::new(system.probs());
    let maps = system.maps();
    let mut word = Vec::with_capacity(n);
    let mut counts = vec![0u64; n_cells + 1];
    let mut x = x0;
    for t in 1..=n {
        let i = sampler.draw(&mut rng);
        word.push(i);
        x = maps[i].apply(x);
        if t > burn {
            counts[((x * n_cells as f64).ceil() as usize).min(n_cells)] += 1;
        }
    }
    let kept = (n - burn) as f64;
    let mut acc = 0u64;
    let cdf = counts
        .into_iter()
        .map(|c| {
            acc += c;
            acc as f64 / kept
        })
        .collect();
    Ok(OrbitRun {
        seed,
        trial,
        word,
        length: n,
        burn,
        measure: GridMeasure::from_cdf(cdf)?,
    })
}

/// Fraction of `cells` equal cells visited by a forward orbit from 1/2.
pub fn orbit_coverage(system: &IfsSystem, cells: usize, length: usize, seed: u64) -> f64 {
    let mut rng = rng_for(seed, 0);
    let sampler = SymbolSampler::new(system.probs());
    let mut seen = vec![false; cells];
    let mut x = 0.5;
    for _ in 0..length {
        x = system.maps()[sampler.draw(&mut rng)].apply(x);
        let c = ((x * cells as f64) as usize).min(cells - 1);
        seen[c] = true;
    }
    seen.iter().filter(|&&s| s).count() as f64 / cells as f64
}

/// Result of one backward-iteration run.
#[derive(Debug, Clone, PartialEq)]
pub struct BackwardSample {
    pub trial: u64,
    pub seed: u64,
    /// Midpoint of the final image interval.
    pub v: f64,
    /// Word length at which the run stopped.
    pub n_stop: usize,
    pub final_diameter: f64,
    pub converged: bool,
}

/// Settings shared by the backward sampler and its ensembles.
#[derive(Debug, Clone, Copy)]
pub struct BackwardOptions {
    pub a: f64,
    pub b: f64,
    pub tol: f64,
    pub max_n: usize,
}

impl Default for BackwardOptions {
    fn default() -> Self {
        Self {
            a: DEFAULT_ETA,
            b: 1.0 - DEFAULT_ETA,
            tol: 1e-10,
            max_n: 100_000,
        }
    }
}

impl BackwardOptions {
    fn validate(&self) -> Result<()> {
        if !(0.0 < self.a && self.a < self.b && self.b < 1.0) {
            return Err(Error::Domain {
                value: if self.a <= 0.0 { self.a } else { self.b },
            });
        }
        if !(self.tol > 0.0) || self.max_n == 0 {
            return Err(Error::InvalidSystem("tolerance and max_n must be positive".into()));
        }
        Ok(())
    }
}

/// Image of `[a, b]` under `g_{w_1} ∘ ... ∘ g_{w_n}` (the last symbol acts first).
pub fn backward_image(system: &IfsSystem, word: &[usize], a: f64, b: f64) -> (f64, f64) {
    let maps = system.maps();
    word.iter().rev().fold((a, b), |(lo, hi), &i| (maps[i].apply(lo), maps[i].apply(hi)))
}

/// Backward iteration along one random word.
///
/// The image of `[a, b]` under `g_{u_1} ∘ ... ∘ g_{u_n}` is recomputed from the
/// inside at word lengths 1, 2, 4, ... (capped at `max_n`), and the run stops
/// at the first length whose image is shorter than `tol`. Recomputing rather
/// than extending keeps the composition order exact; the doubling keeps the
/// total work below `4 n_stop` map evaluations.
pub fn backward_sample(system: &IfsSystem, opts: &BackwardOptions, seed: u64, trial: u64) -> Result<BackwardSample> {
    opts.validate()?;
    let mut rng = rng_for(seed, trial);
    let sampler = SymbolSampler::new(system.probs());
    let mut word: Vec<usize> = Vec::new();
    let mut n = 1;
    loop {
        while word.len() < n {
            word.push(sampler.draw(&mut rng));
        }
        let (lo, hi) = backward_image(system, &word, opts.a, opts.b);
        let diameter = hi - lo;
        let converged = diameter < opts.tol;
        if converged || n == opts.max_n {
            return Ok(BackwardSample {
                trial,
                seed,
                v: 0.5 * (lo + hi),
                n_stop: n,
                final_diameter: diameter,
                converged,
            });
        }
        n = (2 * n).min(opts.max_n);
    }
}

/// Independent backward samples for trials `0..trials`, in trial order.
pub fn backward_ensemble(
    system: &IfsSystem,
    opts: &BackwardOptions,
    seed: u64,
    trials: usize,
) -> Result<Vec<BackwardSample>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| backward_sample(system, opts, seed, t))
        .collect()
}

/// Law of the converged backward samples as a grid measure.
pub fn empirical_measure(samples: &[BackwardSample], n_cells: usize) -> Result<GridMeasure> {
    let kept: Vec<f64> = samples.iter().filter(|s| s.converged).map(|s| s.v).collect();
    if kept.is_empty() {
        return Err(Error::InvalidMeasure("no converged samples".into()));
    }
    let w = 1.0 / kept.len() as f64;
    let atoms: Vec<(f64, f64)> = kept.into_iter().map(|v| (v, w)).collect();
    GridMeasure::from_atoms(&atoms, n_cells)
}

/// Stopping-time summary of a backward ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct DiameterStats {
    pub trials: usize,
    /// Quantiles of `n_stop` over converged trials (`None` if none converged).
    pub median: Option<usize>,
    pub p90: Option<usize>,
    pub p99: Option<usize>,
    pub nonconverged_fraction: f64,
}

impl DiameterStats {
    pub fn from_samples(samples: &[BackwardSample]) -> Self {
        let mut stops: Vec<usize> = samples.iter().filter(|s| s.converged).map(|s| s.n_stop).collect();
        stops.sort_unstable();
        // Nearest-rank quantile.
        let q = |p: f64| -> Option<usize> {
            if stops.is_empty() {
                return None;
            }
            let rank = ((p * stops.len() as f64).ceil() as usize).clamp(1, stops.len());
            Some(stops[rank - 1])
        };
        let trials = samples.len();
        Self {
            trials,
            median: q(0.5),
            p90: q(0.9),
            p99: q(0.99),
            nonconverged_fraction: if trials == 0 {
                0.0
            } else {
                (trials - stops.len()) as f64 / trials as f64
            },
        }
    }
}

pub fn diameter_stats(system: &IfsSystem, opts: &BackwardOptions, seed: u64, trials: usize) -> Result<DiameterStats> {
    Ok(DiameterStats::from_samples(&backward_ensemble(system, opts, seed, trials)?))
}

/// CSV with header `trial,seed,v,n_stop,final_diameter`.
pub fn write_samples_csv<W: Write>(samples: &[BackwardSample], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["trial", "seed", "v", "n_stop", "final_diameter"])?;
    for s in samples {
        w.write_record([
            s.trial.to_string(),
            s.seed.to_string(),
            crate::format_f64(s.v),
            s.n_stop.to_string(),
            crate::format_f64(s.final_diameter),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `ξ_1, ..., ξ_n` with `ξ_m = ∫ f(g_{i_1} ∘ ... ∘ g_{i_m}(x)) μ(dx)` along one
/// random word.
///
/// The image measure `ν_m` of `μ` has CDF `F_μ(s_m(y))` where
/// `s_m = s_{i_m} ∘ s_{m-1}` composes generalized inverses, so each step
/// costs one inverse evaluation per grid node.
pub fn martingale_trace(system: &IfsSystem, f: &[f64], mu: &GridMeasure, n: usize, seed: u64, trial: u64) -> Result<Vec<f64>> {
    let n_cells = mu.n_cells();
    if f.len() != n_cells + 1 {
        return Err(Error::GridMismatch(n_cells, f.len().saturating_sub(1)));
    }
    let mut rng = rng_for(seed, trial);
    let sampler = SymbolSampler::new(system.probs());
    let mut z: Vec<f64> = (0..=n_cells).map(|j| j as f64 / n_cells as f64).collect();
    let mut cdf = vec![0.0; n_cells + 1];
    let mut trace = Vec::with_capacity(n);
    for _ in 0..n {
        let g = &system.maps()[sampler.draw(&mut rng)];
        for zj in z.iter_mut() {
            *zj = g.apply_inverse(*zj);
        }
        for (c, &zj) in cdf.iter_mut().zip(&z) {
            *c = mu.cdf_at(zj);
        }
        cdf[n_cells] = mu.total_mass();
        trace.push(pairing(f, &GridMeasure::from_cdf(cdf.clone())?));
    }
    Ok(trace)
}

/// Traces for trials `0..trials`, in trial order.
pub fn martingale_ensemble(
    system: &IfsSystem,
    f: &[f64],
    mu: &GridMeasure,
    n: usize,
    seed: u64,
    trials: usize,
) -> Result<Vec<Vec<f64>>> {
    (0..trials as u64)
        .into_par_iter()
        .map(|t| martingale_trace(system, f, mu, n, seed, t))
        .collect()
}
