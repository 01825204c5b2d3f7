//! The Markov operator of a system acting on grid measures, its dual on grid
//! functions, invariant-measure computation, power-tail certificates, and
//! the operator perturbation bound.

use crate::error::{Error, Result};
use crate::measures::{fm_distance, GridMeasure};
use crate::system::{admissibility_check, metric_d0, IfsSystem};

/// Grid used when the solver checks admissibility first.
const ADMISSIBILITY_GRID: usize = 1000;

/// Endpoint cells carrying more than this are reported as leakage.
pub const LEAKAGE_THRESHOLD: f64 = 1e-3;

/// Length of a Cesàro block in [`fixed_point`].
const CESARO_BLOCK: usize = 64;

/// Where node `j` of the output grid reads the input CDF, for each map:
/// `F(s_i(x_j))` is `cdf[k] + t (cdf[k+1] - cdf[k])`.
#[derive(Debug, Clone)]
pub struct GridOperator {
    n_cells: usize,
    probs: Vec<f64>,
    stencils: Vec<Vec<(usize, f64)>>,
}

impl GridOperator {
    pub fn new(system: &IfsSystem, n_cells: usize) -> Self {
        assert!(n_cells > 0, "grid needs at least one cell");
        let n = n_cells as f64;
        let stencils = system
            .maps()
            .iter()
            .map(|g| {
                (0..=n_cells)
                    .map(|j| {
                        let s = g.apply_inverse(j as f64 / n) * n;
                        let k = (s.floor() as usize).min(n_cells - 1);
                        (k, (s - k as f64).clamp(0.0, 1.0))
                    })
                    .collect()
            })
            .collect();
        Self {
            n_cells,
            probs: system.probs().to_vec(),
            stencils,
        }
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// `F_{Pμ}(x_j) = Σ p_i F_μ(s_i(x_j))` with `F_μ` read by linear interpolation.
    pub fn apply(&self, mu: &GridMeasure) -> Result<GridMeasure> {
        if mu.n_cells() != self.n_cells {
            return Err(Error::GridMismatch(self.n_cells, mu.n_cells()));
        }
        let cdf = mu.cdf();
        let mut out = vec![0.0; self.n_cells + 1];
        for (p, stencil) in self.probs.iter().zip(&self.stencils) {
            if *p == 0.0 {
                continue;
            }
            for (o, &(k, t)) in out.iter_mut().zip(stencil) {
                *o += p * (cdf[k] + t * (cdf[k + 1] - cdf[k]));
            }
        }
        out[self.n_cells] = mu.total_mass();
        GridMeasure::from_cdf(out)
    }
}

/// `Pμ = Σ p_i g_i μ` on the grid of `μ`.
pub fn push_forward(system: &IfsSystem, mu: &GridMeasure) -> Result<GridMeasure> {
    GridOperator::new(system, mu.n_cells()).apply(mu)
}

/// Linear interpolation of grid samples `f` (on `0, 1/N, ..., 1`).
pub fn interpolate(f: &[f64], x: f64) -> f64 {
    let n = f.len() - 1;
    let t = x.clamp(0.0, 1.0) * n as f64;
    let k = (t.floor() as usize).min(n - 1);
    let frac = t - k as f64;
    f[k] + frac * (f[k + 1] - f[k])
}

/// `P*f(x_j) = Σ p_i f(g_i(x_j))`, reading `f` between nodes linearly.
pub fn dual_apply(system: &IfsSystem, f: &[f64]) -> Vec<f64> {
    assert!(f.len() >= 2, "grid function needs at least two samples");
    let n = (f.len() - 1) as f64;
    // Σ p_i = 1 only up to rounding; keep constants fixed exactly.
    if f.iter().all(|&v| v == f[0]) {
        return f.to_vec();
    }
    (0..f.len())
        .map(|j| {
            let x = j as f64 / n;
            system
                .maps()
                .iter()
                .zip(system.probs())
                .map(|(g, p)| p * interpolate(f, g.apply(x)))
                .sum()
        })
        .collect()
}

/// `<f, μ>`: the atom at 0 weighted by `f(0)`, each cell by the mean of `f`
/// at its two nodes.
pub fn pairing(f: &[f64], mu: &GridMeasure) -> f64 {
    assert_eq!(f.len(), mu.n_cells() + 1, "function and measure grids differ");
    let cdf = mu.cdf();
    let cells: f64 = cdf
        .windows(2)
        .zip(f.windows(2))
        .map(|(c, v)| 0.5 * (v[0] + v[1]) * (c[1] - c[0]))
        .sum();
    f[0] * cdf[0] + cells
}

/// Cesàro average `(ν + Pν + ... + P^{n-1}ν) / n`.
pub fn krylov_bogolyubov(system: &IfsSystem, nu: &GridMeasure, n: usize) -> Result<GridMeasure> {
    assert!(n > 0, "average needs at least one term");
    let op = GridOperator::new(system, nu.n_cells());
    let mut sum = nu.cdf().to_vec();
    let mut current = nu.clone();
    for _ in 1..n {
        current = op.apply(&current)?;
        for (s, c) in sum.iter_mut().zip(current.cdf()) {
            *s += c;
        }
    }
    let scale = 1.0 / n as f64;
    GridMeasure::from_cdf(sum.into_iter().map(|s| s * scale).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub n_cells: usize,
    /// Refuse systems that fail [`admissibility_check`].
    pub check_admissible: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
            n_cells: crate::measures::DEFAULT_CELLS,
            check_admissible: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub measure: GridMeasure,
    /// `fm(Pμ, μ)` for the returned measure.
    pub residual: f64,
    /// Applications of the operator that were used.
    pub iterations: usize,
    pub converged: bool,
    /// `μ({0})` plus the masses of the first and last cells.
    pub endpoint_mass: f64,
    pub leakage: bool,
}

impl FixedPoint {
    /// Turn a nonconverged run into an error.
    pub fn require_converged(self) -> Result<Self> {
        if self.converged {
            Ok(self)
        } else {
            Err(Error::NotConverged {
                n_cells: self.measure.n_cells(),
                iterations: self.iterations,
                residual: self.residual,
            })
        }
    }
}

/// Invariant measure of an admissible system, starting from Lebesgue measure.
pub fn fixed_point(system: &IfsSystem, opts: &FixedPointOptions) -> Result<FixedPoint> {
    fixed_point_from(system, GridMeasure::uniform(opts.n_cells), opts)
}

/// Damped iteration `μ <- (μ + Pμ)/2` until `fm(Pμ, μ) <= tol`.
///
/// The damping removes the oscillating part of the spectrum. Every 64 steps
/// the block average of the iterates is also tried, and adopted when its
/// residual is smaller.
pub fn fixed_point_from(system: &IfsSystem, start: GridMeasure, opts: &FixedPointOptions) -> Result<FixedPoint> {
    if opts.check_admissible {
        let report = admissibility_check(system, ADMISSIBILITY_GRID)?;
        if !report.admissible() {
            return Err(Error::NotAdmissible(format!(
                "condition (1) margin {:e}, Lyapunov exponents {} and {}",
                report.condition1_margin, report.lyap0, report.lyap1
            )));
        }
    }
    let op = GridOperator::new(system, start.n_cells());
    let mut mu = start;
    let mut block = vec![0.0; mu.n_cells() + 1];
    let mut in_block = 0;
    let mut iterations = 0;
    let mut residual = f64::INFINITY;

    while iterations < opts.max_iter {
        let pmu = op.apply(&mu)?;
        iterations += 1;
        residual = fm_distance(&pmu, &mu)?;
        if residual <= opts.tol {
            break;
        }
        let next: Vec<f64> = mu.cdf().iter().zip(pmu.cdf()).map(|(a, b)| 0.5 * (a + b)).collect();
        mu = GridMeasure::from_cdf(next)?;
        for (s, c) in block.iter_mut().zip(mu.cdf()) {
            *s += c;
        }
        in_block += 1;
        if in_block == CESARO_BLOCK && iterations < opts.max_iter {
            let avg = GridMeasure::from_cdf(block.iter().map(|s| s / CESARO_BLOCK as f64).collect())?;
            let p_avg = op.apply(&avg)?;
            iterations += 1;
            let r_avg = fm_distance(&p_avg, &avg)?;
            if r_avg < residual {
                mu = avg;
                residual = r_avg;
                if residual <= opts.tol {
                    break;
                }
            }
            block.iter_mut().for_each(|s| *s = 0.0);
            in_block = 0;
        }
    }
    if residual > opts.tol {
        // The loop ran out after updating μ; report the residual of what we return.
        residual = fm_distance(&op.apply(&mu)?, &mu)?;
    }

    let masses = mu.cell_masses();
    let endpoint_mass = masses[0] + if masses.len() > 1 { masses[masses.len() - 1] } else { 0.0 };
    Ok(FixedPoint {
        converged: residual <= opts.tol,
        residual,
        iterations,
        endpoint_mass,
        leakage: endpoint_mass > LEAKAGE_THRESHOLD,
        measure: mu,
    })
}

/// Power-tail data at one endpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct EndpointBound {
    pub x0: f64,
    pub lambdas: Vec<f64>,
    /// `Λ = Σ p_i ln λ_i`.
    pub lambda_sum: f64,
    /// Upper end of `{α : F(α) < 1}`.
    pub alpha_max: f64,
}

impl EndpointBound {
    /// `F(α) = Σ p_i λ_i^{-α}`.
    pub fn f(&self, probs: &[f64], alpha: f64) -> f64 {
        probs.iter().zip(&self.lambdas).map(|(p, l)| p * l.powf(-alpha)).sum()
    }
}

/// Witnesses `(M, α)` such that `P` maps `N_{M,α}` into itself.
#[derive(Debug, Clone, PartialEq)]
pub struct TailBoundCert {
    pub left: EndpointBound,
    pub right: EndpointBound,
    pub alpha: f64,
    pub m: f64,
    /// `max(F_left(α), F_right(α))`.
    pub f_alpha: f64,
}

impl TailBoundCert {
    pub fn x0(&self) -> f64 {
        self.left.x0.min(self.right.x0)
    }

    /// `key=value` lines for the left endpoint followed by the combined data.
    pub fn to_key_values(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|l| format!("{l}")).collect::<Vec<_>>().join(",");
        format!(
            "x0={}\nlambdas={}\nLambda={}\nx0_right={}\nlambdas_right={}\nLambda_right={}\nalpha={}\nM={}\nF_alpha={}\n",
            self.left.x0,
            list(&self.left.lambdas),
            self.left.lambda_sum,
            self.right.x0,
            list(&self.right.lambdas),
            self.right.lambda_sum,
            self.alpha,
            self.m,
            self.f_alpha,
        )
    }
}

/// Smallest `x₀` tried before giving up.
const MIN_X0: f64 = 1e-6;

fn endpoint_bound(system: &IfsSystem) -> Result<EndpointBound> {
    let reach = system
        .maps()
        .iter()
        .map(|g| g.smooth_reach_at_zero())
        .fold(f64::INFINITY, f64::min);
    let start = reach.max(system.beta()).min(0.5);
    let mut k = 0;
    loop {
        let x0 = start * (-(k as f64) / 4.0).exp2();
        if x0 < MIN_X0 {
            return Err(Error::NoCertificate(format!(
                "no x0 down to {MIN_X0} gives a positive Lyapunov sum"
            )));
        }
        // g_i^{-1}(x) <= x / λ_i on [0, x0] iff g_i(t) >= λ_i t on [0, g_i^{-1}(x0)].
        let lambdas: Vec<f64> = system
            .maps()
            .iter()
            .map(|g| g.ratio_infimum(g.apply_inverse(x0)))
            .collect();
        let usable = system
            .probs()
            .iter()
            .zip(&lambdas)
            .all(|(&p, &l)| p == 0.0 || l > 0.0);
        if usable {
            let lambda_sum: f64 = system
                .probs()
                .iter()
                .zip(&lambdas)
                .filter(|(&p, _)| p > 0.0)
                .map(|(p, l)| p * l.ln())
                .sum();
            if lambda_sum > 0.0 {
                let mut bound = EndpointBound {
                    x0,
                    lambdas,
                    lambda_sum,
                    alpha_max: 1.0,
                };
                bound.alpha_max = feasible_alpha_end(&bound, system.probs());
                return Ok(bound);
            }
        }
        k += 1;
    }
}

/// `F` is convex with `F(0) = 1` and `F'(0) = -Λ < 0`, so `{F < 1}` is an
/// interval `(0, r)`; bisect for `r`, capped at 1.
fn feasible_alpha_end(bound: &EndpointBound, probs: &[f64]) -> f64 {
    const F_TOL: f64 = 1e-12;
    if bound.f(probs, 1.0) <= 1.0 + F_TOL {
        return 1.0;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if bound.f(probs, mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    lo
}

/// Constructive `(M, α)` for both endpoints: the right endpoint is handled
/// through the mirrored system.
pub fn tail_bound_certificate(system: &IfsSystem) -> Result<TailBoundCert> {
    let left = endpoint_bound(system)?;
    let right = endpoint_bound(&system.mirrored())?;
    let alpha = 0.5 * left.alpha_max.min(right.alpha_max);
    let m = left.x0.powf(-alpha).max(right.x0.powf(-alpha));
    let f_alpha = left.f(system.probs(), alpha).max(right.f(system.probs(), alpha));
    Ok(TailBoundCert {
        left,
        right,
        alpha,
        m,
        f_alpha,
    })
}

/// `μ({0})` followed by the cell masses, each read as an atom at its right node.
fn node_masses(mu: &GridMeasure) -> Vec<f64> {
    let cdf = mu.cdf();
    let mut out = Vec::with_capacity(cdf.len());
    out.push(cdf[0]);
    out.extend(cdf.windows(2).map(|w| w[1] - w[0]));
    out
}

/// Signed atoms `(location, weight)` of `Σ p_i g_i ν` for node weights `ν`.
fn atomic_push(system: &IfsSystem, node_mass: &[f64], sign: f64, out: &mut Vec<(f64, f64)>) {
    let n = (node_mass.len() - 1) as f64;
    for (g, &p) in system.maps().iter().zip(system.probs()) {
        for (j, &w) in node_mass.iter().enumerate() {
            if w != 0.0 && p != 0.0 {
                out.push((g.apply(j as f64 / n), sign * p * w));
            }
        }
    }
}

/// FM norm of a zero-mass signed atomic measure: the L¹ norm of its CDF.
fn zero_mass_fm_norm(mut atoms: Vec<(f64, f64)>) -> f64 {
    atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut grouped: Vec<(f64, f64)> = Vec::with_capacity(atoms.len());
    for (x, w) in atoms {
        match grouped.last_mut() {
            Some(last) if last.0 == x => last.1 += w,
            _ => grouped.push((x, w)),
        }
    }
    let mut running = 0.0;
    let mut total = 0.0;
    for pair in grouped.windows(2) {
        running += pair[0].1;
        total += running.abs() * (pair[1].0 - pair[0].0);
    }
    total
}

/// `‖(P_S - P_T)(μ₁ - μ₂)‖_FM / ((μ₁[0,1] + μ₂[0,1]) d₀(S, T))`, which the
/// perturbation bound keeps at most 1. Pushforwards are taken exactly on
/// the atoms at grid nodes, so no interpolation error enters the ratio.
pub fn perturbation_inequality_check(
    s: &IfsSystem,
    t: &IfsSystem,
    mu1: &GridMeasure,
    mu2: &GridMeasure,
) -> Result<f64> {
    let d0 = metric_d0(s, t)?;
    if d0 == 0.0 {
        // Identical systems: the numerator vanishes exactly.
        return Ok(0.0);
    }
    if (mu1.total_mass() - mu2.total_mass()).abs() > crate::measures::MASS_TOL {
        return Err(Error::UnequalMass(mu1.total_mass(), mu2.total_mass()));
    }
    let diff: Vec<f64> = node_masses(mu1).iter().zip(node_masses(mu2)).map(|(a, b)| a - b).collect();
    let mut atoms = Vec::new();
    atomic_push(s, &diff, 1.0, &mut atoms);
    atomic_push(t, &diff, -1.0, &mut atoms);
    let numerator = zero_mass_fm_norm(atoms);
    if numerator == 0.0 {
        return Ok(0.0);
    }
    Ok(numerator / ((mu1.total_mass() + mu2.total_mass()) * d0))
}
