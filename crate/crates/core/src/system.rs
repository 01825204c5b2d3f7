//! Iterated function systems `(Γ, p)`, the distances `d` and `d₀` between
//! them, and admissibility checks.

use crate::diagnostics;
use crate::error::{Error, Result};
use crate::interval_maps::{
    inverse_sup_distance, sup_distance, validate_cbeta, window_derivative_distance, IntervalMap,
};

/// Default boundary window for the C¹ requirement near 0 and 1.
pub const DEFAULT_BETA: f64 = 0.05;

/// Probability vectors may miss 1 by at most this much.
pub const PROB_SUM_TOL: f64 = 1e-12;

/// Grid-refinement stop: two successive margins within this distance.
const MARGIN_STABLE_TOL: f64 = 1e-9;

/// A finite family of maps with selection probabilities and a boundary window.
#[derive(Debug, Clone, PartialEq)]
pub struct IfsSystem {
    maps: Vec<IntervalMap>,
    probs: Vec<f64>,
    beta: f64,
}

impl IfsSystem {
    pub fn new(maps: Vec<IntervalMap>, probs: Vec<f64>, beta: f64) -> Result<Self> {
        if maps.is_empty() {
            return Err(Error::InvalidSystem("a system needs at least one map".into()));
        }
        if maps.len() != probs.len() {
            return Err(Error::InvalidSystem(format!(
                "{} maps but {} probabilities",
                maps.len(),
                probs.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(p.is_finite() && **p >= 0.0)) {
            return Err(Error::InvalidSystem(format!("probability {p} is negative or not finite")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > PROB_SUM_TOL {
            return Err(Error::InvalidSystem(format!("probabilities sum to {total}, not 1")));
        }
        if !(beta > 0.0 && beta < 0.5) {
            return Err(Error::InvalidSystem(format!("β = {beta} must lie in (0, 1/2)")));
        }
        for (i, map) in maps.iter().enumerate() {
            let report = validate_cbeta(map, beta);
            if !report.is_valid() {
                return Err(Error::InvalidSystem(format!(
                    "map {i}: {}",
                    report.violations.join("; ")
                )));
            }
        }
        Ok(Self { maps, probs, beta })
    }

    pub fn k(&self) -> usize {
        self.maps.len()
    }

    pub fn maps(&self) -> &[IntervalMap] {
        &self.maps
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Same system with the given map replaced.
    pub fn with_map(&self, index: usize, map: IntervalMap) -> Result<Self> {
        if index >= self.k() {
            return Err(Error::InvalidSymbol { index, k: self.k() });
        }
        let mut maps = self.maps.clone();
        maps[index] = map;
        Self::new(maps, self.probs.clone(), self.beta)
    }

    pub fn with_probs(&self, probs: Vec<f64>) -> Result<Self> {
        Self::new(self.maps.clone(), probs, self.beta)
    }

    pub fn is_piecewise_linear(&self) -> bool {
        self.maps.iter().all(IntervalMap::is_piecewise_linear)
    }

    pub fn is_homeomorphic(&self) -> bool {
        self.maps.iter().all(IntervalMap::is_homeomorphism)
    }

    /// The system conjugated by `x -> 1 - x`.
    pub fn mirrored(&self) -> Self {
        Self {
            maps: self.maps.iter().map(IntervalMap::mirrored).collect(),
            probs: self.probs.clone(),
            beta: self.beta,
        }
    }

    /// `min(x - min_i g_i(x), max_j g_j(x) - x)`.
    pub fn gap_envelope(&self, x: f64) -> f64 {
        let (lo, hi) = self.maps.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), g| {
            let y = g.apply(x);
            (lo.min(y), hi.max(y))
        });
        (x - lo).min(hi - x)
    }

    /// Minimum of [`gap_envelope`](Self::gap_envelope) over `[a, b]`.
    ///
    /// Exact for piecewise-linear systems: on every interval between merged
    /// knots all maps are affine, so the envelope's breakpoints are pairwise
    /// crossings of affine pieces and are enumerated directly. Other systems
    /// use a grid of `grid_n` cells, doubled until the minimum stabilizes.
    pub fn gap_envelope_min(&self, a: f64, b: f64, grid_n: usize) -> f64 {
        assert!(a <= b, "empty interval [{a}, {b}]");
        if self.is_piecewise_linear() {
            return self.gap_envelope_min_exact(a, b);
        }
        let extras: Vec<f64> = self.maps.iter().flat_map(IntervalMap::breakpoints).collect();
        let mut cells = grid_n.max(16);
        let mut prev = self.gap_envelope_min_grid(a, b, cells, &extras);
        for _ in 0..8 {
            cells *= 2;
            let next = self.gap_envelope_min_grid(a, b, cells, &extras);
            let stable = (next - prev).abs() <= MARGIN_STABLE_TOL;
            prev = next;
            if stable {
                break;
            }
        }
        prev
    }

    fn gap_envelope_min_grid(&self, a: f64, b: f64, cells: usize, extras: &[f64]) -> f64 {
        let pts = crate::interval_maps::augmented_grid(a, b, cells, extras);
        -crate::interval_maps::sup_over(&pts, |x| -self.gap_envelope(x), true)
    }

    fn gap_envelope_min_exact(&self, a: f64, b: f64) -> f64 {
        let mut cuts: Vec<f64> = self
            .maps
            .iter()
            .flat_map(IntervalMap::breakpoints)
            .filter(|&x| x > a && x < b)
            .collect();
        cuts.push(a);
        cuts.push(b);
        cuts.sort_by(f64::total_cmp);
        cuts.dedup();

        let mut best = f64::INFINITY;
        let mut lines = Vec::with_capacity(2 * self.k());
        for w in cuts.windows(2) {
            let (l, r) = (w[0], w[1]);
            best = best.min(self.gap_envelope(l));
            if r <= l {
                continue;
            }
            // Affine pieces x - g_i(x) and g_j(x) - x as (value at l, value at r).
            lines.clear();
            for g in &self.maps {
                let (gl, gr) = (g.apply(l), g.apply(r));
                lines.push((l - gl, r - gr));
                lines.push((gl - l, gr - r));
            }
            for (i, &(pl, pr)) in lines.iter().enumerate() {
                for &(ql, qr) in &lines[i + 1..] {
                    let (dl, dr) = (pl - ql, pr - qr);
                    if dl * dr < 0.0 {
                        let t = dl / (dl - dr);
                        best = best.min(self.gap_envelope(l + t * (r - l)));
                    }
                }
            }
        }
        best.min(self.gap_envelope(b))
    }

    /// `(Σ p_i log g_i'(0), Σ p_i log g_i'(1))`.
    pub fn lyapunov_exponents(&self) -> Result<(f64, f64)> {
        let mut at0 = 0.0;
        let mut at1 = 0.0;
        for (g, &p) in self.maps.iter().zip(&self.probs) {
            at0 += p * g.derivative_at_zero()?.ln();
            at1 += p * g.derivative_at_one()?.ln();
        }
        Ok((at0, at1))
    }
}

/// Options for [`admissibility_check_with`].
#[derive(Debug, Clone, Copy)]
pub struct CheckOptions {
    /// Condition (1) is checked on `[h, 1 - h]`, `h = 1/(grid_n + 1)`.
    pub grid_n: usize,
    /// The gap margin δ₀ is taken over `(1/n, 1 - 1/n)`.
    pub margin_n: usize,
    /// Continued-fraction depth for the log-derivative ratio.
    pub cf_depth: usize,
}

impl Default for CheckOptions {
    fn default() -> Self {
        Self {
            grid_n: 1000,
            margin_n: 10,
            cf_depth: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdmissibilityReport {
    pub condition1_margin: f64,
    pub lyap0: f64,
    pub lyap1: f64,
    pub probs_positive: bool,
    /// Gap margin on `(1/n, 1 - 1/n)`; `None` when it is not positive.
    pub delta0: Option<f64>,
    /// Largest Lyapunov margin; `None` when an exponent is not positive.
    pub delta2: Option<f64>,
    /// Expansion of `|ln a / ln b|` for the steepest expanding and the
    /// strongest contracting derivative at 0, if both exist.
    pub ratio_cf: Option<ContinuedFraction>,
}

impl AdmissibilityReport {
    pub fn admissible(&self) -> bool {
        self.condition1_margin > 0.0 && self.lyap0 > 0.0 && self.lyap1 > 0.0 && self.probs_positive
    }
}

pub fn admissibility_check(system: &IfsSystem, grid_n: usize) -> Result<AdmissibilityReport> {
    admissibility_check_with(
        system,
        &CheckOptions {
            grid_n,
            ..CheckOptions::default()
        },
    )
}

pub fn admissibility_check_with(system: &IfsSystem, opts: &CheckOptions) -> Result<AdmissibilityReport> {
    let (lyap0, lyap1) = system.lyapunov_exponents()?;
    let h = 1.0 / (opts.grid_n as f64 + 1.0);
    let condition1_margin = system.gap_envelope_min(h, 1.0 - h, opts.grid_n);
    let probs_positive = system.probs().iter().all(|&p| p > 0.0);
    let delta0 = diagnostics::gap_margin(system, opts.margin_n).ok();
    let delta2 = diagnostics::lyapunov_margin(system).ok().map(|m| m.delta2);

    let derivs: Vec<f64> = system
        .maps()
        .iter()
        .map(IntervalMap::derivative_at_zero)
        .collect::<Result<_>>()?;
    let a = derivs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let b = derivs.iter().copied().fold(f64::INFINITY, f64::min);
    let ratio_cf = (a > 1.0 && b < 1.0).then(|| irrationality_heuristic(a, b, opts.cf_depth));

    Ok(AdmissibilityReport {
        condition1_margin,
        lyap0,
        lyap1,
        probs_positive,
        delta0,
        delta2,
        ratio_cf,
    })
}

fn check_same_k(s: &IfsSystem, t: &IfsSystem) -> Result<()> {
    if s.k() != t.k() {
        return Err(Error::SizeMismatch(s.k(), t.k()));
    }
    Ok(())
}

/// `d₀ = Σ (|p_i - q_i| + ‖S_i - T_i‖)`; plateau maps are allowed.
pub fn metric_d0(s: &IfsSystem, t: &IfsSystem) -> Result<f64> {
    check_same_k(s, t)?;
    Ok(s.maps()
        .iter()
        .zip(t.maps())
        .zip(s.probs().iter().zip(t.probs()))
        .map(|((g, h), (p, q))| (p - q).abs() + sup_distance(g, h))
        .sum())
}

/// `d = Σ (|p_i - q_i| + ‖g_i - h_i‖ + ‖g_i⁻¹ - h_i⁻¹‖ + sup_window |g_i' - h_i'|)`.
pub fn metric_d(s: &IfsSystem, t: &IfsSystem) -> Result<f64> {
    check_same_k(s, t)?;
    if s.beta() != t.beta() {
        return Err(Error::MetricUndefined(format!(
            "boundary windows differ ({} vs {})",
            s.beta(),
            t.beta()
        )));
    }
    let mut total = 0.0;
    for ((g, h), (p, q)) in s.maps().iter().zip(t.maps()).zip(s.probs().iter().zip(t.probs())) {
        total += (p - q).abs()
            + sup_distance(g, h)
            + inverse_sup_distance(g, h)?
            + window_derivative_distance(g, h, s.beta());
    }
    Ok(total)
}

/// Continued-fraction expansion of a positive ratio.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuedFraction {
    pub ratio: f64,
    pub terms: Vec<u64>,
    pub convergents: Vec<(u64, u64)>,
    /// `|ratio - p/q|` for the last convergent.
    pub approx_error: f64,
    /// Some convergent with denominator at most `depth` reproduces the ratio.
    pub resonant: bool,
}

/// Continued fraction of `|ln a / ln b|` to `depth` terms.
///
/// Irrationality cannot be decided from floating-point data; this reports
/// whether the ratio is numerically a low-denominator rational.
pub fn irrationality_heuristic(a: f64, b: f64, depth: usize) -> ContinuedFraction {
    const SNAP: f64 = 1e-9;
    let ratio = (a.ln() / b.ln()).abs();
    let mut terms = Vec::new();
    let mut convergents: Vec<(u64, u64)> = Vec::new();
    let (mut p_prev, mut q_prev) = (1u64, 0u64);
    let (mut p_prev2, mut q_prev2) = (0u64, 1u64);
    let mut r = ratio;
    for _ in 0..depth.max(1) {
        if !r.is_finite() || r > u64::MAX as f64 {
            break;
        }
        let nearest = r.round();
        let term = if (r - nearest).abs() < SNAP { nearest } else { r.floor() };
        let a_n = term as u64;
        let next = a_n
            .checked_mul(p_prev)
            .and_then(|v| v.checked_add(p_prev2))
            .zip(a_n.checked_mul(q_prev).and_then(|v| v.checked_add(q_prev2)));
        let Some((p, q)) = next else { break };
        terms.push(a_n);
        convergents.push((p, q));
        (p_prev2, q_prev2, p_prev, q_prev) = (p_prev, q_prev, p, q);
        let frac = r - term;
        if frac.abs() < SNAP {
            break;
        }
        r = 1.0 / frac;
    }
    let approx_error = convergents
        .last()
        .map_or(f64::INFINITY, |&(p, q)| (ratio - p as f64 / q as f64).abs());
    let resonant = convergents
        .iter()
        .any(|&(p, q)| q as usize <= depth && (ratio - p as f64 / q as f64).abs() <= SNAP * ratio.max(1.0));
    ContinuedFraction {
        ratio,
        terms,
        convergents,
        approx_error,
        resonant,
    }
}
