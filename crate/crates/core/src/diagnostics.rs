//! Robustness margins of admissible systems and concentration evidence for
//! singular invariant measures.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interval_maps::IntervalMap;
use crate::measures::{concentration_profile, m1_epsilon_membership, GridMeasure};
use crate::sampling::rng_for;
use crate::system::{admissibility_check, metric_d, IfsSystem};
use crate::transfer::{fixed_point, FixedPointOptions};

/// Grid used by the probe's admissibility checks.
const PROBE_GRID: usize = 1000;

/// Gap margin `δ₀ = min over [1/n, 1 - 1/n] of min(x - min g_i(x), max g_j(x) - x)`.
pub fn gap_margin(system: &IfsSystem, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::NonPositiveMargin(format!("interval (1/{n}, 1 - 1/{n}) is empty")));
    }
    let h = 1.0 / n as f64;
    let margin = system.gap_envelope_min(h, 1.0 - h, 4 * n);
    if margin > 0.0 {
        Ok(margin)
    } else {
        Err(Error::NonPositiveMargin(format!("gap margin {margin} on (1/{n}, 1 - 1/{n})")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovMargin {
    /// Largest δ with `Σ p_i ln(g_i' - δ) > 0` at both endpoints.
    pub delta2: f64,
    /// Half of `delta2`.
    pub safe: f64,
}

/// Largest uniform decrease of the endpoint derivatives that keeps both
/// Lyapunov exponents positive, found by bisection.
pub fn lyapunov_margin(system: &IfsSystem) -> Result<LyapunovMargin> {
    let (l0, l1) = system.lyapunov_exponents()?;
    if l0 <= 0.0 || l1 <= 0.0 {
        return Err(Error::NonPositiveMargin(format!("Lyapunov exponents {l0} and {l1}")));
    }
    let d0: Vec<f64> = system.maps().iter().map(IntervalMap::derivative_at_zero).collect::<Result<_>>()?;
    let d1: Vec<f64> = system.maps().iter().map(IntervalMap::derivative_at_one).collect::<Result<_>>()?;
    let cap = d0.iter().chain(&d1).copied().fold(f64::INFINITY, f64::min);
    let feasible = |delta: f64| {
        let sum = |ds: &[f64]| -> f64 {
            ds.iter()
                .zip(system.probs())
                .filter(|(_, &p)| p > 0.0)
                .map(|(d, p)| p * (d - delta).ln())
                .sum()
        };
        delta < cap && sum(&d0) > 0.0 && sum(&d1) > 0.0
    };
    let (mut lo, mut hi) = (0.0, cap);
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(LyapunovMargin {
        delta2: lo,
        safe: 0.5 * lo,
    })
}

/// Concentration data of one measure.
#[derive(Debug, Clone, PartialEq)]
pub struct LadderRow {
    pub n_cells: usize,
    /// `(q, L_N(q))`.
    pub sizes: Vec<(f64, f64)>,
    /// `N · max cell mass`.
    pub density_sup: f64,
    pub max_cell_mass: f64,
    /// `(ε, member of M₁^ε)`.
    pub m1: Vec<(f64, bool)>,
}

impl LadderRow {
    pub fn from_measure(mu: &GridMeasure, levels: &[f64], epsilons: &[f64]) -> Self {
        let profile = concentration_profile(mu, levels);
        let density_sup = mu.density_sup();
        Self {
            n_cells: mu.n_cells(),
            sizes: profile.levels,
            density_sup,
            max_cell_mass: density_sup / mu.n_cells() as f64,
            m1: epsilons.iter().map(|&e| (e, m1_epsilon_membership(mu, e).member)).collect(),
        }
    }

    pub fn size_at(&self, q: f64) -> Option<f64> {
        self.sizes.iter().find(|(l, _)| *l == q).map(|&(_, s)| s)
    }
}

/// Heuristic reading of a refinement ladder; never a proof.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    SingularityEvidence,
    AbsoluteContinuityEvidence,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::SingularityEvidence => "singularity evidence (heuristic)",
            Self::AbsoluteContinuityEvidence => "absolute-continuity evidence (heuristic)",
            Self::Inconclusive => "inconclusive",
        })
    }
}

pub const DEFAULT_LEVELS: [f64; 3] = [0.5, 0.9, 0.99];
pub const DEFAULT_EPSILONS: [f64; 4] = [0.5, 0.2, 0.1, 0.05];
pub const DEFAULT_LADDER: [usize; 6] = [1 << 8, 1 << 9, 1 << 10, 1 << 11, 1 << 12, 1 << 13];

/// Relative decrease of `L(0.9)` across the ladder that counts as evidence.
const L_DROP: f64 = 0.25;
/// Relative change of the density sup between the last two rungs that counts
/// as stabilization.
const SUP_STABLE: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct SingularityReport {
    pub rows: Vec<LadderRow>,
    pub verdict: Verdict,
}

impl SingularityReport {
    pub fn from_rows(rows: Vec<LadderRow>) -> Self {
        let verdict = Self::judge(&rows);
        Self { rows, verdict }
    }

    fn judge(rows: &[LadderRow]) -> Verdict {
        let (Some(first), Some(last)) = (rows.first(), rows.last()) else {
            return Verdict::Inconclusive;
        };
        if rows.len() < 2 {
            return Verdict::Inconclusive;
        }
        if let (Some(a), Some(b)) = (first.size_at(0.9), last.size_at(0.9)) {
            if b <= (1.0 - L_DROP) * a {
                return Verdict::SingularityEvidence;
            }
        }
        let prev = &rows[rows.len() - 2];
        if (last.density_sup - prev.density_sup).abs() <= SUP_STABLE * prev.density_sup {
            return Verdict::AbsoluteContinuityEvidence;
        }
        Verdict::Inconclusive
    }

    /// CSV with header `N,q,L`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["N", "q", "L"])?;
        for row in &self.rows {
            for &(q, l) in &row.sizes {
                w.write_record([row.n_cells.to_string(), format!("{q}"), format!("{l}")])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl fmt::Display for SingularityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in &self.rows {
            write!(f, "N={}", row.n_cells)?;
            for (q, l) in &row.sizes {
                write!(f, " L({q})={l}")?;
            }
            write!(f, " density_sup={} M1:", row.density_sup)?;
            for (e, member) in &row.m1 {
                write!(f, " {e}={}", if *member { "yes" } else { "no" })?;
            }
            writeln!(f)?;
        }
        writeln!(f, "verdict: {}", self.verdict)
    }
}

/// Fixed points along a refinement ladder, profiled at each rung.
pub fn singularity_report(
    system: &IfsSystem,
    ladder: &[usize],
    levels: &[f64],
    opts: &FixedPointOptions,
) -> Result<SingularityReport> {
    let rows = ladder
        .par_iter()
        .map(|&n| {
            let fp = fixed_point(system, &FixedPointOptions { n_cells: n, ..*opts })?.require_converged()?;
            Ok(LadderRow::from_measure(&fp.measure, levels, &DEFAULT_EPSILONS))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SingularityReport::from_rows(rows))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    /// Target `d`-radius of the jitters.
    pub radius: f64,
    pub trials: usize,
    pub admissible: usize,
    /// Largest measured `d` among accepted jitters.
    pub max_distance: f64,
    /// Draws thrown away for leaving `C⁺_β` or the radius.
    pub rejected_draws: usize,
    /// Trial indices whose jittered system failed admissibility.
    pub failures: Vec<usize>,
    /// Oversized radius: failures are expected and do not count.
    pub calibration: bool,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.calibration || self.admissible == self.trials
    }
}

/// Redraws allowed per trial before it is given up as rejected.
const MAX_DRAWS: usize = 60;

/// Perturb interior knots, Möbius parameters and weights inside
/// `d < 0.9 · min(δ₀/2, δ₂/2) · scale` and re-check admissibility.
///
/// Jitters are drawn uniformly with a per-coordinate size that halves after
/// every draw whose measured `d` misses the radius.
pub fn robustness_probe(system: &IfsSystem, trials: usize, seed: u64, scale: f64, margin_n: usize) -> Result<ProbeReport> {
    let delta0 = gap_margin(system, margin_n)?;
    let lyap = lyapunov_margin(system)?;
    let radius = 0.9 * (0.5 * delta0).min(lyap.safe) * scale;

    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<(Option<f64>, usize, bool)> {
            let mut rng = rng_for(seed, t as u64);
            let mut size = radius;
            for draw in 0..MAX_DRAWS {
                let Some(candidate) = jitter(system, &mut rng, size) else {
                    size *= 0.5;
                    continue;
                };
                let d = metric_d(system, &candidate)?;
                if d < radius || d == 0.0 {
                    let ok = admissibility_check(&candidate, PROBE_GRID)?.admissible();
                    return Ok((Some(d), draw, ok));
                }
                size *= 0.5;
            }
            Ok((None, MAX_DRAWS, false))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut report = ProbeReport {
        radius,
        trials,
        admissible: 0,
        max_distance: 0.0,
        rejected_draws: 0,
        failures: Vec::new(),
        calibration: scale > 1.0,
    };
    for (t, (d, rejected, ok)) in outcomes.into_iter().enumerate() {
        report.rejected_draws += rejected;
        if let Some(d) = d {
            report.max_distance = report.max_distance.max(d);
        }
        if ok {
            report.admissible += 1;
        } else {
            report.failures.push(t);
        }
    }
    Ok(report)
}

/// One uniform jitter of size `size`, or `None` if it leaves the class.
fn jitter<R: Rng>(system: &IfsSystem, rng: &mut R, size: f64) -> Option<IfsSystem> {
    let mut u = |s: f64| if s > 0.0 { rng.gen_range(-s..=s) } else { 0.0 };
    let mut maps = Vec::with_capacity(system.k());
    for g in system.maps() {
        let map = match g {
            IntervalMap::Moebius { lambda } => IntervalMap::moebius(lambda * (1.0 + u(size))).ok()?,
            IntervalMap::PiecewiseLinear(k) | IntervalMap::Plateau(k) => {
                let last = k.xs().len() - 1;
                let knots: Vec<(f64, f64)> = k
                    .pairs()
                    .enumerate()
                    .map(|(i, (x, y))| if i == 0 || i == last { (x, y) } else { (x + u(size), y + u(size)) })
                    .collect();
                if g.is_homeomorphism() {
                    IntervalMap::piecewise_linear(knots).ok()?
                } else {
                    IntervalMap::plateau(knots).ok()?
                }
            }
        };
        maps.push(map);
    }
    let raw: Vec<f64> = system.probs().iter().map(|p| (p + u(size)).max(0.0)).collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return None;
    }
    let mut probs: Vec<f64> = raw.iter().map(|p| p / total).collect();
    let head: f64 = probs[..probs.len() - 1].iter().sum();
    *probs.last_mut()? = (1.0 - head).max(0.0);
    IfsSystem::new(maps, probs, system.beta()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::example_e1;
    use crate::system::DEFAULT_BETA;

    #[test]
    fn e1_gap_margin() {
        assert!((gap_margin(&example_e1(), 10).unwrap() - 2.0 / 45.0).abs() < 1e-12);
    }

    #[test]
    fn gap_margin_nonincreasing_in_n() {
        let e1 = example_e1();
        let mut prev = f64::INFINITY;
        for n in [3, 5, 10, 20, 100, 1000, 10_000] {
            let m = gap_margin(&e1, n).unwrap();
            assert!(m <= prev);
            prev = m;
        }
        assert!(prev < 1e-3);
    }

    #[test]
    fn identity_has_no_gap() {
        let id = IfsSystem::new(vec![IntervalMap::identity(), IntervalMap::identity()], vec![0.5, 0.5], DEFAULT_BETA)
            .unwrap();
        assert!(matches!(gap_margin(&id, 10), Err(Error::NonPositiveMargin(_))));
    }

    #[test]
    fn e1_lyapunov_margin() {
        let m = lyapunov_margin(&example_e1()).unwrap();
        // Smaller root of (5 - δ)(5/9 - δ) = 1.
        let b: f64 = 50.0 / 9.0;
        let want = 0.5 * (b - (b * b - 4.0 * 16.0 / 9.0).sqrt());
        assert!((m.delta2 - want).abs() < 1e-9);
        assert!((m.safe - want / 2.0).abs() < 1e-9);
        assert!(m.delta2 < 5.0 / 9.0);
    }

    #[test]
    fn zero_exponent_is_rejected() {
        let id = IfsSystem::new(vec![IntervalMap::identity()], vec![1.0], DEFAULT_BETA).unwrap();
        assert!(lyapunov_margin(&id).is_err());
    }

    #[test]
    fn margin_bounded_by_identity_derivative() {
        let e1 = example_e1();
        let sys = IfsSystem::new(
            vec![e1.maps()[0].clone(), e1.maps()[1].clone(), IntervalMap::identity()],
            vec![0.4, 0.4, 0.2],
            DEFAULT_BETA,
        )
        .unwrap();
        let m = lyapunov_margin(&sys).unwrap();
        assert!(m.delta2 > 0.0 && m.delta2 < 5.0 / 9.0);
    }

    #[test]
    fn lebesgue_profile_is_flat() {
        let rows: Vec<LadderRow> = DEFAULT_LADDER
            .iter()
            .map(|&n| LadderRow::from_measure(&GridMeasure::uniform(n), &DEFAULT_LEVELS, &DEFAULT_EPSILONS))
            .collect();
        for row in &rows {
            assert!((row.size_at(0.9).unwrap() - 0.9).abs() <= 1.0 / row.n_cells as f64);
            assert!((row.density_sup - 1.0).abs() < 1e-9);
            assert!(row.m1.iter().all(|&(_, m)| !m));
        }
        let report = SingularityReport::from_rows(rows);
        assert_eq!(report.verdict, Verdict::AbsoluteContinuityEvidence);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,q,L\n256,0.5,0.5\n"));
    }

    #[test]
    fn atomic_profile_shrinks() {
        let rows: Vec<LadderRow> = DEFAULT_LADDER
            .iter()
            .map(|&n| {
                let mu = GridMeasure::from_atoms(&[(0.3, 0.6), (0.7, 0.4)], n).unwrap();
                LadderRow::from_measure(&mu, &DEFAULT_LEVELS, &DEFAULT_EPSILONS)
            })
            .collect();
        assert_eq!(SingularityReport::from_rows(rows).verdict, Verdict::SingularityEvidence);
    }

    #[test]
    fn e1_probe_passes() {
        let report = robustness_probe(&example_e1(), 100, 1, 1.0, 10).unwrap();
        assert_eq!(report.admissible, 100, "failures {:?}", report.failures);
        assert!(report.max_distance < report.radius);
        assert!(report.passed());
    }

    #[test]
    fn zero_jitter_is_a_no_op() {
        let report = robustness_probe(&example_e1(), 5, 1, 0.0, 10).unwrap();
        assert_eq!(report.radius, 0.0);
        assert_eq!(report.admissible, 5);
        assert_eq!(report.max_distance, 0.0);
    }

    #[test]
    fn oversized_jitter_is_calibration() {
        let report = robustness_probe(&example_e1(), 50, 2, 10.0, 10).unwrap();
        assert!(report.calibration);
        assert!(report.passed());
    }
}
