//! Plateau construction: replacing one map by a map that is constant on an
//! interval forces an atom into the invariant measure, and steep-but-monotone
//! approximations of that map give nearby homeomorphic systems.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::interval_maps::{window_derivative_distance, IntervalMap};
use crate::measures::{fm_distance, m1_epsilon_membership, random_tail_class_measure, tail_check_with_slack, GridMeasure};
use crate::system::{metric_d, metric_d0, IfsSystem};
use crate::transfer::{fixed_point, push_forward, tail_bound_certificate, FixedPointOptions, TailBoundCert};

/// Where and how high the plateau sits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauSpec {
    /// Index (0-based) of the map that is modified.
    pub map_index: usize,
    pub u: f64,
    pub v: f64,
    /// Height of the plateau.
    pub x0: f64,
    /// Budget for `d(Γ_m, Γ)`.
    pub epsilon: f64,
}

impl PlateauSpec {
    fn validate(&self, system: &IfsSystem) -> Result<()> {
        let beta = system.beta();
        if self.map_index >= system.k() {
            return Err(Error::InvalidSymbol {
                index: self.map_index,
                k: system.k(),
            });
        }
        if !(beta < self.u && self.u < self.v && self.v < 1.0 - beta) {
            return Err(Error::InvalidPlateau(format!(
                "[{}, {}] must lie inside ({beta}, {})",
                self.u,
                self.v,
                1.0 - beta
            )));
        }
        if !(self.v - self.u < 2.0 * self.epsilon) {
            return Err(Error::InvalidPlateau(format!(
                "plateau length {} is not below 2ε = {}",
                self.v - self.u,
                2.0 * self.epsilon
            )));
        }
        if !(self.x0 > 0.0 && self.x0 < 1.0) {
            return Err(Error::InvalidPlateau(format!("height {} is outside (0, 1)", self.x0)));
        }
        Ok(())
    }

    /// Width of the interpolation collars on both sides of `[u, v]`.
    pub fn collar(&self, beta: f64) -> f64 {
        (self.u - beta).min(1.0 - beta - self.v).min(self.v - self.u) / 2.0
    }
}

/// Keep the base map outside `(u - w, v + w)` and pass through `(u, y_u)`,
/// `(v, y_v)` in between.
fn splice(system: &IfsSystem, spec: &PlateauSpec, y_u: f64, y_v: f64) -> Result<Vec<(f64, f64)>> {
    spec.validate(system)?;
    let g = &system.maps()[spec.map_index];
    let knots = g.knots().filter(|_| g.is_homeomorphism()).ok_or_else(|| {
        Error::InvalidPlateau(format!("map {} is not a piecewise-linear homeomorphism", spec.map_index))
    })?;
    let w = spec.collar(system.beta());
    let (l, r) = (spec.u - w, spec.v + w);
    let (gl, gr) = (g.apply(l), g.apply(r));
    if !(gl < y_u && y_v < gr) {
        return Err(Error::InvalidPlateau(format!(
            "values {y_u}..{y_v} on [{}, {}] do not fit strictly between g({l}) = {gl} and g({r}) = {gr}",
            spec.u, spec.v
        )));
    }
    let mut out: Vec<(f64, f64)> = knots.pairs().filter(|&(x, _)| x < l).collect();
    out.extend([(l, gl), (spec.u, y_u), (spec.v, y_v), (r, gr)]);
    out.extend(knots.pairs().filter(|&(x, _)| x > r));
    Ok(out)
}

/// The limit system `S₀`: the chosen map replaced by one that is constant
/// `x₀` on `[u, v]` and unchanged outside the collars.
pub fn plateau_limit_system(system: &IfsSystem, spec: &PlateauSpec) -> Result<IfsSystem> {
    let knots = splice(system, spec, spec.x0, spec.x0)?;
    system.with_map(spec.map_index, IntervalMap::plateau(knots)?)
}

/// One member of the approximating family.
#[derive(Debug, Clone)]
pub struct PerturbedMember {
    pub m: usize,
    pub system: IfsSystem,
    /// `d(Γ_m, Γ)`.
    pub d_to_base: f64,
    /// `d₀(Γ_m, S₀)`.
    pub d0_to_limit: f64,
    /// `m · d₀(Γ_m, S₀)`.
    pub rate_constant: f64,
}

/// `Γ_m`: the chosen map gets slope `1/m` on `[u, v]` through
/// `((u + v)/2, x₀)`, joined linearly to the base map across the collars.
pub fn perturbed_family(system: &IfsSystem, spec: &PlateauSpec, m: usize) -> Result<PerturbedMember> {
    if m == 0 {
        return Err(Error::InvalidPlateau("family index m must be positive".into()));
    }
    let half = (spec.v - spec.u) / (2.0 * m as f64);
    let knots = splice(system, spec, spec.x0 - half, spec.x0 + half)?;
    let member = system.with_map(spec.map_index, IntervalMap::piecewise_linear(knots)?)?;
    let limit = plateau_limit_system(system, spec)?;
    let d_to_base = metric_d(&member, system)?;
    if d_to_base >= spec.epsilon {
        return Err(Error::BudgetExceeded {
            measured: d_to_base,
            budget: spec.epsilon,
        });
    }
    let d0_to_limit = metric_d0(&member, &limit)?;
    Ok(PerturbedMember {
        m,
        system: member,
        d_to_base,
        d0_to_limit,
        rate_constant: d0_to_limit * m as f64,
    })
}

/// Derivative change of the modified map inside the boundary windows.
pub fn window_change(base: &IfsSystem, member: &IfsSystem, index: usize) -> f64 {
    window_derivative_distance(&base.maps()[index], &member.maps()[index], base.beta())
}

#[derive(Debug, Clone)]
pub struct MemberReport {
    pub m: usize,
    pub d_to_base: f64,
    pub d0_to_limit: f64,
    pub rate_constant: f64,
    pub lyap0: f64,
    pub lyap1: f64,
    /// `fm(μ_m, μ₀)`.
    pub fm_to_limit: f64,
    pub residual: f64,
    /// `(ε, μ_m ∈ M₁^ε)`.
    pub m1: Vec<(f64, bool)>,
    /// All sampled measures in `N_{M,α}` stayed there after one step.
    pub certificate_holds: bool,
    pub measure: GridMeasure,
}

#[derive(Debug, Clone)]
pub struct DensityReport {
    pub certificate: TailBoundCert,
    pub limit: IfsSystem,
    pub limit_measure: GridMeasure,
    /// Mass of the grid cell containing `x₀` under `μ₀`.
    pub atom_mass: f64,
    pub members: Vec<MemberReport>,
}

impl DensityReport {
    pub fn fm_decreasing(&self) -> bool {
        self.members.windows(2).all(|w| w[1].fm_to_limit < w[0].fm_to_limit)
    }

    pub fn certificate_shared(&self) -> bool {
        self.members.iter().all(|m| m.certificate_holds)
    }

    pub fn max_rate_constant(&self) -> f64 {
        self.members.iter().map(|m| m.rate_constant).fold(0.0, f64::max)
    }
}

/// Options for [`verify_density_construction`].
#[derive(Debug, Clone)]
pub struct DensityOptions {
    pub ladder: Vec<usize>,
    pub solve: FixedPointOptions,
    pub epsilons: Vec<f64>,
    /// Random `N_{M,α}` measures pushed through each member.
    pub certificate_samples: usize,
    pub seed: u64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            ladder: vec![4, 16, 64, 256],
            solve: FixedPointOptions {
                tol: 1e-9,
                max_iter: 100_000,
                ..FixedPointOptions::default()
            },
            epsilons: vec![0.5, 0.2, 0.1, 0.05],
            certificate_samples: 100,
            seed: 0,
        }
    }
}

/// Fixed points of `S₀` and of every `Γ_m` on the ladder, with the shared
/// tail certificate of the base system checked on each member.
pub fn verify_density_construction(system: &IfsSystem, spec: &PlateauSpec, opts: &DensityOptions) -> Result<DensityReport> {
    let certificate = tail_bound_certificate(system)?;
    let limit = plateau_limit_system(system, spec)?;
    let limit_fp = fixed_point(&limit, &opts.solve)?.require_converged()?;
    let n = opts.solve.n_cells;
    let slack = 2.0 * certificate.m / (n as f64).powf(certificate.alpha);

    let members = opts
        .ladder
        .par_iter()
        .map(|&m| -> Result<MemberReport> {
            let member = perturbed_family(system, spec, m)?;
            let (lyap0, lyap1) = member.system.lyapunov_exponents()?;
            let fp = fixed_point(&member.system, &opts.solve)?.require_converged()?;
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ m as u64);
            let mut certificate_holds = true;
            for _ in 0..opts.certificate_samples {
                let mu = random_tail_class_measure(&mut rng, n, certificate.m, certificate.alpha);
                let pushed = push_forward(&member.system, &mu)?;
                certificate_holds &= tail_check_with_slack(&pushed, certificate.m, certificate.alpha, slack);
            }
            Ok(MemberReport {
                m,
                d_to_base: member.d_to_base,
                d0_to_limit: member.d0_to_limit,
                rate_constant: member.rate_constant,
                lyap0,
                lyap1,
                fm_to_limit: fm_distance(&fp.measure, &limit_fp.measure)?,
                residual: fp.residual,
                m1: opts
                    .epsilons
                    .iter()
                    .map(|&e| (e, m1_epsilon_membership(&fp.measure, e).member))
                    .collect(),
                certificate_holds,
                measure: fp.measure,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DensityReport {
        certificate,
        atom_mass: limit_fp.measure.cell_mass_at(spec.x0),
        limit,
        limit_measure: limit_fp.measure,
        members,
    })
}
