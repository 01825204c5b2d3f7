//! Finite measures on `[0, 1]` stored as CDF values on a uniform grid.
//!
//! Cell `j` (for `1 <= j <= N`) is the half-open interval `((j-1)/N, j/N]`
//! and `cdf[0]` holds the mass of `{0}`. For distances each cell's mass is
//! treated as an atom at its right node, so a grid measure is a combination
//! of point masses at `0, 1/N, ..., 1`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Default grid resolution.
pub const DEFAULT_CELLS: usize = 4096;

/// Slack allowed when checking that a CDF is nondecreasing.
const MONOTONE_TOL: f64 = 1e-12;

/// Two measures with masses closer than this are treated as equal-mass.
pub const MASS_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct GridMeasure {
    cdf: Vec<f64>,
}

impl GridMeasure {
    /// Wrap CDF values at `0, 1/N, ..., 1`. Decreases smaller than `1e-12`
    /// (rounding noise) are flattened; larger ones are rejected.
    pub fn from_cdf(mut cdf: Vec<f64>) -> Result<Self> {
        if cdf.len() < 2 {
            return Err(Error::InvalidMeasure("need at least one cell".into()));
        }
        if cdf.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidMeasure("CDF values must be finite".into()));
        }
        if cdf[0] < -MONOTONE_TOL {
            return Err(Error::InvalidMeasure(format!("negative mass {} at 0", cdf[0])));
        }
        cdf[0] = cdf[0].max(0.0);
        for j in 1..cdf.len() {
            if cdf[j] < cdf[j - 1] - MONOTONE_TOL {
                return Err(Error::InvalidMeasure(format!(
                    "CDF decreases at node {j}: {} < {}",
                    cdf[j],
                    cdf[j - 1]
                )));
            }
            cdf[j] = cdf[j].max(cdf[j - 1]);
        }
        Ok(Self { cdf })
    }

    /// Lebesgue measure: `cdf[j] = j/N`.
    pub fn uniform(n_cells: usize) -> Self {
        assert!(n_cells > 0, "grid needs at least one cell");
        let n = n_cells as f64;
        Self {
            cdf: (0..=n_cells).map(|j| j as f64 / n).collect(),
        }
    }

    pub fn dirac(x: f64, n_cells: usize) -> Result<Self> {
        Self::from_atoms(&[(x, 1.0)], n_cells)
    }

    /// Atoms `(location, weight)`; an atom at `x > 0` lands in the cell
    /// `((j-1)/N, j/N]` containing it and jumps the CDF at node `j`.
    pub fn from_atoms(atoms: &[(f64, f64)], n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return Err(Error::InvalidMeasure("grid needs at least one cell".into()));
        }
        let mut mass = vec![0.0; n_cells + 1];
        for &(x, w) in atoms {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Domain { value: x });
            }
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::InvalidMeasure(format!("atom weight {w} is negative")));
            }
            mass[node_of(x, n_cells)] += w;
        }
        let mut acc = 0.0;
        let cdf = mass
            .into_iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect();
        Ok(Self { cdf })
    }

    pub fn n_cells(&self) -> usize {
        self.cdf.len() - 1
    }

    pub fn cdf(&self) -> &[f64] {
        &self.cdf
    }

    pub fn into_cdf(self) -> Vec<f64> {
        self.cdf
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 / self.n_cells() as f64
    }

    pub fn total_mass(&self) -> f64 {
        self.cdf[self.n_cells()]
    }

    /// CDF between nodes by linear interpolation (mass spread uniformly
    /// over each cell); `cdf_at(0) = μ({0})`.
    pub fn cdf_at(&self, x: f64) -> f64 {
        let n = self.n_cells();
        if x <= 0.0 {
            return self.cdf[0];
        }
        if x >= 1.0 {
            return self.cdf[n];
        }
        let t = x * n as f64;
        let j = (t.floor() as usize).min(n - 1);
        let frac = t - j as f64;
        self.cdf[j] + frac * (self.cdf[j + 1] - self.cdf[j])
    }

    /// Mass of each cell with `μ({0})` folded into the first cell.
    pub fn cell_masses(&self) -> Vec<f64> {
        let mut out: Vec<f64> = self.cdf.windows(2).map(|w| w[1] - w[0]).collect();
        out[0] += self.cdf[0];
        out
    }

    /// `N · max cell mass`: an upper estimate of the density's sup.
    pub fn density_sup(&self) -> f64 {
        self.n_cells() as f64 * self.cell_masses().into_iter().fold(0.0, f64::max)
    }

    /// Mass of the cell containing `x` (with the same convention as
    /// [`from_atoms`](Self::from_atoms)).
    pub fn cell_mass_at(&self, x: f64) -> f64 {
        let j = node_of(x.clamp(0.0, 1.0), self.n_cells());
        if j == 0 {
            self.cdf[0]
        } else {
            self.cdf[j] - self.cdf[j - 1]
        }
    }

    /// `∫ x dμ` with cell masses at their right nodes.
    pub fn mean(&self) -> f64 {
        let n = self.n_cells() as f64;
        self.cdf
            .windows(2)
            .enumerate()
            .map(|(j, w)| (w[1] - w[0]) * (j + 1) as f64 / n)
            .sum()
    }

    /// The same measure on an `n_cells` grid, reading the CDF off by linear
    /// interpolation.
    pub fn resample(&self, n_cells: usize) -> Self {
        assert!(n_cells > 0, "grid needs at least one cell");
        if n_cells == self.n_cells() {
            return self.clone();
        }
        let n = n_cells as f64;
        let mut cdf: Vec<f64> = (0..=n_cells).map(|j| self.cdf_at(j as f64 / n)).collect();
        cdf[n_cells] = self.total_mass();
        Self { cdf }
    }

    /// The reflection of the measure under `x -> 1 - x`.
    pub fn mirrored(&self) -> Self {
        let total = self.total_mass();
        let n = self.n_cells();
        // μ'([0, j/N]) = μ([1 - j/N, 1]) = total - μ([0, 1 - j/N)).
        let mut cdf: Vec<f64> = (0..=n).map(|j| total - self.cdf_left_of(n - j)).collect();
        cdf[n] = total;
        Self { cdf }
    }

    /// `μ([0, j/N))` for the atomic reading.
    fn cdf_left_of(&self, j: usize) -> f64 {
        if j == 0 {
            0.0
        } else {
            self.cdf[j - 1]
        }
    }

    /// `Σ a_i μ_i` over measures on a common grid.
    pub fn combine(terms: &[(f64, &GridMeasure)]) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidMeasure("empty combination".into()))?;
        let n = first.1.n_cells();
        let mut cdf = vec![0.0; n + 1];
        for &(a, mu) in terms {
            if mu.n_cells() != n {
                return Err(Error::GridMismatch(n, mu.n_cells()));
            }
            for (c, v) in cdf.iter_mut().zip(&mu.cdf) {
                *c += a * v;
            }
        }
        Self::from_cdf(cdf)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "cdf"])?;
        for (j, c) in self.cdf.iter().enumerate() {
            w.write_record([crate::format_f64(self.node(j)), crate::format_f64(*c)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        if headers.len() != 2 || &headers[0] != "x" || &headers[1] != "cdf" {
            return Err(Error::Parse(format!(
                "expected header `x,cdf`, found `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut xs = Vec::new();
        let mut cdf = Vec::new();
        for (line, record) in r.records().enumerate() {
            let record = record?;
            let parse = |k: usize| -> Result<f64> {
                record[k]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("row {}: `{}`: {e}", line + 1, &record[k])))
            };
            xs.push(parse(0)?);
            cdf.push(parse(1)?);
        }
        if cdf.len() < 2 {
            return Err(Error::Parse("measure file needs at least two rows".into()));
        }
        let n = (cdf.len() - 1) as f64;
        for (j, &x) in xs.iter().enumerate() {
            if (x - j as f64 / n).abs() > 1e-9 {
                return Err(Error::Parse(format!("row {}: x = {x} is not {j}/{n}", j + 1)));
            }
        }
        Self::from_cdf(cdf)
    }

    pub fn write_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv_file(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Node index whose cell contains `x`: 0 for `x = 0`, otherwise `ceil(xN)`.
fn node_of(x: f64, n_cells: usize) -> usize {
    ((x * n_cells as f64).ceil() as usize).min(n_cells)
}

fn check_comparable(mu: &GridMeasure, nu: &GridMeasure) -> Result<()> {
    if mu.n_cells() != nu.n_cells() {
        return Err(Error::GridMismatch(mu.n_cells(), nu.n_cells()));
    }
    let (a, b) = (mu.total_mass(), nu.total_mass());
    if (a - b).abs() > MASS_TOL {
        return Err(Error::UnequalMass(a, b));
    }
    Ok(())
}

/// Fortet–Mourier distance of two equal-mass measures on a common grid.
///
/// For equal masses every 1-Lipschitz test function can be shifted into
/// `[-1/2, 1/2]` without changing `<f, μ - ν>`, so the bounded-Lipschitz sup
/// is the Kantorovich distance, i.e. the L¹ distance of the CDFs. With cell
/// masses at the right nodes the CDFs are step functions and the integral is
/// a finite sum.
pub fn fm_distance(mu: &GridMeasure, nu: &GridMeasure) -> Result<f64> {
    check_comparable(mu, nu)?;
    let n = mu.n_cells();
    let sum: f64 = mu.cdf[..n]
        .iter()
        .zip(&nu.cdf[..n])
        .map(|(a, b)| (a - b).abs())
        .sum();
    Ok(sum / n as f64)
}

/// Brute-force sup of `<f, μ - ν>` over test functions on the lattice
/// `{0, 1/m, ..., 1}` with `|f| <= 1` and increments at most `1/m`.
///
/// Mass is first moved to the nearest lattice point, which changes the value
/// by at most `1/m`. The linear program over lattice functions has a totally
/// unimodular constraint matrix, so an optimal `f` takes values in `(1/m)ℤ`
/// and a dynamic program over those values solves it exactly.
pub fn fm_oracle(mu: &GridMeasure, nu: &GridMeasure, grid_m: usize) -> Result<f64> {
    check_comparable(mu, nu)?;
    assert!(grid_m > 0, "oracle grid needs at least one cell");
    let n = mu.n_cells();
    let mut weights = vec![0.0; grid_m + 1];
    let (dm, dn) = (mu.cell_masses_at_nodes(), nu.cell_masses_at_nodes());
    for j in 0..=n {
        let k = ((j as f64 / n as f64) * grid_m as f64).round() as usize;
        weights[k] += dm[j] - dn[j];
    }

    // value[s] is the best partial sum with f at the current point equal to
    // (s - m)/m.
    let m = grid_m as isize;
    let states = 2 * grid_m + 1;
    let level = |s: usize| (s as isize - m) as f64 / m as f64;
    let mut value: Vec<f64> = (0..states).map(|s| weights[0] * level(s)).collect();
    let mut next = vec![0.0; states];
    for &w in &weights[1..] {
        for s in 0..states {
            let mut best = value[s];
            if s > 0 {
                best = best.max(value[s - 1]);
            }
            if s + 1 < states {
                best = best.max(value[s + 1]);
            }
            next[s] = best + w * level(s);
        }
        std::mem::swap(&mut value, &mut next);
    }
    Ok(value.into_iter().fold(f64::NEG_INFINITY, f64::max))
}

impl GridMeasure {
    /// Node masses without folding: entry 0 is `μ({0})`, entry `j` is cell `j`.
    fn cell_masses_at_nodes(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.cdf.len());
        out.push(self.cdf[0]);
        out.extend(self.cdf.windows(2).map(|w| w[1] - w[0]));
        out
    }
}

/// Grid surrogate of `μ([0, x]) <= M x^α` and `μ([1 - x, 1]) <= M x^α`.
pub fn tail_check(mu: &GridMeasure, m: f64, alpha: f64) -> bool {
    tail_check_with_slack(mu, m, alpha, 0.0)
}

/// [`tail_check`] with an additive allowance on each inequality.
pub fn tail_check_with_slack(mu: &GridMeasure, m: f64, alpha: f64, slack: f64) -> bool {
    let n = mu.n_cells();
    let total = mu.total_mass();
    mu.cdf.iter().enumerate().all(|(j, &c)| {
        let x = j as f64 / n as f64;
        c <= m * x.powf(alpha) + slack && total - c <= m * (1.0 - x).powf(alpha) + slack
    })
}

/// Minimal Lebesgue size needed to capture each mass level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationProfile {
    /// `(q, L(q))` pairs in the order the levels were given.
    pub levels: Vec<(f64, f64)>,
}

impl ConcentrationProfile {
    pub fn size_at(&self, q: f64) -> Option<f64> {
        self.levels.iter().find(|(l, _)| *l == q).map(|&(_, s)| s)
    }
}

/// Tolerance when comparing accumulated mass to a level.
const LEVEL_TOL: f64 = 1e-12;

fn sorted_cells(mu: &GridMeasure) -> Vec<(usize, f64)> {
    let mut cells: Vec<(usize, f64)> = mu.cell_masses().into_iter().enumerate().collect();
    cells.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    cells
}

/// Greedy heaviest-cells-first selection for every level `q`; optimal for
/// unions of grid cells by an exchange argument.
pub fn concentration_profile(mu: &GridMeasure, levels: &[f64]) -> ConcentrationProfile {
    let cells = sorted_cells(mu);
    let n = mu.n_cells() as f64;
    let mut prefix = Vec::with_capacity(cells.len());
    let mut acc = 0.0;
    for &(_, m) in &cells {
        acc += m;
        prefix.push(acc);
    }
    let levels = levels
        .iter()
        .map(|&q| {
            let count = prefix
                .iter()
                .position(|&s| s >= q - LEVEL_TOL)
                .map_or(cells.len(), |i| i + 1);
            (q, count as f64 / n)
        })
        .collect();
    ConcentrationProfile { levels }
}

/// Outcome of the `M₁^ε` test.
#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonMembership {
    pub member: bool,
    /// Captured mass of the witness set.
    pub mass: f64,
    /// Indices (1-based, as in `((j-1)/N, j/N]`) of the witness cells.
    pub cells: Vec<usize>,
}

/// Does some union of grid cells with Lebesgue size `< ε` carry mass
/// `> 1 - ε/2`? The heaviest `ceil(εN) - 1` cells are the best candidate.
pub fn m1_epsilon_membership(mu: &GridMeasure, epsilon: f64) -> EpsilonMembership {
    let n = mu.n_cells();
    let budget = ((epsilon * n as f64).ceil() as usize).saturating_sub(1).min(n);
    let cells = sorted_cells(mu);
    let chosen = &cells[..budget];
    let mass: f64 = chosen.iter().map(|c| c.1).sum();
    EpsilonMembership {
        member: mass > mu.total_mass() * (1.0 - epsilon / 2.0),
        mass,
        cells: chosen.iter().map(|c| c.0 + 1).collect(),
    }
}

/// A random probability measure that satisfies `μ([0, x]) <= M x^α` and
/// `μ([1 - x, 1]) <= M x^α` by construction (`M >= 1`, `0 < α < 1`).
///
/// It mixes power laws `x^a` with `a ∈ [α, 1]` at either end, Lebesgue
/// measure, and atoms at distance at least `M^{-1/α}` from both ends (when
/// that leaves room).
pub fn random_tail_class_measure<R: Rng + ?Sized>(rng: &mut R, n_cells: usize, m: f64, alpha: f64) -> GridMeasure {
    assert!(m >= 1.0 && alpha > 0.0 && alpha < 1.0, "need M >= 1 and 0 < α < 1");
    // Nudged inward so that M·margin^α >= 1 survives rounding.
    let margin = m.powf(-1.0 / alpha) * (1.0 + 1e-9);
    let n_atoms = if margin < 0.5 { rng.gen_range(0..6) } else { 0 };
    let atoms: Vec<f64> = (0..n_atoms).map(|_| rng.gen_range(margin..=1.0 - margin)).collect();
    let a_left = rng.gen_range(alpha..=1.0);
    let a_right = rng.gen_range(alpha..=1.0);
    let mut w: Vec<f64> = (0..3 + atoms.len()).map(|_| rng.gen::<f64>() + 1e-3).collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= total);

    let n = n_cells as f64;
    let mut cdf: Vec<f64> = (0..=n_cells)
        .map(|j| {
            let x = j as f64 / n;
            w[0] * x.powf(a_left) + w[1] * (1.0 - (1.0 - x).powf(a_right)) + w[2] * x
        })
        .collect();
    for (&y, &wy) in atoms.iter().zip(&w[3..]) {
        for c in &mut cdf[node_of(y, n_cells)..] {
            *c += wy;
        }
    }
    cdf[n_cells] = 1.0;
    GridMeasure::from_cdf(cdf).expect("mixture of CDFs is a CDF")
}
