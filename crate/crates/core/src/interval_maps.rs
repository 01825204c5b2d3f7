//! Parametric nondecreasing self-maps of `[0, 1]` fixing both endpoints.
//!
//! Maps are kept in closed form (knot lists or a Möbius parameter) so that
//! inverses and endpoint derivatives are exact. Sampled representations are
//! only ever built transiently, for sup-norm distances.

use std::fmt;

use crate::error::{Error, Result};

/// Number of uniform cells used for sup-norm distances between maps.
pub const SUP_GRID: usize = 1 << 14;

/// Absolute tolerance for any bisection-based inverse.
pub const INVERSE_TOL: f64 = 1e-14;

/// Composition order for a word `(i_1, ..., i_n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordOrder {
    /// `g_{i_n} ∘ ... ∘ g_{i_1}`: the first symbol acts first.
    Forward,
    /// `g_{i_1} ∘ ... ∘ g_{i_n}`: the first symbol acts last.
    Backward,
}

/// Knot list of a continuous piecewise-linear map with `(0,0)` and `(1,1)` pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct Knots {
    xs: Vec<f64>,
    ys: Vec<f64>,
}

impl Knots {
    fn new(knots: Vec<(f64, f64)>) -> Result<Self> {
        if knots.len() < 2 {
            return Err(Error::InvalidMap("at least two knots are required".into()));
        }
        let (xs, ys): (Vec<f64>, Vec<f64>) = knots.into_iter().unzip();
        if xs.iter().chain(ys.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidMap("knots must be finite".into()));
        }
        if xs[0] != 0.0 || ys[0] != 0.0 {
            return Err(Error::InvalidMap("first knot must be (0, 0)".into()));
        }
        if *xs.last().unwrap() != 1.0 || *ys.last().unwrap() != 1.0 {
            return Err(Error::InvalidMap("last knot must be (1, 1)".into()));
        }
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidMap("knot abscissae must be strictly increasing".into()));
        }
        if ys.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidMap("knot ordinates must be nondecreasing".into()));
        }
        Ok(Self { xs, ys })
    }

    pub fn xs(&self) -> &[f64] {
        &self.xs
    }

    pub fn ys(&self) -> &[f64] {
        &self.ys
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.xs.iter().copied().zip(self.ys.iter().copied())
    }

    fn flat_segments(&self) -> usize {
        self.ys.windows(2).filter(|w| w[0] == w[1]).count()
    }

    fn slope(&self, seg: usize) -> f64 {
        (self.ys[seg + 1] - self.ys[seg]) / (self.xs[seg + 1] - self.xs[seg])
    }

    fn eval(&self, x: f64) -> f64 {
        if x >= 1.0 {
            return 1.0;
        }
        if x <= 0.0 {
            return 0.0;
        }
        let seg = self.xs.partition_point(|&k| k <= x) - 1;
        let (y0, y1) = (self.ys[seg], self.ys[seg + 1]);
        let y = y0 + (x - self.xs[seg]) * self.slope(seg);
        y.clamp(y0, y1)
    }

    /// `sup { t : g(t) <= y }`.
    fn sup_inverse(&self, y: f64) -> f64 {
        if y >= 1.0 {
            return 1.0;
        }
        if y < 0.0 {
            return 0.0;
        }
        let j = self.ys.partition_point(|&v| v <= y) - 1;
        if j + 1 == self.ys.len() {
            return 1.0;
        }
        // ys[j] <= y < ys[j + 1], so this segment is strictly increasing.
        let (x0, x1) = (self.xs[j], self.xs[j + 1]);
        let t = x0 + (y - self.ys[j]) * (x1 - x0) / (self.ys[j + 1] - self.ys[j]);
        t.clamp(x0, x1)
    }

    fn mirrored(&self) -> Self {
        let xs = self.xs.iter().rev().map(|x| 1.0 - x).collect();
        let ys = self.ys.iter().rev().map(|y| 1.0 - y).collect();
        Self { xs, ys }
    }
}

/// A nondecreasing surjection of `[0, 1]` with `g(0) = 0` and `g(1) = 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum IntervalMap {
    /// Strictly increasing piecewise-linear homeomorphism.
    PiecewiseLinear(Knots),
    /// `g(x) = λx / (1 + (λ - 1)x)`; multiplies the odds `x / (1 - x)` by λ.
    Moebius { lambda: f64 },
    /// Piecewise-linear map with exactly one flat segment.
    Plateau(Knots),
}

impl IntervalMap {
    pub fn piecewise_linear(knots: Vec<(f64, f64)>) -> Result<Self> {
        let knots = Knots::new(knots)?;
        if knots.flat_segments() > 0 {
            return Err(Error::InvalidMap(
                "piecewise-linear homeomorphism needs strictly increasing ordinates".into(),
            ));
        }
        Ok(Self::PiecewiseLinear(knots))
    }

    pub fn moebius(lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::InvalidMap(format!("Möbius parameter must be positive, got {lambda}")));
        }
        Ok(Self::Moebius { lambda })
    }

    pub fn plateau(knots: Vec<(f64, f64)>) -> Result<Self> {
        let knots = Knots::new(knots)?;
        match knots.flat_segments() {
            1 => Ok(Self::Plateau(knots)),
            n => Err(Error::InvalidMap(format!("plateau map needs exactly one flat segment, found {n}"))),
        }
    }

    pub fn identity() -> Self {
        Self::PiecewiseLinear(Knots {
            xs: vec![0.0, 1.0],
            ys: vec![0.0, 1.0],
        })
    }

    pub fn knots(&self) -> Option<&Knots> {
        match self {
            Self::PiecewiseLinear(k) | Self::Plateau(k) => Some(k),
            Self::Moebius { .. } => None,
        }
    }

    pub fn is_piecewise_linear(&self) -> bool {
        self.knots().is_some()
    }

    pub fn is_homeomorphism(&self) -> bool {
        !matches!(self, Self::Plateau(_))
    }

    /// Evaluate `g(x)`, rejecting arguments outside `[0, 1]`.
    pub fn eval(&self, x: f64) -> Result<f64> {
        check_unit(x)?;
        Ok(self.apply(x))
    }

    /// Evaluate without the domain check; arguments are clamped into `[0, 1]`.
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        match self {
            Self::PiecewiseLinear(k) | Self::Plateau(k) => k.eval(x),
            Self::Moebius { lambda } => {
                if x <= 0.0 {
                    0.0
                } else if x >= 1.0 {
                    1.0
                } else {
                    let num = lambda * x;
                    (num / (num + (1.0 - x))).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// Generalized inverse `sup { t : g(t) <= y }`.
    ///
    /// For plateau maps this is the right end of the preimage, which keeps
    /// `F_μ(inverse(y)) = μ(g⁻¹[0, y])` exact for atomless μ.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        check_unit(y)?;
        Ok(self.apply_inverse(y))
    }

    #[inline]
    pub fn apply_inverse(&self, y: f64) -> f64 {
        match self {
            Self::PiecewiseLinear(k) | Self::Plateau(k) => k.sup_inverse(y),
            Self::Moebius { lambda } => {
                if y <= 0.0 {
                    0.0
                } else if y >= 1.0 {
                    1.0
                } else {
                    (y / (y + lambda * (1.0 - y))).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// Right derivative at 0.
    pub fn derivative_at_zero(&self) -> Result<f64> {
        let d = match self {
            Self::PiecewiseLinear(k) | Self::Plateau(k) => k.slope(0),
            Self::Moebius { lambda } => *lambda,
        };
        if d > 0.0 {
            Ok(d)
        } else {
            Err(Error::DegenerateDerivative { at: 0.0 })
        }
    }

    /// Left derivative at 1.
    pub fn derivative_at_one(&self) -> Result<f64> {
        let d = match self {
            Self::PiecewiseLinear(k) | Self::Plateau(k) => k.slope(k.xs.len() - 2),
            Self::Moebius { lambda } => 1.0 / lambda,
        };
        if d > 0.0 {
            Ok(d)
        } else {
            Err(Error::DegenerateDerivative { at: 1.0 })
        }
    }

    /// Derivative inside a boundary window of a map that passed
    /// [`validate_cbeta`]: piecewise-linear maps are a single segment there.
    pub fn window_derivative(&self, x: f64) -> f64 {
        match self {
            Self::PiecewiseLinear(k) | Self::Plateau(k) => {
                if x <= 0.5 {
                    k.slope(0)
                } else {
                    k.slope(k.xs.len() - 2)
                }
            }
            Self::Moebius { lambda } => {
                let den = lambda * x + (1.0 - x);
                lambda / (den * den)
            }
        }
    }

    /// The conjugate `x -> 1 - g(1 - x)`, which swaps the roles of 0 and 1.
    pub fn mirrored(&self) -> Self {
        match self {
            Self::PiecewiseLinear(k) => Self::PiecewiseLinear(k.mirrored()),
            Self::Plateau(k) => Self::Plateau(k.mirrored()),
            Self::Moebius { lambda } => Self::Moebius { lambda: 1.0 / lambda },
        }
    }

    /// `inf { g(t)/t : 0 < t <= upper }`, exact for every variant: `g(t)/t`
    /// is monotone on each linear piece and on the whole Möbius family.
    pub fn ratio_infimum(&self, upper: f64) -> f64 {
        let upper = upper.clamp(0.0, 1.0);
        match self {
            Self::PiecewiseLinear(k) | Self::Plateau(k) => {
                let mut best = k.slope(0);
                for (&x, &y) in k.xs.iter().zip(&k.ys).skip(1) {
                    if x > upper {
                        break;
                    }
                    best = best.min(y / x);
                }
                if upper > 0.0 {
                    best = best.min(k.eval(upper) / upper);
                }
                best
            }
            Self::Moebius { lambda } => {
                if upper > 0.0 {
                    lambda.min(self.apply(upper) / upper)
                } else {
                    *lambda
                }
            }
        }
    }

    /// Largest `x <= 1/2` such that the map is a single linear piece (or
    /// analytic) on `[0, x]`.
    pub fn smooth_reach_at_zero(&self) -> f64 {
        match self {
            Self::PiecewiseLinear(k) | Self::Plateau(k) => k.xs[1].min(0.5),
            Self::Moebius { .. } => 0.5,
        }
    }

    /// Interior knot abscissae (empty for Möbius maps).
    pub fn breakpoints(&self) -> Vec<f64> {
        match self.knots() {
            Some(k) => k.xs[1..k.xs.len() - 1].to_vec(),
            None => Vec::new(),
        }
    }

    /// Interior knot ordinates: the breakpoints of the inverse.
    pub fn inverse_breakpoints(&self) -> Vec<f64> {
        match self.knots() {
            Some(k) => k.ys[1..k.ys.len() - 1].to_vec(),
            None => Vec::new(),
        }
    }
}

impl fmt::Display for IntervalMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Moebius { lambda } => write!(f, "moebius(lambda={lambda})"),
            Self::PiecewiseLinear(k) | Self::Plateau(k) => {
                let tag = if self.is_homeomorphism() { "pwl" } else { "plateau" };
                write!(f, "{tag}[")?;
                for (i, (x, y)) in k.pairs().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "({x}, {y})")?;
                }
                write!(f, "]")
            }
        }
    }
}

fn check_unit(x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Domain { value: x })
    }
}

/// Apply the composition named by `word` (0-based symbols) to `x`.
pub fn word_eval(maps: &[IntervalMap], word: &[usize], x: f64, order: WordOrder) -> Result<f64> {
    check_unit(x)?;
    if let Some(&index) = word.iter().find(|&&i| i >= maps.len()) {
        return Err(Error::InvalidSymbol { index, k: maps.len() });
    }
    let step = |acc: f64, &i: &usize| maps[i].apply(acc);
    Ok(match order {
        WordOrder::Forward => word.iter().fold(x, step),
        WordOrder::Backward => word.iter().rev().fold(x, step),
    })
}

/// Outcome of [`validate_cbeta`]; violations are collected, not thrown.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CbetaReport {
    pub violations: Vec<String>,
}

impl CbetaReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Check membership of `map` in the class of nondecreasing endpoint-fixing
/// maps that are C¹ on `[0, β]` and `[1 - β, 1]`.
pub fn validate_cbeta(map: &IntervalMap, beta: f64) -> CbetaReport {
    let mut violations = Vec::new();
    if !(beta > 0.0 && beta < 0.5) {
        violations.push(format!("boundary window β = {beta} must lie in (0, 1/2)"));
    }
    if map.apply(0.0) != 0.0 || map.apply(1.0) != 1.0 {
        violations.push("endpoints are not fixed".into());
    }
    match map {
        IntervalMap::Moebius { lambda } => {
            if !(lambda.is_finite() && *lambda > 0.0) {
                violations.push(format!("Möbius parameter {lambda} is not positive"));
            }
        }
        IntervalMap::PiecewiseLinear(k) | IntervalMap::Plateau(k) => {
            if k.ys.windows(2).any(|w| w[1] < w[0]) {
                violations.push("map is not nondecreasing".into());
            }
            for &x in &k.xs[1..k.xs.len() - 1] {
                if x < beta || x > 1.0 - beta {
                    violations.push(format!("knot inside boundary window at x = {x}"));
                }
            }
        }
    }
    CbetaReport { violations }
}

/// Sorted, deduplicated evaluation points: a uniform grid plus extras.
pub(crate) fn augmented_grid(lo: f64, hi: f64, cells: usize, extras: &[f64]) -> Vec<f64> {
    let mut pts: Vec<f64> = (0..=cells)
        .map(|j| lo + (hi - lo) * j as f64 / cells as f64)
        .collect();
    pts.extend(extras.iter().copied().filter(|&e| e >= lo && e <= hi));
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// Maximize `f` over the sorted point set, then polish the best bracket by
/// golden-section search when `refine` is set.
pub(crate) fn sup_over<F: Fn(f64) -> f64>(pts: &[f64], f: F, refine: bool) -> f64 {
    let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
    for (i, &x) in pts.iter().enumerate() {
        let v = f(x);
        if v > best {
            best = v;
            best_i = i;
        }
    }
    if refine && pts.len() > 2 {
        let lo = pts[best_i.saturating_sub(1)];
        let hi = pts[(best_i + 1).min(pts.len() - 1)];
        best = best.max(golden_max(&f, lo, hi));
    }
    best
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut lo: f64, mut hi: f64) -> f64 {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = f(d);
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    fc.max(fd)
}

/// `sup_x |g(x) - h(x)|` over a knot-augmented grid; exact for pairs of
/// piecewise-linear maps.
pub fn sup_distance(g: &IntervalMap, h: &IntervalMap) -> f64 {
    let mut extras = g.breakpoints();
    extras.extend(h.breakpoints());
    let pts = augmented_grid(0.0, 1.0, SUP_GRID, &extras);
    let refine = !(g.is_piecewise_linear() && h.is_piecewise_linear());
    sup_over(&pts, |x| (g.apply(x) - h.apply(x)).abs(), refine)
}

/// `sup_y |g⁻¹(y) - h⁻¹(y)|` for homeomorphisms.
pub fn inverse_sup_distance(g: &IntervalMap, h: &IntervalMap) -> Result<f64> {
    if !(g.is_homeomorphism() && h.is_homeomorphism()) {
        return Err(Error::MetricUndefined("inverse distance needs homeomorphisms".into()));
    }
    let mut extras = g.inverse_breakpoints();
    extras.extend(h.inverse_breakpoints());
    let pts = augmented_grid(0.0, 1.0, SUP_GRID, &extras);
    let refine = !(g.is_piecewise_linear() && h.is_piecewise_linear());
    Ok(sup_over(&pts, |y| (g.apply_inverse(y) - h.apply_inverse(y)).abs(), refine))
}

/// `sup |g' - h'|` over `[0, β] ∪ [1 - β, 1]`.
pub fn window_derivative_distance(g: &IntervalMap, h: &IntervalMap, beta: f64) -> f64 {
    let diff = |x: f64| (g.window_derivative(x) - h.window_derivative(x)).abs();
    if g.is_piecewise_linear() && h.is_piecewise_linear() {
        return diff(0.0).max(diff(1.0));
    }
    let cells = 1 << 10;
    let left = augmented_grid(0.0, beta, cells, &[]);
    let right = augmented_grid(1.0 - beta, 1.0, cells, &[]);
    sup_over(&left, diff, true).max(sup_over(&right, diff, true))
}
