//! Behaviour of the GLR rule when the pre-change density is misspecified.
//!
//! If the data actually follow `g` rather than `f_theta0`, the false-alarm
//! guarantee is governed by the exponent `kappa` solving
//!
//! ```text
//! int (f_theta / f_theta0)^kappa g = 1,    kappa > 0
//! ```
//!
//! minimised over the admissible alternatives (`kappa_g`) and, for a class of
//! possible `g`, over the class (`kappa_star`). The mean time to false alarm
//! is then at least `exp(kappa A) / (2 (A / i_min + 1))`, and the delay is
//! at most `A / drift` to first order.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::glr::{ExpFamily, GlrConfig};
use crate::numeric::{brent, integrate, integrate_real_line, QuadOptions};

/// A probability density on the real line (or a subset of it).
pub trait Density {
    fn log_pdf(&self, y: f64) -> f64;

    /// Integration range.
    fn support(&self) -> (f64, f64);

    /// A point near the bulk of the mass, used to centre quadrature on
    /// unbounded supports.
    fn center(&self) -> f64 {
        match self.support() {
            (a, b) if a.is_finite() && b.is_finite() => 0.5 * (a + b),
            (a, _) if a.is_finite() => a + 1.0,
            (_, b) if b.is_finite() => b - 1.0,
            _ => 0.0,
        }
    }
}

/// The member `f_theta` of an exponential family, viewed as a density.
pub struct FamilyMember<'a, F: ?Sized> {
    pub family: &'a F,
    pub theta: f64,
}

impl<F: ?Sized> Clone for FamilyMember<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F: ?Sized> Copy for FamilyMember<'_, F> {}

impl<'a, F: ExpFamily + ?Sized> FamilyMember<'a, F> {
    pub fn new(family: &'a F, theta: f64) -> Self {
        Self { family, theta }
    }
}

impl<F: ExpFamily + ?Sized> Density for FamilyMember<'_, F> {
    fn log_pdf(&self, y: f64) -> f64 {
        self.family.log_density(self.theta, y)
    }

    fn support(&self) -> (f64, f64) {
        self.family.support()
    }

    fn center(&self) -> f64 {
        match self.support() {
            (a, b) if a.is_finite() && b.is_finite() => 0.5 * (a + b),
            // mean of T; the observation mean for location families
            _ => self.family.log_partition_deriv(self.theta),
        }
    }
}

/// A user-supplied log density.
pub struct FnDensity<L> {
    log_pdf: L,
    support: (f64, f64),
    center: f64,
}

impl<L: Fn(f64) -> f64> FnDensity<L> {
    pub fn new(log_pdf: L, support: (f64, f64), center: f64) -> Self {
        Self { log_pdf, support, center }
    }
}

impl<L: Fn(f64) -> f64> Density for FnDensity<L> {
    fn log_pdf(&self, y: f64) -> f64 {
        (self.log_pdf)(y)
    }

    fn support(&self) -> (f64, f64) {
        self.support
    }

    fn center(&self) -> f64 {
        self.center
    }
}

fn integrate_density<G: Density + ?Sized, H: Fn(f64) -> f64>(g: &G, h: H) -> Result<f64> {
    let opts = QuadOptions::default();
    match g.support() {
        (a, b) if a.is_infinite() && b.is_infinite() => integrate_real_line(h, g.center(), opts),
        (a, b) => integrate(h, a, b, opts),
    }
}

/// `int (f_theta / f_theta0)^kappa g`, the quantity whose crossing of 1
/// defines `kappa_{theta,g}`.
pub fn tilted_integral<F: ExpFamily + ?Sized, G: Density + ?Sized>(
    fam: &F,
    theta: f64,
    theta0: f64,
    g: &G,
    kappa: f64,
) -> Result<f64> {
    let value = integrate_density(g, |y| {
        let lp = g.log_pdf(y);
        if lp == f64::NEG_INFINITY {
            return 0.0;
        }
        (kappa * fam.log_likelihood_ratio(theta, theta0, y) + lp).exp()
    })?;
    if value.is_nan() {
        return Err(Error::QuadratureFailure(format!("tilted integral at kappa = {kappa} is NaN")));
    }
    Ok(value)
}

const KAPPA_LO: f64 = 1e-6;
const KAPPA_HI_MAX: f64 = 1e6;

// Positive root of a convex `phi` with `phi(0) = 0`, given `phi(KAPPA_LO)`
// already negative. `upper` caps the search when `phi` is only defined on a
// bounded interval.
fn convex_root<P: Fn(f64) -> Result<f64>>(phi: P, upper: f64) -> Result<Option<f64>> {
    let mut lo = KAPPA_LO;
    let mut hi = 1.0f64.min(0.5 * upper);
    loop {
        let v = phi(hi)?;
        if v >= 0.0 {
            break;
        }
        lo = hi;
        hi = if upper.is_finite() { 0.5 * (hi + upper) } else { 2.0 * hi };
        if hi > KAPPA_HI_MAX || (upper.is_finite() && upper - hi < 1e-12 * upper) {
            return Ok(None);
        }
    }
    // bracketed: phi(lo) < 0 <= phi(hi)
    let err = std::cell::RefCell::new(None);
    let root = brent(
        |k| match phi(k) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => v.signum() * f64::MAX,
            Err(e) => {
                err.borrow_mut().get_or_insert(e);
                f64::NAN
            }
        },
        lo,
        hi,
        1e-12,
        500,
    );
    match err.into_inner() {
        Some(e) => Err(e),
        None => root.map(Some),
    }
}

/// `kappa_{theta,g}`: the positive root of `int (f_theta/f_theta0)^kappa g - 1`
/// by quadrature, or `None` when no positive root exists.
pub fn kappa_root<F: ExpFamily + ?Sized, G: Density + ?Sized>(
    fam: &F,
    theta: f64,
    theta0: f64,
    g: &G,
) -> Result<Option<f64>> {
    if theta == theta0 {
        return Err(Error::domain("theta must differ from theta0"));
    }
    let d = fam.domain();
    if !d.contains(theta) || !d.contains(theta0) {
        return Err(Error::domain("theta and theta0 must lie in the parameter domain"));
    }
    let phi = |k: f64| tilted_integral(fam, theta, theta0, g, k).map(|v| v - 1.0);
    if phi(KAPPA_LO)? >= 0.0 {
        return Ok(None);
    }
    convex_root(phi, f64::INFINITY)
}

/// Root of the exponential-law reduction for the `V` family with
/// `theta0 = 1`: with `W ~ Exp(j0)` the tilted integral is
/// `j^kappa j0 / (j0 + kappa (j - 1))`, so the root solves
/// `j^kappa j0 = j0 + kappa (j - 1)`.
pub fn kappa_v_surrogate(j: f64, j0: f64) -> Result<Option<f64>> {
    if !(j > 0.0 && j0 > 0.0 && j.is_finite() && j0.is_finite()) {
        return Err(Error::domain("J and J0 must be finite and positive"));
    }
    if j == 1.0 {
        return Err(Error::domain("J must differ from 1"));
    }
    // the integral is finite only while j0 + kappa (j - 1) > 0
    let upper = if j < 1.0 { j0 / (1.0 - j) } else { f64::INFINITY };
    let log_phi = |k: f64| -> Result<f64> {
        let denom = j0 + k * (j - 1.0);
        Ok(if denom <= 0.0 { f64::INFINITY } else { k * j.ln() + j0.ln() - denom.ln() })
    };
    if log_phi(KAPPA_LO)? >= 0.0 {
        return Ok(None);
    }
    convex_root(log_phi, upper)
}

/// Gaussian closed form `1 + 2 (theta0 - theta0_true) / (theta - theta0)`;
/// `None` when it is not positive.
pub fn kappa_gaussian(theta: f64, theta0: f64, theta0_true: f64) -> Result<Option<f64>> {
    if theta == theta0 {
        return Err(Error::domain("theta must differ from theta0"));
    }
    let k = 1.0 + 2.0 * (theta0 - theta0_true) / (theta - theta0);
    Ok((k > 0.0).then_some(k))
}

/// A `kappa_{theta,g}` value at one alternative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaPoint {
    pub theta: f64,
    pub kappa: Option<f64>,
    pub boundary: bool,
}

/// Points used to confirm that the smallest exponent sits on a boundary.
fn region_grid<F: ExpFamily + ?Sized>(fam: &F, cfg: &GlrConfig) -> Result<Vec<f64>> {
    const POINTS: usize = 20;
    let regions = cfg.regions(fam)?;
    let d = fam.domain();
    let mut out = Vec::with_capacity(2 * POINTS);
    if let Some(b) = regions.up {
        for i in 1..=POINTS {
            out.push(if d.hi.is_finite() {
                b + (d.hi - b) * i as f64 / (POINTS + 1) as f64
            } else {
                b + 0.25 * cfg.epsilon * i as f64
            });
        }
    }
    if let Some(b) = regions.down {
        for i in 1..=POINTS {
            out.push(if d.lo.is_finite() {
                b - (b - d.lo) * i as f64 / (POINTS + 1) as f64
            } else {
                b - 0.25 * cfg.epsilon * i as f64
            });
        }
    }
    Ok(out)
}

fn boundary_kappas<F: ExpFamily + ?Sized, G: Density + ?Sized>(
    fam: &F,
    cfg: &GlrConfig,
    g: &G,
) -> Result<Vec<KappaPoint>> {
    cfg.regions(fam)?
        .boundaries()
        .into_iter()
        .map(|theta| Ok(KappaPoint { theta, kappa: kappa_root(fam, theta, cfg.theta0, g)?, boundary: true }))
        .collect()
}

fn min_kappa(points: &[KappaPoint]) -> Option<f64> {
    points.iter().map(|p| p.kappa).try_fold(f64::INFINITY, |acc, k| k.map(|k| acc.min(k)))
}

/// Boundary exponents plus the interior verification grid. Fails with
/// [`Error::MonotonicityViolation`] if an interior point beats every boundary.
pub fn kappa_profile<F: ExpFamily + ?Sized, G: Density + ?Sized>(
    fam: &F,
    cfg: &GlrConfig,
    g: &G,
) -> Result<Vec<KappaPoint>> {
    let mut points = boundary_kappas(fam, cfg, g)?;
    let Some(boundary_min) = min_kappa(&points) else {
        return Ok(points);
    };
    for theta in region_grid(fam, cfg)? {
        let kappa = kappa_root(fam, theta, cfg.theta0, g)?;
        if let Some(k) = kappa {
            if k < boundary_min - 1e-6 {
                return Err(Error::MonotonicityViolation { theta, kappa: k, boundary: boundary_min });
            }
        }
        points.push(KappaPoint { theta, kappa, boundary: false });
    }
    Ok(points)
}

/// `kappa_g`: the smallest exponent over the admissible alternatives, which
/// sits at `theta0 +- epsilon`; `None` if a boundary has no positive root.
pub fn kappa_g_boundary<F: ExpFamily + ?Sized, G: Density + ?Sized>(
    fam: &F,
    cfg: &GlrConfig,
    g: &G,
) -> Result<Option<f64>> {
    Ok(min_kappa(&kappa_profile(fam, cfg, g)?))
}

/// The class `{f_t : |t - theta0| <= radius}` of possible pre-change laws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParametricBand {
    pub radius: f64,
}

impl ParametricBand {
    /// Band members inside the parameter domain: both extremes, then a
    /// 10-point interior grid.
    fn members<F: ExpFamily + ?Sized>(&self, fam: &F, theta0: f64) -> Result<Vec<f64>> {
        if !(self.radius >= 0.0 && self.radius.is_finite()) {
            return Err(Error::domain(format!("band radius {} must be finite and nonnegative", self.radius)));
        }
        if self.radius == 0.0 {
            return Ok(vec![theta0]);
        }
        let d = fam.domain();
        let lo = theta0 - self.radius;
        let hi = theta0 + self.radius;
        if !d.contains(lo) || !d.contains(hi) {
            return Err(Error::domain(format!("band [{lo}, {hi}] leaves the parameter domain")));
        }
        let mut out = vec![lo, hi];
        out.extend((1..=10).map(|i| lo + (hi - lo) * i as f64 / 11.0));
        Ok(out)
    }
}

/// `kappa_star`: the smallest exponent over a band of pre-change laws, from
/// the boundaries and the interior grid of every band member. Members below
/// `theta0` can have their smallest exponent away from the boundary, so the
/// scan takes the minimum over all evaluated alternatives instead of
/// requiring boundary minimality.
pub fn kappa_star<F: ExpFamily + ?Sized>(fam: &F, cfg: &GlrConfig, band: &ParametricBand) -> Result<Option<f64>> {
    let members = band.members(fam, cfg.theta0)?;
    let grid = region_grid(fam, cfg)?;
    let mut best = f64::INFINITY;
    for &t in &members {
        let g = FamilyMember::new(fam, t);
        let Some(k) = min_kappa(&boundary_kappas(fam, cfg, &g)?) else {
            return Ok(None);
        };
        best = best.min(k);
        for &theta in &grid {
            if let Some(k) = kappa_root(fam, theta, cfg.theta0, &g)? {
                best = best.min(k);
            }
        }
    }
    Ok(Some(best))
}

/// `min { I(theta0 + eps), I(theta0 - eps) }` over boundaries in the domain.
pub fn i_min<F: ExpFamily + ?Sized>(fam: &F, cfg: &GlrConfig) -> Result<f64> {
    Ok(cfg.regions(fam)?.boundaries().into_iter().map(|b| fam.kl(b, cfg.theta0)).fold(f64::INFINITY, f64::min))
}

/// Lower bound on the mean time to false alarm under misspecification:
/// `exp(kappa A) / (2 (A / i_min + 1))`.
pub fn far_lower_bound(kappa: f64, threshold_a: f64, i_min: f64) -> Result<f64> {
    if !(kappa > 0.0) || !(i_min > 0.0) {
        return Err(Error::domain(format!("kappa = {kappa} and i_min = {i_min} must be positive")));
    }
    let denom = 2.0 * (threshold_a / i_min + 1.0);
    if threshold_a.is_nan() || !(denom > 0.0) {
        return Err(Error::domain(format!("threshold {threshold_a} gives a nonpositive denominator")));
    }
    if threshold_a == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    Ok((kappa * threshold_a).exp() / denom)
}

/// Leading-order delay bound and the drift it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DelayBound {
    /// `A / drift`.
    pub value: f64,
    /// `int log(f_theta_g / f_theta0) g`.
    pub drift: f64,
}

impl DelayBound {
    /// The bound holds up to a `(1 + o(1))` factor as `A` grows.
    pub const NOTE: &'static str = "first-order term; true bound carries a (1 + o(1)) factor as A grows";
}

/// `int log(f_theta_g / f_theta0) g` by quadrature.
pub fn drift<F: ExpFamily + ?Sized, G: Density + ?Sized>(fam: &F, theta0: f64, theta_g: f64, g: &G) -> Result<f64> {
    let value = integrate_density(g, |y| {
        let lp = g.log_pdf(y);
        if lp == f64::NEG_INFINITY {
            return 0.0;
        }
        fam.log_likelihood_ratio(theta_g, theta0, y) * lp.exp()
    })?;
    if !value.is_finite() {
        return Err(Error::QuadratureFailure("drift integral is not finite".into()));
    }
    Ok(value)
}

/// Delay upper bound `A / drift`; requires positive drift.
pub fn delay_upper_bound<F: ExpFamily + ?Sized, G: Density + ?Sized>(
    fam: &F,
    theta0: f64,
    theta_g: f64,
    g: &G,
    threshold_a: f64,
) -> Result<DelayBound> {
    let drift = drift(fam, theta0, theta_g, g)?;
    if !(drift > 0.0) {
        return Err(Error::NonpositiveDrift(drift));
    }
    Ok(DelayBound { value: threshold_a / drift, drift })
}

/// True iff `I(theta)` is nondecreasing in `|theta - theta0|` along the grid
/// on each side of `theta0`.
pub fn check_assumption_monotone_kl<F: ExpFamily + ?Sized>(fam: &F, theta0: f64, grid: &[f64]) -> bool {
    let side = |up: bool| {
        let mut pts: Vec<f64> = grid.iter().copied().filter(|&t| if up { t > theta0 } else { t < theta0 }).collect();
        pts.sort_by(|a, b| (a - theta0).abs().total_cmp(&(b - theta0).abs()));
        pts.windows(2).all(|w| fam.kl(w[1], theta0) >= fam.kl(w[0], theta0) - 1e-12)
    };
    side(true) && side(false)
}

/// Exponents for one pre-change law (and optionally a band of them).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KappaReport {
    pub kappa_theta_g: Vec<KappaPoint>,
    pub kappa_g: Option<f64>,
    pub kappa_star: Option<f64>,
}

pub fn kappa_report<F: ExpFamily + ?Sized, G: Density + ?Sized>(
    fam: &F,
    cfg: &GlrConfig,
    g: &G,
    band: Option<&ParametricBand>,
) -> Result<KappaReport> {
    let kappa_theta_g = kappa_profile(fam, cfg, g)?;
    let kappa_g = min_kappa(&kappa_theta_g);
    let kappa_star = band.map(|b| kappa_star(fam, cfg, b)).transpose()?.flatten();
    Ok(KappaReport { kappa_theta_g, kappa_g, kappa_star })
}

/// Both bounds for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub threshold_a: f64,
    pub kappa: f64,
    pub i_min: f64,
    pub far_lower: f64,
    pub delay_upper: f64,
    pub drift: f64,
    pub delay_note: &'static str,
}

/// Far-alarm bound under `g_pre` with exponent `kappa` and delay bound for
/// post-change law `g_post` whose closest family member is `theta_g`.
pub fn bound_report<F: ExpFamily + ?Sized, G: Density + ?Sized>(
    fam: &F,
    cfg: &GlrConfig,
    kappa: f64,
    theta_g: f64,
    g_post: &G,
) -> Result<BoundReport> {
    let i_min = i_min(fam, cfg)?;
    let delay = delay_upper_bound(fam, cfg.theta0, theta_g, g_post, cfg.threshold_a)?;
    Ok(BoundReport {
        threshold_a: cfg.threshold_a,
        kappa,
        i_min,
        far_lower: far_lower_bound(kappa, cfg.threshold_a, i_min)?,
        delay_upper: delay.value,
        drift: delay.drift,
        delay_note: DelayBound::NOTE,
    })
}
