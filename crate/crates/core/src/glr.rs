//! Sequential tests for one-parameter exponential families
//! `f_theta(y) = exp(theta T(y) - b(theta)) h(y)`.
//!
//! The main rule is Lorden's GLR stopping time
//!
//! ```text
//! tau = inf { m : max_{l <= m} sup_{|theta - theta0| >= eps} sum_{i=l}^m log f_theta(Y_i)/f_theta0(Y_i) > A }
//! ```
//!
//! For a window holding `k` observations with sufficient-statistic sum `s`
//! the inner objective `(theta - theta0) s - k (b(theta) - b(theta0))` is
//! concave in `theta`, so its supremum over each admissible half-line is
//! attained at the unrestricted MLE clamped to that half-line.
//!
//! The streaming detector avoids rescanning every window start. For a fixed
//! `theta` the objective is linear in the prefix point `(l - 1, S_{l-1})`, so
//! the best start is a vertex of the lower convex hull of the prefix points
//! (for `theta > theta0`) or of the upper hull (for `theta < theta0`).
//! Keeping both hulls makes each step cost proportional to the hull size
//! rather than to the stream length, with identical results.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::bisect;
use crate::vmaxfam::{self, FamilyParams};

/// Open parameter interval `(lo, hi)`; either end may be infinite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamDomain {
    pub lo: f64,
    pub hi: f64,
}

impl ParamDomain {
    pub const REAL_LINE: ParamDomain = ParamDomain { lo: f64::NEG_INFINITY, hi: f64::INFINITY };
    pub const POSITIVE: ParamDomain = ParamDomain { lo: 0.0, hi: f64::INFINITY };

    pub fn contains(&self, theta: f64) -> bool {
        theta > self.lo && theta < self.hi
    }

    // pull a parameter strictly inside the interval and away from infinity
    fn clamp(&self, theta: f64) -> f64 {
        const BIG: f64 = 1e300;
        let lo = if self.lo.is_finite() { self.lo + 1e-12 * (1.0 + self.lo.abs()) } else { -BIG };
        let hi = if self.hi.is_finite() { self.hi - 1e-12 * (1.0 + self.hi.abs()) } else { BIG };
        theta.clamp(lo, hi)
    }
}

/// A one-parameter exponential family.
pub trait ExpFamily {
    /// `T(y)`.
    fn suff_stat(&self, y: f64) -> f64;

    /// `b(theta)`.
    fn log_partition(&self, theta: f64) -> f64;

    fn domain(&self) -> ParamDomain;

    /// `log h(y)`; only needed to evaluate densities.
    fn log_base_measure(&self, y: f64) -> f64;

    /// Support of the observations, used for quadrature.
    fn support(&self) -> (f64, f64);

    /// `b'(theta)`, by default a central difference.
    fn log_partition_deriv(&self, theta: f64) -> f64 {
        let h = 1e-6 * (1.0 + theta.abs());
        let (lo, hi) = (theta - h, theta + h);
        let d = self.domain();
        if d.contains(lo) && d.contains(hi) {
            (self.log_partition(hi) - self.log_partition(lo)) / (2.0 * h)
        } else if d.contains(hi) {
            (self.log_partition(hi) - self.log_partition(theta)) / h
        } else {
            (self.log_partition(theta) - self.log_partition(lo)) / h
        }
    }

    /// The natural parameter whose mean of `T` equals `mean`, i.e. the
    /// solution of `b'(theta) = mean`. Values outside the range of `b'` map
    /// to the nearest end of the domain. The default inverts `b'` numerically
    /// (it is nondecreasing) to `1e-10`.
    fn natural_from_mean(&self, mean: f64) -> f64 {
        let d = self.domain();
        let mut lo = if d.lo.is_finite() { d.lo } else { -1.0 };
        let mut hi = if d.hi.is_finite() { d.hi } else { 1.0 };
        let eval = |t: f64| self.log_partition_deriv(d.clamp(t)) - mean;
        if !d.lo.is_finite() {
            while eval(lo) > 0.0 && lo > -1e12 {
                lo *= 2.0;
            }
        }
        if !d.hi.is_finite() {
            while eval(hi) < 0.0 && hi < 1e12 {
                hi *= 2.0;
            }
        }
        let (lo, hi) = (d.clamp(lo), d.clamp(hi));
        if eval(lo) >= 0.0 {
            return lo;
        }
        if eval(hi) <= 0.0 {
            return hi;
        }
        bisect(eval, lo, hi, 1e-10)
    }

    /// `log f_theta(y)`.
    fn log_density(&self, theta: f64, y: f64) -> f64 {
        theta * self.suff_stat(y) - self.log_partition(theta) + self.log_base_measure(y)
    }

    /// `log f_theta(y) / f_theta0(y)`.
    fn log_likelihood_ratio(&self, theta: f64, theta0: f64, y: f64) -> f64 {
        (theta - theta0) * self.suff_stat(y) - (self.log_partition(theta) - self.log_partition(theta0))
    }

    /// `I(theta) = (theta - theta0) b'(theta) - (b(theta) - b(theta0))`, the
    /// divergence of `f_theta` from `f_theta0`.
    fn kl(&self, theta: f64, theta0: f64) -> f64 {
        (theta - theta0) * self.log_partition_deriv(theta) - (self.log_partition(theta) - self.log_partition(theta0))
    }
}

/// Unit-variance Gaussian with unknown mean: `T(y) = y`, `b(theta) = theta^2 / 2`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GaussianMean;

impl ExpFamily for GaussianMean {
    fn suff_stat(&self, y: f64) -> f64 {
        y
    }

    fn log_partition(&self, theta: f64) -> f64 {
        0.5 * theta * theta
    }

    fn log_partition_deriv(&self, theta: f64) -> f64 {
        theta
    }

    fn domain(&self) -> ParamDomain {
        ParamDomain::REAL_LINE
    }

    fn log_base_measure(&self, y: f64) -> f64 {
        -0.5 * y * y - 0.5 * (2.0 * std::f64::consts::PI).ln()
    }

    fn support(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn natural_from_mean(&self, mean: f64) -> f64 {
        mean
    }

    fn kl(&self, theta: f64, theta0: f64) -> f64 {
        0.5 * (theta - theta0).powi(2)
    }
}

/// The `V_delta` density family in natural form: observation `v`,
/// `T(v) = -W(v) = -(C/phi) T_int(v)^delta`, parameter `J`, `b(J) = -log J`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VFamily {
    pub params: FamilyParams,
}

impl VFamily {
    pub fn new(params: FamilyParams) -> Self {
        Self { params }
    }
}

impl ExpFamily for VFamily {
    fn suff_stat(&self, v: f64) -> f64 {
        vmaxfam::w_transform(&self.params, v).map_or(f64::NAN, |w| -w)
    }

    fn log_partition(&self, j: f64) -> f64 {
        -j.ln()
    }

    fn log_partition_deriv(&self, j: f64) -> f64 {
        -1.0 / j
    }

    fn domain(&self) -> ParamDomain {
        ParamDomain::POSITIVE
    }

    fn log_base_measure(&self, v: f64) -> f64 {
        // log f_V(v; 1) + W(v) = log h(v) since b(1) = 0
        match vmaxfam::JParam::new(1.0).and_then(|one| vmaxfam::log_pdf_v(&self.params, one, v)) {
            Ok(lp) => lp - self.suff_stat(v),
            Err(_) => f64::NEG_INFINITY,
        }
    }

    fn support(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn log_density(&self, j: f64, v: f64) -> f64 {
        vmaxfam::JParam::new(j).and_then(|j| vmaxfam::log_pdf_v(&self.params, j, v)).unwrap_or(f64::NEG_INFINITY)
    }

    fn natural_from_mean(&self, mean: f64) -> f64 {
        // b'(J) = -1/J, so J_hat = -1/mean = k / sum W
        if mean < 0.0 {
            -1.0 / mean
        } else {
            self.domain().clamp(f64::INFINITY)
        }
    }

    fn kl(&self, j: f64, j0: f64) -> f64 {
        (j / j0).ln() + j0 / j - 1.0
    }
}

/// Parameters of the GLR rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GlrConfig {
    /// Pre-change parameter.
    pub theta0: f64,
    /// Smallest change magnitude of interest.
    pub epsilon: f64,
    /// Stopping threshold `A`; the rule stops when the statistic is
    /// strictly greater.
    #[serde(with = "crate::serde_ext")]
    pub threshold_a: f64,
    /// Only the most recent `window` change-point candidates are scanned.
    #[serde(default)]
    pub window: Option<usize>,
}

impl GlrConfig {
    pub fn new(theta0: f64, epsilon: f64, threshold_a: f64) -> Self {
        Self { theta0, epsilon, threshold_a, window: None }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = Some(window);
        self
    }

    pub fn with_threshold(mut self, threshold_a: f64) -> Self {
        self.threshold_a = threshold_a;
        self
    }

    /// The admissible half-lines `{theta >= theta0 + eps}` and
    /// `{theta <= theta0 - eps}` intersected with the domain.
    pub fn regions<F: ExpFamily + ?Sized>(&self, fam: &F) -> Result<Regions> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::domain(format!("epsilon = {} must be positive", self.epsilon)));
        }
        if self.threshold_a.is_nan() {
            return Err(Error::domain("threshold is NaN"));
        }
        if self.window == Some(0) {
            return Err(Error::domain("window must be positive"));
        }
        let d = fam.domain();
        if !d.contains(self.theta0) {
            return Err(Error::domain(format!("theta0 = {} outside the parameter domain", self.theta0)));
        }
        let up = self.theta0 + self.epsilon;
        let down = self.theta0 - self.epsilon;
        let regions =
            Regions { theta0: self.theta0, up: (up < d.hi).then_some(up), down: (down > d.lo).then_some(down) };
        if regions.up.is_none() && regions.down.is_none() {
            return Err(Error::NoAdmissibleRegion);
        }
        Ok(regions)
    }
}

/// Admissible alternative parameters: `theta >= up` and/or `theta <= down`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Regions {
    pub theta0: f64,
    pub up: Option<f64>,
    pub down: Option<f64>,
}

impl Regions {
    /// Boundary points `theta0 +- eps` that lie in the domain.
    pub fn boundaries(&self) -> Vec<f64> {
        self.up.into_iter().chain(self.down).collect()
    }

    fn window_objective<F: ExpFamily + ?Sized>(&self, fam: &F, theta: f64, k: f64, s: f64) -> f64 {
        (theta - self.theta0) * s - k * (fam.log_partition(theta) - fam.log_partition(self.theta0))
    }

    /// Upper-region and lower-region suprema for a window of `k`
    /// observations with sufficient-statistic sum `s`.
    fn split_sup<F: ExpFamily + ?Sized>(&self, fam: &F, k: f64, s: f64) -> (f64, f64) {
        let d = fam.domain();
        let theta_hat = d.clamp(fam.natural_from_mean(s / k));
        let up = self.up.map_or(f64::NEG_INFINITY, |b| self.window_objective(fam, d.clamp(theta_hat.max(b)), k, s));
        let down = self.down.map_or(f64::NEG_INFINITY, |b| self.window_objective(fam, d.clamp(theta_hat.min(b)), k, s));
        (up, down)
    }

    /// `sup_{theta admissible} (theta - theta0) s - k (b(theta) - b(theta0))`.
    pub fn inner_sup<F: ExpFamily + ?Sized>(&self, fam: &F, k: usize, s: f64) -> f64 {
        let (u, d) = self.split_sup(fam, k as f64, s);
        u.max(d)
    }

    /// The maximising parameter for a window (clamped MLE of the better region).
    pub fn argmax<F: ExpFamily + ?Sized>(&self, fam: &F, k: usize, s: f64) -> f64 {
        let d = fam.domain();
        let theta_hat = d.clamp(fam.natural_from_mean(s / k as f64));
        let cands = [self.up.map(|b| d.clamp(theta_hat.max(b))), self.down.map(|b| d.clamp(theta_hat.min(b)))];
        cands
            .into_iter()
            .flatten()
            .max_by(|a, b| {
                self.window_objective(fam, *a, k as f64, s).total_cmp(&self.window_objective(fam, *b, k as f64, s))
            })
            .expect("at least one region")
    }
}

/// GLR statistic after the last of `samples`: the best window ending at the
/// last observation (only the last `window` starts when windowed).
pub fn glr_statistic<F: ExpFamily + ?Sized>(fam: &F, cfg: &GlrConfig, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let regions = cfg.regions(fam)?;
    let mut prefix = Vec::with_capacity(samples.len() + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for &y in samples {
        acc += fam.suff_stat(y);
        prefix.push(acc);
    }
    let m = samples.len();
    let first = cfg.window.map_or(1, |w| m.saturating_sub(w) + 1);
    Ok((first..=m)
        .map(|l| regions.inner_sup(fam, m - l + 1, prefix[m] - prefix[l - 1]))
        .fold(f64::NEG_INFINITY, f64::max))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Point {
    j: f64,
    s: f64,
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a.j - o.j) * (b.s - o.s) - (a.s - o.s) * (b.j - o.j)
}

/// Mutable state of one streaming GLR detector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DetectorState {
    m: usize,
    sum: f64,
    // prefix points (j, S_j), j = 0..m-1, on the lower / upper convex hulls
    lower: Vec<Point>,
    upper: Vec<Point>,
    // windowed mode: S_j for the last `window` values of j
    recent: VecDeque<f64>,
    current_stat: f64,
    stopped_at: Option<usize>,
}

impl DetectorState {
    /// Observations consumed so far.
    pub fn observations(&self) -> usize {
        self.m
    }

    /// `S_m`.
    pub fn prefix_sum(&self) -> f64 {
        self.sum
    }

    pub fn current_stat(&self) -> f64 {
        self.current_stat
    }

    pub fn stopped_at(&self) -> Option<usize> {
        self.stopped_at
    }

    /// Number of change-point candidates currently retained.
    pub fn candidates(&self) -> usize {
        self.lower.len().max(self.upper.len()).max(self.recent.len())
    }
}

/// Streaming GLR detector. Once it stops it is frozen; start a new one to
/// re-arm.
#[derive(Debug, Clone)]
pub struct GlrDetector<F> {
    fam: F,
    cfg: GlrConfig,
    regions: Regions,
    state: DetectorState,
}

impl<F: ExpFamily> GlrDetector<F> {
    pub fn new(fam: F, cfg: GlrConfig) -> Result<Self> {
        let regions = cfg.regions(&fam)?;
        Ok(Self { fam, cfg, regions, state: DetectorState { current_stat: f64::NEG_INFINITY, ..Default::default() } })
    }

    pub fn family(&self) -> &F {
        &self.fam
    }

    pub fn config(&self) -> &GlrConfig {
        &self.cfg
    }

    pub fn state(&self) -> &DetectorState {
        &self.state
    }

    pub fn statistic(&self) -> f64 {
        self.state.current_stat
    }

    pub fn stopped_at(&self) -> Option<usize> {
        self.state.stopped_at
    }

    /// Feed one observation; returns the stopping index once stopped.
    pub fn step(&mut self, y: f64) -> Option<usize> {
        if self.state.stopped_at.is_some() {
            return self.state.stopped_at;
        }
        let t = self.fam.suff_stat(y);
        self.step_suff(t)
    }

    /// Feed the sufficient statistic `T(y)` of one observation directly.
    pub fn step_suff(&mut self, t: f64) -> Option<usize> {
        let st = &mut self.state;
        if st.stopped_at.is_some() {
            return st.stopped_at;
        }
        let point = Point { j: st.m as f64, s: st.sum };
        match self.cfg.window {
            Some(w) => {
                st.recent.push_back(st.sum);
                if st.recent.len() > w {
                    st.recent.pop_front();
                }
            }
            None => {
                if self.regions.up.is_some() {
                    while st.lower.len() >= 2
                        && cross(st.lower[st.lower.len() - 2], st.lower[st.lower.len() - 1], point) <= 0.0
                    {
                        st.lower.pop();
                    }
                    st.lower.push(point);
                }
                if self.regions.down.is_some() {
                    while st.upper.len() >= 2
                        && cross(st.upper[st.upper.len() - 2], st.upper[st.upper.len() - 1], point) >= 0.0
                    {
                        st.upper.pop();
                    }
                    st.upper.push(point);
                }
            }
        }
        st.m += 1;
        st.sum += t;

        let m = st.m as f64;
        let sum = st.sum;
        let regions = self.regions;
        let fam = &self.fam;
        let stat = match self.cfg.window {
            Some(w) => {
                let first = st.m.saturating_sub(w);
                st.recent
                    .iter()
                    .enumerate()
                    .map(|(i, &s_j)| {
                        let k = st.m - (first + i);
                        regions.inner_sup(fam, k, sum - s_j)
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            }
            None => {
                let up = st
                    .lower
                    .iter()
                    .map(|p| regions.split_sup(fam, m - p.j, sum - p.s).0)
                    .fold(f64::NEG_INFINITY, f64::max);
                let down = st
                    .upper
                    .iter()
                    .map(|p| regions.split_sup(fam, m - p.j, sum - p.s).1)
                    .fold(f64::NEG_INFINITY, f64::max);
                up.max(down)
            }
        };
        st.current_stat = stat;
        if stat > self.cfg.threshold_a {
            st.stopped_at = Some(st.m);
        }
        st.stopped_at
    }

    /// Run over a finite sequence; returns the stopping index, if any.
    pub fn run<I: IntoIterator<Item = f64>>(&mut self, ys: I) -> Option<usize> {
        for y in ys {
            if let Some(t) = self.step(y) {
                return Some(t);
            }
        }
        self.state.stopped_at
    }
}

/// One-sided GLR test `N`: first `m` with
/// `sup_{|theta - theta0| >= eps} sum_{i=1}^m log f_theta/f_theta0 > A`.
pub fn one_sided_glr_n<F: ExpFamily + ?Sized>(fam: &F, cfg: &GlrConfig, samples: &[f64]) -> Result<Option<usize>> {
    let regions = cfg.regions(fam)?;
    let mut s = 0.0;
    for (i, &y) in samples.iter().enumerate() {
        s += fam.suff_stat(y);
        if regions.inner_sup(fam, i + 1, s) > cfg.threshold_a {
            return Ok(Some(i + 1));
        }
    }
    Ok(None)
}

/// Streaming form of [`one_sided_glr_n`] fed with sufficient statistics.
#[derive(Debug, Clone)]
pub struct OneSidedGlr<F> {
    fam: F,
    regions: Regions,
    threshold_a: f64,
    m: usize,
    sum: f64,
}

impl<F: ExpFamily> OneSidedGlr<F> {
    pub fn new(fam: F, cfg: &GlrConfig) -> Result<Self> {
        let regions = cfg.regions(&fam)?;
        Ok(Self { fam, regions, threshold_a: cfg.threshold_a, m: 0, sum: 0.0 })
    }

    /// Returns true when the test stops at this observation.
    pub fn step_suff(&mut self, t: f64) -> bool {
        self.m += 1;
        self.sum += t;
        self.regions.inner_sup(&self.fam, self.m, self.sum) > self.threshold_a
    }
}

/// One-sided SPRT `nu`: first `m` with `sum_{i<=m} log f_theta/f_theta0 > A`.
pub fn sprt_nu<F: ExpFamily + ?Sized>(
    fam: &F,
    theta: f64,
    theta0: f64,
    threshold_a: f64,
    samples: &[f64],
) -> Result<Option<usize>> {
    let d = fam.domain();
    if !d.contains(theta) || !d.contains(theta0) {
        return Err(Error::domain("theta and theta0 must lie in the parameter domain"));
    }
    let mut llr = 0.0;
    for (i, &y) in samples.iter().enumerate() {
        llr += fam.log_likelihood_ratio(theta, theta0, y);
        if llr > threshold_a {
            return Ok(Some(i + 1));
        }
    }
    Ok(None)
}

/// Threshold for a target mean time to false alarm `beta`.
///
/// Without `kappa` this is `log beta`. With `kappa` (and `i_min`) it is the
/// root of `exp(kappa A) = 2 beta (A / i_min + 1)`, the smallest `A` for
/// which the misspecified false-alarm lower bound reaches `beta`.
pub fn threshold_for_mtfa(beta: f64, kappa: Option<f64>, i_min: Option<f64>) -> Result<f64> {
    if !(beta > 1.0) {
        return Err(Error::domain(format!("beta = {beta} must exceed 1")));
    }
    let Some(kappa) = kappa else {
        return Ok(beta.ln());
    };
    let i_min = i_min.ok_or_else(|| Error::domain("i_min is required with kappa"))?;
    if !(kappa > 0.0) || !(i_min > 0.0) {
        return Err(Error::domain("kappa and i_min must be positive"));
    }
    // g is convex with g(0) < 0, so the root is unique
    let target = (2.0 * beta).ln();
    let g = |a: f64| kappa * a - target - (a / i_min).ln_1p();
    let mut hi = 1.0;
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::domain("threshold search diverged"));
        }
    }
    crate::numeric::brent(g, 0.0, hi, 1e-12, 500)
}
