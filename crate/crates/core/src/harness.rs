//! Monte Carlo estimates of detection delay and false-alarm time.
//!
//! Delay trials start post-change at the first observation; false-alarm
//! trials never change. Because the GLR statistic does not depend on the
//! threshold, one pass over a trial yields the stopping time for every
//! threshold in a sweep, so all thresholds see common random numbers.
//! Trials are independent substreams of the master seed and run in
//! parallel; results are gathered in trial order, so output does not depend
//! on scheduling.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corrstats::summary_statistic;
use crate::datagen::{self, MatrixStream, StreamSampler, StreamSpec};
use crate::error::{Error, Result};
use crate::glr::{ExpFamily, GlrConfig, GlrDetector, VFamily};
use crate::misspec::{kappa_root, tilted_integral, Density};
use crate::rng::{self, domain};
use crate::vmaxfam::{self, FamilyParams, JParam};

/// Where observations come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Generate data matrices and compute the statistic from each.
    MatrixLevel,
    /// Draw the statistic directly from its density family.
    #[default]
    StatisticLevel,
}

fn default_trials_edd() -> usize {
    500
}

fn default_trials_mtfa() -> usize {
    1500
}

fn default_j() -> f64 {
    1.0
}

/// The `run` section of a configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_trials_edd")]
    pub trials_edd: usize,
    #[serde(default = "default_trials_mtfa")]
    pub trials_mtfa: usize,
    /// Censoring horizon; defaults to `min(50 exp(A), 1e6)` per threshold.
    #[serde(default)]
    pub max_steps: Option<u64>,
    /// Cap on `trials_mtfa * max_steps`; the trial count shrinks to fit.
    #[serde(default)]
    pub budget: Option<u64>,
    /// Statistic-level pre-change parameter.
    #[serde(default = "default_j")]
    pub j_pre: f64,
    /// Statistic-level post-change parameter.
    #[serde(default)]
    pub j_post: Option<f64>,
    /// Thresholds for `simulate`; the `glr` threshold when empty.
    #[serde(default, with = "crate::serde_ext::vec")]
    pub thresholds: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunSettings {
    fn default() -> Self {
        Self {
            mode: Mode::default(),
            trials_edd: default_trials_edd(),
            trials_mtfa: default_trials_mtfa(),
            max_steps: None,
            budget: None,
            j_pre: default_j(),
            j_post: None,
            thresholds: Vec::new(),
            seed: 0,
        }
    }
}

/// Everything a simulation needs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: FamilyParams,
    pub glr: GlrConfig,
    pub stream: Option<StreamSpec>,
    pub run: RunSettings,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.glr.regions(&VFamily::new(self.family))?;
        if self.run.trials_edd == 0 || self.run.trials_mtfa == 0 {
            return Err(Error::config("trial counts must be at least 1"));
        }
        if self.run.max_steps == Some(0) {
            return Err(Error::config("max_steps must be at least 1"));
        }
        match self.run.mode {
            Mode::StatisticLevel => {
                JParam::new(self.run.j_pre).map_err(|e| Error::config(format!("run.j_pre: {e}")))?;
                if let Some(j) = self.run.j_post {
                    JParam::new(j).map_err(|e| Error::config(format!("run.j_post: {e}")))?;
                }
            }
            Mode::MatrixLevel => {
                let s =
                    self.stream.as_ref().ok_or_else(|| Error::config("matrix_level mode needs a stream section"))?;
                s.validate()?;
                if s.p != self.family.p() || s.n != self.family.n() {
                    return Err(Error::config(format!(
                        "stream shape {}x{} does not match family n = {}, p = {}",
                        s.n,
                        s.p,
                        self.family.n(),
                        self.family.p()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Censoring horizon for a threshold.
    pub fn horizon(&self, threshold_a: f64) -> u64 {
        self.run.max_steps.unwrap_or_else(|| default_horizon(threshold_a))
    }

    /// False-alarm trial count after applying the budget at `horizon`.
    pub fn mtfa_trials(&self, horizon: u64) -> usize {
        match self.run.budget {
            Some(b) => self.run.trials_mtfa.min((b / horizon.max(1)).max(1) as usize),
            None => self.run.trials_mtfa,
        }
    }
}

/// `min(50 exp(A), 1e6)`, at least 1.
pub fn default_horizon(threshold_a: f64) -> u64 {
    let h = 50.0 * threshold_a.exp();
    if h.is_nan() {
        1
    } else {
        h.clamp(1.0, 1e6).ceil() as u64
    }
}

/// Mean and standard error of a run length, with censoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RunLength {
    pub mean: f64,
    pub stderr: f64,
    pub censored_fraction: f64,
    pub trials: usize,
}

impl RunLength {
    fn from_samples(xs: &[f64], censored: usize) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let stderr = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self { mean, stderr, censored_fraction: censored as f64 / n, trials: xs.len() }
    }
}

/// Delay estimate with the post-change parameter measured along the way.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EddEstimate {
    pub delay: RunLength,
    /// Matrix level only: MLE of the post-change parameter from every
    /// statistic observed in the delay trials.
    pub j_post_estimate: Option<f64>,
}

/// One row of a threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TradeoffRow {
    pub threshold_a: f64,
    pub edd_mean: f64,
    pub edd_stderr: f64,
    pub mtfa_mean: f64,
    pub mtfa_stderr: f64,
    /// Share of false-alarm trials that hit the horizon (their mean is then
    /// a lower estimate).
    pub censored_fraction: f64,
    /// Share of delay trials that hit the horizon.
    pub edd_censored_fraction: f64,
    pub j_post_estimate: Option<f64>,
    /// Divergence of the post-change parameter from the pre-change one.
    pub kl_ij: Option<f64>,
    pub seed: u64,
}

// Stopping time per threshold for one trial, with the statistic sum that
// produced it. `None` means censored at that threshold's horizon.
struct TrialOutcome {
    stops: Vec<Option<u64>>,
    w_sum: f64,
    count: usize,
}

// Feeds sufficient statistics to one detector and records the first
// crossing of each threshold.
fn first_crossings<S>(
    glr: &GlrConfig,
    fam: VFamily,
    thresholds: &[f64],
    horizons: &[u64],
    mut next: S,
) -> Result<TrialOutcome>
where
    S: FnMut(u64) -> Result<f64>,
{
    let mut det = GlrDetector::new(fam, glr.with_threshold(f64::INFINITY))?;
    let mut stops = vec![None; thresholds.len()];
    let limit =
        thresholds.iter().zip(horizons).filter(|(a, _)| **a < f64::INFINITY).map(|(_, h)| *h).max().unwrap_or(0);
    let (mut w_sum, mut count) = (0.0, 0);
    for m in 1..=limit {
        let w = next(m)?;
        w_sum += w;
        count += 1;
        det.step_suff(-w);
        let stat = det.statistic();
        let mut pending = false;
        for (i, (&a, &h)) in thresholds.iter().zip(horizons).enumerate() {
            if stops[i].is_none() && m <= h {
                if stat > a {
                    stops[i] = Some(m);
                } else if m < h && a < f64::INFINITY {
                    pending = true;
                }
            }
        }
        if !pending {
            break;
        }
    }
    Ok(TrialOutcome { stops, w_sum, count })
}

enum Source<'a> {
    Statistic { j: JParam },
    Matrix { sampler: StreamSampler<'a> },
}

impl Source<'_> {
    fn trial(
        &self,
        cfg: &RunConfig,
        thresholds: &[f64],
        horizons: &[u64],
        trial_domain: u64,
        index: u64,
    ) -> Result<TrialOutcome> {
        let fam = VFamily::new(cfg.family);
        let fp = cfg.family;
        match self {
            Source::Statistic { j } => {
                let mut r = rng::substream(cfg.run.seed, trial_domain, index);
                first_crossings(&cfg.glr, fam, thresholds, horizons, |_| Ok(vmaxfam::sample_w(&fp, *j, &mut r)))
            }
            Source::Matrix { sampler } => {
                let sampler =
                    StreamSampler { seed: rng::derive_seed(cfg.run.seed, trial_domain, index), ..sampler.clone() };
                first_crossings(&cfg.glr, fam, thresholds, horizons, |m| {
                    let x = sampler.matrix(m)?;
                    let v = summary_statistic(&x, fp.delta())?;
                    vmaxfam::w_transform(&fp, v)
                })
            }
        }
    }
}

fn run_trials(
    cfg: &RunConfig,
    source: &Source<'_>,
    thresholds: &[f64],
    horizons: &[u64],
    trial_domain: u64,
    trials: usize,
) -> Result<Vec<TrialOutcome>> {
    (0..trials as u64).into_par_iter().map(|i| source.trial(cfg, thresholds, horizons, trial_domain, i)).collect()
}

fn summarize(outcomes: &[TrialOutcome], idx: usize, horizon: u64, offset: f64) -> RunLength {
    let mut censored = 0;
    let xs: Vec<f64> = outcomes
        .iter()
        .map(|o| match o.stops[idx] {
            Some(t) => t as f64 - offset,
            None => {
                censored += 1;
                horizon as f64 - offset
            }
        })
        .collect();
    RunLength::from_samples(&xs, censored)
}

struct Streams {
    pre: Option<MatrixStream>,
    post: Option<MatrixStream>,
}

fn build_streams(cfg: &RunConfig) -> Result<Streams> {
    match (&cfg.run.mode, &cfg.stream) {
        (Mode::MatrixLevel, Some(spec)) => {
            let pre = StreamSpec { gamma: None, ..spec.clone() };
            let post = StreamSpec { gamma: Some(1), ..spec.clone() };
            Ok(Streams { pre: Some(datagen::stream(&pre)?), post: Some(datagen::stream(&post)?) })
        }
        _ => Ok(Streams { pre: None, post: None }),
    }
}

fn edd_source<'a>(cfg: &RunConfig, streams: &'a Streams) -> Result<Source<'a>> {
    match cfg.run.mode {
        Mode::StatisticLevel => {
            let j = cfg.run.j_post.ok_or_else(|| Error::config("statistic_level delay runs need run.j_post"))?;
            Ok(Source::Statistic { j: JParam::new(j)? })
        }
        Mode::MatrixLevel => Ok(Source::Matrix { sampler: streams.post.as_ref().expect("validated").sampler() }),
    }
}

fn mtfa_source<'a>(cfg: &RunConfig, streams: &'a Streams) -> Result<Source<'a>> {
    match cfg.run.mode {
        Mode::StatisticLevel => Ok(Source::Statistic { j: JParam::new(cfg.run.j_pre)? }),
        Mode::MatrixLevel => Ok(Source::Matrix { sampler: streams.pre.as_ref().expect("validated").sampler() }),
    }
}

fn delay_runs(cfg: &RunConfig, streams: &Streams, thresholds: &[f64]) -> Result<(Vec<RunLength>, Option<f64>)> {
    let horizons: Vec<u64> = thresholds.iter().map(|&a| cfg.horizon(a)).collect();
    let source = edd_source(cfg, streams)?;
    let out = run_trials(cfg, &source, thresholds, &horizons, domain::EDD_TRIAL, cfg.run.trials_edd)?;
    let runs = (0..thresholds.len()).map(|i| summarize(&out, i, horizons[i], 1.0)).collect();
    let j_hat = match cfg.run.mode {
        Mode::MatrixLevel => {
            let (count, sum) = out.iter().fold((0usize, 0.0), |(c, s), o| (c + o.count, s + o.w_sum));
            (count > 0).then(|| vmaxfam::mle_j_from_w_sum(count, sum))
        }
        Mode::StatisticLevel => None,
    };
    Ok((runs, j_hat))
}

fn false_alarm_runs(cfg: &RunConfig, streams: &Streams, thresholds: &[f64]) -> Result<Vec<RunLength>> {
    let horizons: Vec<u64> = thresholds.iter().map(|&a| cfg.horizon(a)).collect();
    let source = mtfa_source(cfg, streams)?;
    let trials = cfg.mtfa_trials(horizons.iter().copied().max().unwrap_or(1));
    let out = run_trials(cfg, &source, thresholds, &horizons, domain::MTFA_TRIAL, trials)?;
    Ok((0..thresholds.len()).map(|i| summarize(&out, i, horizons[i], 0.0)).collect())
}

/// Expected delay with the change at the first observation, at the
/// configured threshold.
pub fn estimate_edd(cfg: &RunConfig) -> Result<EddEstimate> {
    cfg.validate()?;
    let streams = build_streams(cfg)?;
    let (runs, j_post_estimate) = delay_runs(cfg, &streams, &[cfg.glr.threshold_a])?;
    Ok(EddEstimate { delay: runs[0], j_post_estimate })
}

/// Mean time to false alarm with no change, at the configured threshold.
pub fn estimate_mtfa(cfg: &RunConfig) -> Result<RunLength> {
    cfg.validate()?;
    let streams = build_streams(cfg)?;
    Ok(false_alarm_runs(cfg, &streams, &[cfg.glr.threshold_a])?[0])
}

/// Delay and false-alarm estimates for each threshold.
pub fn sweep(cfg: &RunConfig, thresholds: &[f64]) -> Result<Vec<TradeoffRow>> {
    if thresholds.is_empty() {
        return Err(Error::config("sweep needs at least one threshold"));
    }
    if let Some(a) = thresholds.iter().find(|a| a.is_nan()) {
        return Err(Error::config(format!("threshold {a} is not a number")));
    }
    cfg.validate()?;
    let streams = build_streams(cfg)?;
    let has_post = cfg.run.mode == Mode::MatrixLevel || cfg.run.j_post.is_some();
    let (delays, j_hat) = if has_post {
        let (d, j) = delay_runs(cfg, &streams, thresholds)?;
        (Some(d), j)
    } else {
        (None, None)
    };
    let alarms = false_alarm_runs(cfg, &streams, thresholds)?;
    let fam = VFamily::new(cfg.family);
    let j_ref = match cfg.run.mode {
        Mode::MatrixLevel => j_hat,
        Mode::StatisticLevel => cfg.run.j_post,
    };
    let kl = j_ref.map(|j| fam.kl(j, cfg.glr.theta0));
    Ok(thresholds
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let d = delays.as_ref().map(|d| d[i]);
            TradeoffRow {
                threshold_a: a,
                edd_mean: d.map_or(f64::NAN, |d| d.mean),
                edd_stderr: d.map_or(f64::NAN, |d| d.stderr),
                mtfa_mean: alarms[i].mean,
                mtfa_stderr: alarms[i].stderr,
                censored_fraction: alarms[i].censored_fraction,
                edd_censored_fraction: d.map_or(0.0, |d| d.censored_fraction),
                j_post_estimate: j_hat,
                kl_ij: kl,
                seed: cfg.run.seed,
            }
        })
        .collect())
}

/// Least-squares slope of delay against log false-alarm time.
pub fn tradeoff_slope(rows: &[TradeoffRow]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.mtfa_mean > 0.0 && r.edd_mean.is_finite())
        .map(|r| (r.mtfa_mean.ln(), r.edd_mean))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// One row of the tilted-integral table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KappaCurveRow {
    pub j: f64,
    pub kappa: f64,
    pub integral_value: f64,
    pub is_root: bool,
}

/// `int (f_J / f_theta0)^kappa g` over a grid of `kappa` for each `J`,
/// followed by the located root (when one exists) for that `J`.
pub fn kappa_curve<F: ExpFamily + ?Sized, G: Density + ?Sized>(
    fam: &F,
    theta0: f64,
    g: &G,
    j_values: &[f64],
    kappa_grid: &[f64],
) -> Result<Vec<KappaCurveRow>> {
    if j_values.is_empty() || kappa_grid.is_empty() {
        return Err(Error::config("kappa curve needs nonempty J and kappa grids"));
    }
    if let Some(k) = kappa_grid.iter().find(|k| !(k.is_finite() && **k >= 0.0)) {
        return Err(Error::config(format!("kappa grid value {k} must be finite and nonnegative")));
    }
    let mut rows = Vec::new();
    for &j in j_values {
        for &kappa in kappa_grid {
            let integral_value = if kappa == 0.0 { 1.0 } else { tilted_integral(fam, j, theta0, g, kappa)? };
            rows.push(KappaCurveRow { j, kappa, integral_value, is_root: false });
        }
        if let Some(root) = kappa_root(fam, j, theta0, g)? {
            let integral_value = tilted_integral(fam, j, theta0, g, root)?;
            rows.push(KappaCurveRow { j, kappa: root, integral_value, is_root: true });
        }
    }
    Ok(rows)
}

/// `x` with 9 significant digits.
pub fn fmt_sig(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let exp = x.abs().log10().floor() as i32;
    if (-5..9).contains(&exp) {
        let s = format!("{:.*}", (8 - exp).max(0) as usize, x);
        // rounding can carry into a new leading digit
        if s.trim_start_matches('-').replace('.', "").trim_start_matches('0').len() > 9 && exp < 8 {
            format!("{:.*}", (7 - exp).max(0) as usize, x)
        } else {
            s
        }
    } else {
        format!("{x:.8e}")
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_sig).unwrap_or_default()
}

pub const TRADEOFF_HEADER: &str =
    "threshold_a,edd_mean,edd_stderr,mtfa_mean,mtfa_stderr,censored_fraction,j_post_estimate,kl_ij,seed";

pub const KAPPA_HEADER: &str = "j,kappa,integral_value,is_root";

pub fn write_tradeoff_csv<W: Write>(mut out: W, rows: &[TradeoffRow]) -> std::io::Result<()> {
    writeln!(out, "{TRADEOFF_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            fmt_sig(r.threshold_a),
            fmt_sig(r.edd_mean),
            fmt_sig(r.edd_stderr),
            fmt_sig(r.mtfa_mean),
            fmt_sig(r.mtfa_stderr),
            fmt_sig(r.censored_fraction),
            fmt_opt(r.j_post_estimate),
            fmt_opt(r.kl_ij),
            r.seed
        )?;
    }
    Ok(())
}

pub fn write_kappa_csv<W: Write>(mut out: W, rows: &[KappaCurveRow]) -> std::io::Result<()> {
    writeln!(out, "{KAPPA_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{}", fmt_sig(r.j), fmt_sig(r.kappa), fmt_sig(r.integral_value), r.is_root)?;
    }
    Ok(())
}
