//! Monte Carlo checks: sampler fit, false-alarm probability bounds of the
//! one-sided tests, and agreement of the two simulation modes.

use knn_qcd::corrstats::summary_statistic;
use knn_qcd::datagen::{self, CovSpec, MeanPolicy, Shape, StreamSpec};
use knn_qcd::glr::{sprt_nu, ExpFamily, GaussianMean, GlrConfig, OneSidedGlr, VFamily};
use knn_qcd::harness::{self, Mode, RunConfig, RunSettings};
use knn_qcd::misspec::{self, FamilyMember};
use knn_qcd::rng::{domain, substream};
use knn_qcd::vmaxfam::{self, FamilyParams, JParam};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

fn fp() -> FamilyParams {
    FamilyParams::new(10, 100, 1).unwrap()
}

fn ks_distance(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// `true` when `hits` out of `trials` is consistent with a probability of
/// at most `bound`, allowing three binomial standard deviations.
fn within_bound(hits: usize, trials: usize, bound: f64) -> bool {
    let p_hat = hits as f64 / trials as f64;
    let sd = (bound.min(1.0) * (1.0 - bound.min(1.0)) / trials as f64).sqrt();
    p_hat <= bound + 3.0 * sd
}

#[test]
fn sampled_statistic_follows_its_distribution() {
    let fp = fp();
    let one = JParam::new(1.0).unwrap();
    let mut rng = substream(17, domain::STATISTIC, 0);
    let mut vs: Vec<f64> = (0..5000).map(|_| vmaxfam::sample_v(&fp, one, &mut rng)).collect();
    let d = ks_distance(&mut vs, |v| vmaxfam::cdf_v(&fp, one, v).unwrap());
    assert!(d < 0.03, "KS distance {d}");
}

#[test]
fn gaussian_matrices_have_unit_parameter() {
    let spec = StreamSpec {
        n: 10,
        p: 100,
        gamma: None,
        sigma0: CovSpec::Diagonal { p: 100, variances: Some((1..=100).map(|i| i as f64).collect()) },
        sigma1: CovSpec::identity(100),
        mean_policy: MeanPolicy::RandomPerMatrix(3.0),
        shape: Shape::Gaussian,
        seed: 99,
    };
    let fp = fp();
    let one = JParam::new(1.0).unwrap();
    let stream = datagen::stream(&spec).unwrap();
    let sampler = stream.sampler();
    let mut vs: Vec<f64> =
        (1..=2000u64).into_par_iter().map(|m| summary_statistic(&sampler.matrix(m).unwrap(), 1).unwrap()).collect();
    let d = ks_distance(&mut vs, |v| vmaxfam::cdf_v(&fp, one, v).unwrap());
    assert!(d < 0.1, "KS distance {d}");
}

#[test]
fn one_sided_glr_false_alarm_probability() {
    let fp = fp();
    let fam = VFamily::new(fp);
    let one = JParam::new(1.0).unwrap();
    let trials = 2000;
    for a in [4.0, 6.0] {
        let cfg = GlrConfig::new(1.0, 1.5, a);
        let i_min = misspec::i_min(&fam, &cfg).unwrap();
        let bound = 2.0 * (-a as f64).exp() * (a / i_min + 1.0);
        let hits = (0..trials as u64)
            .into_par_iter()
            .filter(|&t| {
                let mut rng = substream(23, domain::MTFA_TRIAL, t);
                let mut test = OneSidedGlr::new(fam, &cfg).unwrap();
                (0..10_000).any(|_| test.step_suff(-vmaxfam::sample_w(&fp, one, &mut rng)))
            })
            .count();
        assert!(within_bound(hits, trials, bound), "A={a}: {hits}/{trials} against bound {bound}");
    }
}

/// Fraction of `trials` paths of length `len` on which the SPRT stops.
fn sprt_rate(
    trials: usize,
    len: usize,
    theta: f64,
    theta0: f64,
    a: f64,
    draw: impl Fn(&mut knn_qcd::rng::RandomSource) -> f64 + Sync,
    fam: &(impl ExpFamily + Sync),
) -> (usize, usize) {
    let hits = (0..trials as u64)
        .into_par_iter()
        .filter(|&t| {
            let mut rng = substream(29, domain::EDD_TRIAL, t);
            let ys: Vec<f64> = (0..len).map(|_| draw(&mut rng)).collect();
            sprt_nu(fam, theta, theta0, a, &ys).unwrap().is_some()
        })
        .count();
    (hits, trials)
}

#[test]
fn sprt_false_alarm_probability_under_misspecification() {
    // Gaussian: true mean 0.1, nominal 0, alternative 1
    let g = FamilyMember::new(&GaussianMean, 0.1);
    let kappa = misspec::kappa_root(&GaussianMean, 1.0, 0.0, &g).unwrap().unwrap();
    assert!((kappa - 0.8).abs() < 1e-6);
    let a = 3.0;
    let (hits, trials) = sprt_rate(2000, 400, 1.0, 0.0, a, |r| 0.1 + r.sample::<f64, _>(StandardNormal), &GaussianMean);
    let bound = (-kappa * a).exp();
    assert!(within_bound(hits, trials, bound), "gaussian: {hits}/{trials} against {bound}");

    // V family: true J0 = 1.3, nominal 1, alternative 2.5
    let fp = fp();
    let fam = VFamily::new(fp);
    let g = FamilyMember::new(&fam, 1.3);
    let kappa = misspec::kappa_root(&fam, 2.5, 1.0, &g).unwrap().unwrap();
    let j0 = JParam::new(1.3).unwrap();
    let (hits, trials) = sprt_rate(2000, 300, 2.5, 1.0, a, |r| vmaxfam::sample_v(&fp, j0, r), &fam);
    let bound = (-kappa * a).exp();
    assert!(within_bound(hits, trials, bound), "v family: {hits}/{trials} against {bound}");
    assert!(hits > 0, "the bound should not be vacuous here");
}

// Many sparse, modest correlations: the regime where the maximum is close to
// the exponential limit. A few strong correlations make the transformed
// statistic over-dispersed and the matrix-level detector faster than the
// surrogate.
#[test]
fn statistic_level_reproduces_matrix_level_delay() {
    let stream = StreamSpec {
        n: 10,
        p: 100,
        gamma: Some(1),
        sigma0: CovSpec::identity(100),
        sigma1: CovSpec::RowSparseWishart { p: 100, k: 10, seed: 7, dof: Some(10) },
        mean_policy: MeanPolicy::Zero,
        shape: Shape::Gaussian,
        seed: 41,
    };
    let base = RunConfig {
        family: fp(),
        glr: GlrConfig::new(1.0, 0.2, 3.0),
        stream: Some(stream),
        run: RunSettings { mode: Mode::MatrixLevel, trials_edd: 600, seed: 43, ..Default::default() },
    };
    for a in [3.0, 4.0] {
        let mut matrix = base.clone();
        matrix.glr.threshold_a = a;
        let m = harness::estimate_edd(&matrix).unwrap();
        let j_hat = m.j_post_estimate.unwrap();
        assert!(j_hat > 1.1, "J_hat = {j_hat}");
        assert_eq!(m.delay.censored_fraction, 0.0);

        let mut stat = matrix.clone();
        stat.run.mode = Mode::StatisticLevel;
        stat.run.j_post = Some(j_hat);
        stat.run.trials_edd = 4000;
        let s = harness::estimate_edd(&stat).unwrap();
        let rel = (s.delay.mean - m.delay.mean).abs() / m.delay.mean;
        assert!(
            rel <= 0.25,
            "A={a}: matrix EDD {:.3}, statistic EDD {:.3} at J_hat {j_hat:.3}",
            m.delay.mean,
            s.delay.mean
        );
    }
}
