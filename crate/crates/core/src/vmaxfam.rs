//! The large-`p` density family of the summary statistic `V_delta`.
//!
//! For fixed `n` and large `p` the statistic has
//!
//! ```text
//! P(V <= rho) = exp(-Lambda(rho) * J / phi),   Lambda(rho) = C * T(rho)^delta
//! T(rho)      = int_rho^1 (1 - u^2)^((n-4)/2) du
//! C           = p * binom(p-1, delta) * a_n^delta,   a_n = 2 / B((n-2)/2, 1/2)
//! ```
//!
//! with `phi = 2` for `delta = 1` and `phi = 1` otherwise. The continuous
//! part is a one-parameter exponential family in `J`; under the change of
//! variables `W = (C/phi) T(V)^delta` it is an exponential law with rate `J`
//! truncated at `W_max = (C/phi) T(0)^delta` (the remaining mass sits in an
//! atom at `V = 0`).

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{beta_reg, ln_beta};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};
use crate::numeric::brent;
use crate::rng::RandomSource;

/// Shape of the family as written in configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub n: usize,
    pub p: usize,
    #[serde(default = "default_delta")]
    pub delta: usize,
}

fn default_delta() -> usize {
    1
}

/// `(n, p, delta)` with the derived constants `a_n`, `log C` and `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FamilySpec", into = "FamilySpec")]
pub struct FamilyParams {
    n: usize,
    p: usize,
    delta: usize,
    a_n: f64,
    log_c: f64,
    phi: f64,
}

impl TryFrom<FamilySpec> for FamilyParams {
    type Error = Error;

    fn try_from(s: FamilySpec) -> Result<Self> {
        FamilyParams::new(s.n, s.p, s.delta)
    }
}

impl From<FamilyParams> for FamilySpec {
    fn from(fp: FamilyParams) -> Self {
        FamilySpec { n: fp.n, p: fp.p, delta: fp.delta }
    }
}

impl FamilyParams {
    pub fn new(n: usize, p: usize, delta: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::domain(format!("n = {n} must be at least 3")));
        }
        if p < 2 {
            return Err(Error::domain(format!("p = {p} must be at least 2")));
        }
        if delta == 0 || delta > p - 1 {
            return Err(Error::domain(format!("delta = {delta} must lie in 1..={}", p - 1)));
        }
        let a_n = beta_a_n(n)?;
        let log_c = (p as f64).ln() + ln_binomial((p - 1) as u64, delta as u64) + delta as f64 * a_n.ln();
        let phi = if delta == 1 { 2.0 } else { 1.0 };
        Ok(Self { n, p, delta, a_n, log_c, phi })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn delta(&self) -> usize {
        self.delta
    }

    pub fn a_n(&self) -> f64 {
        self.a_n
    }

    pub fn log_c(&self) -> f64 {
        self.log_c
    }

    /// `C`; may be `+inf` for very large `p` or `delta`, in which case use
    /// [`FamilyParams::log_c`].
    pub fn c(&self) -> f64 {
        self.log_c.exp()
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// `T(rho)` for this family's `n`.
    pub fn t(&self, rho: f64) -> Result<f64> {
        t_integral(rho, self.n)
    }

    /// Upper end of the `W` range, `(C/phi) T(0)^delta = p binom(p-1, delta) / phi`.
    pub fn w_max(&self) -> f64 {
        (self.log_c - self.phi.ln() - self.delta as f64 * self.a_n.ln()).exp()
    }

    fn log_w(&self, t: f64) -> f64 {
        self.log_c - self.phi.ln() + self.delta as f64 * t.ln()
    }
}

/// A strictly positive value of the family parameter `J`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct JParam(f64);

impl JParam {
    pub fn new(j: f64) -> Result<Self> {
        if j.is_finite() && j > 0.0 {
            Ok(Self(j))
        } else {
            Err(Error::domain(format!("J = {j} must be finite and positive")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for JParam {
    type Error = Error;

    fn try_from(j: f64) -> Result<Self> {
        JParam::new(j)
    }
}

impl From<JParam> for f64 {
    fn from(j: JParam) -> f64 {
        j.0
    }
}

/// `a_n = 2 / B((n-2)/2, 1/2)`, the normaliser making `a_n T(0) = 1`.
pub fn beta_a_n(n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::domain(format!("n = {n} must be at least 3")));
    }
    Ok(2.0 * (-ln_beta((n as f64 - 2.0) / 2.0, 0.5)).exp())
}

/// `T(rho) = int_rho^1 (1 - u^2)^((n-4)/2) du`, evaluated as
/// `B((n-2)/2, 1/2) / 2 * I_{1-rho^2}((n-2)/2, 1/2)`.
pub fn t_integral(rho: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::domain(format!("n = {n} must be at least 3")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::domain(format!("rho = {rho} outside [0, 1]")));
    }
    if rho == 1.0 {
        return Ok(0.0);
    }
    if n == 4 {
        return Ok(1.0 - rho);
    }
    let a = (n as f64 - 2.0) / 2.0;
    let x = ((1.0 - rho) * (1.0 + rho)).clamp(0.0, 1.0);
    Ok(0.5 * ln_beta(a, 0.5).exp() * beta_reg(a, 0.5, x))
}

/// `Lambda(rho) = C T(rho)^delta`.
pub fn lambda_of_rho(fp: &FamilyParams, rho: f64) -> Result<f64> {
    let t = fp.t(rho)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok((fp.log_c + fp.delta as f64 * t.ln()).exp())
}

/// `log P(V <= rho) = -Lambda(rho) J / phi`.
pub fn log_cdf_v(fp: &FamilyParams, j: JParam, rho: f64) -> Result<f64> {
    Ok(-lambda_of_rho(fp, rho)? * j.get() / fp.phi)
}

pub fn cdf_v(fp: &FamilyParams, j: JParam, rho: f64) -> Result<f64> {
    Ok(log_cdf_v(fp, j, rho)?.exp())
}

/// Log of the continuous density on `(0, 1]`.
pub fn log_pdf_v(fp: &FamilyParams, j: JParam, rho: f64) -> Result<f64> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::domain(format!("density is defined on (0, 1], got rho = {rho}")));
    }
    let t = fp.t(rho)?;
    let delta = fp.delta as f64;
    let mut log_f = fp.log_c + delta.ln() - fp.phi.ln() + j.get().ln();
    if fp.delta > 1 {
        log_f += (delta - 1.0) * t.ln();
    }
    if fp.n != 4 {
        let one_minus_sq = (1.0 - rho) * (1.0 + rho);
        log_f += (fp.n as f64 - 4.0) / 2.0 * one_minus_sq.ln();
    }
    let w = if t == 0.0 { 0.0 } else { fp.log_w(t).exp() };
    Ok(log_f - w * j.get())
}

/// `f_V(rho; J) = (C delta/phi) T^(delta-1) (1-rho^2)^((n-4)/2) J exp(-(C/phi) T^delta J)`.
pub fn pdf_v(fp: &FamilyParams, j: JParam, rho: f64) -> Result<f64> {
    Ok(log_pdf_v(fp, j, rho)?.exp())
}

/// `W = (C/phi) T(v)^delta`; strictly decreasing from `W_max` at `v = 0`
/// to `0` at `v = 1`.
pub fn w_transform(fp: &FamilyParams, v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain(format!("v = {v} outside (0, 1]")));
    }
    let t = fp.t(v)?;
    if t == 0.0 {
        return Ok(0.0);
    }
    Ok(fp.log_w(t).exp())
}

/// Inverse of [`w_transform`] by bracketed root finding on `[0, 1]`.
pub fn w_inverse(fp: &FamilyParams, w: f64) -> Result<f64> {
    let w_max = fp.w_max();
    if !(0.0..=w_max).contains(&w) {
        return Err(Error::domain(format!("w = {w} outside [0, {w_max}]")));
    }
    if w == 0.0 {
        return Ok(1.0);
    }
    if w == w_max {
        return Ok(0.0);
    }
    // compare on the log scale: W spans many orders of magnitude near v = 1
    let target = w.ln();
    let g = |v: f64| {
        let t = t_integral(v, fp.n).unwrap_or(0.0);
        if t == 0.0 {
            f64::NEG_INFINITY
        } else {
            fp.log_w(t) - target
        }
    };
    brent(g, 0.0, 1.0, 1e-14, 500)
}

/// Draw `W` from the exponential law with rate `J` truncated to `[0, W_max)`.
pub fn sample_w(fp: &FamilyParams, j: JParam, rng: &mut RandomSource) -> f64 {
    let u: f64 = rng.random();
    let mass = (-j.get() * fp.w_max()).exp_m1(); // -(1 - e^{-J W_max})
    let w = -(u * mass).ln_1p() / j.get();
    w.min(fp.w_max())
}

/// Draw `V` by inverting a truncated-exponential draw of `W`.
pub fn sample_v(fp: &FamilyParams, j: JParam, rng: &mut RandomSource) -> f64 {
    let w = sample_w(fp, j, rng);
    w_inverse(fp, w).expect("sampled w lies in [0, W_max)")
}

/// Maximum likelihood estimate `J_hat = m / sum_i (C/phi) T(V_i)^delta`.
pub fn mle_j(fp: &FamilyParams, samples: &[f64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for &v in samples {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::domain(format!("sample {v} outside (0, 1]")));
        }
        total += w_transform(fp, v)?;
    }
    Ok(mle_j_from_w_sum(samples.len(), total))
}

/// `J_hat` from the count and sum of transformed samples.
pub fn mle_j_from_w_sum(count: usize, w_sum: f64) -> f64 {
    count as f64 / w_sum
}

/// `I(J) = log J + 1/J - 1`, the divergence of `f_V(.; J)` from `f_V(.; 1)`.
pub fn kl_divergence(j: f64) -> Result<f64> {
    if !(j.is_finite() && j > 0.0) {
        return Err(Error::domain(format!("J = {j} must be finite and positive")));
    }
    Ok(j.ln() + 1.0 / j - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{integrate, QuadOptions};
    use crate::rng::seeded;

    fn fp(n: usize, p: usize, d: usize) -> FamilyParams {
        FamilyParams::new(n, p, d).unwrap()
    }

    #[test]
    fn a_n_values() {
        assert!((beta_a_n(4).unwrap() - 1.0).abs() < 1e-14);
        assert!((beta_a_n(3).unwrap() - 2.0 / std::f64::consts::PI).abs() < 1e-14);
        // B(4, 1/2) = 32/35
        assert!((beta_a_n(10).unwrap() - 35.0 / 16.0).abs() < 1e-12);
        assert!(beta_a_n(2).is_err());
    }

    #[test]
    fn t_integral_values() {
        for rho in [0.0, 0.3, 0.77, 1.0] {
            assert!((t_integral(rho, 4).unwrap() - (1.0 - rho)).abs() < 1e-15);
        }
        assert!((t_integral(0.0, 10).unwrap() - 16.0 / 35.0).abs() < 1e-13);
        let anti = |u: f64| u - u.powi(3) + 0.6 * u.powi(5) - u.powi(7) / 7.0;
        let expected = anti(1.0) - anti(0.5);
        assert!((t_integral(0.5, 10).unwrap() - expected).abs() < 1e-13);
        assert_eq!(t_integral(1.0, 10).unwrap(), 0.0);
        assert!(t_integral(1.2, 10).is_err());
        assert!(t_integral(-0.1, 10).is_err());
    }

    #[test]
    fn normalisation_identity() {
        for n in 3..=30 {
            let prod = beta_a_n(n).unwrap() * t_integral(0.0, n).unwrap();
            assert!((prod - 1.0).abs() < 1e-10, "n = {n}: {prod}");
        }
    }

    #[test]
    fn family_constants() {
        let f = fp(10, 100, 1);
        let c = 100.0 * 99.0 * 35.0 / 16.0;
        assert!((f.c() / c - 1.0).abs() < 1e-9);
        assert_eq!(f.phi(), 2.0);
        assert_eq!(fp(10, 100, 2).phi(), 1.0);
        assert!((f.w_max() - 4950.0).abs() < 1e-8);
        assert!(FamilyParams::new(10, 5, 5).is_err());
    }

    #[test]
    fn lambda_values() {
        let f = fp(10, 100, 1);
        assert_eq!(lambda_of_rho(&f, 1.0).unwrap(), 0.0);
        assert!((lambda_of_rho(&f, 0.0).unwrap() - 9900.0).abs() < 1e-7);
        let anti = |u: f64| u - u.powi(3) + 0.6 * u.powi(5) - u.powi(7) / 7.0;
        let expected = 9900.0 * 35.0 / 16.0 * (anti(1.0) - anti(0.5));
        assert!((lambda_of_rho(&f, 0.5).unwrap() - expected).abs() < 1e-8);
        assert!((expected - 1397.1).abs() < 0.1);
    }

    #[test]
    fn cdf_edges() {
        let f = fp(10, 100, 1);
        let one = JParam::new(1.0).unwrap();
        assert_eq!(cdf_v(&f, one, 1.0).unwrap(), 1.0);
        assert_eq!(cdf_v(&f, one, 0.0).unwrap(), 0.0);
        assert!((log_cdf_v(&f, one, 0.0).unwrap() + 4950.0).abs() < 1e-7);
    }

    #[test]
    fn cdf_median() {
        let f = fp(10, 100, 1);
        let one = JParam::new(1.0).unwrap();
        let target = 2.0 * std::f64::consts::LN_2 / f.c();
        let median = brent(|r| t_integral(r, 10).unwrap() - target, 0.0, 1.0, 1e-15, 200).unwrap();
        assert!((cdf_v(&f, one, median).unwrap() - 0.5).abs() < 1e-9);
    }

    #[test]
    fn pdf_rejects_zero() {
        let f = fp(10, 100, 1);
        assert!(pdf_v(&f, JParam::new(1.0).unwrap(), 0.0).is_err());
    }

    #[test]
    fn pdf_normalises() {
        let opts = QuadOptions { rel_tol: 1e-10, ..Default::default() };
        for (n, p, d, j) in [(10, 100, 1, 1.0), (10, 100, 1, 3.5), (4, 20, 2, 1.0), (7, 50, 3, 0.7)] {
            let f = fp(n, p, d);
            let j = JParam::new(j).unwrap();
            let total = integrate(|r| pdf_v(&f, j, r).unwrap(), 0.0, 1.0, opts).unwrap();
            assert!((total - 1.0).abs() < 1e-6, "({n},{p},{d}): {total}");
        }
    }

    #[test]
    fn pdf_matches_cdf_derivative() {
        let f = fp(10, 100, 1);
        for j in [1.0, 3.5] {
            let j = JParam::new(j).unwrap();
            for rho in [0.8, 0.9, 0.95] {
                let h = 1e-6;
                let fd = (cdf_v(&f, j, rho + h).unwrap() - cdf_v(&f, j, rho - h).unwrap()) / (2.0 * h);
                let pdf = pdf_v(&f, j, rho).unwrap();
                assert!(((fd - pdf) / pdf).abs() < 1e-4, "{rho}: {fd} vs {pdf}");
            }
        }
    }

    #[test]
    fn density_concentrates_near_one() {
        let f = fp(10, 100, 1);
        for j in [0.5, 1.0, 2.0, 5.0, 20.0] {
            let j = JParam::new(j).unwrap();
            let (mode, _) = (1..1000)
                .map(|i| i as f64 / 1000.0)
                .map(|r| (r, pdf_v(&f, j, r).unwrap()))
                .fold((0.0, f64::MIN), |acc, x| if x.1 > acc.1 { x } else { acc });
            assert!(mode > 0.8 && mode < 1.0, "mode {mode}");
        }
    }

    #[test]
    fn cdf_monotone_in_rho_and_j() {
        let f = fp(10, 100, 1);
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let mut prev_j: Option<Vec<f64>> = None;
        for j in [0.5, 1.0, 2.0, 4.0] {
            let c: Vec<f64> = grid.iter().map(|&r| cdf_v(&f, JParam::new(j).unwrap(), r).unwrap()).collect();
            assert!(c.windows(2).all(|w| w[0] <= w[1]));
            if let Some(prev) = &prev_j {
                assert!(prev.iter().zip(&c).all(|(a, b)| b <= a));
            }
            prev_j = Some(c);
        }
    }

    #[test]
    fn w_transform_round_trip() {
        let f = fp(10, 100, 1);
        assert_eq!(w_transform(&f, 1.0).unwrap(), 0.0);
        let mut last = f64::INFINITY;
        for i in 1..=200 {
            let v = i as f64 / 200.0;
            let w = w_transform(&f, v).unwrap();
            assert!(w < last);
            last = w;
            let back = w_inverse(&f, w).unwrap();
            assert!((back - v).abs() < 1e-9, "{v} -> {w} -> {back}");
        }
        assert!(w_inverse(&f, f.w_max() * 1.01).is_err());
    }

    #[test]
    fn samples_in_range_and_reproducible() {
        let f = fp(10, 100, 1);
        let j = JParam::new(1.0).unwrap();
        let mut a = seeded(9);
        let mut b = seeded(9);
        for _ in 0..200 {
            let x = sample_v(&f, j, &mut a);
            assert!(x > 0.0 && x <= 1.0);
            assert_eq!(x, sample_v(&f, j, &mut b));
        }
    }

    #[test]
    fn mle_hand_cases() {
        let f = fp(10, 100, 1);
        let v = w_inverse(&f, 1.0).unwrap();
        assert!((mle_j(&f, &[v]).unwrap() - 1.0).abs() < 1e-8);
        let a = w_inverse(&f, 0.25).unwrap();
        let b = w_inverse(&f, 0.75).unwrap();
        assert!((mle_j(&f, &[a, b]).unwrap() - 2.0).abs() < 1e-8);
        assert!(matches!(mle_j(&f, &[]), Err(Error::EmptyInput)));
        assert!(mle_j(&f, &[0.0]).is_err());
        assert!(mle_j(&f, &[1.5]).is_err());
    }

    #[test]
    fn mle_scales_inversely() {
        for c in [0.5, 2.0, 7.0] {
            let ws = [0.3, 1.1, 0.05, 2.4];
            let j = mle_j_from_w_sum(ws.len(), ws.iter().sum());
            let jc = mle_j_from_w_sum(ws.len(), ws.iter().map(|w| w * c).sum());
            assert!((jc - j / c).abs() < 1e-12);
        }
    }

    #[test]
    fn kl_values() {
        assert_eq!(kl_divergence(1.0).unwrap(), 0.0);
        assert!(kl_divergence(0.0).is_err());
        assert!(kl_divergence(-1.0).is_err());
    }
}
