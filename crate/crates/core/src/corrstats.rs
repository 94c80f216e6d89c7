//! Sample correlation, Z-scores, kNN coherence and hub counts of a data
//! matrix.
//!
//! The summary statistic `V_delta` of an `n x p` data matrix is the largest,
//! over columns `i`, of the `delta`-th largest absolute sample correlation
//! between column `i` and the other columns. For `delta = 1` it is the
//! largest off-diagonal `|R_ij|`. `V_delta >= rho` holds exactly when the
//! `rho`-thresholded correlation graph has a vertex of degree at least
//! `delta`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One `n x p` observation block, stored row-major. Rows are samples,
/// columns are variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    n: usize,
    p: usize,
    values: Vec<f64>,
}

impl DataMatrix {
    pub fn new(n: usize, p: usize, values: Vec<f64>) -> Result<Self> {
        if n < 3 {
            return Err(Error::dimension(format!("need at least 3 rows, got {n}")));
        }
        if p < 2 {
            return Err(Error::dimension(format!("need at least 2 columns, got {p}")));
        }
        if values.len() != n * p {
            return Err(Error::dimension(format!(
                "expected {} values for a {n}x{p} matrix, got {}",
                n * p,
                values.len()
            )));
        }
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite entry at row {}, column {}", idx / p, idx % p)));
        }
        Ok(Self { n, p, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let p = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != p) {
            return Err(Error::dimension(format!("row {i} has {} entries, expected {p}", rows[i].len())));
        }
        Self::new(n, p, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.p + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.p..(row + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.p)
    }

    fn column(&self, col: usize) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().skip(col).step_by(self.p).copied()
    }
}

/// Symmetric `p x p` matrix of sample correlations with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    p: usize,
    entries: Vec<f64>,
}

impl CorrelationMatrix {
    /// Wrap a row-major `p x p` matrix, checking symmetry, unit diagonal and
    /// range.
    pub fn from_entries(p: usize, entries: Vec<f64>) -> Result<Self> {
        const TOL: f64 = 1e-12;
        if p < 2 || entries.len() != p * p {
            return Err(Error::dimension(format!("expected a {p}x{p} matrix, got {} entries", entries.len())));
        }
        for i in 0..p {
            if (entries[i * p + i] - 1.0).abs() > TOL {
                return Err(Error::domain(format!("diagonal entry {i} is not 1")));
            }
            for j in 0..i {
                let (a, b) = (entries[i * p + j], entries[j * p + i]);
                if !a.is_finite() || (a - b).abs() > TOL || a.abs() > 1.0 + TOL {
                    return Err(Error::domain(format!("invalid entry at ({i}, {j})")));
                }
            }
        }
        Ok(Self { p, entries })
    }

    pub fn identity(p: usize) -> Self {
        let mut entries = vec![0.0; p * p];
        for i in 0..p {
            entries[i * p + i] = 1.0;
        }
        Self { p, entries }
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.p + j]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    fn abs_off_diagonal_row(&self, i: usize) -> Vec<f64> {
        self.entries[i * self.p..(i + 1) * self.p]
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, r)| r.abs())
            .collect()
    }
}

/// Unit-norm, zero-sum column scores whose Gram matrix is the sample
/// correlation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScores {
    n: usize,
    p: usize,
    // column-major: score vector i occupies [i*n, (i+1)*n)
    data: Vec<f64>,
}

impl ZScores {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn dot(&self, i: usize, j: usize) -> f64 {
        self.vector(i).iter().zip(self.vector(j)).map(|(a, b)| a * b).sum()
    }

    /// `Z^T Z`, which equals the sample correlation matrix.
    pub fn gram(&self) -> CorrelationMatrix {
        let p = self.p;
        let mut entries = vec![0.0; p * p];
        for i in 0..p {
            entries[i * p + i] = 1.0;
            for j in 0..i {
                let r = self.dot(i, j).clamp(-1.0, 1.0);
                entries[i * p + j] = r;
                entries[j * p + i] = r;
            }
        }
        CorrelationMatrix { p, entries }
    }
}

/// `d_NN^(k)(i)` for `k = 1..=k_max`: row `i` holds the `k_max` largest
/// absolute correlations of column `i` with the other columns, in
/// nonincreasing order.
#[derive(Debug, Clone, PartialEq)]
pub struct KnnProfile {
    p: usize,
    k_max: usize,
    values: Vec<f64>,
}

impl KnnProfile {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    /// The `k`-th nearest neighbour coherence of column `i` (`k` is 1-based).
    pub fn get(&self, i: usize, k: usize) -> f64 {
        assert!((1..=self.k_max).contains(&k), "k out of range");
        self.values[i * self.k_max + k - 1]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.k_max..(i + 1) * self.k_max]
    }
}

fn column_moments(x: &DataMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, p) = (x.n(), x.p());
    let means: Vec<f64> = (0..p).map(|c| x.column(c).sum::<f64>() / n as f64).collect();
    let mut sq = vec![0.0; p];
    for row in x.rows() {
        for ((s, v), m) in sq.iter_mut().zip(row).zip(&means) {
            let d = v - m;
            *s += d * d;
        }
    }
    if let Some(c) = sq.iter().position(|&s| s <= 0.0) {
        return Err(Error::ConstantColumn(c));
    }
    Ok((means, sq))
}

/// Sample correlation `R = D_S^{-1/2} S D_S^{-1/2}` with `S` the unbiased
/// sample covariance.
pub fn sample_correlation(x: &DataMatrix) -> Result<CorrelationMatrix> {
    let (n, p) = (x.n(), x.p());
    let (means, _) = column_moments(x)?;
    let scale = 1.0 / (n as f64 - 1.0);
    let mut cov = vec![0.0; p * p];
    for row in x.rows() {
        let centered: Vec<f64> = row.iter().zip(&means).map(|(v, m)| v - m).collect();
        for i in 0..p {
            let ci = centered[i];
            let dst = &mut cov[i * p..i * p + i + 1];
            for (d, cj) in dst.iter_mut().zip(&centered) {
                *d += ci * cj;
            }
        }
    }
    for c in cov.iter_mut() {
        *c *= scale;
    }
    let mut entries = vec![0.0; p * p];
    for i in 0..p {
        entries[i * p + i] = 1.0;
        for j in 0..i {
            // sqrt(a * a) == |a| in IEEE arithmetic, so identical columns give
            // exactly 1
            let r = (cov[i * p + j] / (cov[i * p + i] * cov[j * p + j]).sqrt()).clamp(-1.0, 1.0);
            entries[i * p + j] = r;
            entries[j * p + i] = r;
        }
    }
    Ok(CorrelationMatrix { p, entries })
}

/// `Z_i = (X_i - mean(X_i)) / (sd(X_i) * sqrt(n - 1))`.
pub fn zscores(x: &DataMatrix) -> Result<ZScores> {
    let (n, p) = (x.n(), x.p());
    let (means, sq) = column_moments(x)?;
    let mut data = vec![0.0; n * p];
    for (c, (m, s)) in means.iter().zip(&sq).enumerate() {
        let norm = s.sqrt();
        for (r, v) in x.column(c).enumerate() {
            data[c * n + r] = (v - m) / norm;
        }
    }
    Ok(ZScores { n, p, data })
}

fn check_degree(p: usize, k: usize, name: &str) -> Result<()> {
    if k == 0 || k > p - 1 {
        return Err(Error::dimension(format!("{name} = {k} must lie in 1..={}", p - 1)));
    }
    Ok(())
}

fn kth_largest(values: &mut [f64], k: usize) -> f64 {
    let (_, kth, _) = values.select_nth_unstable_by(k - 1, |a, b| b.total_cmp(a));
    *kth
}

pub fn knn_coherence(r: &CorrelationMatrix, k_max: usize) -> Result<KnnProfile> {
    let p = r.p();
    check_degree(p, k_max, "k_max")?;
    let mut values = Vec::with_capacity(p * k_max);
    for i in 0..p {
        let mut row = r.abs_off_diagonal_row(i);
        row.sort_unstable_by(|a, b| b.total_cmp(a));
        values.extend_from_slice(&row[..k_max]);
    }
    Ok(KnnProfile { p, k_max, values })
}

/// `V_delta = max_i d_NN^(delta)(i)`.
pub fn max_knn_coherence(r: &CorrelationMatrix, delta: usize) -> Result<f64> {
    let p = r.p();
    check_degree(p, delta, "delta")?;
    let mut best = 0.0f64;
    for i in 0..p {
        let mut row = r.abs_off_diagonal_row(i);
        best = best.max(kth_largest(&mut row, delta));
    }
    Ok(best)
}

/// Number of vertices of degree at least `delta` in the graph with an edge
/// `(i, j)` whenever `|R_ij| >= rho`.
pub fn hub_count(r: &CorrelationMatrix, delta: usize, rho: f64) -> Result<usize> {
    let p = r.p();
    check_degree(p, delta, "delta")?;
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::domain(format!("rho = {rho} outside [0, 1]")));
    }
    Ok((0..p).filter(|&i| r.abs_off_diagonal_row(i).iter().filter(|&&a| a >= rho).count() >= delta).count())
}

/// Convenience: `V_delta` of a data matrix.
pub fn summary_statistic(x: &DataMatrix, delta: usize) -> Result<f64> {
    max_knn_coherence(&sample_correlation(x)?, delta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use rand_distr::{Distribution, StandardNormal};

    fn random_matrix(n: usize, p: usize, seed: u64) -> DataMatrix {
        let mut rng = seeded(seed);
        let values = (0..n * p).map(|_| StandardNormal.sample(&mut rng)).collect();
        DataMatrix::new(n, p, values).unwrap()
    }

    fn three_by_three() -> CorrelationMatrix {
        #[rustfmt::skip]
        let e = vec![
            1.0, 0.8, 0.1,
            0.8, 1.0, -0.1,
            0.1, -0.1, 1.0,
        ];
        CorrelationMatrix::from_entries(3, e).unwrap()
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(matches!(DataMatrix::new(2, 5, vec![0.0; 10]), Err(Error::Dimension(_))));
        assert!(matches!(DataMatrix::new(3, 1, vec![0.0; 3]), Err(Error::Dimension(_))));
        assert!(DataMatrix::new(3, 2, vec![0.0, 1.0, f64::NAN, 2.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn constant_column_is_an_error() {
        let x = DataMatrix::from_rows(&[vec![1.0, 5.0], vec![2.0, 5.0], vec![4.0, 5.0]]).unwrap();
        assert!(matches!(sample_correlation(&x), Err(Error::ConstantColumn(1))));
        assert!(matches!(zscores(&x), Err(Error::ConstantColumn(1))));
    }

    #[test]
    fn identical_columns_correlate_exactly() {
        let x = DataMatrix::from_rows(&[
            vec![0.3, 0.3, 1.0],
            vec![1.7, 1.7, -2.0],
            vec![-0.9, -0.9, 0.5],
            vec![2.2, 2.2, 0.1],
        ])
        .unwrap();
        let r = sample_correlation(&x).unwrap();
        assert_eq!(r.get(0, 1), 1.0);
        assert_eq!(r.get(1, 0), 1.0);
    }

    #[test]
    fn orthogonal_columns() {
        let x = DataMatrix::from_rows(&[vec![1.0, 1.0], vec![-1.0, 1.0], vec![1.0, -1.0], vec![-1.0, -1.0]]).unwrap();
        let r = sample_correlation(&x).unwrap();
        assert!(r.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn zscore_of_short_column() {
        let x = DataMatrix::from_rows(&[vec![1.0, 0.0], vec![2.0, 1.0], vec![3.0, 0.0]]).unwrap();
        let z = zscores(&x).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let expected = [-h, 0.0, h];
        for (a, b) in z.vector(0).iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zscores_are_centered_unit_vectors() {
        let x = random_matrix(10, 40, 3);
        let z = zscores(&x).unwrap();
        for i in 0..40 {
            let v = z.vector(i);
            assert!(v.iter().sum::<f64>().abs() < 1e-10);
            assert!((v.iter().map(|a| a * a).sum::<f64>().sqrt() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn correlation_equals_gram_of_zscores() {
        let x = random_matrix(10, 100, 11);
        let r = sample_correlation(&x).unwrap();
        let g = zscores(&x).unwrap().gram();
        for (a, b) in r.entries().iter().zip(g.entries()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn zscore_distance_identity() {
        let x = random_matrix(10, 30, 5);
        let r = sample_correlation(&x).unwrap();
        let z = zscores(&x).unwrap();
        for i in 0..30 {
            for j in 0..30 {
                let d: f64 = z.vector(i).iter().zip(z.vector(j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                let expected = (2.0 * (1.0 - r.get(i, j))).max(0.0).sqrt();
                assert!((d - expected).abs() < 1e-7, "{d} vs {expected}");
            }
        }
    }

    #[test]
    fn knn_on_small_example() {
        let r = three_by_three();
        let prof = knn_coherence(&r, 2).unwrap();
        let d1: Vec<f64> = (0..3).map(|i| prof.get(i, 1)).collect();
        let d2: Vec<f64> = (0..3).map(|i| prof.get(i, 2)).collect();
        assert_eq!(d1, vec![0.8, 0.8, 0.1]);
        assert_eq!(d2, vec![0.1, 0.1, 0.1]);
        assert_eq!(max_knn_coherence(&r, 1).unwrap(), 0.8);
        assert_eq!(max_knn_coherence(&r, 2).unwrap(), 0.1);
        assert!(knn_coherence(&r, 3).is_err());
        assert!(max_knn_coherence(&r, 0).is_err());
    }

    #[test]
    fn identity_has_no_coherence() {
        let r = CorrelationMatrix::identity(6);
        let prof = knn_coherence(&r, 5).unwrap();
        assert!((0..6).all(|i| prof.row(i).iter().all(|&v| v == 0.0)));
        assert_eq!(max_knn_coherence(&r, 3).unwrap(), 0.0);
        assert_eq!(hub_count(&r, 1, 0.01).unwrap(), 0);
    }

    #[test]
    fn complete_graph_hubs() {
        let r = CorrelationMatrix::from_entries(3, vec![1.0; 9]).unwrap();
        assert_eq!(hub_count(&r, 2, 0.9).unwrap(), 3);
    }

    #[test]
    fn first_neighbour_is_row_max_and_statistic_is_pair_max() {
        let x = random_matrix(10, 100, 21);
        let r = sample_correlation(&x).unwrap();
        let prof = knn_coherence(&r, 4).unwrap();
        let mut pair_max = 0.0f64;
        for i in 0..100 {
            let mut row_max = 0.0f64;
            for j in 0..100 {
                if i != j {
                    row_max = row_max.max(r.get(i, j).abs());
                    pair_max = pair_max.max(r.get(i, j).abs());
                }
            }
            assert_eq!(prof.get(i, 1), row_max);
            assert!(prof.row(i).windows(2).all(|w| w[0] >= w[1]));
        }
        assert_eq!(max_knn_coherence(&r, 1).unwrap(), pair_max);
    }
}
