//! Correlation, bootstrap intervals, group tests, effect sizes, PCA and
//! k-means.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

use crate::rng::stream;
use crate::special::{chi2_sf, f_sf};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} observations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("non-finite value in input")]
    NonFinite,
    #[error("zero variance")]
    ZeroVariance,
    #[error("{skipped} of {total} bootstrap resamples were degenerate")]
    DegenerateResamples { skipped: usize, total: usize },
    #[error("group {0} is too small")]
    SmallGroup(usize),
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("invalid parameter: {0}")]
    Config(String),
    #[error("ragged matrix: row {0} has a different width")]
    Ragged(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrMethod {
    Pearson,
    Spearman,
}

impl CorrMethod {
    pub fn name(self) -> &'static str {
        match self {
            CorrMethod::Pearson => "pearson",
            CorrMethod::Spearman => "spearman",
        }
    }
}

impl fmt::Display for CorrMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CorrMethod {
    type Err = StatsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pearson" => Ok(CorrMethod::Pearson),
            "spearman" => Ok(CorrMethod::Spearman),
            other => Err(StatsError::Config(format!("unknown correlation method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub method: CorrMethod,
    pub estimate: f64,
    pub n: usize,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub bootstrap_b: usize,
    pub seed: Option<u64>,
    /// Resamples skipped because one margin had zero variance.
    pub degenerate_resamples: usize,
}

fn check_pair(x: &[f64], y: &[f64], min_n: usize) -> Result<(), StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < min_n {
        return Err(StatsError::TooFew { need: min_n, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample variance with the `n - 1` divisor.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64
}

fn pearson_raw(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties assigned their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &o in &order[i..j] {
            ranks[o] = r;
        }
        i = j;
    }
    ranks
}

fn estimate(x: &[f64], y: &[f64], method: CorrMethod) -> Option<f64> {
    match method {
        CorrMethod::Pearson => pearson_raw(x, y),
        CorrMethod::Spearman => pearson_raw(&average_ranks(x), &average_ranks(y)),
    }
}

pub fn correlation(x: &[f64], y: &[f64], method: CorrMethod) -> Result<CorrelationReport, StatsError> {
    check_pair(x, y, 3)?;
    let rho = estimate(x, y, method).ok_or(StatsError::ZeroVariance)?;
    Ok(CorrelationReport {
        method,
        estimate: rho,
        n: x.len(),
        ci_low: None,
        ci_high: None,
        bootstrap_b: 0,
        seed: None,
        degenerate_resamples: 0,
    })
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Paired percentile bootstrap. Resample `r` draws from stream `(seed, r)`.
pub fn bootstrap_ci(x: &[f64], y: &[f64], method: CorrMethod, b: usize, level: f64, seed: u64) -> Result<CorrelationReport, StatsError> {
    check_pair(x, y, 10)?;
    if b == 0 || !(level > 0.0 && level < 1.0) {
        return Err(StatsError::Config(format!("b = {b}, level = {level}")));
    }
    let mut report = correlation(x, y, method)?;
    let n = x.len();
    let draws: Vec<Option<f64>> = (0..b)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r as u64);
            let mut xs = Vec::with_capacity(n);
            let mut ys = Vec::with_capacity(n);
            for _ in 0..n {
                let i = rng.gen_range(0..n);
                xs.push(x[i]);
                ys.push(y[i]);
            }
            estimate(&xs, &ys, method)
        })
        .collect();
    let mut kept: Vec<f64> = draws.iter().flatten().copied().collect();
    let skipped = b - kept.len();
    if 2 * skipped > b {
        return Err(StatsError::DegenerateResamples { skipped, total: b });
    }
    kept.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    // the interval must contain the point estimate; it can miss by rounding at |ρ| = 1
    let lo = quantile_sorted(&kept, alpha).min(report.estimate);
    let hi = quantile_sorted(&kept, 1.0 - alpha).max(report.estimate);
    report.ci_low = Some(lo);
    report.ci_high = Some(hi);
    report.bootstrap_b = b;
    report.seed = Some(seed);
    report.degenerate_resamples = skipped;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupTest {
    AnovaF,
    KruskalWallis,
}

impl GroupTest {
    pub fn name(self) -> &'static str {
        match self {
            GroupTest::AnovaF => "anova_f",
            GroupTest::KruskalWallis => "kruskal_wallis",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupTestReport {
    pub test: GroupTest,
    pub statistic: f64,
    pub p_value: f64,
    /// `(between, within)` for ANOVA; `(k - 1, NaN)` for Kruskal-Wallis.
    pub df: (f64, f64),
    pub group_sizes: Vec<usize>,
}

pub fn group_test(groups: &[Vec<f64>], test: GroupTest) -> Result<GroupTestReport, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    if let Some(i) = groups.iter().position(|g| g.len() < 2) {
        return Err(StatsError::SmallGroup(i));
    }
    if groups.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let k = groups.len();
    let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
    let total: usize = sizes.iter().sum();
    let (statistic, p_value, df) = match test {
        GroupTest::AnovaF => {
            let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
            // pairwise form: exactly zero when all group means coincide
            let mut ssb = 0.0;
            for i in 0..k {
                for j in i + 1..k {
                    ssb += (sizes[i] * sizes[j]) as f64 * (means[i] - means[j]).powi(2);
                }
            }
            ssb /= total as f64;
            let ssw: f64 = groups
                .iter()
                .zip(&means)
                .map(|(g, m)| g.iter().map(|v| (v - m).powi(2)).sum::<f64>())
                .sum();
            let (d1, d2) = ((k - 1) as f64, (total - k) as f64);
            let f = match (ssb == 0.0, ssw == 0.0) {
                (true, _) => 0.0,
                (false, true) => f64::INFINITY,
                _ => (ssb / d1) / (ssw / d2),
            };
            let p = if f.is_infinite() { 0.0 } else { f_sf(f, d1, d2) };
            (f, p, (d1, d2))
        }
        GroupTest::KruskalWallis => {
            let pooled: Vec<f64> = groups.iter().flatten().copied().collect();
            let ranks = average_ranks(&pooled);
            let nf = total as f64;
            let mut acc = 0.0;
            let mut start = 0;
            for &s in &sizes {
                let r: f64 = ranks[start..start + s].iter().sum();
                acc += r * r / s as f64;
                start += s;
            }
            let h = 12.0 / (nf * (nf + 1.0)) * acc - 3.0 * (nf + 1.0);
            let mut sorted = pooled.clone();
            sorted.sort_by(f64::total_cmp);
            let mut ties = 0.0;
            let mut i = 0;
            while i < sorted.len() {
                let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
                ties += (j * j * j - j) as f64;
                i += j;
            }
            let correction = 1.0 - ties / (nf * nf * nf - nf);
            let df = (k - 1) as f64;
            if correction <= 0.0 {
                // every observation tied: no evidence against the null
                (0.0, 1.0, (df, f64::NAN))
            } else {
                let h = (h / correction).max(0.0);
                (h, chi2_sf(h, df), (df, f64::NAN))
            }
        }
    };
    Ok(GroupTestReport {
        test,
        statistic,
        p_value: p_value.clamp(0.0, 1.0),
        df,
        group_sizes: sizes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectSizes {
    /// `None` when the pooled standard deviation is zero.
    pub cohens_d: Option<f64>,
    pub cliffs_delta: f64,
}

pub fn cliffs_delta(a: &[f64], b: &[f64]) -> f64 {
    let mut score: i64 = 0;
    for x in a {
        for y in b {
            score += i64::from(x > y) - i64::from(x < y);
        }
    }
    score as f64 / (a.len() * b.len()) as f64
}

pub fn effect_sizes(a: &[f64], b: &[f64]) -> Result<EffectSizes, StatsError> {
    for (i, g) in [a, b].iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::SmallGroup(i));
        }
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * variance(a) + (nb - 1.0) * variance(b)) / (na + nb - 2.0)).sqrt();
    let diff = mean(a) - mean(b);
    let cohens_d = if pooled > 0.0 { Some(diff / pooled) } else { None };
    Ok(EffectSizes {
        cohens_d,
        cliffs_delta: cliffs_delta(a, b),
    })
}

fn check_matrix(m: &[Vec<f64>]) -> Result<usize, StatsError> {
    let d = m.first().map_or(0, Vec::len);
    if let Some(i) = m.iter().position(|r| r.len() != d) {
        return Err(StatsError::Ragged(i));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(d)
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues and eigenvectors (as columns of the returned matrix,
/// stored row-major), unsorted.
pub fn jacobi_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let d = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let frob = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-12 * frob.max(f64::MIN_POSITIVE);
    for _sweep in 0..100 {
        let off = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off < tol {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    ((0..d).map(|i| a[i][i]).collect(), v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit basis vectors, one per component.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub explained_variance_ratio: Vec<f64>,
    /// Projections of the fitted rows onto the components.
    pub scores: Vec<Vec<f64>>,
}

impl Pca {
    pub fn transform(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| c.iter().zip(row).zip(&self.mean).map(|((w, x), m)| w * (x - m)).sum())
            .collect()
    }

    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (s, c) in scores.iter().zip(&self.components) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += s * w;
            }
        }
        out
    }
}

pub fn pca(matrix: &[Vec<f64>], n_components: usize) -> Result<Pca, StatsError> {
    let d = check_matrix(matrix)?;
    let n = matrix.len();
    if n < 2 {
        return Err(StatsError::TooFew { need: 2, got: n });
    }
    if n_components == 0 || n_components > d.min(n) {
        return Err(StatsError::Config(format!(
            "n_components = {n_components} with {n} rows and {d} columns"
        )));
    }
    let mean: Vec<f64> = (0..d).map(|j| matrix.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let centred: Vec<Vec<f64>> = matrix.iter().map(|r| r.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in i..d {
            let s = centred.iter().map(|r| r[i] * r[j]).sum::<f64>() / (n - 1) as f64;
            cov[i][j] = s;
            cov[j][i] = s;
        }
    }
    let trace: f64 = (0..d).map(|i| cov[i][i]).sum();
    if trace <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let (vals, vecs) = jacobi_eigen(&cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
    let mut components = Vec::with_capacity(n_components);
    let mut eigenvalues = Vec::with_capacity(n_components);
    for &o in order.iter().take(n_components) {
        let mut c: Vec<f64> = vecs.iter().map(|row| row[o]).collect();
        let lead = c.iter().cloned().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if lead < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(c);
        eigenvalues.push(vals[o].max(0.0));
    }
    let explained_variance_ratio = eigenvalues.iter().map(|l| l / trace).collect();
    let mut out = Pca {
        mean,
        components,
        eigenvalues,
        explained_variance_ratio,
        scores: Vec::new(),
    };
    out.scores = matrix.iter().map(|r| out.transform(r)).collect();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansResult {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after every assignment step, ending with the final one.
    pub inertia_history: Vec<f64>,
}

const KMEANS_SHIFT_TOL: f64 = 1e-9;
const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn assign(matrix: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    matrix
        .iter()
        .map(|r| {
            let mut best = (0, f64::INFINITY);
            for (c, cen) in centroids.iter().enumerate() {
                let d = sq_dist(r, cen);
                if d < best.1 {
                    best = (c, d);
                }
            }
            best
        })
        .unzip()
}

pub fn kmeans(matrix: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeansResult, StatsError> {
    let d = check_matrix(matrix)?;
    let n = matrix.len();
    if k < 1 {
        return Err(StatsError::Config("k must be at least 1".into()));
    }
    if n < k {
        return Err(StatsError::TooFew { need: k, got: n });
    }
    let mut rng = stream(seed, 0);
    let mut centroids = vec![matrix[rng.gen_range(0..n)].clone()];
    let mut nearest: Vec<f64> = matrix.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                if u < *w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(matrix[pick].clone());
        for (nd, r) in nearest.iter_mut().zip(matrix) {
            *nd = nd.min(sq_dist(r, centroids.last().unwrap()));
        }
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let (labels, dists) = assign(matrix, &centroids);
        history.push(dists.iter().sum());
        if iterations == KMEANS_MAX_ITER {
            break;
        }
        iterations += 1;
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (r, &l) in matrix.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(r) {
                *s += x;
            }
        }
        let mut taken = vec![false; n];
        let mut shift = 0.0f64;
        for c in 0..k {
            let next: Vec<f64> = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                // re-seed from the point farthest from its centroid
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)))
                    .unwrap_or(0);
                taken[far] = true;
                matrix[far].clone()
            };
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < KMEANS_SHIFT_TOL {
            let (labels, dists) = assign(matrix, &centroids);
            history.push(dists.iter().sum());
            return Ok(KMeansResult {
                labels,
                centroids,
                inertia: *history.last().unwrap(),
                iterations,
                inertia_history: history,
            });
        }
    }
    let (labels, _) = assign(matrix, &centroids);
    Ok(KMeansResult {
        labels,
        centroids,
        inertia: *history.last().unwrap(),
        iterations,
        inertia_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_and_monotone() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.3).collect();
        for m in [CorrMethod::Pearson, CorrMethod::Spearman] {
            assert_eq!(correlation(&x, &x, m).unwrap().estimate, 1.0);
        }
        let y: Vec<f64> = x.iter().map(|v| v.exp()).collect();
        assert_eq!(correlation(&x, &y, CorrMethod::Spearman).unwrap().estimate, 1.0);
        assert!(correlation(&x, &y, CorrMethod::Pearson).unwrap().estimate < 1.0);
    }

    #[test]
    fn correlation_errors() {
        assert_eq!(
            correlation(&[1.0, 2.0, 3.0], &[1.0, 2.0], CorrMethod::Pearson),
            Err(StatsError::LengthMismatch(3, 2))
        );
        assert_eq!(
            correlation(&[1.0, 2.0, 3.0], &[4.0; 3], CorrMethod::Pearson),
            Err(StatsError::ZeroVariance)
        );
        assert!(matches!(
            correlation(&[1.0, 2.0], &[1.0, 2.0], CorrMethod::Pearson),
            Err(StatsError::TooFew { .. })
        ));
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn collinear_bootstrap_collapses() {
        let x: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        let r = bootstrap_ci(&x, &y, CorrMethod::Pearson, 200, 0.95, 7).unwrap();
        assert!((r.ci_low.unwrap() - 1.0).abs() < 1e-12 && (r.ci_high.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_is_seeded() {
        let x: Vec<f64> = (0..40).map(|i| ((i * 7919) % 41) as f64).collect();
        let y: Vec<f64> = (0..40).map(|i| ((i * 104_729) % 37) as f64 + i as f64).collect();
        let a = bootstrap_ci(&x, &y, CorrMethod::Spearman, 300, 0.9, 11).unwrap();
        let b = bootstrap_ci(&x, &y, CorrMethod::Spearman, 300, 0.9, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low.unwrap() <= a.estimate && a.estimate <= a.ci_high.unwrap());
    }

    #[test]
    fn anova_identical_groups() {
        let g = vec![1.0, 4.0, 2.5, 7.0];
        let r = group_test(&[g.clone(), g], GroupTest::AnovaF).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
    }

    #[test]
    fn separated_groups() {
        let a: Vec<f64> = (1..=10).map(f64::from).collect();
        let b: Vec<f64> = (101..=110).map(f64::from).collect();
        let anova = group_test(&[a.clone(), b.clone()], GroupTest::AnovaF).unwrap();
        assert!(anova.p_value < 1e-6, "{}", anova.p_value);
        // complete separation of two groups of 10 caps H at 100/7, so p is about 1.6e-4
        let kw = group_test(&[a, b], GroupTest::KruskalWallis).unwrap();
        assert!((kw.statistic - 100.0 / 7.0).abs() < 1e-12);
        assert!(kw.p_value < 1e-3);
    }

    #[test]
    fn group_errors() {
        assert_eq!(group_test(&[vec![1.0, 2.0]], GroupTest::AnovaF), Err(StatsError::TooFewGroups(1)));
        assert_eq!(
            group_test(&[vec![1.0, 2.0], vec![]], GroupTest::KruskalWallis),
            Err(StatsError::SmallGroup(1))
        );
    }

    #[test]
    fn effect_size_fixtures() {
        let e = effect_sizes(&[2.0, 4.0], &[1.0, 3.0]).unwrap();
        assert_eq!(e.cliffs_delta, 0.5);
        // means 3 and 2, both variances 2
        assert!((e.cohens_d.unwrap() - 1.0 / 2.0f64.sqrt()).abs() < 1e-15);
        let same = effect_sizes(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((same.cohens_d, same.cliffs_delta), (Some(0.0), 0.0));
        let flat = effect_sizes(&[5.0, 5.0], &[1.0, 1.0]).unwrap();
        assert_eq!((flat.cohens_d, flat.cliffs_delta), (None, 1.0));
    }

    #[test]
    fn jacobi_diagonalises() {
        let a = vec![vec![4.0, 1.0, 2.0], vec![1.0, 3.0, 0.5], vec![2.0, 0.5, 5.0]];
        let (vals, vecs) = jacobi_eigen(&a);
        for (c, &l) in vals.iter().enumerate() {
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i][j] * vecs[j][c]).sum();
                assert!((av - l * vecs[i][c]).abs() < 1e-12);
            }
        }
        assert!((vals.iter().sum::<f64>() - 12.0).abs() < 1e-12);
    }

    #[test]
    fn pca_rank_one_and_reconstruction() {
        let dir = [1.0, -2.0, 0.5];
        let m: Vec<Vec<f64>> = (0..20).map(|i| dir.iter().map(|d| 3.0 + d * (i as f64 - 7.0)).collect()).collect();
        let p = pca(&m, 1).unwrap();
        assert!(p.explained_variance_ratio[0] >= 0.999);
        // largest-magnitude loading is positive
        assert!(p.components[0][1] > 0.0);
        let noisy: Vec<Vec<f64>> = (0..15)
            .map(|i| vec![(i as f64).sin(), (i as f64 * 0.7).cos(), i as f64 * 0.1])
            .collect();
        let full = pca(&noisy, 3).unwrap();
        for (row, s) in noisy.iter().zip(&full.scores) {
            for (a, b) in row.iter().zip(full.reconstruct(s)) {
                assert!((a - b).abs() < 1e-10);
            }
        }
        assert!(pca(&vec![vec![1.0, 1.0]; 4], 1).is_err());
    }

    #[test]
    fn kmeans_single_cluster_is_mean() {
        let m = vec![vec![0.0, 1.0], vec![2.0, 5.0], vec![4.0, 0.0]];
        let r = kmeans(&m, 1, 3).unwrap();
        assert!((r.centroids[0][0] - 2.0).abs() < 1e-12 && (r.centroids[0][1] - 2.0).abs() < 1e-12);
        assert_eq!(r.labels, vec![0, 0, 0]);
        assert!(kmeans(&m, 0, 3).is_err());
        assert!(kmeans(&m, 4, 3).is_err());
    }
}
