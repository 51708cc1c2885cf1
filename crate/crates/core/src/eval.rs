//! Scoring: correlation matrices, the mean correlation coefficient (MCC),
//! MSE/wMSE and seasonal regression.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{invalid, shape};
use crate::{linalg, Error, Result};

/// Pearson correlations between every true column `i` and estimated column
/// `j`.
pub fn correlation_matrix(z_true: ArrayView2<f64>, z_est: ArrayView2<f64>) -> Result<Array2<f64>> {
    if z_true.nrows() != z_est.nrows() {
        return Err(shape(format!(
            "{} true rows but {} estimated rows",
            z_true.nrows(),
            z_est.nrows()
        )));
    }
    if z_true.nrows() < 3 {
        return Err(invalid("correlation needs at least three rows"));
    }
    let center = |m: ArrayView2<f64>, offset: usize| -> Result<Array2<f64>> {
        let mut c = m.to_owned();
        for (j, mut col) in c.axis_iter_mut(Axis(1)).enumerate() {
            let mean = col.mean().unwrap();
            col.mapv_inplace(|v| v - mean);
            let norm = col.dot(&col).sqrt();
            let scale = col.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if !(norm > 0.0) || scale <= 1e-12 * (1.0 + mean.abs()) {
                return Err(Error::DegenerateColumn { column: offset + j });
            }
            col.mapv_inplace(|v| v / norm);
        }
        Ok(c)
    };
    let a = center(z_true, 0)?;
    let b = center(z_est, z_true.ncols())?;
    Ok(a.t().dot(&b).mapv(|v| v.clamp(-1.0, 1.0)))
}

fn check_square(omega: &ArrayView2<f64>) -> Result<usize> {
    let (r, c) = omega.dim();
    if r != c || r == 0 {
        return Err(invalid(format!("MCC needs a non-empty square matrix, got {r}×{c}")));
    }
    Ok(r)
}

fn trace_value(abs: &Array2<f64>, perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(i, &j)| abs[[i, j]]).sum::<f64>() / perm.len() as f64
}

/// Minimum-cost assignment for a square cost matrix (Hungarian method with
/// potentials, O(n³)). Returns the column assigned to every row.
pub fn min_cost_assignment(cost: ArrayView2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    // 1-based arrays; index 0 is a sentinel column
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[p[j] - 1] = j - 1;
    }
    assignment
}

/// `(1/P) max_perm tr(perm · |Ω|)` and the maximizing assignment
/// (`permutation[i]` is the estimated component matched to true component
/// `i`).
pub fn mcc(omega: ArrayView2<f64>) -> Result<(f64, Vec<usize>)> {
    check_square(&omega)?;
    let abs = omega.mapv(f64::abs);
    let perm = min_cost_assignment((-&abs).view());
    Ok((trace_value(&abs, &perm), perm))
}

/// Exhaustive search over all permutations (P ≤ 8); the reference for
/// [`mcc`].
pub fn mcc_brute_force(omega: ArrayView2<f64>) -> Result<(f64, Vec<usize>)> {
    let n = check_square(&omega)?;
    if n > 8 {
        return Err(invalid("brute-force MCC is limited to P ≤ 8"));
    }
    let abs = omega.mapv(f64::abs);
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = (trace_value(&abs, &perm), perm.clone());
    // Heap's algorithm
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let v = trace_value(&abs, &perm);
            if v > best.0 {
                best = (v, perm.clone());
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}

pub fn mse(truth: ArrayView1<f64>, pred: ArrayView1<f64>) -> Result<f64> {
    if truth.len() != pred.len() {
        return Err(shape(format!("{} truths but {} predictions", truth.len(), pred.len())));
    }
    if truth.is_empty() {
        return Err(invalid("MSE of nothing"));
    }
    Ok(truth.iter().zip(&pred).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / truth.len() as f64)
}

/// Per-column MSE of two `n × S` matrices.
pub fn per_variable_mse(truth: ArrayView2<f64>, pred: ArrayView2<f64>) -> Result<Vec<f64>> {
    if truth.dim() != pred.dim() {
        return Err(shape(format!("truth {:?} vs prediction {:?}", truth.dim(), pred.dim())));
    }
    truth
        .axis_iter(Axis(1))
        .zip(pred.axis_iter(Axis(1)))
        .map(|(a, b)| mse(a, b))
        .collect()
}

/// `(1/S) Σ_i MSE_i / σ²_i`.
pub fn wmse(truth: ArrayView2<f64>, pred: ArrayView2<f64>, variances: &[f64]) -> Result<f64> {
    if variances.len() != truth.ncols() {
        return Err(shape(format!(
            "{} variances for {} variables",
            variances.len(),
            truth.ncols()
        )));
    }
    if let Some(v) = variances.iter().find(|&&v| !(v > 0.0)) {
        return Err(invalid(format!("variances must be positive, got {v}")));
    }
    let per = per_variable_mse(truth, pred)?;
    Ok(per.iter().zip(variances).map(|(m, v)| m / v).sum::<f64>() / per.len() as f64)
}

/// Seasonal regression fit: coefficients of `[1, cos(2πt/p), sin(2πt/p)]`
/// and the residual series.
#[derive(Clone, Debug, PartialEq)]
pub struct Deseasonalized {
    pub coefficients: [f64; 3],
    pub residuals: Array1<f64>,
}

fn seasonal_design(times: &[f64], period: f64) -> Array2<f64> {
    Array2::from_shape_fn((times.len(), 3), |(r, c)| {
        let w = 2.0 * PI * times[r] / period;
        match c {
            0 => 1.0,
            1 => w.cos(),
            _ => w.sin(),
        }
    })
}

/// Ordinary least squares of `series` on the seasonal design.
pub fn deseasonalize(series: ArrayView1<f64>, times: &[f64], period: f64) -> Result<Deseasonalized> {
    if series.len() != times.len() {
        return Err(shape("series and times differ in length"));
    }
    if series.len() < 3 {
        return Err(invalid("seasonal regression needs at least three points"));
    }
    if !(period > 0.0) {
        return Err(invalid(format!("period must be positive, got {period}")));
    }
    let design = seasonal_design(times, period);
    let beta = linalg::least_squares(design.view(), series).ok_or_else(|| {
        Error::DegenerateDesign(format!(
            "seasonal design for period {period} is rank-deficient on these times"
        ))
    })?;
    let residuals = &series - &design.dot(&beta);
    Ok(Deseasonalized {
        coefficients: [beta[0], beta[1], beta[2]],
        residuals,
    })
}

/// Population variance of each deseasonalized column; the weights of
/// [`wmse`].
pub fn deseasonalized_variances(x: ArrayView2<f64>, times: &[i64], period: f64) -> Result<Vec<f64>> {
    let t: Vec<f64> = times.iter().map(|&t| t as f64).collect();
    x.axis_iter(Axis(1))
        .map(|col| {
            let r = deseasonalize(col, &t, period)?.residuals;
            let mean = r.mean().unwrap();
            Ok(r.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / r.len() as f64)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct EvalReport {
    pub omega: Option<Array2<f64>>,
    pub mcc: Option<f64>,
    pub permutation: Option<Vec<usize>>,
    pub per_variable_mse: Option<Vec<f64>>,
    pub wmse: Option<f64>,
    pub elbo_trace: Vec<f64>,
}

fn join(v: impl IntoIterator<Item = String>) -> String {
    v.into_iter().collect::<Vec<_>>().join(" ")
}

impl EvalReport {
    /// Report with Ω, MCC and assignment for true vs estimated latents.
    pub fn from_latents(z_true: ArrayView2<f64>, z_est: ArrayView2<f64>) -> Result<Self> {
        let omega = correlation_matrix(z_true, z_est)?;
        if omega.nrows() != omega.ncols() {
            return Err(shape(format!(
                "{} true but {} estimated components",
                omega.nrows(),
                omega.ncols()
            )));
        }
        let (value, perm) = mcc(omega.view())?;
        Ok(Self {
            omega: Some(omega),
            mcc: Some(value),
            permutation: Some(perm),
            ..Default::default()
        })
    }

    /// Flat `key=value` text.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        if let Some(m) = self.mcc {
            let _ = writeln!(s, "mcc={m}");
        }
        if let Some(p) = &self.permutation {
            let _ = writeln!(s, "permutation={}", join(p.iter().map(|j| (j + 1).to_string())));
        }
        if let Some(o) = &self.omega {
            for (i, row) in o.axis_iter(Axis(0)).enumerate() {
                let _ = writeln!(s, "omega.{}={}", i + 1, join(row.iter().map(|v| v.to_string())));
            }
        }
        if let Some(m) = &self.per_variable_mse {
            let _ = writeln!(s, "mse={}", join(m.iter().map(|v| v.to_string())));
        }
        if let Some(w) = self.wmse {
            let _ = writeln!(s, "wmse={w}");
        }
        if !self.elbo_trace.is_empty() {
            let _ = writeln!(s, "final_elbo={}", self.elbo_trace.last().unwrap());
        }
        s
    }

    pub fn csv_header() -> &'static str {
        "label,mcc,wmse,final_elbo"
    }

    /// One machine-readable row; missing values are empty cells.
    pub fn csv_row(&self, label: &str) -> String {
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        format!(
            "{label},{},{},{}",
            opt(self.mcc),
            opt(self.wmse),
            opt(self.elbo_trace.last().copied())
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> Array2<f64> {
        Array2::from_shape_fn((20, 3), |(i, j)| ((i * (j + 2)) as f64).sin() + j as f64 * 0.1 * i as f64)
    }

    #[test]
    fn correlation_identities() {
        let z = sample();
        let id = correlation_matrix(z.view(), z.view()).unwrap();
        let neg = correlation_matrix(z.view(), (-&z).view()).unwrap();
        let aff = correlation_matrix(z.view(), (&z * 3.0 + 7.0).view()).unwrap();
        for i in 0..3 {
            assert!((id[[i, i]] - 1.0).abs() < 1e-12);
            assert!((neg[[i, i]] + 1.0).abs() < 1e-12);
            assert!((aff[[i, i]] - 1.0).abs() < 1e-12);
        }
        let mut c = z.clone();
        c.column_mut(1).fill(2.0);
        assert!(matches!(
            correlation_matrix(z.view(), c.view()),
            Err(Error::DegenerateColumn { column: 4 })
        ));
    }

    #[test]
    fn mcc_examples() {
        assert_eq!(mcc(Array2::eye(4).view()).unwrap().0, 1.0);
        let (v, p) = mcc(array![[0.0, 1.0], [1.0, 0.0]].view()).unwrap();
        assert_eq!((v, p), (1.0, vec![1, 0]));
        let (v, p) = mcc(array![[0.9, 0.1], [0.2, 0.8]].view()).unwrap();
        assert!((v - 0.85).abs() < 1e-15);
        assert_eq!(p, vec![0, 1]);
        assert!(mcc(Array2::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn deseasonalize_examples() {
        let t: Vec<f64> = (1..=400).map(f64::from).collect();
        let c = deseasonalize(Array1::from_elem(400, 5.0).view(), &t, 365.0).unwrap();
        assert!((c.coefficients[0] - 5.0).abs() < 1e-10);
        assert!(c.residuals.iter().all(|r| r.abs() < 1e-10));
        let x: Array1<f64> = t.iter().map(|&t| (2.0 * PI * t / 365.0).cos()).collect();
        let d = deseasonalize(x.view(), &t, 365.0).unwrap();
        assert!((d.coefficients[1] - 1.0).abs() < 1e-10);
        assert!(d.coefficients[0].abs() < 1e-10 && d.coefficients[2].abs() < 1e-10);
        assert!(deseasonalize(x.slice(ndarray::s![..5]), &[3.0; 5], 365.0).is_err());
    }

    #[test]
    fn wmse_examples() {
        let a = array![[1.0], [2.0], [3.0]];
        assert_eq!(wmse(a.view(), a.view(), &[2.0]).unwrap(), 0.0);
        let b = array![[2.0], [3.0], [4.0]];
        assert_eq!(wmse(a.view(), b.view(), &[1.0]).unwrap(), 1.0);
        assert!(wmse(a.view(), b.view(), &[0.0]).is_err());
    }

    #[test]
    fn report_text_and_csv() {
        let z = sample();
        let mut r = EvalReport::from_latents(z.view(), z.view()).unwrap();
        r.elbo_trace = vec![-3.0, -2.5];
        let text = r.to_text();
        assert!(text.contains("permutation=1 2 3"), "{text}");
        let m: f64 = text.lines().next().unwrap().strip_prefix("mcc=").unwrap().parse().unwrap();
        assert!((m - 1.0).abs() < 1e-12);
        assert_eq!(r.csv_row("seed7").split(',').count(), 4);
        assert!(r.csv_row("seed7").ends_with(",-2.5"));
    }
}
