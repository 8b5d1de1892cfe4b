//! Exponential-family losses and a ridge-stabilized GLM trainer used for
//! internal base models and baselines.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IRLS working weights are floored here.
pub const WEIGHT_FLOOR: f64 = 1e-10;

const GLM_TOL: f64 = 1e-8;
const GLM_MAX_ITER: usize = 100;

/// Response family with its canonical link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    /// Identity link, `psi(eta) = eta^2 / 2`, unit dispersion.
    Gaussian,
    /// Logit link, `psi(eta) = log(1 + e^eta)`.
    Binomial,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Gaussian => "gaussian",
            Family::Binomial => "binomial",
        }
    }

    /// Cumulant function psi.
    #[inline]
    pub fn cumulant(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => 0.5 * eta * eta,
            Family::Binomial => eta.max(0.0) + (-eta.abs()).exp().ln_1p(),
        }
    }

    /// Inverse link, equal to `psi'`.
    #[inline]
    pub fn mean(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta,
            Family::Binomial => {
                if eta >= 0.0 {
                    1.0 / (1.0 + (-eta).exp())
                } else {
                    let e = eta.exp();
                    e / (1.0 + e)
                }
            }
        }
    }

    /// Link function g.
    #[inline]
    pub fn link(self, mu: f64) -> f64 {
        match self {
            Family::Gaussian => mu,
            Family::Binomial => (mu / (1.0 - mu)).ln(),
        }
    }

    /// `psi''(eta)`, the variance function on the link scale.
    #[inline]
    pub fn variance(self, eta: f64) -> f64 {
        match self {
            Family::Gaussian => 1.0,
            Family::Binomial => {
                let mu = self.mean(eta);
                mu * (1.0 - mu)
            }
        }
    }

    /// Per-row negative log-likelihood, up to terms free of eta.
    #[inline]
    pub fn unit_loss(self, y: f64, eta: f64) -> f64 {
        match self {
            Family::Gaussian => eta * (0.5 * eta - y),
            // max(eta, 0) - y * eta folded into one term to avoid cancellation
            Family::Binomial => {
                let tail = (-eta.abs()).exp().ln_1p();
                if eta >= 0.0 {
                    (1.0 - y) * eta + tail
                } else {
                    tail - y * eta
                }
            }
        }
    }

    pub fn validate_labels(self, y: &[f64]) -> Result<()> {
        for (index, &value) in y.iter().enumerate() {
            let ok = match self {
                Family::Gaussian => value.is_finite(),
                Family::Binomial => value == 0.0 || value == 1.0,
            };
            if !ok {
                return Err(Error::InvalidLabel {
                    index,
                    value,
                    family: self.name(),
                });
            }
        }
        Ok(())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "gaussian" | "normal" => Ok(Family::Gaussian),
            "binomial" | "logistic" => Ok(Family::Binomial),
            other => Err(Error::InvalidConfig(format!("unknown family `{other}`"))),
        }
    }
}

fn check_len(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::LengthMismatch { expected, actual });
    }
    Ok(())
}

/// Summed loss `sum_i psi(eta_i) - y_i eta_i`.
pub fn loss(family: Family, y: &[f64], eta: &[f64]) -> Result<f64> {
    check_len(y.len(), eta.len())?;
    family.validate_labels(y)?;
    Ok(y.iter()
        .zip(eta)
        .map(|(&yi, &ei)| family.unit_loss(yi, ei))
        .sum())
}

/// `design^T (g^{-1}(eta) - y)`.
pub fn loss_gradient(
    family: Family,
    y: &[f64],
    eta: &[f64],
    design: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_len(y.len(), eta.len())?;
    check_len(y.len(), design.nrows())?;
    let resid = DVector::from_iterator(
        y.len(),
        y.iter().zip(eta).map(|(&yi, &ei)| family.mean(ei) - yi),
    );
    Ok(design.tr_mul(&resid))
}

/// A fitted GLM with an unpenalized intercept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlmFit {
    pub family: Family,
    pub intercept: f64,
    /// Feature columns the model uses, aligned with `coefficients`.
    pub columns: Vec<usize>,
    pub coefficients: Vec<f64>,
    pub iterations: usize,
    /// Penalized mean objective after each iteration, starting at the
    /// initial point.
    pub objective_trace: Vec<f64>,
}

impl GlmFit {
    pub fn predict_link(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let mut eta = DVector::from_element(x.nrows(), self.intercept);
        for (&c, &b) in self.columns.iter().zip(&self.coefficients) {
            eta.axpy(b, &x.column(c), 1.0);
        }
        eta
    }

    pub fn predict_mean(&self, x: &DMatrix<f64>) -> DVector<f64> {
        self.predict_link(x).map(|e| self.family.mean(e))
    }
}

/// Fits a GLM on all columns of `x`.
pub fn fit_glm(family: Family, x: &DMatrix<f64>, y: &DVector<f64>, ridge: f64) -> Result<GlmFit> {
    let cols: Vec<usize> = (0..x.ncols()).collect();
    fit_glm_columns(family, x, y, ridge, &cols)
}

/// Fits a GLM on a subset of the columns of `x`.
///
/// Minimizes `(1/n) sum_i loss_i + (ridge/2) ||beta||^2` with the intercept
/// unpenalized: normal equations for Gaussian, damped Newton (IRLS) for
/// Binomial.
pub fn fit_glm_columns(
    family: Family,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    ridge: f64,
    columns: &[usize],
) -> Result<GlmFit> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    check_len(n, y.len())?;
    if !(ridge >= 0.0) {
        return Err(Error::InvalidConfig(format!("ridge must be >= 0, got {ridge}")));
    }
    family.validate_labels(y.as_slice())?;
    for &c in columns {
        if c >= x.ncols() {
            return Err(Error::IndexOutOfRange {
                index: c,
                p: x.ncols(),
            });
        }
    }
    let m = columns.len() + 1;
    let design = DMatrix::from_fn(n, m, |i, j| if j == 0 { 1.0 } else { x[(i, columns[j - 1])] });
    let nf = n as f64;

    let objective = |beta: &DVector<f64>| -> f64 {
        let eta = &design * beta;
        let data: f64 = y
            .iter()
            .zip(eta.iter())
            .map(|(&yi, &ei)| family.unit_loss(yi, ei))
            .sum::<f64>()
            / nf;
        data + 0.5 * ridge * beta.rows(1, m - 1).norm_squared()
    };

    let mut beta = DVector::zeros(m);
    let mut trace = vec![objective(&beta)];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < GLM_MAX_ITER {
        iterations += 1;
        let eta = &design * &beta;
        let mut weights = DVector::zeros(n);
        let mut resid = DVector::zeros(n);
        for i in 0..n {
            weights[i] = family.variance(eta[i]).max(WEIGHT_FLOOR);
            resid[i] = family.mean(eta[i]) - y[i];
        }
        let mut grad = design.tr_mul(&resid) / nf;
        let mut weighted = design.clone();
        for mut col in weighted.column_iter_mut() {
            col.component_mul_assign(&weights);
        }
        let mut hess = design.tr_mul(&weighted) / nf;
        for j in 1..m {
            hess[(j, j)] += ridge;
            grad[j] += ridge * beta[j];
        }
        let chol = hess.cholesky().ok_or(Error::SingularSystem)?;
        let step = chol.solve(&grad);
        if step.iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularSystem);
        }

        let current = *trace.last().unwrap();
        let mut t = 1.0;
        let mut candidate = &beta - &step;
        let mut value = objective(&candidate);
        if family == Family::Binomial {
            // step halving keeps the objective monotone
            while value > current && t > 1e-10 {
                t *= 0.5;
                candidate = &beta - &step * t;
                value = objective(&candidate);
            }
            if value > current {
                candidate = beta.clone();
                value = current;
            }
        }
        let change = (&candidate - &beta).amax();
        beta = candidate;
        trace.push(value);
        if change < GLM_TOL || family == Family::Gaussian {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NoConvergence {
            step: iterations,
            residual: trace.last().copied().unwrap_or(f64::NAN),
        });
    }
    Ok(GlmFit {
        family,
        intercept: beta[0],
        columns: columns.to_vec(),
        coefficients: beta.iter().skip(1).copied().collect(),
        iterations,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OffsetProvenance {
    InternalGlm,
    ExternalFile,
}

/// Link-scale base-model predictions, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct OffsetModel {
    values: Vec<f64>,
    provenance: OffsetProvenance,
    model: Option<GlmFit>,
}

impl OffsetModel {
    pub fn from_glm(model: GlmFit, x: &DMatrix<f64>) -> Self {
        let values = model.predict_link(x).as_slice().to_vec();
        Self {
            values,
            provenance: OffsetProvenance::InternalGlm,
            model: Some(model),
        }
    }

    pub fn external(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, column: 0 });
        }
        Ok(Self {
            values,
            provenance: OffsetProvenance::ExternalFile,
            model: None,
        })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            provenance: OffsetProvenance::ExternalFile,
            model: None,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn provenance(&self) -> OffsetProvenance {
        self.provenance
    }

    pub fn model(&self) -> Option<&GlmFit> {
        self.model.as_ref()
    }

    /// Offsets for a row subset, keeping provenance.
    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            values: rows.iter().map(|&i| self.values[i]).collect(),
            provenance: self.provenance,
            model: self.model.clone(),
        }
    }

    /// Re-evaluates the internal model on new rows; external offsets cannot
    /// be re-evaluated and yield `None`.
    pub fn evaluate_on(&self, x: &DMatrix<f64>) -> Option<Self> {
        self.model.as_ref().map(|m| Self::from_glm(m.clone(), x))
    }
}

pub fn load_offsets(path: impl AsRef<Path>, n: usize) -> Result<OffsetModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_offsets(file, n)
}

/// One value per line; blank trailing lines are ignored.
pub fn read_offsets<R: Read>(reader: R, n: usize) -> Result<OffsetModel> {
    let mut values = Vec::with_capacity(n);
    for (idx, line) in BufReader::new(reader).lines().enumerate() {
        let line = line.map_err(|e| Error::io("<offsets>", e))?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        let v = t
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::NonNumericLine {
                line: idx + 1,
                value: t.to_string(),
            })?;
        values.push(v);
    }
    if values.len() != n {
        return Err(Error::RowCountMismatch {
            expected: n,
            actual: values.len(),
        });
    }
    OffsetModel::external(values)
}

pub fn write_offsets<W: Write>(offsets: &[f64], mut writer: W) -> std::io::Result<()> {
    for v in offsets {
        writeln!(writer, "{v}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_losses() {
        let l = loss(Family::Binomial, &[1.0], &[0.0]).unwrap();
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(loss(Family::Gaussian, &[2.0], &[2.0]).unwrap(), -2.0);
    }

    #[test]
    fn binomial_loss_no_overflow() {
        // psi(50) - 50 = log1p(e^-50); extended-precision value 1.9287498479639177e-22
        let l = loss(Family::Binomial, &[1.0], &[50.0]).unwrap();
        assert!(l.is_finite());
        assert!((l - 1.9287498479639177e-22).abs() < 1e-35);
        let l = loss(Family::Binomial, &[0.0], &[800.0]).unwrap();
        assert_eq!(l, 800.0);
    }

    #[test]
    fn loss_errors() {
        assert!(matches!(
            loss(Family::Gaussian, &[1.0, 2.0], &[0.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            loss(Family::Binomial, &[0.5], &[0.0]),
            Err(Error::InvalidLabel { .. })
        ));
    }

    #[test]
    fn gradient_residual_form() {
        let g = loss_gradient(
            Family::Gaussian,
            &[1.0, 0.0],
            &[0.0, 0.0],
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        assert_eq!(g.as_slice(), &[-1.0, 0.0]);
        let eta = [0.3f64, -1.2];
        let y: Vec<f64> = eta.iter().map(|&e| Family::Gaussian.mean(e)).collect();
        let g = loss_gradient(Family::Gaussian, &y, &eta, &DMatrix::identity(2, 2)).unwrap();
        assert_eq!(g.amax(), 0.0);
    }

    #[test]
    fn exact_linear_fit() {
        let x = DMatrix::from_fn(20, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 - 5.0);
        let y = DVector::from_fn(20, |i, _| 3.0 * x[(i, 0)]);
        let fit = fit_glm(Family::Gaussian, &x, &y, 0.0).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-8);
        assert!(fit.coefficients[1].abs() < 1e-8);
        assert!(fit.intercept.abs() < 1e-8);
    }

    #[test]
    fn intercept_only_binomial() {
        let x = DMatrix::<f64>::zeros(8, 0);
        let y = DVector::from_vec(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        let fit = fit_glm(Family::Binomial, &x, &y, 0.0).unwrap();
        assert!((fit.intercept - (0.25f64 / 0.75).ln()).abs() < 1e-8);
        assert!((fit.intercept + 1.0986).abs() < 1e-4);
    }

    #[test]
    fn separated_data_with_ridge() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let fit = fit_glm(Family::Binomial, &x, &y, 1e-4).unwrap();
        assert!(fit.coefficients[0].is_finite() && fit.coefficients[0] > 1.0);
        // oracle re-evaluation of the objective at every iterate
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        assert!(matches!(
            fit_glm(Family::Gaussian, &DMatrix::zeros(3, 1), &DVector::zeros(3), 0.0),
            Err(Error::SingularSystem)
        ));
    }

    #[test]
    fn offsets_file() {
        let ok = read_offsets("0\n0\n0\n".as_bytes(), 3).unwrap();
        assert_eq!(ok.values(), &[0.0, 0.0, 0.0]);
        assert_eq!(ok.provenance(), OffsetProvenance::ExternalFile);
        assert!(matches!(
            read_offsets("0\n0\n".as_bytes(), 3),
            Err(Error::RowCountMismatch { expected: 3, actual: 2 })
        ));
        assert!(matches!(
            read_offsets("0\nfoo\n".as_bytes(), 2),
            Err(Error::NonNumericLine { line: 2, .. })
        ));
        let logit = [-1.0986122886681098, 0.4054651081081644];
        let mut buf = Vec::new();
        write_offsets(&logit, &mut buf).unwrap();
        assert_eq!(read_offsets(&buf[..], 2).unwrap().values(), &logit);
    }
}
