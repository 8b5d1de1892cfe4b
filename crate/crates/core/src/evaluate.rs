//! Detection metrics, empirical FDR, and held-out loss-recovery curves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{fit_glm, Family};
use crate::simulate::INTERNAL_RIDGE;
use crate::solver::{DeltaPath, DomainData};

/// Default false-positive level for recall.
pub const DEFAULT_FPR: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub feature: usize,
    pub score: f64,
    pub truth: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub auc: f64,
    pub recall_at_fpr: f64,
    pub fpr_level: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub empirical_fdr: Option<f64>,
    pub features: Vec<FeatureRow>,
}

/// 1-based midranks of `v` in ascending order.
pub fn midranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && v[order[j + 1]] == v[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann-Whitney AUC with ties counted as one half.
pub fn auc(scores: &[f64], truth: &[bool]) -> Result<f64> {
    check(scores, truth)?;
    let n1 = truth.iter().filter(|t| **t).count() as f64;
    let n0 = truth.len() as f64 - n1;
    let ranks = midranks(scores);
    let r1: f64 = ranks.iter().zip(truth).filter(|(_, t)| **t).map(|(r, _)| r).sum();
    Ok((r1 - n1 * (n1 + 1.0) / 2.0) / (n1 * n0))
}

/// Fraction of positives scoring strictly above the
/// `ceil((1 - fpr) * n_null)`-th smallest null score.
pub fn recall_at_fpr(scores: &[f64], truth: &[bool], fpr: f64) -> Result<f64> {
    check(scores, truth)?;
    if !(0.0..=1.0).contains(&fpr) {
        return Err(Error::InvalidConfig(format!("fpr must be in [0, 1], got {fpr}")));
    }
    let mut nulls: Vec<f64> = scores.iter().zip(truth).filter(|(_, t)| !**t).map(|(s, _)| *s).collect();
    nulls.sort_by(f64::total_cmp);
    // tolerate representation error in (1 - fpr) * n
    let k = ((1.0 - fpr) * nulls.len() as f64 - 1e-9).ceil().max(0.0) as usize;
    let threshold = if k == 0 { f64::NEG_INFINITY } else { nulls[k - 1] };
    let pos: Vec<f64> = scores.iter().zip(truth).filter(|(_, t)| **t).map(|(s, _)| *s).collect();
    Ok(pos.iter().filter(|s| **s > threshold).count() as f64 / pos.len() as f64)
}

fn check(scores: &[f64], truth: &[bool]) -> Result<()> {
    if scores.len() != truth.len() {
        return Err(Error::LengthMismatch {
            expected: truth.len(),
            actual: scores.len(),
        });
    }
    if !truth.iter().any(|t| *t) || truth.iter().all(|t| *t) {
        return Err(Error::DegenerateTruth);
    }
    Ok(())
}

pub fn detection_metrics(
    scores: &[f64],
    truth: &[bool],
    fpr: f64,
    selected: Option<&[usize]>,
) -> Result<DetectionMetrics> {
    let auc = auc(scores, truth)?;
    let recall = recall_at_fpr(scores, truth, fpr)?;
    let sel = selected.map(|s| {
        let mut mask = vec![false; truth.len()];
        for &j in s {
            if j < mask.len() {
                mask[j] = true;
            }
        }
        mask
    });
    let features = (0..truth.len())
        .map(|k| FeatureRow {
            feature: k,
            score: scores[k],
            truth: truth[k],
            selected: sel.as_ref().map(|m| m[k]),
        })
        .collect();
    Ok(DetectionMetrics {
        auc,
        recall_at_fpr: recall,
        fpr_level: fpr,
        empirical_fdr: selected.map(|s| empirical_fdr(s, truth)),
        features,
    })
}

/// `|selected ∩ nulls| / max(|selected|, 1)`.
pub fn empirical_fdr(selected: &[usize], truth: &[bool]) -> f64 {
    let false_sel = selected.iter().filter(|&&j| !truth.get(j).copied().unwrap_or(false)).count();
    false_sel as f64 / selected.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossPoint {
    pub lambda: f64,
    pub k_features: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub points: Vec<LossPoint>,
    /// Held-out loss of the path head, where no shift term is active.
    pub reference_source_only: f64,
    /// Held-out loss of a GLM fitted on the target training rows alone.
    pub reference_target_only: f64,
}

impl LossCurve {
    /// Loss at the smallest penalty with at most `k` active features.
    pub fn loss_with_at_most(&self, k: usize) -> Option<f64> {
        self.points.iter().rev().find(|p| p.k_features <= k).map(|p| p.mean_loss)
    }

    /// Fraction of the source-to-target loss gap closed with at most `k`
    /// active features.
    pub fn recovered_fraction(&self, k: usize) -> Option<f64> {
        let gap = self.reference_source_only - self.reference_target_only;
        self.loss_with_at_most(k)
            .map(|l| (self.reference_source_only - l) / gap)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("lambda,k_features,mean_loss\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.lambda, p.k_features, p.mean_loss));
        }
        s
    }
}

/// Target-row link prediction of one path point.
pub fn path_predictor(path: &DeltaPath, step: usize, phi: &DMatrix<f64>, offset: &[f64]) -> Vec<f64> {
    let mut coef = DVector::from_column_slice(&path.deltas[step][..path.n_basis()]);
    if let Some(om) = &path.omegas {
        coef += DVector::from_column_slice(&om[step]);
    }
    let shift: f64 = path.intercepts[step].iter().sum();
    let lin = phi * coef;
    offset.iter().zip(lin.iter()).map(|(o, l)| o + l + shift).collect()
}

/// Held-out mean loss along the path, with source-only and target-only
/// references.
pub fn loss_recovery(
    family: Family,
    path: &DeltaPath,
    holdout: DomainData<'_>,
    target_train_phi: &DMatrix<f64>,
    target_train_y: &[f64],
) -> Result<LossCurve> {
    let n = holdout.n_rows();
    if n == 0 {
        return Err(Error::EmptyHoldout);
    }
    if holdout.phi.ncols() < path.n_basis() {
        return Err(Error::DimensionMismatch {
            expected: path.n_basis(),
            actual: holdout.phi.ncols(),
        });
    }
    let nf = n as f64;
    let counts = path.active_counts();
    let mut points = Vec::with_capacity(path.lambdas.len());
    for (step, &lambda) in path.lambdas.iter().enumerate() {
        let eta = path_predictor(path, step, holdout.phi, holdout.offset);
        points.push(LossPoint {
            lambda,
            k_features: counts[step],
            mean_loss: crate::glm::loss(family, holdout.y, &eta)? / nf,
        });
    }
    let reference_source_only = points.first().map_or(f64::NAN, |p| p.mean_loss);

    let tfit = fit_glm(
        family,
        target_train_phi,
        &DVector::from_column_slice(target_train_y),
        INTERNAL_RIDGE,
    )?;
    let eta = tfit.predict_link(holdout.phi);
    let reference_target_only = crate::glm::loss(family, holdout.y, eta.as_slice())? / nf;
    Ok(LossCurve {
        points,
        reference_source_only,
        reference_target_only,
    })
}

/// Mean and standard error (`sd / sqrt(n)`, sample sd) of `v`.
pub fn mean_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let m = detection_metrics(&[0.9, 0.1, 0.8], &[true, false, true], DEFAULT_FPR, None).unwrap();
        assert_eq!(m.auc, 1.0);
        assert_eq!(m.recall_at_fpr, 1.0);
        assert!(m.empirical_fdr.is_none());
    }

    #[test]
    fn ties_give_half() {
        assert_eq!(auc(&[0.3; 4], &[true, false, true, false]).unwrap(), 0.5);
        assert!(matches!(auc(&[1.0, 2.0], &[true, true]), Err(Error::DegenerateTruth)));
        assert!(matches!(auc(&[1.0, 2.0], &[false, false]), Err(Error::DegenerateTruth)));
    }

    #[test]
    fn auc_by_pair_counting() {
        let s = [0.3, 0.3, 0.9, 0.1, 0.5, 0.5, 0.2];
        let t = [true, false, true, false, false, true, false];
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..s.len() {
            for j in 0..s.len() {
                if t[i] && !t[j] {
                    den += 1.0;
                    num += if s[i] > s[j] { 1.0 } else if s[i] == s[j] { 0.5 } else { 0.0 };
                }
            }
        }
        assert!((auc(&s, &t).unwrap() - num / den).abs() < 1e-15);
    }

    #[test]
    fn recall_threshold_uses_null_quantile() {
        // 10 nulls 1..=10, threshold is the 9th smallest = 9
        let mut s: Vec<f64> = (1..=10).map(f64::from).collect();
        s.extend([9.5, 9.0, 11.0]);
        let mut t = vec![false; 10];
        t.extend([true, true, true]);
        assert!((recall_at_fpr(&s, &t, 0.1).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(recall_at_fpr(&s, &t, 1.0).unwrap(), 1.0);
        assert!((recall_at_fpr(&s, &t, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn fdr_examples() {
        let truth = [true, false, true];
        assert_eq!(empirical_fdr(&[], &truth), 0.0);
        assert_eq!(empirical_fdr(&[0, 1], &truth), 0.5);
        assert_eq!(empirical_fdr(&[0, 2], &truth), 0.0);
    }

    #[test]
    fn stderr() {
        let (m, se) = mean_stderr(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
    }
}
