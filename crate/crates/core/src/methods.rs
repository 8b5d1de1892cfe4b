//! The attribution methods behind one interface, plus the
//! probability-difference baseline.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{split_rows, BasisExpansion, Domain, TabularDataset};
use crate::error::{Error, Result};
use crate::glm::{fit_glm, fit_glm_columns, Family, OffsetModel};
use crate::knockoff::{derandomize, substream, KnockoffConfig, KnockoffData, KnockoffMode, SelectionResult};
use crate::simulate::{SimulatedPair, INTERNAL_RIDGE};
use crate::solver::{
    fit_sgshift, fit_sgshift_absorb, path_scores, DeltaPath, DomainData, PenaltySpec, ShiftProblem,
    SolverOptions,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "sgshift")]
    SgShift,
    #[serde(rename = "sgshift-a")]
    SgShiftA,
    #[serde(rename = "sgshift-k")]
    SgShiftK,
    #[serde(rename = "sgshift-ka")]
    SgShiftKA,
    #[serde(rename = "diff-baseline")]
    DiffBaseline,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::SgShift,
        Method::SgShiftA,
        Method::SgShiftK,
        Method::SgShiftKA,
        Method::DiffBaseline,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::SgShift => "sgshift",
            Method::SgShiftA => "sgshift-a",
            Method::SgShiftK => "sgshift-k",
            Method::SgShiftKA => "sgshift-ka",
            Method::DiffBaseline => "diff-baseline",
        }
    }

    pub fn knockoff_mode(self) -> Option<KnockoffMode> {
        match self {
            Method::SgShiftK => Some(KnockoffMode::K),
            Method::SgShiftKA => Some(KnockoffMode::KA),
            _ => None,
        }
    }

    pub fn needs_source(self) -> bool {
        matches!(self, Method::SgShiftA | Method::SgShiftKA | Method::DiffBaseline)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method `{s}`")))
    }
}

/// Features, labels and base-model offsets of one domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Observed {
    pub x: DMatrix<f64>,
    pub y: Vec<f64>,
    pub offset: Vec<f64>,
}

impl Observed {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn select(&self, rows: &[usize]) -> Self {
        Self {
            x: self.x.select_rows(rows),
            y: rows.iter().map(|&i| self.y[i]).collect(),
            offset: rows.iter().map(|&i| self.offset[i]).collect(),
        }
    }
}

/// Inputs shared by every method.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftData {
    pub source: Option<Observed>,
    pub target: Observed,
}

impl ShiftData {
    pub fn from_pair(pair: &SimulatedPair) -> Self {
        Self {
            source: Some(Observed {
                x: pair.source.features().clone(),
                y: pair.source.labels().as_slice().to_vec(),
                offset: pair.source_offsets.clone(),
            }),
            target: Observed {
                x: pair.target.features().clone(),
                y: pair.target.labels().as_slice().to_vec(),
                offset: pair.target_offsets.clone(),
            },
        }
    }

    /// Splits a tagged dataset by domain. Without offsets, a GLM is trained
    /// on the source rows and its predictions become the offsets.
    pub fn from_dataset(family: Family, ds: &TabularDataset, offsets: Option<&OffsetModel>) -> Result<Self> {
        let src_rows = ds.rows_in(Domain::Source);
        let tgt_rows = ds.rows_in(Domain::Target);
        if tgt_rows.is_empty() {
            return Err(Error::EmptyTarget);
        }
        let values: Vec<f64> = match offsets {
            Some(o) => {
                if o.len() != ds.n_rows() {
                    return Err(Error::RowCountMismatch {
                        expected: ds.n_rows(),
                        actual: o.len(),
                    });
                }
                o.values().to_vec()
            }
            None => {
                if src_rows.is_empty() {
                    return Err(Error::EmptyDomain("source"));
                }
                let src = ds.select_rows(&src_rows)?;
                let base = fit_glm(family, src.features(), src.labels(), INTERNAL_RIDGE)?;
                base.predict_link(ds.features()).as_slice().to_vec()
            }
        };
        let all = Observed {
            x: ds.features().clone(),
            y: ds.labels().as_slice().to_vec(),
            offset: values,
        };
        Ok(Self {
            source: (!src_rows.is_empty()).then(|| all.select(&src_rows)),
            target: all.select(&tgt_rows),
        })
    }

    fn source(&self) -> Result<&Observed> {
        self.source.as_ref().ok_or(Error::EmptyDomain("source"))
    }
}

/// Everything a method run can produce.
#[derive(Debug, Clone)]
pub struct MethodOutput {
    pub method: Method,
    /// Per-basis detection score: entry penalty for path methods, selection
    /// frequency for knockoff methods.
    pub scores: Vec<f64>,
    pub path: Option<DeltaPath>,
    pub selection: Option<SelectionResult>,
}

/// Settings for [`run_method`].
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSettings {
    pub penalty: PenaltySpec,
    pub knockoff: KnockoffConfig,
    pub holdout_fraction: f64,
    pub solver: SolverOptions,
}

impl Default for MethodSettings {
    fn default() -> Self {
        Self {
            penalty: PenaltySpec::default(),
            knockoff: KnockoffConfig::default(),
            holdout_fraction: 0.2,
            solver: SolverOptions::default(),
        }
    }
}

pub fn run_method(
    method: Method,
    family: Family,
    data: &ShiftData,
    basis: &BasisExpansion,
    settings: &MethodSettings,
    seed: u64,
) -> Result<MethodOutput> {
    let phi_t = basis.expand_matrix(&data.target.x)?;
    let target = DomainData::new(&phi_t, &data.target.y, &data.target.offset)?;
    let opts = &settings.solver;
    let out = |scores, path, selection| MethodOutput {
        method,
        scores,
        path,
        selection,
    };
    match method {
        Method::SgShift => {
            let path = fit_sgshift(family, target, &settings.penalty, opts)?;
            Ok(out(path_scores(&path), Some(path), None))
        }
        Method::SgShiftA => {
            let src = data.source()?;
            let phi_s = basis.expand_matrix(&src.x)?;
            let source = DomainData::new(&phi_s, &src.y, &src.offset)?;
            let path = fit_sgshift_absorb(family, source, target, &settings.penalty, opts)?;
            Ok(out(path_scores(&path), Some(path), None))
        }
        Method::SgShiftK | Method::SgShiftKA => {
            let mode = method.knockoff_mode().expect("knockoff method");
            let config = KnockoffConfig {
                mode,
                ..settings.knockoff.clone()
            };
            let phi_s;
            let source = if mode == KnockoffMode::KA {
                let src = data.source()?;
                phi_s = basis.expand_matrix(&src.x)?;
                Some(DomainData::new(&phi_s, &src.y, &src.offset)?)
            } else {
                None
            };
            let kd = KnockoffData {
                target_features: &data.target.x,
                target,
                source,
            };
            let sel = derandomize(family, kd, basis, &settings.penalty, &config, seed, opts)?;
            Ok(out(sel.pi_hat.clone(), None, Some(sel)))
        }
        Method::DiffBaseline => {
            let path = diff_baseline(family, data, basis, &settings.penalty, settings.holdout_fraction, seed, opts)?;
            Ok(out(path_scores(&path), Some(path), None))
        }
    }
}

/// Trains one GLM per domain on a training split, then regresses the
/// difference of their predicted means on the held-out rows of both
/// domains with a Gaussian lasso.
pub fn diff_baseline(
    family: Family,
    data: &ShiftData,
    basis: &BasisExpansion,
    penalty: &PenaltySpec,
    holdout_fraction: f64,
    seed: u64,
    opts: &SolverOptions,
) -> Result<DeltaPath> {
    let src = data.source()?;
    let tgt = &data.target;
    let (s_train, s_hold) = split_rows(&(0..src.n_rows()).collect::<Vec<_>>(), holdout_fraction, substream(seed, 10));
    let (t_train, t_hold) = split_rows(&(0..tgt.n_rows()).collect::<Vec<_>>(), holdout_fraction, substream(seed, 11));
    if s_hold.is_empty() && t_hold.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    if s_train.is_empty() {
        return Err(Error::EmptyDomain("source"));
    }
    if t_train.is_empty() {
        return Err(Error::EmptyTarget);
    }
    let fit = |obs: &Observed, rows: &[usize]| {
        let part = obs.select(rows);
        let cols: Vec<usize> = (0..part.x.ncols()).collect();
        fit_glm_columns(family, &part.x, &DVector::from_vec(part.y), INTERNAL_RIDGE, &cols)
    };
    let m_s = fit(src, &s_train)?;
    let m_t = fit(tgt, &t_train)?;

    let hold_x = {
        let a = src.x.select_rows(&s_hold);
        let b = tgt.x.select_rows(&t_hold);
        let mut x = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
        x.rows_mut(0, a.nrows()).copy_from(&a);
        x.rows_mut(a.nrows(), b.nrows()).copy_from(&b);
        x
    };
    let diff: Vec<f64> = (m_t.predict_mean(&hold_x) - m_s.predict_mean(&hold_x)).as_slice().to_vec();
    let phi = basis.expand_matrix(&hold_x)?;
    let zeros = vec![0.0; diff.len()];
    let problem = ShiftProblem::target_only(Family::Gaussian, DomainData::new(&phi, &diff, &zeros)?, None)?;
    problem.fit(penalty, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::{benchmark_pair, BenchmarkSpec, CovariateSpec};

    #[test]
    fn names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert!(matches!("lasso".parse::<Method>(), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn every_method_scores_every_feature() {
        let spec = BenchmarkSpec {
            covariates: CovariateSpec {
                n_source: 500,
                n_target: 500,
                p: 6,
                ..CovariateSpec::default()
            },
            a: 2,
            magnitude: 1.5,
            ..BenchmarkSpec::default()
        };
        let pair = benchmark_pair(&spec, 3).unwrap();
        let data = ShiftData::from_pair(&pair);
        let settings = MethodSettings {
            penalty: PenaltySpec::relative(20, 0.01, 0.5),
            knockoff: KnockoffConfig {
                replicates: 3,
                ..KnockoffConfig::default()
            },
            ..MethodSettings::default()
        };
        for m in Method::ALL {
            let out = run_method(m, Family::Binomial, &data, &BasisExpansion::linear(6), &settings, 1).unwrap();
            assert_eq!(out.scores.len(), 6, "{m}");
            assert!(out.scores.iter().all(|s| s.is_finite() && *s >= 0.0));
        }
    }

    #[test]
    fn absorption_needs_source() {
        let pair = benchmark_pair(
            &BenchmarkSpec {
                covariates: CovariateSpec {
                    n_source: 50,
                    n_target: 50,
                    p: 3,
                    ..CovariateSpec::default()
                },
                a: 1,
                ..BenchmarkSpec::default()
            },
            0,
        )
        .unwrap();
        let mut data = ShiftData::from_pair(&pair);
        data.source = None;
        let err = run_method(
            Method::SgShiftA,
            Family::Binomial,
            &data,
            &BasisExpansion::linear(3),
            &MethodSettings::default(),
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptyDomain("source")));
    }
}
