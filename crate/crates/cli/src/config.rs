//! Run configuration: defaults, a flat `key = value` file format, and
//! validation.

use std::path::PathBuf;

use sgshift_core::glm::Family;
use sgshift_core::knockoff::{KnockoffConfig, Statistic};
use sgshift_core::methods::{Method, MethodSettings};
use sgshift_core::simulate::{BenchmarkSpec, CovariateSpec};
use sgshift_core::solver::{PenaltySpec, SolverOptions};
use sgshift_core::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub family: Family,
    pub method: Method,
    pub lambda_points: usize,
    pub min_ratio: f64,
    pub r: f64,
    pub q: Option<f64>,
    pub b: usize,
    pub pi: f64,
    pub alpha: f64,
    pub shrinkage: f64,
    pub statistic: Statistic,
    pub plus: bool,
    pub cv_folds: usize,
    pub seed: u64,
    pub data: Option<PathBuf>,
    pub offsets: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: PathBuf,
    pub standardize: bool,
    pub label_column: String,
    pub domain_column: String,
    pub source_tag: String,
    pub target_tag: String,
    pub replicates: usize,
    pub holdout: f64,
    pub fpr: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub p: usize,
    pub a: usize,
    pub magnitude: f64,
    pub rho: f64,
    pub mismatch: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let ko = KnockoffConfig::default();
        let cov = CovariateSpec::default();
        let bench = BenchmarkSpec::default();
        Self {
            family: Family::Binomial,
            method: Method::SgShift,
            lambda_points: 100,
            min_ratio: 0.01,
            r: 0.5,
            q: Some(ko.q),
            b: ko.replicates,
            pi: ko.pi,
            alpha: ko.alpha,
            shrinkage: ko.shrinkage,
            statistic: ko.statistic,
            plus: ko.plus,
            cv_folds: ko.cv_folds,
            seed: 0,
            data: None,
            offsets: None,
            truth: None,
            out: PathBuf::from("out"),
            standardize: true,
            label_column: "y".into(),
            domain_column: "domain".into(),
            source_tag: "S".into(),
            target_tag: "T".into(),
            replicates: 1,
            holdout: 0.2,
            fpr: 0.10,
            n_source: cov.n_source,
            n_target: cov.n_target,
            p: cov.p,
            a: bench.a,
            magnitude: bench.magnitude,
            rho: cov.rho,
            mismatch: bench.mismatch,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("`{key}`: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::InvalidConfig(format!("`{key}`: expected true or false, got {value:?}"))),
    }
}

pub fn parse_statistic(value: &str) -> Result<Statistic> {
    match value {
        "coef-diff" => Ok(Statistic::CoefDiff),
        "path-entry" => Ok(Statistic::PathEntry),
        _ => Err(Error::InvalidConfig(format!("unknown statistic `{value}`"))),
    }
}

impl RunConfig {
    /// Sets one key. An empty value unsets optional settings.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let path = |v: &str| (!v.is_empty()).then(|| PathBuf::from(v));
        match key {
            "family" => self.family = value.parse()?,
            "method" => self.method = value.parse()?,
            "lambda_points" => self.lambda_points = parse(key, value)?,
            "min_ratio" => self.min_ratio = parse(key, value)?,
            "r" => self.r = parse(key, value)?,
            "q" => self.q = if value.is_empty() { None } else { Some(parse(key, value)?) },
            "B" => self.b = parse(key, value)?,
            "pi" => self.pi = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "shrinkage" => self.shrinkage = parse(key, value)?,
            "statistic" => self.statistic = parse_statistic(value)?,
            "plus" => self.plus = parse_bool(key, value)?,
            "cv_folds" => self.cv_folds = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data" => self.data = path(value),
            "offsets" => self.offsets = path(value),
            "truth" => self.truth = path(value),
            "out" => self.out = PathBuf::from(value),
            "standardize" => self.standardize = parse_bool(key, value)?,
            "label_column" => self.label_column = value.into(),
            "domain_column" => self.domain_column = value.into(),
            "source_tag" => self.source_tag = value.into(),
            "target_tag" => self.target_tag = value.into(),
            "replicates" => self.replicates = parse(key, value)?,
            "holdout" => self.holdout = parse(key, value)?,
            "fpr" => self.fpr = parse(key, value)?,
            "n_source" => self.n_source = parse(key, value)?,
            "n_target" => self.n_target = parse(key, value)?,
            "p" => self.p = parse(key, value)?,
            "a" => self.a = parse(key, value)?,
            "magnitude" => self.magnitude = parse(key, value)?,
            "rho" => self.rho = parse(key, value)?,
            "mismatch" => self.mismatch = parse_bool(key, value)?,
            _ => return Err(Error::InvalidConfig(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key = value", no + 1)))?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.lambda_points == 0 {
            return bad("lambda_points must be at least 1".into());
        }
        if !(self.min_ratio > 0.0 && self.min_ratio < 1.0) {
            return bad(format!("min_ratio must be in (0, 1), got {}", self.min_ratio));
        }
        if !(self.r > 0.0 && self.r < 1.0) {
            return bad(format!("r must be in (0, 1), got {}", self.r));
        }
        if !(self.holdout > 0.0 && self.holdout < 1.0) {
            return bad(format!("holdout must be in (0, 1), got {}", self.holdout));
        }
        if !(0.0..=1.0).contains(&self.fpr) {
            return bad(format!("fpr must be in [0, 1], got {}", self.fpr));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if self.source_tag == self.target_tag {
            return bad("source and target tags must differ".into());
        }
        if self.a > self.p {
            return bad(format!("a={} exceeds p={}", self.a, self.p));
        }
        if !self.magnitude.is_finite() {
            return bad("magnitude must be finite".into());
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!("rho must be in (-1, 1), got {}", self.rho));
        }
        if self.method.knockoff_mode().is_some() {
            if self.q.is_none() {
                return bad(format!("method {} requires q", self.method));
            }
            self.knockoff().validate()?;
        }
        Ok(())
    }

    pub fn penalty(&self) -> PenaltySpec {
        PenaltySpec::relative(self.lambda_points, self.min_ratio, self.r)
    }

    pub fn knockoff(&self) -> KnockoffConfig {
        KnockoffConfig {
            mode: self.method.knockoff_mode().unwrap_or(sgshift_core::knockoff::KnockoffMode::K),
            q: self.q.unwrap_or(f64::NAN),
            replicates: self.b,
            pi: self.pi,
            alpha: self.alpha,
            shrinkage: self.shrinkage,
            statistic: self.statistic,
            plus: self.plus,
            cv_folds: self.cv_folds,
        }
    }

    pub fn method_settings(&self) -> MethodSettings {
        MethodSettings {
            penalty: self.penalty(),
            knockoff: self.knockoff(),
            holdout_fraction: self.holdout,
            solver: SolverOptions::default(),
        }
    }

    pub fn benchmark(&self) -> BenchmarkSpec {
        BenchmarkSpec {
            family: self.family,
            covariates: CovariateSpec {
                n_source: self.n_source,
                n_target: self.n_target,
                p: self.p,
                rho: self.rho,
                ..CovariateSpec::default()
            },
            a: self.a,
            magnitude: self.magnitude,
            mismatch: self.mismatch,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_file_text() {
        let mut c = RunConfig::default();
        c.apply_text("# run\nfamily = gaussian\nmethod=sgshift-ka\n\nB = 11 # odd\nq=0.1\n").unwrap();
        assert_eq!(c.family, Family::Gaussian);
        assert_eq!(c.method, Method::SgShiftKA);
        assert_eq!(c.b, 11);
        assert_eq!(c.q, Some(0.1));
        c.validate().unwrap();
    }

    #[test]
    fn rejects_bad_input() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("family", "poisson"), Err(Error::InvalidConfig(_))));
        assert!(matches!(c.set("colour", "red"), Err(Error::InvalidConfig(_))));
        assert!(matches!(c.apply_text("just words"), Err(Error::InvalidConfig(_))));
        assert!(matches!(c.set("B", "many"), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn knockoff_methods_need_q() {
        let mut c = RunConfig::default();
        c.apply_text("method = sgshift-k\nq =\n").unwrap();
        assert!(matches!(c.validate(), Err(Error::InvalidConfig(_))));
        c.method = Method::SgShift;
        c.validate().unwrap();
    }

    #[test]
    fn ranges_are_checked() {
        for (k, v) in [("r", "1"), ("holdout", "0"), ("lambda_points", "0"), ("replicates", "0")] {
            let mut c = RunConfig::default();
            c.set(k, v).unwrap();
            assert!(c.validate().is_err(), "{k}={v}");
        }
        let mut c = RunConfig::default();
        c.apply_text("method = sgshift-k\npi = 1.5").unwrap();
        assert!(c.validate().is_err());
    }
}
