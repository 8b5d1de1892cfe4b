//! Semi-synthetic benchmark: relabel data with a fitted generator, add a
//! known sparse shift on the target link scale, and train a base model.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Domain, TabularDataset};
use crate::error::{Error, Result};
use crate::glm::{fit_glm, fit_glm_columns, Family, GlmFit, OffsetModel};
use crate::knockoff::substream;

/// Ridge used for every internally trained GLM.
pub const INTERNAL_RIDGE: f64 = 1e-6;

/// Sparse additive shift on the link scale: `eta += sum_j c_j x_j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftSpec {
    pub shifted: Vec<usize>,
    pub magnitudes: Vec<f64>,
    pub seed: u64,
    pub family: Family,
}

impl ShiftSpec {
    pub fn new(family: Family, shifted: Vec<usize>, magnitudes: Vec<f64>, seed: u64) -> Result<Self> {
        if shifted.len() != magnitudes.len() {
            return Err(Error::LengthMismatch {
                expected: shifted.len(),
                actual: magnitudes.len(),
            });
        }
        if magnitudes.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidConfig("shift magnitudes must be finite".into()));
        }
        let mut sorted = shifted.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != shifted.len() {
            return Err(Error::InvalidConfig("shifted indices must be distinct".into()));
        }
        Ok(Self {
            shifted,
            magnitudes,
            seed,
            family,
        })
    }

    /// `a` features drawn uniformly without replacement, each with
    /// magnitude `+-magnitude` (random sign). Indices are sorted.
    pub fn random(family: Family, p: usize, a: usize, magnitude: f64, seed: u64) -> Result<Self> {
        if a > p {
            return Err(Error::IndexOutOfRange { index: a, p });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut idx: Vec<usize> = (0..p).collect();
        idx.shuffle(&mut rng);
        let mut shifted = idx[..a].to_vec();
        shifted.sort_unstable();
        let magnitudes = shifted
            .iter()
            .map(|_| if rng.random::<bool>() { magnitude } else { -magnitude })
            .collect();
        Self::new(family, shifted, magnitudes, seed)
    }

    pub fn a(&self) -> usize {
        self.shifted.len()
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        match self.shifted.iter().find(|&&j| j >= p) {
            Some(&j) => Err(Error::IndexOutOfRange { index: j, p }),
            None => Ok(()),
        }
    }

    /// Indicator of the shifted set over `p` features.
    pub fn truth(&self, p: usize) -> Result<Vec<bool>> {
        self.validate(p)?;
        let mut t = vec![false; p];
        for &j in &self.shifted {
            t[j] = true;
        }
        Ok(t)
    }

    /// Same support with every magnitude set to zero.
    pub fn zeroed(&self) -> Self {
        Self {
            magnitudes: vec![0.0; self.shifted.len()],
            ..self.clone()
        }
    }
}

/// Shape of the synthetic stand-in for a real two-domain dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub n_source: usize,
    pub n_target: usize,
    pub p: usize,
    /// AR(1) correlation between neighbouring features.
    pub rho: f64,
    /// Mean offset of every other feature in the target domain.
    pub target_mean_shift: f64,
    /// Standard deviation of the true label coefficients.
    pub coef_scale: f64,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self {
            n_source: 4000,
            n_target: 4000,
            p: 30,
            rho: 0.3,
            target_mean_shift: 0.25,
            coef_scale: 0.3,
        }
    }
}

fn ar1_rows(n: usize, p: usize, rho: f64, mean_shift: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev: f64 = rng.sample(StandardNormal);
        for j in 0..p {
            if j > 0 {
                let e: f64 = rng.sample(StandardNormal);
                prev = rho * prev + innov * e;
            }
            x[(i, j)] = prev + if j % 2 == 0 { mean_shift } else { 0.0 };
        }
    }
    x
}

fn draw_labels(family: Family, eta: &DVector<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    eta.map(|e| match family {
        Family::Gaussian => e + rng.sample::<f64, _>(StandardNormal),
        Family::Binomial => {
            if rng.random::<f64>() < family.mean(e) {
                1.0
            } else {
                0.0
            }
        }
    })
}

/// Correlated Gaussian covariates with a mild target covariate shift and
/// labels from a random sparse-free GLM, tagged source rows first.
pub fn synthetic_real_data(family: Family, spec: &CovariateSpec, seed: u64) -> Result<TabularDataset> {
    if spec.n_source == 0 || spec.n_target == 0 || spec.p == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(spec.rho.abs() < 1.0) {
        return Err(Error::InvalidConfig(format!("rho must be in (-1, 1), got {}", spec.rho)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let xs = ar1_rows(spec.n_source, spec.p, spec.rho, 0.0, &mut rng);
    let xt = ar1_rows(spec.n_target, spec.p, spec.rho, spec.target_mean_shift, &mut rng);
    let n = spec.n_source + spec.n_target;
    let x = DMatrix::from_fn(n, spec.p, |i, j| {
        if i < spec.n_source {
            xs[(i, j)]
        } else {
            xt[(i - spec.n_source, j)]
        }
    });
    let beta = DVector::from_fn(spec.p, |_, _| spec.coef_scale * rng.sample::<f64, _>(StandardNormal));
    let intercept = if family == Family::Binomial { -0.5 } else { 0.0 };
    let eta = (&x * beta).add_scalar(intercept);
    let y = draw_labels(family, &eta, &mut rng);
    let mut domain = vec![Domain::Source; spec.n_source];
    domain.extend(std::iter::repeat_n(Domain::Target, spec.n_target));
    TabularDataset::from_parts(x, y, domain)
}

/// GLM fitted to the real labels of the source rows.
pub fn make_generator(family: Family, source: &TabularDataset, ridge: f64) -> Result<OffsetModel> {
    let fit = fit_glm(family, source.features(), source.labels(), ridge)?;
    Ok(OffsetModel::from_glm(fit, source.features()))
}

/// Draws labels from the generator law, plus the shift when given.
pub fn relabel(
    family: Family,
    x: &DMatrix<f64>,
    generator: &OffsetModel,
    shift: Option<&ShiftSpec>,
    seed: u64,
) -> Result<DVector<f64>> {
    let model = generator
        .model()
        .ok_or_else(|| Error::InvalidConfig("generator needs a fitted model".into()))?;
    let mut eta = model.predict_link(x);
    if let Some(s) = shift {
        s.validate(x.ncols())?;
        for (&j, &c) in s.shifted.iter().zip(&s.magnitudes) {
            eta.axpy(c, &x.column(j), 1.0);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(draw_labels(family, &eta, &mut rng))
}

/// Relabeled two-domain benchmark with its ground truth and base model.
#[derive(Debug, Clone)]
pub struct SimulatedPair {
    pub source: TabularDataset,
    pub target: TabularDataset,
    pub truth: Vec<bool>,
    pub shift: ShiftSpec,
    pub generator: OffsetModel,
    pub base: GlmFit,
    pub mismatch: bool,
    /// Base model link predictions on the source and target rows.
    pub source_offsets: Vec<f64>,
    pub target_offsets: Vec<f64>,
}

impl SimulatedPair {
    /// Source rows followed by target rows.
    pub fn combined(&self) -> Result<TabularDataset> {
        self.source.concat(&self.target)
    }

    pub fn combined_offsets(&self) -> Vec<f64> {
        let mut v = self.source_offsets.clone();
        v.extend_from_slice(&self.target_offsets);
        v
    }
}

/// Fits the generator on the real source labels, relabels both domains
/// (target with the shift), and trains the base model on relabeled source.
///
/// With `mismatch` the base model only sees a random half of the features.
pub fn make_pair(
    family: Family,
    real: &TabularDataset,
    shift: &ShiftSpec,
    mismatch: bool,
    seed: u64,
) -> Result<SimulatedPair> {
    let p = real.n_features();
    let truth = shift.truth(p)?;
    let source = real.domain_subset(Domain::Source)?;
    let target = real.domain_subset(Domain::Target)?;
    let generator = make_generator(family, &source, INTERNAL_RIDGE)?;

    let ys = relabel(family, source.features(), &generator, None, substream(seed, 2))?;
    let yt = relabel(family, target.features(), &generator, Some(shift), substream(seed, 3))?;
    let source = source.with_labels(ys)?;
    let target = target.with_labels(yt)?;

    let columns: Vec<usize> = if mismatch {
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, 4));
        let mut idx: Vec<usize> = (0..p).collect();
        idx.shuffle(&mut rng);
        let mut half = idx[..p.div_ceil(2)].to_vec();
        half.sort_unstable();
        half
    } else {
        (0..p).collect()
    };
    let base = fit_glm_columns(family, source.features(), source.labels(), INTERNAL_RIDGE, &columns)?;
    let source_offsets = base.predict_link(source.features()).as_slice().to_vec();
    let target_offsets = base.predict_link(target.features()).as_slice().to_vec();
    Ok(SimulatedPair {
        source,
        target,
        truth,
        shift: shift.clone(),
        generator,
        base,
        mismatch,
        source_offsets,
        target_offsets,
    })
}

/// Full benchmark settings: covariates, shift size and base model match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub family: Family,
    pub covariates: CovariateSpec,
    pub a: usize,
    pub magnitude: f64,
    pub mismatch: bool,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        Self {
            family: Family::Binomial,
            covariates: CovariateSpec::default(),
            a: 5,
            magnitude: 1.0,
            mismatch: false,
        }
    }
}

/// One benchmark replicate; every random stream is derived from `seed`.
pub fn benchmark_pair(spec: &BenchmarkSpec, seed: u64) -> Result<SimulatedPair> {
    let real = synthetic_real_data(spec.family, &spec.covariates, substream(seed, 0))?;
    let shift = ShiftSpec::random(spec.family, spec.covariates.p, spec.a, spec.magnitude, substream(seed, 1))?;
    make_pair(spec.family, &real, &shift, spec.mismatch, seed)
}

/// JSON ground truth written next to a simulated pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub shifted_indices: Vec<usize>,
    pub magnitudes: Vec<f64>,
    pub seed: u64,
    pub family: Family,
    pub mismatch: bool,
}

impl TruthFile {
    pub fn from_pair(pair: &SimulatedPair, seed: u64) -> Self {
        Self {
            shifted_indices: pair.shift.shifted.clone(),
            magnitudes: pair.shift.magnitudes.clone(),
            seed,
            family: pair.shift.family,
            mismatch: pair.mismatch,
        }
    }

    pub fn truth(&self, p: usize) -> Result<Vec<bool>> {
        let mut t = vec![false; p];
        for &j in &self.shifted_indices {
            if j >= p {
                return Err(Error::IndexOutOfRange { index: j, p });
            }
            t[j] = true;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(family: Family) -> BenchmarkSpec {
        BenchmarkSpec {
            family,
            covariates: CovariateSpec {
                n_source: 600,
                n_target: 400,
                p: 8,
                ..CovariateSpec::default()
            },
            a: 2,
            ..BenchmarkSpec::default()
        }
    }

    #[test]
    fn generator_recovers_gaussian_coefficient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 500;
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DVector::from_fn(n, |i, _| 2.0 * x[(i, 0)]);
        let ds = TabularDataset::from_parts(x, y, vec![Domain::Source; n]).unwrap();
        let g = make_generator(Family::Gaussian, &ds, INTERNAL_RIDGE).unwrap();
        let fit = g.model().unwrap();
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-4);
        assert!(fit.coefficients[1].abs() < 1e-4);
    }

    #[test]
    fn binomial_generator_beats_intercept_only() {
        let real = synthetic_real_data(Family::Binomial, &small(Family::Binomial).covariates, 5).unwrap();
        let src = real.domain_subset(Domain::Source).unwrap();
        let g = make_generator(Family::Binomial, &src, INTERNAL_RIDGE).unwrap();
        let y = src.labels().as_slice();
        let full = crate::glm::loss(Family::Binomial, y, g.values()).unwrap();
        let rate = y.iter().sum::<f64>() / y.len() as f64;
        let null_eta = vec![Family::Binomial.link(rate); y.len()];
        let null = crate::glm::loss(Family::Binomial, y, &null_eta).unwrap();
        assert!(full <= null);
    }

    #[test]
    fn empty_source_is_rejected() {
        let ds = TabularDataset::from_parts(
            DMatrix::from_element(3, 1, 0.5),
            DVector::from_element(3, 1.0),
            vec![Domain::Target; 3],
        )
        .unwrap();
        let shift = ShiftSpec::random(Family::Binomial, 1, 0, 1.0, 0).unwrap();
        assert!(matches!(
            make_pair(Family::Binomial, &ds, &shift, false, 0),
            Err(Error::EmptyDomain(_))
        ));
    }

    #[test]
    fn covariates_are_untouched_and_truth_marks_shift() {
        let spec = small(Family::Binomial);
        let real = synthetic_real_data(spec.family, &spec.covariates, 1).unwrap();
        let shift = ShiftSpec::new(Family::Binomial, vec![1, 6], vec![1.0, -1.0], 0).unwrap();
        let pair = make_pair(spec.family, &real, &shift, false, 9).unwrap();
        assert_eq!(pair.combined().unwrap().features(), real.features());
        assert_eq!(pair.truth, vec![false, true, false, false, false, false, true, false]);
        let again = make_pair(spec.family, &real, &shift, false, 9).unwrap();
        assert_eq!(pair.target.labels(), again.target.labels());
    }

    #[test]
    fn bad_shift_index() {
        let shift = ShiftSpec::new(Family::Gaussian, vec![9], vec![1.0], 0).unwrap();
        let g = OffsetModel::from_glm(
            GlmFit {
                family: Family::Gaussian,
                intercept: 0.0,
                columns: vec![],
                coefficients: vec![],
                iterations: 0,
                objective_trace: vec![],
            },
            &DMatrix::zeros(2, 3),
        );
        assert!(matches!(
            relabel(Family::Gaussian, &DMatrix::zeros(2, 3), &g, Some(&shift), 0),
            Err(Error::IndexOutOfRange { index: 9, p: 3 })
        ));
    }

    #[test]
    fn random_shift_has_requested_size() {
        let s = ShiftSpec::random(Family::Binomial, 30, 5, 1.0, 4).unwrap();
        assert_eq!(s.a(), 5);
        assert!(s.magnitudes.iter().all(|c| c.abs() == 1.0));
        assert!(s.shifted.windows(2).all(|w| w[0] < w[1]));
        assert!(ShiftSpec::random(Family::Binomial, 3, 4, 1.0, 4).is_err());
    }

    #[test]
    fn mismatched_base_uses_half_the_features() {
        let pair = benchmark_pair(&BenchmarkSpec { mismatch: true, ..small(Family::Gaussian) }, 2).unwrap();
        assert_eq!(pair.base.columns.len(), 4);
    }
}
