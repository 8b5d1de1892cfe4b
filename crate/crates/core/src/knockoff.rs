//! Second-order Gaussian knockoffs, knockoff statistics, the knockoff(+)
//! filter, and derandomized aggregation with stability bounds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::BasisExpansion;
use crate::error::{Error, Result};
use crate::glm::Family;
use crate::solver::{log_grid, DomainData, PenaltySpec, ShiftProblem, SolverOptions};

/// Length of the warm-start path used to reach a fixed penalty.
const WARM_START_POINTS: usize = 12;

/// KKT tolerance of the fold fits that only rank penalties by held-out
/// loss.
const CV_TOL: f64 = 1e-5;

/// Eigenvalue floor used when repairing the covariance estimate.
pub const PSD_FLOOR: f64 = 1e-8;

/// Mixes a replicate seed into an independent sub-stream seed (splitmix64).
pub fn substream(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Moment-matched Gaussian knockoff generator with the equicorrelated
/// construction.
#[derive(Debug, Clone)]
pub struct KnockoffSampler {
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    /// Diagonal of D in covariance units.
    s: DVector<f64>,
    /// `I - Sigma^{-1} D`, applied to centered rows.
    transfer: DMatrix<f64>,
    /// Square root of the conditional covariance `2D - D Sigma^{-1} D`.
    noise_root: DMatrix<f64>,
    seed: u64,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let p = m.nrows();
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Builds a sampler from the rows it will be applied to.
///
/// `Sigma = (1 - shrinkage) * S + shrinkage * diag(S)` with `S` the sample
/// covariance (divisor `n - 1`), repaired by flooring eigenvalues at
/// [`PSD_FLOOR`].
pub fn build_sampler(x: &DMatrix<f64>, shrinkage: f64, seed: u64) -> Result<KnockoffSampler> {
    let (n, p) = x.shape();
    if n < 2 {
        return Err(Error::TooFewRows(n));
    }
    if !(0.0..=1.0).contains(&shrinkage) {
        return Err(Error::InvalidConfig(format!(
            "shrinkage must be in [0, 1], got {shrinkage}"
        )));
    }
    let mu = DVector::from_iterator(p, x.column_iter().map(|c| c.mean()));
    let mut centered = x.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        col.add_scalar_mut(-mu[j]);
    }
    let mut sigma = centered.tr_mul(&centered) / (n as f64 - 1.0);
    for i in 0..p {
        for j in 0..p {
            if i != j {
                sigma[(i, j)] *= 1.0 - shrinkage;
            }
        }
    }
    KnockoffSampler::from_moments(mu, sigma, seed)
}

impl KnockoffSampler {
    /// Builds a sampler from a known mean and covariance.
    pub fn from_moments(mu: DVector<f64>, sigma: DMatrix<f64>, seed: u64) -> Result<Self> {
        let p = mu.len();
        if sigma.shape() != (p, p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                actual: sigma.nrows(),
            });
        }
        let mut sigma = sigma;
        symmetrize(&mut sigma);

        let eig = SymmetricEigen::new(sigma.clone());
        if eig.eigenvalues.iter().any(|v| *v < PSD_FLOOR) {
            let floored = eig.eigenvalues.map(|v| v.max(PSD_FLOOR));
            sigma = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
            symmetrize(&mut sigma);
        }
        let lmin = min_eigenvalue(&sigma);
        if !(lmin >= 0.5 * PSD_FLOOR) {
            return Err(Error::DegenerateCovariance(lmin));
        }

        // equicorrelated s on the correlation scale
        let sd = sigma.diagonal().map(f64::sqrt);
        let corr = DMatrix::from_fn(p, p, |i, j| sigma[(i, j)] / (sd[i] * sd[j]));
        let s_corr = (2.0 * min_eigenvalue(&corr)).clamp(0.0, 1.0);
        let s = sigma.diagonal() * s_corr;

        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::DegenerateCovariance(lmin))?;
        let d = DMatrix::from_diagonal(&s);
        let sigma_inv_d = chol.solve(&d);
        let transfer = DMatrix::identity(p, p) - &sigma_inv_d;
        let mut cond = &d * 2.0 - &d * &sigma_inv_d;
        symmetrize(&mut cond);
        let ce = SymmetricEigen::new(cond);
        let roots = ce.eigenvalues.map(|v| v.max(0.0).sqrt());
        let noise_root = &ce.eigenvectors * DMatrix::from_diagonal(&roots);

        Ok(Self {
            mu,
            sigma,
            s,
            transfer,
            noise_root,
            seed,
        })
    }

    pub fn n_features(&self) -> usize {
        self.mu.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    /// Diagonal of D in covariance units.
    pub fn s(&self) -> &DVector<f64> {
        &self.s
    }

    /// `s` divided by the feature variances.
    pub fn s_correlation(&self) -> DVector<f64> {
        self.s.component_div(&self.sigma.diagonal())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Joint covariance `[[Sigma, Sigma - D], [Sigma - D, Sigma]]`.
    pub fn joint_covariance(&self) -> DMatrix<f64> {
        let p = self.n_features();
        let cross = &self.sigma - DMatrix::from_diagonal(&self.s);
        let mut g = DMatrix::zeros(2 * p, 2 * p);
        g.view_mut((0, 0), (p, p)).copy_from(&self.sigma);
        g.view_mut((p, p), (p, p)).copy_from(&self.sigma);
        g.view_mut((0, p), (p, p)).copy_from(&cross);
        g.view_mut((p, 0), (p, p)).copy_from(&cross);
        g
    }

    /// Knockoff copy of `x` with the sampler's own seed.
    pub fn sample(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.sample_with_seed(x, self.seed)
    }

    /// `mu + (x - mu)(I - Sigma^{-1} D) + E`, rows of `E` drawn i.i.d. from
    /// `N(0, 2D - D Sigma^{-1} D)`.
    pub fn sample_with_seed(&self, x: &DMatrix<f64>, seed: u64) -> Result<DMatrix<f64>> {
        let (n, p) = x.shape();
        if p != self.n_features() {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: p,
            });
        }
        let mut centered = x.clone();
        for (j, mut col) in centered.column_iter_mut().enumerate() {
            col.add_scalar_mut(-self.mu[j]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = DMatrix::from_row_iterator(n, p, (0..n * p).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let mut out = centered * &self.transfer + z * self.noise_root.transpose();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            col.add_scalar_mut(self.mu[j]);
        }
        Ok(out)
    }
}

/// Which design the knockoff lasso is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KnockoffMode {
    /// Target rows only: `[phi_T, phi~_T]`.
    #[serde(rename = "K")]
    K,
    /// Stacked source/target design with absorption terms.
    #[serde(rename = "KA")]
    KA,
}

/// Feature importance contrast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Statistic {
    /// `|delta_k| - |delta~_k|` at a single penalty.
    CoefDiff,
    /// Difference of path entry penalties.
    PathEntry,
}

/// Penalty used by the coefficient-difference statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LambdaChoice {
    /// Minimum of K-fold cross-validated held-out loss on the augmented
    /// design.
    CrossValidated { folds: usize, seed: u64 },
    Fixed(f64),
}

/// Knockoff statistics for one knockoff draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffStats {
    pub w: Vec<f64>,
    pub z: Vec<f64>,
    pub z_tilde: Vec<f64>,
    /// Penalty the coefficient statistic was read at, if any.
    pub lambda_bar: Option<f64>,
}

fn augmented_problem(
    family: Family,
    target: DomainData<'_>,
    knockoffs: &DMatrix<f64>,
    mode: KnockoffMode,
    source: Option<DomainData<'_>>,
    ratio: f64,
) -> Result<ShiftProblem> {
    match mode {
        KnockoffMode::K => ShiftProblem::target_only(family, target, Some(knockoffs)),
        KnockoffMode::KA => {
            let source = source.ok_or(Error::EmptyDomain("source"))?;
            ShiftProblem::stacked(family, source, target, Some(knockoffs), ratio)
        }
    }
}

/// Fits the knockoff-augmented lasso and returns `W`, `Z`, `Z~`.
///
/// `knockoffs` are the basis-expanded knockoff rows, aligned with the
/// target rows.
#[allow(clippy::too_many_arguments)]
pub fn fit_knockoff_stats(
    family: Family,
    target: DomainData<'_>,
    knockoffs: &DMatrix<f64>,
    penalty: &PenaltySpec,
    mode: KnockoffMode,
    source: Option<DomainData<'_>>,
    statistic: Statistic,
    lambda: LambdaChoice,
    opts: &SolverOptions,
) -> Result<KnockoffStats> {
    penalty.validate(mode == KnockoffMode::KA)?;
    let problem = augmented_problem(family, target, knockoffs, mode, source, penalty.ratio)?;
    let k = problem.layout.n_basis;
    let lambda_max = problem.lambda_max(opts)?;
    let grid = penalty.lambdas(lambda_max);

    match statistic {
        Statistic::PathEntry => {
            let path = problem.fit_lambdas(&grid, opts)?;
            let z = path.entry_lambda[..k].to_vec();
            let z_tilde = path.entry_lambda[k..].to_vec();
            let w = z.iter().zip(&z_tilde).map(|(a, b)| a - b).collect();
            Ok(KnockoffStats {
                w,
                z,
                z_tilde,
                lambda_bar: None,
            })
        }
        Statistic::CoefDiff => {
            let (lambdas, lambda_bar) = match lambda {
                LambdaChoice::CrossValidated { folds, seed } => {
                    let cv_opts = SolverOptions {
                        tol: opts.tol.max(CV_TOL),
                        ..*opts
                    };
                    let cv = problem.problem.cross_validate(&grid, folds, seed, &cv_opts)?;
                    let best = cv.best_index;
                    (grid[..=best].to_vec(), grid[best])
                }
                LambdaChoice::Fixed(lb) => {
                    // the solution at lb does not depend on the warm-start
                    // schedule, so a short geometric one suffices
                    let ls = if lb < lambda_max {
                        log_grid(lambda_max, WARM_START_POINTS, lb / lambda_max)
                    } else {
                        vec![lb]
                    };
                    (ls, lb)
                }
            };
            let path = problem.fit_lambdas(&lambdas, opts)?;
            let last = path.deltas.last().expect("non-empty grid");
            let z: Vec<f64> = last[..k].iter().map(|v| v.abs()).collect();
            let z_tilde: Vec<f64> = last[k..].iter().map(|v| v.abs()).collect();
            let w = z.iter().zip(&z_tilde).map(|(a, b)| a - b).collect();
            Ok(KnockoffStats {
                w,
                z,
                z_tilde,
                lambda_bar: Some(lambda_bar),
            })
        }
    }
}

/// Knockoff filter output.
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    /// `f64::INFINITY` when no threshold qualifies.
    pub tau: f64,
    pub selected: Vec<usize>,
}

/// Smallest `t` among the non-zero `|W_k|` with
/// `(plus + #{W_k <= -t}) / max(#{W_k >= t}, 1) <= q`.
pub fn knockoff_threshold(w: &[f64], q: f64, plus: bool) -> Threshold {
    let offset = if plus { 1.0 } else { 0.0 };
    let mut candidates: Vec<f64> = w.iter().map(|v| v.abs()).filter(|v| *v > 0.0).collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    for t in candidates {
        let neg = w.iter().filter(|v| **v <= -t).count() as f64;
        let pos = w.iter().filter(|v| **v >= t).count().max(1) as f64;
        if (offset + neg) / pos <= q {
            let selected = (0..w.len()).filter(|&k| w[k] >= t).collect();
            return Threshold { tau: t, selected };
        }
    }
    Threshold {
        tau: f64::INFINITY,
        selected: Vec::new(),
    }
}

/// `q / (1 - (1 - pi)^B)`.
pub fn fdr_bound(q: f64, pi: f64, b: usize) -> f64 {
    q / (1.0 - (1.0 - pi).powi(b as i32))
}

/// `n_nulls * exp(-2 B (pi - alpha)^2)`, defined for `pi > alpha`.
pub fn pfer_bound(n_nulls: usize, alpha: f64, pi: f64, b: usize) -> Result<f64> {
    if !(pi > alpha) {
        return Err(Error::InvalidThreshold { pi, alpha });
    }
    Ok(n_nulls as f64 * (-2.0 * b as f64 * (pi - alpha).powi(2)).exp())
}

/// Settings for the (derandomized) knockoff filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnockoffConfig {
    pub mode: KnockoffMode,
    pub q: f64,
    pub replicates: usize,
    pub pi: f64,
    /// Per-replicate false selection probability used in the PFER bound.
    pub alpha: f64,
    pub shrinkage: f64,
    pub statistic: Statistic,
    pub plus: bool,
    pub cv_folds: usize,
}

impl Default for KnockoffConfig {
    fn default() -> Self {
        Self {
            mode: KnockoffMode::K,
            q: 0.2,
            replicates: 31,
            pi: 0.5,
            alpha: 0.1,
            shrinkage: 0.1,
            statistic: Statistic::CoefDiff,
            plus: true,
            cv_folds: 5,
        }
    }
}

impl KnockoffConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.q > 0.0 && self.q < 1.0) {
            return bad(format!("q must be in (0, 1), got {}", self.q));
        }
        if !(self.pi > 0.0 && self.pi < 1.0) {
            return bad(format!("pi must be in (0, 1), got {}", self.pi));
        }
        if self.replicates == 0 {
            return bad("B must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.shrinkage) {
            return bad(format!("shrinkage must be in [0, 1], got {}", self.shrinkage));
        }
        if !(self.alpha >= 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha must be in [0, 1), got {}", self.alpha));
        }
        if self.cv_folds < 2 {
            return bad("cv_folds must be at least 2".into());
        }
        Ok(())
    }
}

/// Inputs for a derandomized knockoff run.
#[derive(Debug, Clone, Copy)]
pub struct KnockoffData<'a> {
    /// Raw target features, used for the sampler and knockoff draws.
    pub target_features: &'a DMatrix<f64>,
    pub target: DomainData<'a>,
    pub source: Option<DomainData<'a>>,
}

/// Outcome of one knockoff replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateSelection {
    pub seed: u64,
    pub stats: KnockoffStats,
    #[serde(with = "infinite_as_null")]
    pub tau: f64,
    pub selected: Vec<usize>,
}

/// Aggregated knockoff selection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub mode: KnockoffMode,
    pub q: f64,
    pub replicates: Vec<ReplicateSelection>,
    pub pi: f64,
    pub pi_hat: Vec<f64>,
    pub selected: Vec<usize>,
    pub fdr_bound: f64,
    pub pfer_bound: Option<f64>,
    pub seed: u64,
}

impl SelectionResult {
    /// `W` of the first replicate.
    pub fn w(&self) -> &[f64] {
        &self.replicates[0].stats.w
    }

    pub fn b(&self) -> usize {
        self.replicates.len()
    }

    pub fn report(&self) -> SelectionReport {
        SelectionReport {
            mode: self.mode,
            q: self.q,
            b: self.b(),
            pi: self.pi,
            tau_per_replicate: self
                .replicates
                .iter()
                .map(|r| r.tau.is_finite().then_some(r.tau))
                .collect(),
            pi_hat: self.pi_hat.clone(),
            selected: self.selected.clone(),
            fdr_bound: self.fdr_bound,
            pfer_bound: self.pfer_bound,
            seed: self.seed,
        }
    }
}

/// JSON form of a selection; infinite thresholds are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    pub mode: KnockoffMode,
    pub q: f64,
    #[serde(rename = "B")]
    pub b: usize,
    pub pi: f64,
    pub tau_per_replicate: Vec<Option<f64>>,
    #[serde(rename = "Pi_hat")]
    pub pi_hat: Vec<f64>,
    pub selected: Vec<usize>,
    pub fdr_bound: f64,
    pub pfer_bound: Option<f64>,
    pub seed: u64,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// One knockoff draw with seed `seed`, its statistics and its filter.
#[allow(clippy::too_many_arguments)]
pub fn single_filter(
    family: Family,
    data: KnockoffData<'_>,
    sampler: &KnockoffSampler,
    basis: &BasisExpansion,
    penalty: &PenaltySpec,
    config: &KnockoffConfig,
    seed: u64,
    lambda: Option<f64>,
    opts: &SolverOptions,
) -> Result<ReplicateSelection> {
    let x_tilde = sampler.sample_with_seed(data.target_features, seed)?;
    let phi_tilde = basis.expand_matrix(&x_tilde)?;
    let choice = match lambda {
        Some(l) => LambdaChoice::Fixed(l),
        None => LambdaChoice::CrossValidated {
            folds: config.cv_folds,
            seed: substream(seed, 1),
        },
    };
    let stats = fit_knockoff_stats(
        family,
        data.target,
        &phi_tilde,
        penalty,
        config.mode,
        data.source,
        config.statistic,
        choice,
        opts,
    )?;
    let th = knockoff_threshold(&stats.w, config.q, config.plus);
    Ok(ReplicateSelection {
        seed,
        stats,
        tau: th.tau,
        selected: th.selected,
    })
}

/// Runs `B` knockoff filters with seeds `seed + 1, ..., seed + B` and keeps
/// the features selected in at least a fraction `pi` of them.
///
/// For the coefficient statistic the cross-validated penalty of the first
/// replicate is reused by the others.
pub fn derandomize(
    family: Family,
    data: KnockoffData<'_>,
    basis: &BasisExpansion,
    penalty: &PenaltySpec,
    config: &KnockoffConfig,
    seed: u64,
    opts: &SolverOptions,
) -> Result<SelectionResult> {
    config.validate()?;
    if config.mode == KnockoffMode::KA && data.source.is_none() {
        return Err(Error::EmptyDomain("source"));
    }
    let sampler = build_sampler(data.target_features, config.shrinkage, seed)?;
    let k = basis.n_basis();

    let first = single_filter(
        family,
        data,
        &sampler,
        basis,
        penalty,
        config,
        seed.wrapping_add(1),
        None,
        opts,
    )?;
    let lambda_bar = first.stats.lambda_bar;
    let rest: Vec<ReplicateSelection> = (2..=config.replicates as u64)
        .into_par_iter()
        .map(|b| {
            single_filter(
                family,
                data,
                &sampler,
                basis,
                penalty,
                config,
                seed.wrapping_add(b),
                lambda_bar,
                opts,
            )
        })
        .collect::<Result<_>>()?;
    let mut replicates = Vec::with_capacity(config.replicates);
    replicates.push(first);
    replicates.extend(rest);

    let bf = replicates.len() as f64;
    let mut counts = vec![0usize; k];
    for r in &replicates {
        for &j in &r.selected {
            counts[j] += 1;
        }
    }
    let pi_hat: Vec<f64> = counts.iter().map(|&c| c as f64 / bf).collect();
    let selected = (0..k).filter(|&j| pi_hat[j] >= config.pi).collect();
    Ok(SelectionResult {
        mode: config.mode,
        q: config.q,
        pi: config.pi,
        pi_hat,
        selected,
        fdr_bound: fdr_bound(config.q, config.pi, replicates.len()),
        pfer_bound: pfer_bound(k, config.alpha, config.pi, replicates.len()).ok(),
        replicates,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_examples() {
        let th = knockoff_threshold(&[3.0, -1.0, 2.0, -2.0, 5.0], 0.5, true);
        assert_eq!(th.tau, 3.0);
        assert_eq!(th.selected, vec![0, 4]);

        let th = knockoff_threshold(&[-1.0, -2.0, -0.5], 0.2, true);
        assert!(th.tau.is_infinite());
        assert!(th.selected.is_empty());

        let th = knockoff_threshold(&[5.0, 4.0, 3.0, 2.0, 1.0], 0.2, true);
        assert_eq!(th.tau, 1.0);
        assert_eq!(th.selected, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn threshold_matches_enumeration() {
        // brute force: scan every |W| level and keep the smallest passing one
        let w = [0.7, -0.2, 0.0, 1.3, 0.9, -0.9, 2.2, 0.4, 0.0, 1.1];
        for &q in &[0.1, 0.25, 0.5, 0.9] {
            for plus in [false, true] {
                let mut best = f64::INFINITY;
                for &t in w.iter().map(|v: &f64| v.abs()).collect::<Vec<_>>().iter() {
                    if t == 0.0 {
                        continue;
                    }
                    let neg = w.iter().filter(|v| **v <= -t).count() as f64;
                    let pos = (w.iter().filter(|v| **v >= t).count() as f64).max(1.0);
                    if (plus as u8 as f64 + neg) / pos <= q && t < best {
                        best = t;
                    }
                }
                assert_eq!(knockoff_threshold(&w, q, plus).tau, best, "q={q} plus={plus}");
            }
        }
    }

    #[test]
    fn plain_filter_is_more_liberal() {
        let w = [3.0, 2.5, 2.0, -0.5];
        assert!(knockoff_threshold(&w, 0.3, true).selected.is_empty());
        assert_eq!(knockoff_threshold(&w, 0.3, false).selected, vec![0, 1, 2]);
    }

    #[test]
    fn bound_examples() {
        assert!((fdr_bound(0.1, 0.5, 1) - 0.2).abs() < 1e-15);
        assert!((fdr_bound(0.1, 0.5, 5) - 0.1 / 0.96875).abs() < 1e-15);
        assert!((fdr_bound(0.1, 0.5, 5) - 0.103226).abs() < 1e-6);
        assert!((fdr_bound(0.1, 1.0 - 1e-9, 3) - 0.1).abs() < 1e-12);
        let p = pfer_bound(20, 0.1, 0.6, 10).unwrap();
        assert!((p - 20.0 * (-5.0f64).exp()).abs() < 1e-14);
        assert!((p - 0.13476).abs() < 1e-5);
        assert!(pfer_bound(20, 0.1, 0.6, 10_000).unwrap() < 1e-300);
        assert!(matches!(
            pfer_bound(20, 0.3, 0.3, 10),
            Err(Error::InvalidThreshold { .. })
        ));
    }

    #[test]
    fn identity_covariance_gives_unit_s() {
        let sampler = KnockoffSampler::from_moments(DVector::zeros(3), DMatrix::identity(3, 3), 1).unwrap();
        for v in sampler.s_correlation().iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        let g = sampler.joint_covariance();
        for i in 0..3 {
            assert!(g[(i, i + 3)].abs() < 1e-12);
        }
    }

    #[test]
    fn equicorrelated_pair() {
        // eigenvalues of [[1, .5], [.5, 1]] are 1 +- 0.5
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let sampler = KnockoffSampler::from_moments(DVector::zeros(2), sigma, 1).unwrap();
        for v in sampler.s_correlation().iter() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn near_singular_is_repaired() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let sampler = KnockoffSampler::from_moments(DVector::zeros(2), sigma, 1).unwrap();
        assert!(min_eigenvalue(sampler.covariance()) >= 0.5 * PSD_FLOOR);
        let x = DMatrix::from_row_slice(2, 2, &[0.1, 0.1, -0.3, -0.3]);
        let xt = sampler.sample(&x).unwrap();
        assert!(xt.iter().all(|v| v.is_finite()));
        assert!(matches!(build_sampler(&DMatrix::zeros(1, 2), 0.1, 0), Err(Error::TooFewRows(1))));
    }

    #[test]
    fn sampling_is_deterministic() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 1.0]);
        let sampler = KnockoffSampler::from_moments(DVector::zeros(2), sigma, 9).unwrap();
        let x = DMatrix::from_fn(50, 2, |i, j| ((i * 31 + j * 17) % 13) as f64 / 6.0 - 1.0);
        assert_eq!(sampler.sample(&x).unwrap(), sampler.sample(&x).unwrap());
        assert_ne!(sampler.sample(&x).unwrap(), sampler.sample_with_seed(&x, 10).unwrap());
        assert!(matches!(
            sampler.sample(&DMatrix::zeros(3, 3)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn report_writes_null_for_infinite_tau() {
        let r = ReplicateSelection {
            seed: 1,
            stats: KnockoffStats {
                w: vec![0.0],
                z: vec![0.0],
                z_tilde: vec![0.0],
                lambda_bar: None,
            },
            tau: f64::INFINITY,
            selected: vec![],
        };
        let res = SelectionResult {
            mode: KnockoffMode::K,
            q: 0.2,
            replicates: vec![r],
            pi: 0.5,
            pi_hat: vec![0.0],
            selected: vec![],
            fdr_bound: 0.4,
            pfer_bound: None,
            seed: 0,
        };
        let json = serde_json::to_string(&res.report()).unwrap();
        assert!(json.contains("\"tau_per_replicate\":[null]"));
        assert!(json.contains("\"B\":1"));
        assert!(json.contains("\"Pi_hat\":[0.0]"));
    }
}
