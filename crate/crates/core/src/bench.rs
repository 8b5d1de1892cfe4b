//! The acceptance suite as library code, shared by the `bench` command and
//! the acceptance test target.
//!
//! Every criterion is a pure function of the base seed and a replicate
//! scale, so reports are reproducible byte for byte. Wall-clock time is
//! returned separately and never enters a report.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{split_rows, BasisExpansion};
use crate::error::Result;
use crate::evaluate::{detection_metrics, empirical_fdr, loss_recovery, mean_stderr, DEFAULT_FPR};
use crate::glm::Family;
use crate::knockoff::{
    build_sampler, fdr_bound, fit_knockoff_stats, pfer_bound, substream, KnockoffConfig, KnockoffMode,
    KnockoffSampler, LambdaChoice, Statistic,
};
use crate::methods::{run_method, Method, MethodSettings, Observed, ShiftData};
use crate::simulate::{benchmark_pair, BenchmarkSpec};
use crate::solver::{DomainData, PenaltySpec, ShiftProblem, SolverOptions};

/// Base seed and replicate scale (1.0 = the full suite).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchOptions {
    pub seed: u64,
    pub scale: f64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self { seed: 0, scale: 1.0 }
    }
}

impl BenchOptions {
    fn count(&self, full: usize) -> usize {
        ((full as f64 * self.scale).round() as usize).clamp(1, full)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionOutcome {
    pub id: u32,
    pub name: String,
    pub requirement: String,
    pub passed: bool,
    pub measured: BTreeMap<String, f64>,
}

impl CriterionOutcome {
    fn new(id: u32, name: &str, requirement: &str) -> Self {
        Self {
            id,
            name: name.into(),
            requirement: requirement.into(),
            passed: true,
            measured: BTreeMap::new(),
        }
    }

    pub fn record(&mut self, key: &str, value: f64) -> &mut Self {
        self.measured.insert(key.into(), value);
        self
    }

    /// Records `value` and fails the criterion unless `ok`.
    pub fn check(&mut self, key: &str, value: f64, ok: bool) -> &mut Self {
        self.passed &= ok;
        self.record(key, value)
    }

    pub fn line(&self) -> String {
        let vals: Vec<String> = self.measured.iter().map(|(k, v)| format!("{k}={v}")).collect();
        format!(
            "[{}] criterion {}: {} ({}) {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.requirement,
            vals.join(" ")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub scale: f64,
    pub criteria: Vec<CriterionOutcome>,
    pub all_passed: bool,
}

/// Per-method detection results of the default benchmark.
#[derive(Debug, Clone)]
pub struct MethodSweep {
    pub replicates: usize,
    pub auc: BTreeMap<Method, Vec<f64>>,
    pub recall: BTreeMap<Method, Vec<f64>>,
    pub elapsed: BTreeMap<Method, Duration>,
}

impl MethodSweep {
    pub fn mean_auc(&self, m: Method) -> f64 {
        mean_stderr(&self.auc[&m]).0
    }

    pub fn mean_recall(&self, m: Method) -> f64 {
        mean_stderr(&self.recall[&m]).0
    }
}

/// Runs `methods` on replicates `seed + r` of the default benchmark.
pub fn method_sweep(opts: &BenchOptions, methods: &[Method], replicates: usize) -> Result<MethodSweep> {
    let spec = BenchmarkSpec::default();
    let basis = BasisExpansion::linear(spec.covariates.p);
    let settings = MethodSettings::default();
    let mut sweep = MethodSweep {
        replicates,
        auc: BTreeMap::new(),
        recall: BTreeMap::new(),
        elapsed: BTreeMap::new(),
    };
    let runs: Vec<Vec<(Method, f64, f64, Duration)>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let seed = opts.seed.wrapping_add(r);
            let pair = benchmark_pair(&spec, seed)?;
            let data = ShiftData::from_pair(&pair);
            methods
                .iter()
                .map(|&m| {
                    let start = Instant::now();
                    let out = run_method(m, spec.family, &data, &basis, &settings, seed)?;
                    let took = start.elapsed();
                    let d = detection_metrics(&out.scores, &pair.truth, DEFAULT_FPR, None)?;
                    Ok((m, d.auc, d.recall_at_fpr, took))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    for (m, auc, recall, took) in runs.into_iter().flatten() {
        sweep.auc.entry(m).or_default().push(auc);
        sweep.recall.entry(m).or_default().push(recall);
        *sweep.elapsed.entry(m).or_default() += took;
    }
    Ok(sweep)
}

pub const SWEEP_REPLICATES: usize = 50;

/// Criterion 1 from a sweep containing the knockoff methods.
pub fn detection_power(sweep: &MethodSweep) -> CriterionOutcome {
    let mut c = CriterionOutcome::new(
        1,
        "detection power",
        "mean AUC of sgshift-k >= 0.85 and mean recall@10%FPR of sgshift-ka >= 0.80",
    );
    let auc = sweep.mean_auc(Method::SgShiftK);
    let rec = sweep.mean_recall(Method::SgShiftKA);
    c.record("replicates", sweep.replicates as f64)
        .check("sgshift_k_auc", auc, auc >= 0.85)
        .check("sgshift_ka_recall", rec, rec >= 0.80);
    c
}

/// Criterion 2 from a sweep containing every method.
pub fn method_ordering(sweep: &MethodSweep) -> CriterionOutcome {
    let mut c = CriterionOutcome::new(
        2,
        "method ordering",
        "mean AUC sgshift-k >= sgshift-a >= sgshift >= diff-baseline, gaps >= -0.02",
    );
    c.record("replicates", sweep.replicates as f64);
    let chain = [Method::SgShiftK, Method::SgShiftA, Method::SgShift, Method::DiffBaseline];
    for m in chain {
        c.record(&format!("auc_{}", m.name()), sweep.mean_auc(m));
    }
    for w in chain.windows(2) {
        let gap = sweep.mean_auc(w[0]) - sweep.mean_auc(w[1]);
        c.check(&format!("gap_{}_vs_{}", w[0].name(), w[1].name()), gap, gap >= -0.02);
    }
    c
}

/// Criterion 3: derandomized FDR and null selection size.
///
/// Uses the absorbing variant: the matched base model still carries
/// finite-sample error, which is a genuine (dense, small) target-vs-base
/// difference that only the absorption term separates from the planted
/// shift.
pub fn fdr_control(opts: &BenchOptions) -> Result<CriterionOutcome> {
    let reps = opts.count(200);
    let mut c = CriterionOutcome::new(
        3,
        "FDR control",
        "sgshift-ka, q=0.2, B=11, pi=0.5: mean FDP <= 0.25; null data mean selection size <= 0.5",
    );
    let settings = MethodSettings {
        knockoff: KnockoffConfig {
            q: 0.2,
            replicates: 11,
            pi: 0.5,
            ..KnockoffConfig::default()
        },
        ..MethodSettings::default()
    };
    let spec = BenchmarkSpec::default();
    let null_spec = BenchmarkSpec { a: 0, ..spec.clone() };
    let basis = BasisExpansion::linear(spec.covariates.p);
    let base = substream(opts.seed, 3);
    let method = Method::SgShiftKA;
    let runs: Vec<(f64, f64)> = (0..reps as u64)
        .into_par_iter()
        .map(|r| {
            let seed = base.wrapping_add(r);
            let pair = benchmark_pair(&spec, seed)?;
            let out = run_method(method, spec.family, &ShiftData::from_pair(&pair), &basis, &settings, seed)?;
            let fdp = empirical_fdr(&out.selection.expect("knockoff method").selected, &pair.truth);

            let null = benchmark_pair(&null_spec, seed)?;
            let out = run_method(method, spec.family, &ShiftData::from_pair(&null), &basis, &settings, seed)?;
            Ok((fdp, out.selection.expect("knockoff method").selected.len() as f64))
        })
        .collect::<Result<_>>()?;
    let (fdp, null_sizes): (Vec<f64>, Vec<f64>) = runs.into_iter().unzip();
    let (fdr, _) = mean_stderr(&fdp);
    let (size, _) = mean_stderr(&null_sizes);
    c.record("replicates", reps as f64)
        .record("fdr_bound", fdr_bound(0.2, 0.5, 11))
        .check("empirical_fdr", fdr, fdr <= 0.25)
        .check("null_mean_selected", size, size <= 0.5);
    Ok(c)
}

fn standard_normal_matrix(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| rng.sample(StandardNormal))
}

/// Squared error of the Gaussian shift estimate at
/// `lambda = sqrt(2 log K / n_T)` with the exact base offset.
pub fn scaling_error(n_t: usize, k: usize, a: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = standard_normal_matrix(n_t, k, &mut rng);
    let base = DVector::from_fn(k, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
    let mut idx: Vec<usize> = (0..k).collect();
    idx.shuffle(&mut rng);
    let mut delta = DVector::zeros(k);
    for &j in &idx[..a] {
        delta[j] = if rng.random::<bool>() { 1.0 } else { -1.0 };
    }
    let offset = &x * &base;
    let noise = DVector::from_fn(n_t, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &offset + &x * &delta + noise;
    let lambda = (2.0 * (k as f64).ln() / n_t as f64).sqrt();
    let problem = ShiftProblem::target_only(
        Family::Gaussian,
        DomainData::new(&x, y.as_slice(), offset.as_slice())?,
        None,
    )?;
    let path = problem.fit_lambdas(&[lambda], &SolverOptions::default())?;
    let est = &path.deltas[0];
    Ok((0..k).map(|j| (est[j] - delta[j]).powi(2)).sum())
}

/// Criterion 4: error at `n_T = 4000` relative to `n_T = 1000`.
pub fn convergence_scaling(opts: &BenchOptions) -> Result<CriterionOutcome> {
    let seeds = opts.count(50);
    let mut c = CriterionOutcome::new(
        4,
        "convergence scaling",
        "Gaussian, K=50, a=5: mean squared error ratio n_T=4000 vs 1000 in [1/6, 1/2.5]",
    );
    let base = substream(opts.seed, 4);
    let pairs: Vec<(f64, f64)> = (0..seeds as u64)
        .into_par_iter()
        .map(|r| {
            Ok((
                scaling_error(1000, 50, 5, base.wrapping_add(2 * r))?,
                scaling_error(4000, 50, 5, base.wrapping_add(2 * r + 1))?,
            ))
        })
        .collect::<Result<_>>()?;
    let (small, large): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
    let (ms, _) = mean_stderr(&small);
    let (ml, _) = mean_stderr(&large);
    let ratio = ml / ms;
    c.record("seeds", seeds as f64)
        .record("mse_n1000", ms)
        .record("mse_n4000", ml)
        .check("ratio", ratio, (1.0 / 6.0..=1.0 / 2.5).contains(&ratio));
    Ok(c)
}

/// Largest entrywise gap between the empirical covariance of `[X X~]` and
/// the sampler's joint covariance, on `n` Gaussian rows.
pub fn joint_covariance_error(sigma: &DMatrix<f64>, n: usize, seed: u64) -> Result<f64> {
    let p = sigma.nrows();
    let sampler = KnockoffSampler::from_moments(DVector::zeros(p), sigma.clone(), substream(seed, 1))?;
    let l = sigma.clone().cholesky().expect("positive definite").l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = standard_normal_matrix(n, p, &mut rng) * l.transpose();
    let xt = sampler.sample(&x)?;
    let mut joint = DMatrix::zeros(n, 2 * p);
    joint.columns_mut(0, p).copy_from(&x);
    joint.columns_mut(p, p).copy_from(&xt);
    let means = DVector::from_iterator(2 * p, joint.column_iter().map(|c| c.mean()));
    for (j, mut col) in joint.column_iter_mut().enumerate() {
        col.add_scalar_mut(-means[j]);
    }
    let emp = joint.tr_mul(&joint) / (n as f64 - 1.0);
    Ok((emp - sampler.joint_covariance()).amax())
}

/// Two-sided 95% acceptance region of Binomial(n, 1/2).
pub fn binomial_band(n: usize) -> (usize, usize) {
    let ln_choose = |k: usize| -> f64 {
        (1..=k).map(|i| ((n - k + i) as f64 / i as f64).ln()).sum()
    };
    let pmf: Vec<f64> = (0..=n).map(|k| (ln_choose(k) - n as f64 * 2f64.ln()).exp()).collect();
    let mut lo = 0;
    let mut tail = 0.0;
    while tail + pmf[lo] <= 0.025 {
        tail += pmf[lo];
        lo += 1;
    }
    (lo, n - lo)
}

/// Path-entry statistic of feature 0 on null Gaussian data.
fn null_statistic(seed: u64) -> Result<f64> {
    let (n, p) = (200, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = standard_normal_matrix(n, p, &mut rng);
    let mut x = z.clone();
    for j in 1..p {
        for i in 0..n {
            x[(i, j)] = 0.3 * x[(i, j - 1)] + (1.0f64 - 0.09).sqrt() * z[(i, j)];
        }
    }
    let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let offset = vec![0.0; n];
    let sampler = build_sampler(&x, KnockoffConfig::default().shrinkage, substream(seed, 1))?;
    let xt = sampler.sample(&x)?;
    let stats = fit_knockoff_stats(
        Family::Gaussian,
        DomainData::new(&x, &y, &offset)?,
        &xt,
        &PenaltySpec::relative(50, 0.01, 0.5),
        KnockoffMode::K,
        None,
        Statistic::PathEntry,
        LambdaChoice::Fixed(0.0),
        &SolverOptions::default(),
    )?;
    Ok(stats.w[0])
}

/// Criterion 5: joint covariance fidelity and null sign symmetry.
pub fn knockoff_fidelity(opts: &BenchOptions) -> Result<CriterionOutcome> {
    let rows = ((100_000.0 * opts.scale).round() as usize).clamp(2_000, 100_000);
    let draws = opts.count(200);
    let mut c = CriterionOutcome::new(
        5,
        "knockoff construction fidelity",
        "max |Cov([X X~]) - G| < 0.02 at 100k rows (identity, rho=0.5); null W sign count in 95% binomial band",
    );
    let p = 10;
    let identity = DMatrix::identity(p, p);
    let equi = DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { 0.5 });
    let base = substream(opts.seed, 5);
    let e_id = joint_covariance_error(&identity, rows, base)?;
    let e_eq = joint_covariance_error(&equi, rows, base.wrapping_add(1))?;
    c.record("rows", rows as f64)
        .check("max_error_identity", e_id, e_id < 0.02)
        .check("max_error_equicorrelated", e_eq, e_eq < 0.02);

    let ws: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map(|r| null_statistic(base.wrapping_add(1000 + r)))
        .collect::<Result<_>>()?;
    let nonzero = ws.iter().filter(|w| **w != 0.0).count();
    let pos = ws.iter().filter(|w| **w > 0.0).count();
    let (lo, hi) = binomial_band(nonzero);
    c.record("draws", draws as f64)
        .record("nonzero_w", nonzero as f64)
        .record("band_low", lo as f64)
        .record("band_high", hi as f64)
        .check("positive_w", pos as f64, nonzero > 0 && (lo..=hi).contains(&pos));
    Ok(c)
}

/// Fraction of the held-out loss gap recovered with at most `a` active
/// features, on one benchmark replicate.
pub fn recovery_fraction(spec: &BenchmarkSpec, seed: u64) -> Result<f64> {
    let pair = benchmark_pair(spec, seed)?;
    let data = ShiftData::from_pair(&pair);
    let rows: Vec<usize> = (0..data.target.n_rows()).collect();
    let (train, hold) = split_rows(&rows, 0.2, substream(seed, 6));
    let tr: Observed = data.target.select(&train);
    let ho: Observed = data.target.select(&hold);
    let path = crate::solver::fit_sgshift(
        spec.family,
        DomainData::new(&tr.x, &tr.y, &tr.offset)?,
        &PenaltySpec::default(),
        &SolverOptions::default(),
    )?;
    let curve = loss_recovery(spec.family, &path, DomainData::new(&ho.x, &ho.y, &ho.offset)?, &tr.x, &tr.y)?;
    Ok(curve.recovered_fraction(spec.a).unwrap_or(0.0))
}

/// Criterion 6: loss recovered by the first `a` entering features.
pub fn recovery_elbow(opts: &BenchOptions) -> Result<CriterionOutcome> {
    let seeds = opts.count(100);
    let mut c = CriterionOutcome::new(
        6,
        "sparse recovery elbow",
        "first a entering features recover >= 70% of the holdout loss gap in >= 80% of seeds",
    );
    let spec = BenchmarkSpec::default();
    let base = substream(opts.seed, 6);
    let fractions: Vec<f64> = (0..seeds as u64)
        .into_par_iter()
        .map(|r| recovery_fraction(&spec, base.wrapping_add(r)))
        .collect::<Result<_>>()?;
    let hits = fractions.iter().filter(|f| **f >= 0.7).count() as f64 / seeds as f64;
    let (mean, _) = mean_stderr(&fractions);
    c.record("seeds", seeds as f64)
        .record("mean_fraction", mean)
        .check("share_of_seeds", hits, hits >= 0.8);
    Ok(c)
}

/// Worst-case solver checks on one random instance: `(max KKT residual on
/// the path, gradient relative error, largest |coefficient| at or above
/// lambda_max)`.
pub fn solver_instance(seed: u64) -> Result<(f64, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let family = if rng.random::<bool>() { Family::Gaussian } else { Family::Binomial };
    let n = rng.random_range(30..200);
    let k = rng.random_range(2..20);
    let stacked = rng.random::<bool>();
    let draw = |rng: &mut ChaCha8Rng, n: usize| {
        let x = standard_normal_matrix(n, k, rng);
        let offset: Vec<f64> = (0..n).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let eta: Vec<f64> = (0..n).map(|i| offset[i] + 0.8 * x[(i, 0)] - 0.5 * x[(i, k - 1)]).collect();
        let y: Vec<f64> = eta
            .iter()
            .map(|&e| match family {
                Family::Gaussian => e + rng.sample::<f64, _>(StandardNormal),
                Family::Binomial => f64::from(rng.random::<f64>() < family.mean(e)),
            })
            .collect();
        Observed { x, y, offset }
    };
    let target = draw(&mut rng, n);
    let source = draw(&mut rng, n);
    let td = DomainData::new(&target.x, &target.y, &target.offset)?;
    let sp = if stacked {
        let ratio = rng.random_range(0.1..0.9);
        ShiftProblem::stacked(family, DomainData::new(&source.x, &source.y, &source.offset)?, td, None, ratio)?
    } else {
        ShiftProblem::target_only(family, td, None)?
    };
    let problem = &sp.problem;
    let opts = SolverOptions::default();
    let pen = PenaltySpec::relative(30, 0.05, 0.5);
    let path = sp.fit(&pen, &opts)?;

    // recompute residuals from the coefficients instead of trusting the
    // solver's own diagnostics
    let raw = problem.fit_path(&path.lambdas, &opts)?;
    let kkt = raw
        .lambdas
        .iter()
        .zip(&raw.coefs)
        .map(|(&l, b)| problem.kkt_residual(&problem.state_from(b), l))
        .fold(0.0, f64::max);

    let m = problem.design().n_cols();
    let beta: Vec<f64> = (0..m).map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal)).collect();
    let grad = problem.gradient(&problem.state_from(&beta));
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let scale = grad.iter().fold(0.0f64, |a, g| a.max(g.abs())).max(1e-8);
    for j in 0..m {
        let mut up = beta.clone();
        let mut dn = beta.clone();
        up[j] += h;
        dn[j] -= h;
        let fd = (problem.mean_loss(&problem.linear_predictor(&up)) - problem.mean_loss(&problem.linear_predictor(&dn)))
            / (2.0 * h);
        worst = worst.max((fd - grad[j]).abs() / scale);
    }

    let lmax = raw.lambda_max;
    let pf = problem.penalty_factors();
    let mut above: f64 = 0.0;
    for l in [lmax * (1.0 + 1e-8), 1.5 * lmax, 10.0 * lmax] {
        let mut state = problem.zero_state();
        problem.solve(l, &mut state, &opts)?;
        for (b, f) in state.beta.iter().zip(pf) {
            if *f > 0.0 {
                above = above.max(b.abs());
            }
        }
    }
    let at = problem.fit_path(&[lmax], &opts)?;
    for (b, f) in at.coefs[0].iter().zip(pf) {
        if *f > 0.0 {
            above = above.max(b.abs());
        }
    }
    Ok((kkt, worst, above))
}

/// Criterion 7: KKT residuals, gradient accuracy, and zero solutions above
/// lambda_max on random instances.
pub fn solver_correctness(opts: &BenchOptions) -> Result<CriterionOutcome> {
    let instances = opts.count(100);
    let mut c = CriterionOutcome::new(
        7,
        "solver correctness",
        "KKT <= 1e-6 at every path point; gradient vs finite differences < 1e-6; delta = 0 at lambda >= lambda_max",
    );
    let base = substream(opts.seed, 7);
    let worst: Vec<(f64, f64, f64)> = (0..instances as u64)
        .into_par_iter()
        .map(|r| solver_instance(base.wrapping_add(r)))
        .collect::<Result<_>>()?;
    let (mut kkt, mut grad, mut above) = (0.0f64, 0.0f64, 0.0f64);
    for (a, b, d) in worst {
        kkt = kkt.max(a);
        grad = grad.max(b);
        above = above.max(d);
    }
    c.record("instances", instances as f64)
        .check("max_kkt", kkt, kkt <= 1e-6)
        .check("max_gradient_rel_error", grad, grad < 1e-6)
        .check("max_coef_above_lambda_max", above, above == 0.0);
    Ok(c)
}

/// `(q, pi, B, alpha, n_nulls, fdr_bound, pfer_bound)` evaluated with
/// 50-digit arithmetic.
pub const BOUND_REFERENCE: [(f64, f64, usize, f64, usize, f64, f64); 20] = [
    (0.05, 0.5, 1, 0.1, 20, 0.1, 14.522980741473818497),
    (0.1, 0.5, 5, 0.1, 20, 0.10322580645161290323, 4.0379303598931081697),
    (0.2, 0.5, 11, 0.1, 30, 0.20009770395701025892, 0.88798305503676001459),
    (0.2, 0.6, 11, 0.2, 30, 0.2000083889598584789, 0.88798305503676001459),
    (0.1, 0.6, 31, 0.05, 64, 0.10000000000004611686, 4.5812813709734554965e-7),
    (0.3, 0.75, 5, 0.45, 100, 0.30029325513196480938, 40.656965974059911188),
    (0.2, 0.9, 101, 0.2, 30, 0.2, 3.0949485654751072156e-42),
    (0.05, 0.55, 11, 0.3, 5, 0.050007662565624407312, 1.2641979790237323891),
    (0.15, 0.51, 7, 0.5, 12, 0.15102428152289268732, 11.983211754513920262),
    (0.25, 0.99, 3, 0.01, 1, 0.25000025000025000025, 0.0031435579985537703042),
    (0.01, 0.7, 500, 0.1, 50, 0.01, 2.2540135328033709217e-155),
    (0.4, 0.35, 9, 0.25, 8, 0.40845998766222590298, 6.6821616912901761705),
    (0.2, 0.5, 31, 0.1, 30, 0.2000000000931322575, 0.0014754347035515387725),
    (0.1, 0.8, 2, 0.6, 40, 0.10416666666666666667, 34.085751558648453538),
    (0.05, 0.65, 51, 0.15, 64, 0.05, 5.3910168028599343398e-10),
    (0.3, 0.95, 13, 0.9, 7, 0.30000000000000000366, 6.5594722436418240296),
    (0.12, 0.52, 21, 0.02, 33, 0.12000002427992376586, 0.00090870282854165620929),
    (0.2, 0.501, 1001, 0.5, 200, 0.2, 199.60000053306634695),
    (0.08, 0.33, 17, 0.11, 15, 0.080088479303122063478, 2.8934518498709902211),
    (0.5, 0.6, 4, 0.35, 3, 0.51313628899835796388, 1.8195919791379002708),
];

/// Criterion 8: bound calculators against the high-precision table.
pub fn bound_accuracy() -> Result<CriterionOutcome> {
    let mut c = CriterionOutcome::new(
        8,
        "bound calculators",
        "fdr_bound and pfer_bound match 50-digit references to 12 significant digits on 20 points",
    );
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let (mut fdr_err, mut pfer_err) = (0.0f64, 0.0f64);
    for &(q, pi, b, alpha, n, f_ref, p_ref) in &BOUND_REFERENCE {
        fdr_err = fdr_err.max(rel(fdr_bound(q, pi, b), f_ref));
        pfer_err = pfer_err.max(rel(pfer_bound(n, alpha, pi, b)?, p_ref));
    }
    c.record("points", BOUND_REFERENCE.len() as f64)
        .check("max_rel_error_fdr", fdr_err, fdr_err < 5e-13)
        .check("max_rel_error_pfer", pfer_err, pfer_err < 5e-13);
    Ok(c)
}

/// Scale used by the in-report determinism check.
pub const DETERMINISM_SCALE: f64 = 0.01;

/// Criteria 1-8 as a serialized report.
pub fn core_report(opts: &BenchOptions) -> Result<(Vec<CriterionOutcome>, BTreeMap<Method, Duration>)> {
    let sweep = method_sweep(opts, &Method::ALL, opts.count(SWEEP_REPLICATES))?;
    let criteria = vec![
        detection_power(&sweep),
        method_ordering(&sweep),
        fdr_control(opts)?,
        convergence_scaling(opts)?,
        knockoff_fidelity(opts)?,
        recovery_elbow(opts)?,
        solver_correctness(opts)?,
        bound_accuracy()?,
    ];
    Ok((criteria, sweep.elapsed))
}

/// Criterion 9: two runs of criteria 1-8 at a small scale serialize to the
/// same bytes.
pub fn determinism(seed: u64) -> Result<CriterionOutcome> {
    let mut c = CriterionOutcome::new(9, "determinism", "identical seeds give byte-identical reports");
    let opts = BenchOptions {
        seed,
        scale: DETERMINISM_SCALE,
    };
    let a = serde_json::to_vec(&core_report(&opts)?.0)?;
    let b = serde_json::to_vec(&core_report(&opts)?.0)?;
    c.record("bytes", a.len() as f64).check("identical", f64::from(u8::from(a == b)), a == b);
    Ok(c)
}

/// Runs all nine criteria.
pub fn run_all(opts: &BenchOptions) -> Result<(BenchReport, BTreeMap<Method, Duration>)> {
    let (mut criteria, elapsed) = core_report(opts)?;
    criteria.push(determinism(opts.seed)?);
    let all_passed = criteria.iter().all(|c| c.passed);
    Ok((
        BenchReport {
            seed: opts.seed,
            scale: opts.scale,
            criteria,
            all_passed,
        },
        elapsed,
    ))
}
