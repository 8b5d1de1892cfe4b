use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sgshift_core::bench::{run_all, BenchOptions};
use sgshift_core::data::{load_csv, split_rows, standardize, BasisExpansion, DomainTags, TabularDataset};
use sgshift_core::evaluate::{detection_metrics, loss_recovery, mean_stderr, DetectionMetrics, LossCurve};
use sgshift_core::glm::{load_offsets, write_offsets, Family};
use sgshift_core::knockoff::{substream, KnockoffMode};
use sgshift_core::methods::{run_method, Method, MethodOutput, ShiftData};
use sgshift_core::simulate::{benchmark_pair, TruthFile};
use sgshift_core::solver::{fit_sgshift, fit_sgshift_absorb, path_ranking, DeltaPath, DomainData};
use sgshift_core::{Error, Result};

use crate::config::RunConfig;

/// Writes through a temporary sibling and renames, so readers never see a
/// partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(match path.extension() {
        Some(e) => format!("{}.tmp", e.to_string_lossy()),
        None => "tmp".into(),
    });
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn out_dir(dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.to_path_buf())
}

fn tags(cfg: &RunConfig) -> DomainTags {
    DomainTags {
        source: cfg.source_tag.clone(),
        target: cfg.target_tag.clone(),
    }
}

fn csv_bytes(cfg: &RunConfig, ds: &TabularDataset) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    sgshift_core::data::write_csv(ds, &mut buf, &cfg.label_column, &cfg.domain_column, &tags(cfg))?;
    Ok(buf)
}

pub fn simulate(cfg: &RunConfig) -> Result<ExitCode> {
    let pair = benchmark_pair(&cfg.benchmark(), cfg.seed)?;
    let dir = out_dir(&cfg.out)?;
    write_atomic(&dir.join("source.csv"), &csv_bytes(cfg, &pair.source)?)?;
    write_atomic(&dir.join("target.csv"), &csv_bytes(cfg, &pair.target)?)?;
    write_atomic(&dir.join("data.csv"), &csv_bytes(cfg, &pair.combined()?)?)?;
    let mut offsets = Vec::new();
    write_offsets(&pair.combined_offsets(), &mut offsets).map_err(|e| Error::io("<offsets>", e))?;
    write_atomic(&dir.join("offsets.txt"), &offsets)?;
    write_json(&dir.join("truth.json"), &TruthFile::from_pair(&pair, cfg.seed))?;
    Ok(ExitCode::SUCCESS)
}

/// Loaded input: shift data plus feature names.
struct Input {
    data: ShiftData,
    names: Vec<String>,
}

fn load_input(cfg: &RunConfig) -> Result<Input> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("--data is required".into()))?;
    let mut ds = load_csv(path, &cfg.label_column, &cfg.domain_column, &tags(cfg))?;
    if cfg.standardize {
        ds = standardize(&ds)?;
    }
    let offsets = match &cfg.offsets {
        Some(p) => Some(load_offsets(p, ds.n_rows())?),
        None => None,
    };
    Ok(Input {
        data: ShiftData::from_dataset(cfg.family, &ds, offsets.as_ref())?,
        names: ds.feature_names().to_vec(),
    })
}

fn run(cfg: &RunConfig, method: Method, data: &ShiftData) -> Result<MethodOutput> {
    let basis = BasisExpansion::linear(data.target.x.ncols());
    run_method(method, cfg.family, data, &basis, &cfg.method_settings(), cfg.seed)
}

fn path_csv(path: &DeltaPath, names: &[String]) -> String {
    let mut s = String::from("lambda,basis_index,feature_name,delta,omega\n");
    for (step, lambda) in path.lambdas.iter().enumerate() {
        for (k, name) in names.iter().enumerate().take(path.n_basis()) {
            let omega = path.omegas.as_ref().map_or(String::new(), |o| o[step][k].to_string());
            s.push_str(&format!("{lambda},{k},{name},{},{omega}\n", path.deltas[step][k]));
        }
    }
    s
}

#[derive(Serialize)]
struct FeatureScore<'a> {
    index: usize,
    name: &'a str,
    score: f64,
    rank: usize,
}

#[derive(Serialize)]
struct ScoresFile<'a> {
    method: &'static str,
    family: Family,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda_max: Option<f64>,
    features: Vec<FeatureScore<'a>>,
}

fn ranking(out: &MethodOutput) -> Vec<usize> {
    match &out.path {
        Some(p) => path_ranking(p),
        None => {
            let mut order: Vec<usize> = (0..out.scores.len()).collect();
            order.sort_by(|&a, &b| out.scores[b].total_cmp(&out.scores[a]).then(a.cmp(&b)));
            order
        }
    }
}

fn scores_file<'a>(cfg: &RunConfig, out: &MethodOutput, names: &'a [String]) -> ScoresFile<'a> {
    let mut rank = vec![0; out.scores.len()];
    for (r, k) in ranking(out).into_iter().enumerate() {
        rank[k] = r + 1;
    }
    ScoresFile {
        method: out.method.name(),
        family: cfg.family,
        lambda_max: out.path.as_ref().map(|p| p.lambda_max),
        features: out
            .scores
            .iter()
            .enumerate()
            .map(|(k, &score)| FeatureScore {
                index: k,
                name: &names[k],
                score,
                rank: rank[k],
            })
            .collect(),
    }
}

pub fn fit(cfg: &RunConfig) -> Result<ExitCode> {
    let input = load_input(cfg)?;
    let out = run(cfg, cfg.method, &input.data)?;
    let dir = out_dir(&cfg.out)?;
    if let Some(path) = &out.path {
        write_atomic(&dir.join("path.csv"), path_csv(path, &input.names).as_bytes())?;
    }
    if let Some(sel) = &out.selection {
        write_json(&dir.join("selection.json"), &sel.report())?;
    }
    write_json(&dir.join("scores.json"), &scores_file(cfg, &out, &input.names))?;
    Ok(ExitCode::SUCCESS)
}

pub fn select(cfg: &RunConfig) -> Result<ExitCode> {
    if cfg.method.knockoff_mode().is_none() {
        return Err(Error::InvalidConfig(format!(
            "select needs a knockoff method (sgshift-k or sgshift-ka), got {}",
            cfg.method
        )));
    }
    let input = load_input(cfg)?;
    let out = run(cfg, cfg.method, &input.data)?;
    let sel = out.selection.as_ref().expect("knockoff methods select");
    write_json(&out_dir(&cfg.out)?.join("selection.json"), &sel.report())?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Serialize, Deserialize)]
struct LossSummary {
    reference_source_only: f64,
    reference_target_only: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    loss_at_a: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    recovered_fraction_at_a: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MetricsFile {
    method: String,
    family: Family,
    seed: u64,
    n_target_train: usize,
    n_holdout: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    detection: Option<DetectionMetrics>,
    loss: LossSummary,
    /// Flat numeric view, the input to aggregation.
    summary: BTreeMap<String, f64>,
}

/// Path used for the loss curve: the method's own path, or the path of its
/// non-knockoff counterpart.
fn curve_path(cfg: &RunConfig, out: &MethodOutput, data: &ShiftData, basis: &BasisExpansion) -> Result<DeltaPath> {
    match (out.method, &out.path) {
        (Method::SgShift | Method::SgShiftA, Some(p)) => Ok(p.clone()),
        _ => {
            let penalty = cfg.penalty();
            let opts = cfg.method_settings().solver;
            let phi_t = basis.expand_matrix(&data.target.x)?;
            let target = DomainData::new(&phi_t, &data.target.y, &data.target.offset)?;
            if out.method.knockoff_mode() == Some(KnockoffMode::KA) {
                let src = data.source.as_ref().ok_or(Error::EmptyDomain("source"))?;
                let phi_s = basis.expand_matrix(&src.x)?;
                let source = DomainData::new(&phi_s, &src.y, &src.offset)?;
                fit_sgshift_absorb(cfg.family, source, target, &penalty, &opts)
            } else {
                fit_sgshift(cfg.family, target, &penalty, &opts)
            }
        }
    }
}

/// Fits on a training split of the target rows, scores against `truth`
/// when given, and traces held-out loss along the path.
fn evaluate_one(
    cfg: &RunConfig,
    data: &ShiftData,
    truth: Option<&[bool]>,
    seed: u64,
) -> Result<(MetricsFile, LossCurve)> {
    let n_t = data.target.n_rows();
    let (train, hold) = split_rows(&(0..n_t).collect::<Vec<_>>(), cfg.holdout, substream(seed, 20));
    if hold.is_empty() {
        return Err(Error::EmptyHoldout);
    }
    let train_data = ShiftData {
        source: data.source.clone(),
        target: data.target.select(&train),
    };
    let holdout = data.target.select(&hold);
    let basis = BasisExpansion::linear(data.target.x.ncols());
    let out = run_method(cfg.method, cfg.family, &train_data, &basis, &cfg.method_settings(), seed)?;

    let detection = match truth {
        Some(t) if t.iter().any(|v| *v) && !t.iter().all(|v| *v) => {
            let selected = out.selection.as_ref().map(|s| s.selected.as_slice());
            Some(detection_metrics(&out.scores, t, cfg.fpr, selected)?)
        }
        _ => None,
    };

    let path = curve_path(cfg, &out, &train_data, &basis)?;
    let phi_h = basis.expand_matrix(&holdout.x)?;
    let phi_train = basis.expand_matrix(&train_data.target.x)?;
    let curve = loss_recovery(
        cfg.family,
        &path,
        DomainData::new(&phi_h, &holdout.y, &holdout.offset)?,
        &phi_train,
        &train_data.target.y,
    )?;
    let a = truth.map(|t| t.iter().filter(|v| **v).count()).filter(|a| *a > 0);
    let loss = LossSummary {
        reference_source_only: curve.reference_source_only,
        reference_target_only: curve.reference_target_only,
        loss_at_a: a.and_then(|a| curve.loss_with_at_most(a)),
        recovered_fraction_at_a: a.and_then(|a| curve.recovered_fraction(a)),
    };

    let mut summary = BTreeMap::new();
    if let Some(d) = &detection {
        summary.insert("auc".into(), d.auc);
        summary.insert("recall_at_fpr".into(), d.recall_at_fpr);
        if let Some(f) = d.empirical_fdr {
            summary.insert("empirical_fdr".into(), f);
        }
    }
    if let Some(sel) = &out.selection {
        summary.insert("n_selected".into(), sel.selected.len() as f64);
    }
    summary.insert("reference_source_only".into(), loss.reference_source_only);
    summary.insert("reference_target_only".into(), loss.reference_target_only);
    if let Some(v) = loss.loss_at_a {
        summary.insert("loss_at_a".into(), v);
    }
    if let Some(v) = loss.recovered_fraction_at_a {
        summary.insert("recovered_fraction_at_a".into(), v);
    }
    let metrics = MetricsFile {
        method: cfg.method.name().into(),
        family: cfg.family,
        seed,
        n_target_train: train.len(),
        n_holdout: hold.len(),
        detection,
        loss,
        summary,
    };
    Ok((metrics, curve))
}

fn write_evaluation(dir: &Path, metrics: &MetricsFile, curve: &LossCurve) -> Result<()> {
    write_json(&dir.join("metrics.json"), metrics)?;
    write_atomic(&dir.join("loss_curve.csv"), curve.to_csv().as_bytes())
}

#[derive(Debug, Serialize)]
struct Aggregate {
    n: usize,
    mean: f64,
    stderr: Option<f64>,
}

#[derive(Debug, Serialize)]
struct AggregateFile {
    method: String,
    replicates: usize,
    metrics: BTreeMap<String, Aggregate>,
}

fn aggregate(cfg: &RunConfig, runs: &[MetricsFile]) -> AggregateFile {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in runs {
        for (k, v) in &m.summary {
            values.entry(k.clone()).or_default().push(*v);
        }
    }
    let metrics = values
        .into_iter()
        .map(|(k, v)| {
            let (mean, se) = mean_stderr(&v);
            (
                k,
                Aggregate {
                    n: v.len(),
                    mean,
                    stderr: se.is_finite().then_some(se),
                },
            )
        })
        .collect();
    AggregateFile {
        method: cfg.method.name().into(),
        replicates: runs.len(),
        metrics,
    }
}

pub fn evaluate(cfg: &RunConfig) -> Result<ExitCode> {
    let dir = out_dir(&cfg.out)?;
    if cfg.data.is_some() {
        if cfg.replicates > 1 {
            return Err(Error::InvalidConfig(
                "--replicates applies to simulated benchmarks; omit --data".into(),
            ));
        }
        let input = load_input(cfg)?;
        let truth = match &cfg.truth {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                let tf: TruthFile = serde_json::from_str(&text)?;
                Some(tf.truth(input.names.len())?)
            }
            None => None,
        };
        let (metrics, curve) = evaluate_one(cfg, &input.data, truth.as_deref(), cfg.seed)?;
        write_evaluation(&dir, &metrics, &curve)?;
        return Ok(ExitCode::SUCCESS);
    }

    let spec = cfg.benchmark();
    let mut runs = Vec::with_capacity(cfg.replicates);
    for r in 0..cfg.replicates {
        let seed = cfg.seed + r as u64;
        let pair = benchmark_pair(&spec, seed)?;
        let (metrics, curve) = evaluate_one(cfg, &ShiftData::from_pair(&pair), Some(&pair.truth), seed)?;
        if cfg.replicates == 1 {
            write_evaluation(&dir, &metrics, &curve)?;
        } else {
            write_evaluation(&out_dir(&dir.join(format!("replicate_{r:03}")))?, &metrics, &curve)?;
        }
        runs.push(metrics);
    }
    if cfg.replicates > 1 {
        write_json(&dir.join("aggregate.json"), &aggregate(cfg, &runs))?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn bench(cfg: &RunConfig, scale: f64) -> Result<ExitCode> {
    if !(scale > 0.0 && scale <= 1.0) {
        return Err(Error::InvalidConfig(format!("scale must be in (0, 1], got {scale}")));
    }
    let start = Instant::now();
    let (report, elapsed) = run_all(&BenchOptions { seed: cfg.seed, scale })?;
    let dir = out_dir(&cfg.out)?;
    write_json(&dir.join("bench_report.json"), &report)?;
    for c in &report.criteria {
        println!("{}", c.line());
    }
    for (m, d) in &elapsed {
        eprintln!("timing {m}: {:.2}s", d.as_secs_f64());
    }
    eprintln!("timing total: {:.2}s", start.elapsed().as_secs_f64());
    Ok(if report.all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    })
}
