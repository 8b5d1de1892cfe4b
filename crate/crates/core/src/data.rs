//! Tabular datasets with a source/target domain tag, standardization and
//! basis expansion.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    Source,
    Target,
}

/// Strings used for the two domains in the domain column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DomainTags {
    pub source: String,
    pub target: String,
}

impl Default for DomainTags {
    fn default() -> Self {
        Self {
            source: "S".to_string(),
            target: "T".to_string(),
        }
    }
}

impl DomainTags {
    fn parse(&self, tag: &str, row: usize) -> Result<Domain> {
        if tag == self.source {
            Ok(Domain::Source)
        } else if tag == self.target {
            Ok(Domain::Target)
        } else {
            Err(Error::UnknownDomainTag {
                row,
                tag: tag.to_string(),
            })
        }
    }

    fn tag(&self, domain: Domain) -> &str {
        match domain {
            Domain::Source => &self.source,
            Domain::Target => &self.target,
        }
    }
}

/// Per-feature affine transform `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDataset {
    features: DMatrix<f64>,
    labels: DVector<f64>,
    domain: Vec<Domain>,
    feature_names: Vec<String>,
    standardization: Option<Standardization>,
}

impl TabularDataset {
    pub fn new(
        features: DMatrix<f64>,
        labels: DVector<f64>,
        domain: Vec<Domain>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        let (n, p) = features.shape();
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        if p == 0 {
            return Err(Error::DimensionMismatch {
                expected: 1,
                actual: 0,
            });
        }
        if labels.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: labels.len(),
            });
        }
        if domain.len() != n {
            return Err(Error::LengthMismatch {
                expected: n,
                actual: domain.len(),
            });
        }
        if feature_names.len() != p {
            return Err(Error::LengthMismatch {
                expected: p,
                actual: feature_names.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateFeature(name.clone()));
            }
        }
        for j in 0..p {
            for i in 0..n {
                if !features[(i, j)].is_finite() {
                    return Err(Error::NonFinite { row: i, column: j });
                }
            }
        }
        if let Some(i) = labels.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row: i, column: p });
        }
        Ok(Self {
            features,
            labels,
            domain,
            feature_names,
            standardization: None,
        })
    }

    /// Builds a dataset with generated names `x1..xp`.
    pub fn from_parts(
        features: DMatrix<f64>,
        labels: DVector<f64>,
        domain: Vec<Domain>,
    ) -> Result<Self> {
        let names = (1..=features.ncols()).map(|j| format!("x{j}")).collect();
        Self::new(features, labels, domain, names)
    }

    pub fn n_rows(&self) -> usize {
        self.features.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn labels(&self) -> &DVector<f64> {
        &self.labels
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domain
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn standardization(&self) -> Option<&Standardization> {
        self.standardization.as_ref()
    }

    pub fn rows_in(&self, domain: Domain) -> Vec<usize> {
        self.domain
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == domain)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, domain: Domain) -> usize {
        self.domain.iter().filter(|d| **d == domain).count()
    }

    /// Row subset in the given order. Panics on out-of-range indices.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let p = self.n_features();
        let features = DMatrix::from_fn(rows.len(), p, |i, j| self.features[(rows[i], j)]);
        let labels = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.labels[i]));
        Ok(Self {
            features,
            labels,
            domain: rows.iter().map(|&i| self.domain[i]).collect(),
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        })
    }

    /// Rows of one domain, or `EmptyDomain` if there are none.
    pub fn domain_subset(&self, domain: Domain) -> Result<Self> {
        let rows = self.rows_in(domain);
        if rows.is_empty() {
            return Err(Error::EmptyDomain(match domain {
                Domain::Source => "source",
                Domain::Target => "target",
            }));
        }
        self.select_rows(&rows)
    }

    pub fn with_labels(&self, labels: DVector<f64>) -> Result<Self> {
        if labels.len() != self.n_rows() {
            return Err(Error::LengthMismatch {
                expected: self.n_rows(),
                actual: labels.len(),
            });
        }
        let mut out = self.clone();
        out.labels = labels;
        Ok(out)
    }

    /// Row-wise concatenation; feature names must agree.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.feature_names != other.feature_names {
            return Err(Error::DimensionMismatch {
                expected: self.n_features(),
                actual: other.n_features(),
            });
        }
        let (n1, n2, p) = (self.n_rows(), other.n_rows(), self.n_features());
        let features = DMatrix::from_fn(n1 + n2, p, |i, j| {
            if i < n1 {
                self.features[(i, j)]
            } else {
                other.features[(i - n1, j)]
            }
        });
        let labels = DVector::from_iterator(
            n1 + n2,
            self.labels.iter().chain(other.labels.iter()).copied(),
        );
        let domain = self.domain.iter().chain(&other.domain).copied().collect();
        Ok(Self {
            features,
            labels,
            domain,
            feature_names: self.feature_names.clone(),
            standardization: self.standardization.clone(),
        })
    }
}

/// Loads a dataset from a CSV file with a header row.
pub fn load_csv(
    path: impl AsRef<Path>,
    label_column: &str,
    domain_column: &str,
    tags: &DomainTags,
) -> Result<TabularDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column, domain_column, tags)
}

pub fn read_csv<R: Read>(
    reader: R,
    label_column: &str,
    domain_column: &str,
    tags: &DomainTags,
) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let label_idx = find(label_column)?;
    let domain_idx = find(domain_column)?;
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_idx && c != domain_idx)
        .collect();
    if feature_cols.is_empty() {
        return Err(Error::DimensionMismatch {
            expected: 1,
            actual: 0,
        });
    }
    let parse = |raw: &str, row: usize, col: usize| -> Result<f64> {
        let v = raw.trim();
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| Error::NonNumericCell {
                row,
                column: headers[col].clone(),
                value: v.to_string(),
            })
    };

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut domain = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        for &c in &feature_cols {
            values.push(parse(record.get(c).unwrap_or(""), row, c)?);
        }
        labels.push(parse(record.get(label_idx).unwrap_or(""), row, label_idx)?);
        domain.push(tags.parse(record.get(domain_idx).unwrap_or("").trim(), row)?);
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let p = feature_cols.len();
    let features = DMatrix::from_row_slice(labels.len(), p, &values);
    let names = feature_cols.iter().map(|&c| headers[c].clone()).collect();
    TabularDataset::new(features, DVector::from_vec(labels), domain, names)
}

/// Writes features, then the label column, then the domain column.
pub fn write_csv<W: Write>(
    ds: &TabularDataset,
    writer: W,
    label_column: &str,
    domain_column: &str,
    tags: &DomainTags,
) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push(label_column);
    header.push(domain_column);
    wtr.write_record(&header)?;
    let mut record = Vec::with_capacity(header.len());
    for i in 0..ds.n_rows() {
        record.clear();
        for j in 0..ds.n_features() {
            record.push(ds.features[(i, j)].to_string());
        }
        record.push(ds.labels[i].to_string());
        record.push(tags.tag(ds.domain[i]).to_string());
        wtr.write_record(&record)?;
    }
    wtr.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

/// Centers and scales every feature with statistics from the source rows.
///
/// The scale is the population standard deviation of the source rows, so a
/// two-point column `[1, 3]` maps to `[-1, 1]`. When there are no source rows
/// the statistics fall back to all rows.
pub fn standardize(ds: &TabularDataset) -> Result<TabularDataset> {
    let mut ref_rows = ds.rows_in(Domain::Source);
    if ref_rows.is_empty() {
        ref_rows = (0..ds.n_rows()).collect();
    }
    let m = ref_rows.len() as f64;
    let p = ds.n_features();
    let mut means = Vec::with_capacity(p);
    let mut scales = Vec::with_capacity(p);
    for j in 0..p {
        let col = ds.features.column(j);
        let mean = ref_rows.iter().map(|&i| col[i]).sum::<f64>() / m;
        let var = ref_rows.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>() / m;
        let scale = var.sqrt();
        if !(scale > 1e-12 * (1.0 + mean.abs())) {
            return Err(Error::ConstantColumn(ds.feature_names[j].clone()));
        }
        means.push(mean);
        scales.push(scale);
    }
    let mut out = ds.clone();
    for j in 0..p {
        let (mu, sd) = (means[j], scales[j]);
        out.features.column_mut(j).apply(|x| *x = (*x - mu) / sd);
    }
    out.standardization = Some(Standardization { means, scales });
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    Linear,
}

/// Fixed basis functions applied to the feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisExpansion {
    kind: BasisKind,
    n_basis: usize,
    feature_of: Vec<usize>,
}

impl BasisExpansion {
    /// Identity basis: one basis function per feature.
    pub fn linear(p: usize) -> Self {
        Self {
            kind: BasisKind::Linear,
            n_basis: p,
            feature_of: (0..p).collect(),
        }
    }

    /// A linear basis with an explicit basis count; `expand` rejects it
    /// unless the count equals the number of features.
    pub fn linear_with_size(k: usize) -> Self {
        Self::linear(k)
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn n_basis(&self) -> usize {
        self.n_basis
    }

    /// Feature index that basis function `k` is built from.
    pub fn feature_of(&self, k: usize) -> usize {
        self.feature_of[k]
    }

    pub fn expand(&self, ds: &TabularDataset) -> Result<DMatrix<f64>> {
        self.expand_matrix(ds.features())
    }

    pub fn expand_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self.kind {
            BasisKind::Linear => {
                if self.n_basis != x.ncols() {
                    return Err(Error::DimensionMismatch {
                        expected: self.n_basis,
                        actual: x.ncols(),
                    });
                }
                Ok(x.clone())
            }
        }
    }
}

/// Seeded shuffle of `rows` into (train, holdout) with
/// `round(holdout_fraction * len)` holdout rows.
pub fn split_rows(rows: &[usize], holdout_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut shuffled = rows.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shuffled.shuffle(&mut rng);
    let n_hold = ((rows.len() as f64) * holdout_fraction).round() as usize;
    let hold = shuffled.split_off(rows.len() - n_hold.min(rows.len()));
    shuffled.sort_unstable();
    let mut hold = hold;
    hold.sort_unstable();
    (shuffled, hold)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(s: &str) -> Result<TabularDataset> {
        read_csv(s.as_bytes(), "y", "dom", &DomainTags::default())
    }

    #[test]
    fn parses_small_file() {
        let ds = read("x1,x2,y,dom\n1,2,0,S\n3,4,1,S\n5,6,0,T\n7,8,1,T\n").unwrap();
        assert_eq!(ds.n_rows(), 4);
        assert_eq!(ds.n_features(), 2);
        assert_eq!(ds.count(Domain::Source), 2);
        assert_eq!(ds.count(Domain::Target), 2);
        assert_eq!(ds.features()[(2, 1)], 6.0);
        assert_eq!(ds.feature_names(), ["x1", "x2"]);
    }

    #[test]
    fn rejects_bad_cell() {
        let err = read("x1,x2,y,dom\n1,2,0,S\nabc,4,1,T\n").unwrap_err();
        match err {
            Error::NonNumericCell { row, column, value } => {
                assert_eq!(row, 1);
                assert_eq!(column, "x1");
                assert_eq!(value, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_tag() {
        let err = read("x1,y,dom\n1,0,S\n2,1,Q\n").unwrap_err();
        assert!(matches!(err, Error::UnknownDomainTag { row: 1, .. }));
    }

    #[test]
    fn missing_and_empty() {
        assert!(matches!(
            read("x1,y\n1,0\n").unwrap_err(),
            Error::MissingColumn(c) if c == "dom"
        ));
        assert!(matches!(read("x1,y,dom\n").unwrap_err(), Error::EmptyDataset));
    }

    #[test]
    fn custom_tags() {
        let tags = DomainTags {
            source: "old".into(),
            target: "new".into(),
        };
        let ds = read_csv("a,y,d\n1,0,old\n2,1,new\n".as_bytes(), "y", "d", &tags).unwrap();
        assert_eq!(ds.domains(), [Domain::Source, Domain::Target]);
    }

    #[test]
    fn two_point_standardization() {
        let ds = TabularDataset::from_parts(
            DMatrix::from_column_slice(2, 1, &[1.0, 3.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            vec![Domain::Source; 2],
        )
        .unwrap();
        let st = standardize(&ds).unwrap();
        assert_eq!(st.features().as_slice(), &[-1.0, 1.0]);
        let s = st.standardization().unwrap();
        assert_eq!(s.means, vec![2.0]);
        assert_eq!(s.scales, vec![1.0]);
    }

    #[test]
    fn target_shift_survives_standardization() {
        let src = [0.3, -1.2, 2.5, 0.7, 1.1];
        let mut col: Vec<f64> = src.to_vec();
        col.extend(src.iter().map(|x| x + 10.0));
        let mut dom = vec![Domain::Source; 5];
        dom.extend(vec![Domain::Target; 5]);
        let ds = TabularDataset::from_parts(
            DMatrix::from_column_slice(10, 1, &col),
            DVector::zeros(10),
            dom,
        )
        .unwrap();
        let st = standardize(&ds).unwrap();
        // hand formula (x - mu_S) / sigma_S
        let mu = src.iter().sum::<f64>() / 5.0;
        let sd = (src.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / 5.0).sqrt();
        let target_mean = (5..10).map(|i| st.features()[(i, 0)]).sum::<f64>() / 5.0;
        assert!((target_mean - 10.0 / sd).abs() < 1e-12);
    }

    #[test]
    fn constant_column_rejected() {
        let ds = TabularDataset::from_parts(
            DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]),
            DVector::zeros(3),
            vec![Domain::Source; 3],
        )
        .unwrap();
        assert!(matches!(standardize(&ds), Err(Error::ConstantColumn(n)) if n == "x2"));
    }

    #[test]
    fn linear_basis() {
        let ds = TabularDataset::from_parts(
            DMatrix::from_row_slice(1, 2, &[0.5, -2.0]),
            DVector::zeros(1),
            vec![Domain::Target],
        )
        .unwrap();
        let phi = BasisExpansion::linear(2).expand(&ds).unwrap();
        assert_eq!(phi.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, -2.0]);
        assert!(matches!(
            BasisExpansion::linear_with_size(3).expand(&ds),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn split_is_partition() {
        let rows: Vec<usize> = (10..60).collect();
        let (tr, ho) = split_rows(&rows, 0.2, 3);
        assert_eq!(ho.len(), 10);
        assert_eq!(tr.len(), 40);
        let mut all: Vec<usize> = tr.iter().chain(&ho).copied().collect();
        all.sort_unstable();
        assert_eq!(all, rows);
        assert_eq!(split_rows(&rows, 0.2, 3), (tr, ho));
    }
}
