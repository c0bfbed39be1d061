//! Real-data ingestion: CSV parsing, missing-record removal, sequential
//! 30/30/40 splitting and whitening with train statistics.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::EstimatorWeights;
use crate::serial::{exact_dvector, row_major};

/// Columns whose train standard deviation falls below this are dropped.
pub const CONSTANT_COLUMN_STD: f64 = 1e-12;

pub const DEFAULT_FRACTIONS: [f64; 3] = [0.3, 0.3, 0.4];

/// Rules for deciding that a record is missing.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MissingPolicy {
    /// Value that encodes a missing entry (Air Quality uses −200).
    #[serde(default)]
    pub sentinel: Option<f64>,
    /// Extra columns that must be present and non-missing, beyond the
    /// features and target.
    #[serde(default)]
    pub also_required: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// One row per record, in file order.
    pub features: Vec<Vec<f64>>,
    pub target: Vec<f64>,
    pub source: PathBuf,
    pub source_sha256: String,
    pub delimiter: char,
    pub rows_read: usize,
    pub rows_dropped_missing: usize,
    pub rows_dropped_unparseable: usize,
    #[serde(default)]
    pub rows_dropped_downsample: usize,
}

impl RawTable {
    pub fn len(&self) -> usize {
        self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target.is_empty()
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn detect_delimiter(header: &str) -> char {
    [';', '\t', ',']
        .into_iter()
        .max_by_key(|&c| header.matches(c).count())
        .filter(|&c| header.contains(c))
        .unwrap_or(',')
}

enum Cell {
    Value(f64),
    Missing,
    Unparseable,
}

fn parse_cell(raw: &str, decimal_comma: bool, sentinel: Option<f64>) -> Cell {
    let text = raw.trim();
    if text.is_empty() {
        return Cell::Missing;
    }
    let parsed = if decimal_comma {
        text.replace(',', ".").parse::<f64>()
    } else {
        text.parse::<f64>()
    };
    match parsed {
        Ok(v) if !v.is_finite() => Cell::Unparseable,
        Ok(v) if sentinel == Some(v) => Cell::Missing,
        Ok(v) => Cell::Value(v),
        Err(_) => Cell::Unparseable,
    }
}

/// Reads a headered CSV (comma, semicolon or tab delimited). With a
/// non-comma delimiter, decimal commas are accepted. Rows with a missing
/// or sentinel entry in any used column are dropped, as are rows with an
/// unparseable number; both counts are recorded. Numbers are parsed with
/// correct rounding, so equal text always yields the same `f64`.
pub fn load_csv(
    path: &Path,
    feature_names: &[String],
    target_name: &str,
    missing_policy: &MissingPolicy,
) -> Result<RawTable> {
    load_csv_downsampled(path, feature_names, target_name, missing_policy, None)
}

/// [`load_csv`] that first keeps only the first record of every hour, keyed
/// by the `YYYY-MM-DD HH` prefix of `hourly_column`.
pub fn load_csv_downsampled(
    path: &Path,
    feature_names: &[String],
    target_name: &str,
    missing_policy: &MissingPolicy,
    hourly_column: Option<&str>,
) -> Result<RawTable> {
    let bytes = fs::read(path)?;
    let text = String::from_utf8_lossy(&bytes);
    let header_line = text.lines().next().unwrap_or("");
    let delimiter = detect_delimiter(header_line);
    let schema_err = |message: String| Error::Schema {
        path: path.to_path_buf(),
        message,
    };

    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter as u8)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| schema_err(format!("column {name:?} not found")))
    };
    let feature_idx: Vec<usize> = feature_names.iter().map(|f| locate(f)).collect::<Result<_>>()?;
    let target_idx = locate(target_name)?;
    let extra_idx: Vec<usize> = missing_policy
        .also_required
        .iter()
        .map(|c| locate(c))
        .collect::<Result<_>>()?;
    let hour_idx = hourly_column.map(locate).transpose()?;

    let decimal_comma = delimiter != ',';
    let mut features = Vec::new();
    let mut target = Vec::new();
    let mut rows_read = 0;
    let mut dropped_missing = 0;
    let mut dropped_unparseable = 0;
    let mut dropped_downsample = 0;
    let mut last_hour: Option<String> = None;

    for record in reader.records() {
        let record = record?;
        if record.iter().all(|f| f.trim().is_empty()) {
            continue;
        }
        rows_read += 1;
        if let Some(h) = hour_idx {
            let stamp = record.get(h).unwrap_or("").trim();
            let key: String = stamp.chars().take(13).collect();
            if last_hour.as_deref() == Some(key.as_str()) {
                dropped_downsample += 1;
                continue;
            }
            last_hour = Some(key);
        }

        let mut row = Vec::with_capacity(feature_idx.len());
        let mut missing = false;
        let mut unparseable = false;
        let mut visit = |idx: usize, row: Option<&mut Vec<f64>>| -> Option<f64> {
            match parse_cell(record.get(idx).unwrap_or(""), decimal_comma, missing_policy.sentinel) {
                Cell::Value(v) => {
                    if let Some(r) = row {
                        r.push(v);
                    }
                    Some(v)
                }
                Cell::Missing => {
                    missing = true;
                    None
                }
                Cell::Unparseable => {
                    unparseable = true;
                    None
                }
            }
        };
        for &i in &feature_idx {
            visit(i, Some(&mut row));
        }
        let y = visit(target_idx, None);
        for &i in &extra_idx {
            visit(i, None);
        }
        if unparseable {
            dropped_unparseable += 1;
        } else if missing {
            dropped_missing += 1;
        } else {
            features.push(row);
            target.push(y.expect("checked above"));
        }
    }

    Ok(RawTable {
        feature_names: feature_names.to_vec(),
        target_name: target_name.to_string(),
        features,
        target,
        source: path.to_path_buf(),
        source_sha256: sha256_hex(&bytes),
        delimiter,
        rows_read,
        rows_dropped_missing: dropped_missing,
        rows_dropped_unparseable: dropped_unparseable,
        rows_dropped_downsample: dropped_downsample,
    })
}

/// One split with covariates stored as columns (`d × n`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Split {
    #[serde(with = "row_major")]
    pub x_matrix: DMatrix<f64>,
    #[serde(with = "exact_dvector")]
    pub y: DVector<f64>,
}

impl Split {
    pub fn from_rows(rows: &[Vec<f64>], target: &[f64], dim: usize) -> Self {
        Self {
            x_matrix: DMatrix::from_fn(dim, rows.len(), |i, j| rows[j][i]),
            y: DVector::from_column_slice(target),
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x_matrix.nrows()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum SplitMode {
    /// Contiguous prefix / middle / suffix in file order.
    Sequential,
    Shuffle { seed: u64 },
}

/// Per-column affine maps fitted on the train split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Whitening {
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    pub target_mean: f64,
    pub target_std: f64,
    pub dropped_columns: Vec<String>,
}

impl Whitening {
    /// Maps whitened features back to raw units.
    pub fn unwhiten_features(&self, x_matrix: &DMatrix<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(x_matrix.nrows(), x_matrix.ncols(), |i, j| {
            x_matrix[(i, j)] * self.feature_std[i] + self.feature_mean[i]
        })
    }

    pub fn unwhiten_target(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| v * self.target_std + self.target_mean)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub source: PathBuf,
    pub source_sha256: String,
    pub rows_read: usize,
    pub rows_after_cleaning: usize,
    pub rows_dropped_missing: usize,
    pub rows_dropped_unparseable: usize,
    pub rows_dropped_downsample: usize,
    pub split_mode: SplitMode,
    pub fractions: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionDataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub train: Split,
    pub validation: Split,
    pub test: Split,
    pub whitening: Option<Whitening>,
    pub provenance: DatasetProvenance,
}

/// Split sizes `(⌊f₁n⌋, ⌊f₂n⌋, rest)`.
pub fn split_sizes(n: usize, fractions: [f64; 3]) -> Result<[usize; 3]> {
    let total: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    // the small slack keeps products like 0.3·10 from flooring to 2
    let take = |f: f64| (f * n as f64 + 1e-9).floor() as usize;
    let train = take(fractions[0]);
    let validation = take(fractions[1]).min(n - train);
    let test = n - train - validation;
    if train == 0 || validation == 0 || test == 0 {
        return Err(Error::Input(format!(
            "{n} rows give an empty split under fractions {fractions:?}"
        )));
    }
    Ok([train, validation, test])
}

/// Three-way split in file order, or after a seeded shuffle.
pub fn split_sequential(table: &RawTable, fractions: [f64; 3], mode: SplitMode) -> Result<RegressionDataset> {
    let n = table.len();
    let [n_train, n_val, _] = split_sizes(n, fractions)?;
    let mut order: Vec<usize> = (0..n).collect();
    if let SplitMode::Shuffle { seed } = mode {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let d = table.feature_names.len();
    let part = |range: std::ops::Range<usize>| {
        let idx = &order[range];
        Split {
            x_matrix: DMatrix::from_fn(d, idx.len(), |i, j| table.features[idx[j]][i]),
            y: DVector::from_fn(idx.len(), |j, _| table.target[idx[j]]),
        }
    };
    Ok(RegressionDataset {
        feature_names: table.feature_names.clone(),
        target_name: table.target_name.clone(),
        train: part(0..n_train),
        validation: part(n_train..n_train + n_val),
        test: part(n_train + n_val..n),
        whitening: None,
        provenance: DatasetProvenance {
            source: table.source.clone(),
            source_sha256: table.source_sha256.clone(),
            rows_read: table.rows_read,
            rows_after_cleaning: n,
            rows_dropped_missing: table.rows_dropped_missing,
            rows_dropped_unparseable: table.rows_dropped_unparseable,
            rows_dropped_downsample: table.rows_dropped_downsample,
            split_mode: mode,
            fractions,
        },
    })
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes features and target of all three splits with train means
/// and (population) standard deviations. Near-constant feature columns are
/// dropped. Applying it to already whitened data composes the maps.
pub fn whiten(dataset: &RegressionDataset) -> Result<RegressionDataset> {
    let train = &dataset.train;
    if train.is_empty() {
        return Err(Error::Input("cannot whiten with an empty train split".into()));
    }
    let mut keep = Vec::new();
    let mut means = Vec::new();
    let mut stds = Vec::new();
    let mut dropped = Vec::new();
    for i in 0..train.dim() {
        let (m, s) = mean_std(train.x_matrix.row(i).iter().copied());
        if s < CONSTANT_COLUMN_STD {
            dropped.push(dataset.feature_names[i].clone());
        } else {
            keep.push(i);
            means.push(m);
            stds.push(s);
        }
    }
    let (target_mean, target_std) = mean_std(train.y.iter().copied());
    if target_std < CONSTANT_COLUMN_STD {
        return Err(Error::Data("target is constant on the train split".into()));
    }
    let apply = |split: &Split| Split {
        x_matrix: DMatrix::from_fn(keep.len(), split.len(), |r, c| {
            (split.x_matrix[(keep[r], c)] - means[r]) / stds[r]
        }),
        y: split.y.map(|v| (v - target_mean) / target_std),
    };
    Ok(RegressionDataset {
        feature_names: keep.iter().map(|&i| dataset.feature_names[i].clone()).collect(),
        target_name: dataset.target_name.clone(),
        train: apply(&dataset.train),
        validation: apply(&dataset.validation),
        test: apply(&dataset.test),
        whitening: Some(Whitening {
            feature_mean: means,
            feature_std: stds,
            target_mean,
            target_std,
            dropped_columns: dropped,
        }),
        provenance: dataset.provenance.clone(),
    })
}

/// Mean squared prediction error `Σ(⟨θ̂, x_i⟩ − y_i)² / n`.
pub fn mse(weights: &EstimatorWeights, split: &Split) -> Result<f64> {
    mse_theta(&weights.theta_hat, split)
}

pub fn mse_theta(theta: &DVector<f64>, split: &Split) -> Result<f64> {
    if theta.len() != split.dim() {
        return Err(Error::Dimension {
            expected: split.dim(),
            found: theta.len(),
            context: "weights vs split features",
        });
    }
    if split.is_empty() {
        return Err(Error::Input("mse of an empty split".into()));
    }
    let residual = split.x_matrix.tr_mul(theta) - &split.y;
    Ok(residual.norm_squared() / split.len() as f64)
}

/// Random-design regression data: i.i.d. standard Gaussian covariates and
/// `y = ⟨θ*, x⟩ + σ·ε` with Gaussian `ε`.
pub fn random_design(theta_star: &[f64], n: usize, noise_sd: f64, seed: u64) -> Split {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = theta_star.len();
    let x_matrix = DMatrix::from_fn(d, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let theta = DVector::from_column_slice(theta_star);
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = x_matrix.tr_mul(&theta) + noise.scale(noise_sd);
    Split { x_matrix, y }
}

/// Declarative description of a dataset and its preparation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub name: String,
    pub path: PathBuf,
    pub features: Vec<String>,
    pub target: String,
    #[serde(default)]
    pub missing: MissingPolicy,
    /// Timestamp column for first-record-per-hour downsampling.
    #[serde(default)]
    pub hourly_column: Option<String>,
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default = "default_split_mode")]
    pub split: SplitMode,
    /// The feature list was reconstructed rather than taken from a
    /// published enumeration.
    #[serde(default)]
    pub features_inferred: bool,
}

fn default_fractions() -> [f64; 3] {
    DEFAULT_FRACTIONS
}

fn default_split_mode() -> SplitMode {
    SplitMode::Sequential
}

fn names(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl DatasetSpec {
    /// UCI Air Quality: semicolon separated, decimal commas, −200 marks
    /// missing entries.
    pub fn air_quality(path: impl Into<PathBuf>) -> Self {
        Self {
            name: "air_quality".into(),
            path: path.into(),
            features: names(&[
                "PT08.S1(CO)",
                "PT08.S2(NMHC)",
                "PT08.S3(NOx)",
                "PT08.S4(NO2)",
                "PT08.S5(O3)",
                "T",
                "RH",
                "AH",
            ]),
            target: "NO2(GT)".into(),
            missing: MissingPolicy {
                sentinel: Some(-200.0),
                also_required: Vec::new(),
            },
            hourly_column: None,
            fractions: DEFAULT_FRACTIONS,
            split: SplitMode::Sequential,
            features_inferred: false,
        }
    }

    /// UCI Airfoil Self-Noise, using the headered CSV column names.
    pub fn airfoil(path: impl Into<PathBuf>) -> Self {
        Self {
            name: "airfoil".into(),
            path: path.into(),
            features: names(&[
                "frequency",
                "attack-angle",
                "chord-length",
                "free-stream-velocity",
                "suction-side-displacement-thickness",
            ]),
            target: "scaled-sound-pressure".into(),
            missing: MissingPolicy::default(),
            hourly_column: None,
            fractions: DEFAULT_FRACTIONS,
            split: SplitMode::Sequential,
            features_inferred: false,
        }
    }

    /// UCI Appliances Energy Prediction, downsampled to hourly. The 24
    /// covariates are every column except `date`, `lights`, `Windspeed`,
    /// `Visibility` and the target; the list is inferred from that rule.
    pub fn appliances_energy(path: impl Into<PathBuf>) -> Self {
        let mut features = Vec::new();
        for i in 1..=9 {
            features.push(format!("T{i}"));
            features.push(format!("RH_{i}"));
        }
        features.extend(names(&["T_out", "Press_mm_hg", "RH_out", "Tdewpoint", "rv1", "rv2"]));
        Self {
            name: "appliances_energy".into(),
            path: path.into(),
            features,
            target: "Appliances".into(),
            missing: MissingPolicy::default(),
            hourly_column: Some("date".into()),
            fractions: DEFAULT_FRACTIONS,
            split: SplitMode::Sequential,
            features_inferred: true,
        }
    }

    pub fn load(&self) -> Result<RawTable> {
        load_csv_downsampled(
            &self.path,
            &self.features,
            &self.target,
            &self.missing,
            self.hourly_column.as_deref(),
        )
    }

    /// Load, clean, split and whiten.
    pub fn prepare(&self) -> Result<RegressionDataset> {
        let table = self.load()?;
        if table.is_empty() {
            return Err(Error::Data(format!("{}: no rows left after cleaning", self.name)));
        }
        whiten(&split_sequential(&table, self.fractions, self.split)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

/// Description of a prepared dataset with checksums of the source file and
/// of the prepared numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedManifest {
    pub name: String,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub features_inferred: bool,
    pub provenance: DatasetProvenance,
    pub sizes: SplitSizes,
    pub whitening: Option<Whitening>,
    /// SHA-256 over the little-endian bytes of train, validation and test
    /// (features column-major, then target).
    pub prepared_sha256: String,
}

pub fn prepared_checksum(dataset: &RegressionDataset) -> String {
    let mut hasher = Sha256::new();
    for split in [&dataset.train, &dataset.validation, &dataset.test] {
        for v in split.x_matrix.iter().chain(split.y.iter()) {
            hasher.update(v.to_le_bytes());
        }
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub fn manifest(spec: &DatasetSpec, dataset: &RegressionDataset) -> PreparedManifest {
    PreparedManifest {
        name: spec.name.clone(),
        feature_names: dataset.feature_names.clone(),
        target_name: dataset.target_name.clone(),
        features_inferred: spec.features_inferred,
        provenance: dataset.provenance.clone(),
        sizes: SplitSizes {
            train: dataset.train.len(),
            validation: dataset.validation.len(),
            test: dataset.test.len(),
        },
        whitening: dataset.whitening.clone(),
        prepared_sha256: prepared_checksum(dataset),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_temp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn table(n: usize) -> RawTable {
        RawTable {
            feature_names: vec!["a".into(), "b".into()],
            target_name: "y".into(),
            features: (0..n).map(|i| vec![i as f64, (i * i) as f64]).collect(),
            target: (0..n).map(|i| 2.0 * i as f64 + 1.0).collect(),
            source: PathBuf::from("mem"),
            source_sha256: String::new(),
            delimiter: ',',
            rows_read: n,
            rows_dropped_missing: 0,
            rows_dropped_unparseable: 0,
            rows_dropped_downsample: 0,
        }
    }

    #[test]
    fn semicolon_decimal_comma_and_sentinel() {
        let f = write_temp(
            "Date;Time;A;B;Y;;\n\
             10/03/2004;18.00.00;2,6;1360;113;;\n\
             10/03/2004;19.00.00;-200;1292;92;;\n\
             10/03/2004;20.00.00;2,2;1402;-200;;\n\
             10/03/2004;21.00.00;1,5;x;80;;\n\
             ;;;;;;\n",
        );
        let policy = MissingPolicy {
            sentinel: Some(-200.0),
            also_required: vec![],
        };
        let t = load_csv(f.path(), &names(&["A", "B"]), "Y", &policy).unwrap();
        assert_eq!(t.delimiter, ';');
        assert_eq!(t.rows_read, 4);
        assert_eq!(t.len(), 1);
        assert_eq!(t.rows_dropped_missing, 2);
        assert_eq!(t.rows_dropped_unparseable, 1);
        assert_eq!(t.features[0], vec![2.6, 1360.0]);
        assert_eq!(t.target[0], 113.0);
    }

    #[test]
    fn row_missing_target_is_dropped() {
        let f = write_temp("x,y\n1,2\n3,\n5,6\n");
        let t = load_csv(f.path(), &names(&["x"]), "y", &MissingPolicy::default()).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.rows_dropped_missing, 1);
        assert_eq!(t.target, vec![2.0, 6.0]);
    }

    #[test]
    fn absent_column_is_schema_error() {
        let f = write_temp("x,y\n1,2\n");
        let err = load_csv(f.path(), &names(&["z"]), "y", &MissingPolicy::default());
        assert!(matches!(err, Err(Error::Schema { .. })));
    }

    #[test]
    fn tab_delimited_is_detected() {
        let f = write_temp("x\ty\n0.5\t1e-3\n");
        let t = load_csv(f.path(), &names(&["x"]), "y", &MissingPolicy::default()).unwrap();
        assert_eq!(t.delimiter, '\t');
        assert_eq!(t.target, vec![1e-3]);
    }

    #[test]
    fn hourly_downsample_keeps_first_record() {
        let f = write_temp(
            "date,Appliances,T1\n\
             2016-01-11 17:00:00,60,19.89\n\
             2016-01-11 17:10:00,60,19.89\n\
             2016-01-11 17:50:00,50,19.8\n\
             2016-01-11 18:00:00,430,19.9\n\
             2016-01-11 18:10:00,250,19.8\n",
        );
        let t = load_csv_downsampled(f.path(), &names(&["T1"]), "Appliances", &MissingPolicy::default(), Some("date"))
            .unwrap();
        assert_eq!(t.target, vec![60.0, 430.0]);
        assert_eq!(t.rows_dropped_downsample, 3);
    }

    #[test]
    fn split_arithmetic() {
        assert_eq!(split_sizes(10, DEFAULT_FRACTIONS).unwrap(), [3, 3, 4]);
        assert_eq!(split_sizes(6941, DEFAULT_FRACTIONS).unwrap(), [2082, 2082, 2777]);
        assert_eq!(split_sizes(1503, DEFAULT_FRACTIONS).unwrap(), [450, 450, 603]);
        assert!(split_sizes(2, DEFAULT_FRACTIONS).is_err());
        assert!(split_sizes(10, [0.5, 0.5, 0.5]).is_err());
    }

    #[test]
    fn sequential_split_keeps_order() {
        let ds = split_sequential(&table(10), DEFAULT_FRACTIONS, SplitMode::Sequential).unwrap();
        assert_eq!(ds.train.y.as_slice(), &[1.0, 3.0, 5.0]);
        assert_eq!(ds.validation.y.as_slice(), &[7.0, 9.0, 11.0]);
        assert_eq!(ds.test.len(), 4);
        assert_eq!(ds.train.x_matrix[(1, 2)], 4.0);
    }

    #[test]
    fn shuffle_is_seeded() {
        let a = split_sequential(&table(20), DEFAULT_FRACTIONS, SplitMode::Shuffle { seed: 4 }).unwrap();
        let b = split_sequential(&table(20), DEFAULT_FRACTIONS, SplitMode::Shuffle { seed: 4 }).unwrap();
        let c = split_sequential(&table(20), DEFAULT_FRACTIONS, SplitMode::Shuffle { seed: 5 }).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn whitening_uses_train_statistics() {
        let mut t = table(20);
        for row in t.features.iter_mut() {
            row.push(3.0);
        }
        t.feature_names.push("const".into());
        let ds = whiten(&split_sequential(&t, DEFAULT_FRACTIONS, SplitMode::Sequential).unwrap()).unwrap();
        let w = ds.whitening.as_ref().unwrap();
        assert_eq!(w.dropped_columns, vec!["const".to_string()]);
        assert_eq!(ds.train.dim(), 2);
        for i in 0..2 {
            let (m, s) = mean_std(ds.train.x_matrix.row(i).iter().copied());
            assert!(m.abs() <= 1e-10 && (s - 1.0).abs() <= 1e-10);
        }
        let (m_test, _) = mean_std(ds.test.x_matrix.row(0).iter().copied());
        assert!(m_test.abs() > 1.0);
        let back = w.unwhiten_features(&ds.train.x_matrix);
        let raw = split_sequential(&t, DEFAULT_FRACTIONS, SplitMode::Sequential).unwrap();
        assert!((back - raw.train.x_matrix.rows(0, 2)).amax() <= 1e-10);
        let y_back = w.unwhiten_target(&ds.train.y);
        assert!((y_back - &raw.train.y).amax() <= 1e-10);
    }

    #[test]
    fn whitening_twice_is_stable() {
        let ds = whiten(&split_sequential(&table(30), DEFAULT_FRACTIONS, SplitMode::Sequential).unwrap()).unwrap();
        let again = whiten(&ds).unwrap();
        assert!((&again.test.x_matrix - &ds.test.x_matrix).amax() <= 1e-12);
    }

    #[test]
    fn mse_of_zero_weights_is_second_moment() {
        let ds = whiten(&split_sequential(&table(30), DEFAULT_FRACTIONS, SplitMode::Sequential).unwrap()).unwrap();
        let zero = DVector::zeros(ds.train.dim());
        let m = mse_theta(&zero, &ds.train).unwrap();
        assert!((m - 1.0).abs() <= 1e-12);
        let second: f64 = ds.validation.y.iter().map(|v| v * v).sum::<f64>() / ds.validation.len() as f64;
        assert!((mse_theta(&zero, &ds.validation).unwrap() - second).abs() <= 1e-12);
        assert!(mse_theta(&DVector::zeros(5), &ds.train).is_err());
    }

    #[test]
    fn random_design_is_seeded_and_noiseless_fit_is_exact() {
        let a = random_design(&[1.0, -2.0], 50, 0.0, 3);
        assert_eq!(a, random_design(&[1.0, -2.0], 50, 0.0, 3));
        let theta = DVector::from_vec(vec![1.0, -2.0]);
        assert!(mse_theta(&theta, &a).unwrap() <= 1e-28);
    }

    #[test]
    fn preset_feature_counts() {
        assert_eq!(DatasetSpec::air_quality("a").features.len(), 8);
        assert_eq!(DatasetSpec::airfoil("a").features.len(), 5);
        let aep = DatasetSpec::appliances_energy("a");
        assert_eq!(aep.features.len(), 24);
        assert!(aep.features_inferred);
    }

    #[test]
    fn checksums_are_stable() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let ds = split_sequential(&table(10), DEFAULT_FRACTIONS, SplitMode::Sequential).unwrap();
        assert_eq!(prepared_checksum(&ds), prepared_checksum(&ds.clone()));
    }
}
