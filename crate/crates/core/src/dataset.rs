//! Tabular anomaly-detection datasets: CSV loading, stratified splitting and
//! z-score standardization.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::rng::seeded;
use crate::{Error, Result};

/// Ground-truth class of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Normal,
    Anomaly,
}

impl Label {
    pub fn is_anomaly(self) -> bool {
        self == Label::Anomaly
    }

    /// Canonical encoding: 0 = normal, 1 = anomaly.
    pub fn as_u8(self) -> u8 {
        match self {
            Label::Normal => 0,
            Label::Anomaly => 1,
        }
    }
}

/// Row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataTable {
    name: String,
    features: Array2<f64>,
    labels: Vec<Label>,
}

impl DataTable {
    pub fn new(name: impl Into<String>, features: Array2<f64>, labels: Vec<Label>) -> Result<Self> {
        Error::check_dim(features.nrows(), labels.len())?;
        for (i, row) in features.outer_iter().enumerate() {
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadRow {
                    row: i + 1,
                    message: "non-finite feature value".into(),
                });
            }
        }
        Ok(Self {
            name: name.into(),
            features,
            labels,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn count(&self) -> usize {
        self.features.nrows()
    }

    pub fn anomaly_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_anomaly()).count()
    }

    /// Rows at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize]) -> DataTable {
        DataTable {
            name: self.name.clone(),
            features: self.features.select(Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// Only the rows labelled normal.
    pub fn normal_rows(&self) -> DataTable {
        let idx: Vec<usize> = (0..self.count())
            .filter(|&i| !self.labels[i].is_anomaly())
            .collect();
        self.subset(&idx)
    }

    pub fn with_features(&self, features: Array2<f64>) -> Result<DataTable> {
        DataTable::new(self.name.clone(), features, self.labels.clone())
    }

    /// Write as CSV with a header and the canonical 0/1 `label` column last.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
        let mut header: Vec<String> = (0..self.dim()).map(|j| format!("f{j}")).collect();
        header.push("label".into());
        w.write_record(&header).map_err(|e| Error::Csv(e.to_string()))?;
        for (row, label) in self.features.outer_iter().zip(&self.labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(label.as_u8().to_string());
            w.write_record(&rec).map_err(|e| Error::Csv(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fraction of rows labelled anomalous.
pub fn outlier_rate(table: &DataTable) -> f64 {
    if table.count() == 0 {
        return 0.0;
    }
    table.anomaly_count() as f64 / table.count() as f64
}

/// Which CSV column holds the label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
    Last,
}

impl LabelColumn {
    /// Numeric strings select by index, anything else by header name.
    pub fn parse(s: &str) -> LabelColumn {
        match s.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.to_string()),
        }
    }
}

/// How label cells map onto [`Label`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelEncoding {
    /// Cells must be `0` (normal) or `1` (anomaly).
    Binary,
    /// Cells equal to this value are anomalies; the column must hold exactly
    /// one other value, which is normal.
    AnomalyValue(String),
}

#[derive(Debug, Clone)]
pub struct CsvOptions {
    pub label: LabelColumn,
    pub encoding: LabelEncoding,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            label: LabelColumn::Name("label".into()),
            encoding: LabelEncoding::Binary,
        }
    }
}

impl CsvOptions {
    pub fn with_label(label: LabelColumn) -> Self {
        Self {
            label,
            ..Self::default()
        }
    }
}

/// Load a comma-separated file. The header row is optional when the label is
/// positional: a first row whose feature cells all parse as numbers is data.
/// A label selected by name always requires a header. Rows are numbered from 1
/// (excluding the header) in error messages.
pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<DataTable> {
    let path = path.as_ref();
    let mut text = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut text))
        .map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_csv(&name, &text, opts)
}

pub(crate) fn parse_csv(name: &str, text: &str, opts: &CsvOptions) -> Result<DataTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::Csv(e.to_string()))?;
        if rec.iter().all(|c| c.is_empty()) {
            continue;
        }
        records.push(rec);
    }
    if records.is_empty() {
        return Err(Error::NoDataRows);
    }
    let first = &records[0];
    let skip = match &opts.label {
        LabelColumn::Index(i) => Some(*i),
        LabelColumn::Last => first.len().checked_sub(1),
        LabelColumn::Name(_) => None,
    };
    let numeric = first
        .iter()
        .enumerate()
        .all(|(j, c)| Some(j) == skip || c.parse::<f64>().is_ok());
    let header = if numeric && !matches!(opts.label, LabelColumn::Name(_)) {
        None
    } else {
        Some(records.remove(0))
    };
    if records.is_empty() {
        return Err(Error::NoDataRows);
    }

    let width = records[0].len();
    let label_idx = match &opts.label {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Index(i) => {
            return Err(Error::Label(format!("index {i} out of range for {width} columns")))
        }
        LabelColumn::Last => width - 1,
        LabelColumn::Name(n) => {
            let h = header
                .as_ref()
                .ok_or_else(|| Error::Label(format!("column '{n}' requested but file has no header")))?;
            h.iter()
                .position(|c| c == n)
                .ok_or_else(|| Error::Label(format!("no column named '{n}'")))?
        }
    };
    if width < 2 {
        return Err(Error::Label("need at least one feature column besides the label".into()));
    }

    let dim = width - 1;
    let mut values = Vec::with_capacity(records.len() * dim);
    let mut raw_labels = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let row = i + 1;
        if rec.len() != width {
            return Err(Error::BadRow {
                row,
                message: format!("expected {width} cells, found {}", rec.len()),
            });
        }
        for (j, cell) in rec.iter().enumerate() {
            if j == label_idx {
                raw_labels.push(cell.to_string());
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::BadRow {
                row,
                message: format!("non-numeric value '{cell}' in column {j}"),
            })?;
            if !v.is_finite() {
                return Err(Error::BadRow {
                    row,
                    message: format!("non-finite value '{cell}' in column {j}"),
                });
            }
            values.push(v);
        }
    }

    let labels = encode_labels(&raw_labels, &opts.encoding)?;
    let features = Array2::from_shape_vec((records.len(), dim), values)
        .map_err(|e| Error::Csv(e.to_string()))?;
    DataTable::new(name, features, labels)
}

fn encode_labels(raw: &[String], encoding: &LabelEncoding) -> Result<Vec<Label>> {
    let mut distinct: Vec<&str> = raw.iter().map(String::as_str).collect();
    distinct.sort_unstable();
    distinct.dedup();
    let labels = match encoding {
        LabelEncoding::Binary => raw
            .iter()
            .enumerate()
            .map(|(i, v)| match v.parse::<f64>() {
                Ok(0.0) => Ok(Label::Normal),
                Ok(1.0) => Ok(Label::Anomaly),
                _ => Err(Error::BadRow {
                    row: i + 1,
                    message: format!("label '{v}' is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<_>>>()?,
        LabelEncoding::AnomalyValue(a) => {
            if distinct.len() > 2 {
                return Err(Error::Label(format!(
                    "expected two distinct values, found {}",
                    distinct.len()
                )));
            }
            raw.iter()
                .map(|v| if v == a { Label::Anomaly } else { Label::Normal })
                .collect()
        }
    };
    let anomalies = labels.iter().filter(|l| l.is_anomaly()).count();
    if anomalies == 0 || anomalies == labels.len() {
        return Err(Error::Label("label column holds a single class".into()));
    }
    Ok(labels)
}

/// How to partition a table into train and test sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub seed: u64,
    pub train_fraction: f64,
    pub stratified: bool,
}

impl SplitSpec {
    /// Stratified split with the given seed and train fraction.
    pub fn new(seed: u64, train_fraction: f64) -> Self {
        Self {
            seed,
            train_fraction,
            stratified: true,
        }
    }
}

/// Partition `table` into (train, test). Each partition keeps the original
/// row order. The test partition always contains both classes.
pub fn split(table: &DataTable, spec: &SplitSpec) -> Result<(DataTable, DataTable)> {
    let f = spec.train_fraction;
    if !(f > 0.0 && f < 1.0) {
        return Err(Error::invalid(format!("train_fraction {f} not in (0, 1)")));
    }
    let normals: Vec<usize> = (0..table.count())
        .filter(|&i| !table.labels[i].is_anomaly())
        .collect();
    let anomalies: Vec<usize> = (0..table.count())
        .filter(|&i| table.labels[i].is_anomaly())
        .collect();
    if normals.is_empty() || anomalies.is_empty() {
        return Err(Error::invalid("split needs both classes present"));
    }

    let mut rng = seeded(spec.seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    if spec.stratified {
        for class in [normals, anomalies] {
            let mut idx = class;
            idx.shuffle(&mut rng);
            let n = idx.len();
            // keep at least one row of every class in test
            let k = ((f * n as f64).round() as usize).min(n - 1);
            train.extend_from_slice(&idx[..k]);
            test.extend_from_slice(&idx[k..]);
        }
    } else {
        let mut idx: Vec<usize> = (0..table.count()).collect();
        idx.shuffle(&mut rng);
        let k = (f * idx.len() as f64).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
        let test_anomalies = test.iter().filter(|&&i| table.labels[i].is_anomaly()).count();
        if test_anomalies == 0 || test_anomalies == test.len() {
            return Err(Error::invalid(
                "unstratified split left the test set with a single class",
            ));
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::invalid(format!(
            "train_fraction {f} leaves a partition empty"
        )));
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((table.subset(&train), table.subset(&test)))
}

/// Per-column affine map fitted on training data. A zero `scale` marks a
/// constant column, which maps to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

/// Per-column feature scaling applied before the autoencoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scaling {
    /// Zero mean, unit population variance.
    #[default]
    Zscore,
    /// Training minimum to 0, training maximum to 1.
    Minmax,
    /// Features pass through unchanged.
    None,
}

impl Scaler {
    pub fn fit_with(features: &Array2<f64>, scaling: Scaling) -> Result<Scaler> {
        match scaling {
            Scaling::Zscore => Scaler::fit(features),
            Scaling::Minmax => Scaler::fit_minmax(features),
            Scaling::None => Ok(Scaler::identity(features.ncols())),
        }
    }

    /// Column minimum as offset and range as scale; constant columns map to 0.
    pub fn fit_minmax(features: &Array2<f64>) -> Result<Scaler> {
        if features.nrows() == 0 {
            return Err(Error::invalid("cannot fit a scaler on an empty table"));
        }
        let (mut mean, mut scale) = (Vec::new(), Vec::new());
        for col in features.columns() {
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let tol = 1e-12 * lo.abs().max(hi.abs()).max(1.0);
            mean.push(lo);
            scale.push(if hi - lo > tol { hi - lo } else { 0.0 });
        }
        Ok(Scaler { mean, scale })
    }

    /// Population mean and standard deviation of every column.
    pub fn fit(features: &Array2<f64>) -> Result<Scaler> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::invalid("cannot fit a scaler on an empty table"));
        }
        let mean = features.mean_axis(Axis(0)).expect("nonempty");
        let mut scale = Vec::with_capacity(features.ncols());
        for (j, col) in features.columns().into_iter().enumerate() {
            let var = col.iter().map(|v| (v - mean[j]).powi(2)).sum::<f64>() / n as f64;
            let sd = var.sqrt();
            // relative cutoff so rounding noise on a constant column is not amplified
            let tol = 1e-12 * mean[j].abs().max(1.0);
            scale.push(if sd > tol { sd } else { 0.0 });
        }
        Ok(Scaler {
            mean: mean.to_vec(),
            scale,
        })
    }

    pub fn identity(dim: usize) -> Scaler {
        Scaler {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn transform_row(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        Error::check_dim(self.dim(), x.len())?;
        Ok(Array1::from_iter(x.iter().enumerate().map(|(j, v)| {
            if self.scale[j] == 0.0 {
                0.0
            } else {
                (v - self.mean[j]) / self.scale[j]
            }
        })))
    }

    pub fn transform(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        Error::check_dim(self.dim(), features.ncols())?;
        let mut out = features.clone();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if self.scale[j] == 0.0 {
                    0.0
                } else {
                    (*v - self.mean[j]) / self.scale[j]
                };
            }
        }
        Ok(out)
    }

    /// Undo [`Scaler::transform`]. Constant columns come back as their mean.
    pub fn inverse_transform(&self, features: &Array2<f64>) -> Result<Array2<f64>> {
        Error::check_dim(self.dim(), features.ncols())?;
        let mut out = features.clone();
        for mut row in out.outer_iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.scale[j] + self.mean[j];
            }
        }
        Ok(out)
    }
}

/// Fit a scaler on `train` and apply it to both tables.
pub fn standardize(train: &DataTable, test: &DataTable) -> Result<(DataTable, DataTable, Scaler)> {
    let scaler = Scaler::fit(train.features())?;
    let tr = train.with_features(scaler.transform(train.features())?)?;
    let te = test.with_features(scaler.transform(test.features())?)?;
    Ok((tr, te, scaler))
}
