use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, streams};
use crate::tensor::Matrix;

/// Per-column affine map `z = (x − mean) / std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn identity(p: usize) -> Self {
        Self {
            mean: vec![0.0; p],
            std: vec![1.0; p],
        }
    }

    /// Column means and (population) standard deviations of `x`. A constant
    /// column is an error since it cannot be standardized.
    pub fn fit(x: &Matrix, names: Option<&[String]>) -> Result<Self> {
        if x.rows() == 0 {
            return Err(Error::Data("cannot standardize an empty matrix".into()));
        }
        let mean = x.col_means();
        let n = x.rows() as f64;
        let mut std = Vec::with_capacity(x.cols());
        for (j, m) in mean.iter().enumerate() {
            let var = (0..x.rows()).map(|i| (x.get(i, j) - m).powi(2)).sum::<f64>() / n;
            let s = var.sqrt();
            if s <= 1e-12 * m.abs().max(1.0) {
                let name = names.and_then(|n| n.get(j)).cloned().unwrap_or_else(|| format!("#{}", j + 1));
                return Err(Error::Data(format!("column {name} is constant and cannot be standardized")));
            }
            std.push(s);
        }
        Ok(Self { mean, std })
    }

    pub fn fit_vector(y: &[f64]) -> Result<Self> {
        Self::fit(&Matrix::column(y.to_vec()), Some(&["target".to_string()]))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| (x.get(i, j) - self.mean[j]) / self.std[j])
    }

    pub fn invert(&self, z: &Matrix) -> Matrix {
        Matrix::from_fn(z.rows(), z.cols(), |i, j| z.get(i, j) * self.std[j] + self.mean[j])
    }

    pub fn apply_scalar(&self, v: f64) -> f64 {
        (v - self.mean[0]) / self.std[0]
    }

    pub fn invert_scalar(&self, z: f64) -> f64 {
        z * self.std[0] + self.mean[0]
    }
}

/// Design matrix, targets and metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Features; standardized when `x_scale` is set.
    pub x: Matrix,
    pub y: Vec<f64>,
    pub feature_names: Vec<String>,
    pub target_name: String,
    pub x_scale: Option<Standardization>,
    /// Target mean/std, recorded but not applied.
    pub y_stats: Standardization,
    pub seed: Option<u64>,
}

/// Train/test index sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, feature_names: Vec<String>, target_name: impl Into<String>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Data(format!("{} feature rows but {} targets", x.rows(), y.len())));
        }
        if feature_names.len() != x.cols() {
            return Err(Error::Data(format!("{} feature names for {} columns", feature_names.len(), x.cols())));
        }
        if !x.is_finite() || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        let y_stats = if y.is_empty() {
            Standardization::identity(1)
        } else {
            let m = y.iter().sum::<f64>() / y.len() as f64;
            let s = (y.iter().map(|v| (v - m).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
            Standardization { mean: vec![m], std: vec![s] }
        };
        Ok(Self {
            x,
            y,
            feature_names,
            target_name: target_name.into(),
            x_scale: None,
            y_stats,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Features in original units.
    pub fn raw_x(&self) -> Matrix {
        match &self.x_scale {
            Some(s) => s.invert(&self.x),
            None => self.x.clone(),
        }
    }

    pub fn y_column(&self) -> Matrix {
        Matrix::column(self.y.clone())
    }

    /// Standardizes features in place using statistics of this dataset.
    pub fn standardize(&mut self) -> Result<()> {
        if self.x_scale.is_some() {
            return Ok(());
        }
        let s = Standardization::fit(&self.x, Some(&self.feature_names))?;
        self.x = s.apply(&self.x);
        self.x_scale = Some(s);
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let y: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        let mut d = Dataset::new(self.x.select_rows(idx), y, self.feature_names.clone(), self.target_name.clone())
            .expect("subset of a valid dataset");
        d.x_scale = self.x_scale.clone();
        d.seed = self.seed;
        d
    }

    /// Random split with `round(test_fraction · n)` test rows.
    pub fn random_split(&self, test_fraction: f64, seed: u64) -> Result<Split> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::InvalidArgument(format!("test fraction {test_fraction} outside [0, 1)")));
        }
        let mut r = rng::stream(seed, streams::SPLIT);
        let perm = rng::permutation(&mut r, self.len());
        let n_test = (test_fraction * self.len() as f64).round() as usize;
        let mut test = perm[..n_test].to_vec();
        let mut train = perm[n_test..].to_vec();
        test.sort_unstable();
        train.sort_unstable();
        Ok(Split { seed, train, test })
    }

    pub fn apply_split(&self, split: &Split) -> (Dataset, Dataset) {
        (self.subset(&split.train), self.subset(&split.test))
    }

    /// Writes raw features and the target as CSV with a header.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = self.feature_names.clone();
        header.push(self.target_name.clone());
        w.write_record(&header)?;
        let x = self.raw_x();
        for i in 0..self.len() {
            let mut rec: Vec<String> = x.row(i).iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{:?}", self.y[i]));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a headed numeric CSV. `target` names the response column; all other
/// columns become features. Cell errors report 1-based data row (header
/// excluded) and 1-based column.
pub fn ingest_csv(path: &Path, target: &str, standardize: bool) -> Result<Dataset> {
    let file = fs::File::open(path)?;
    ingest_csv_reader(file, target, standardize)
}

pub fn ingest_csv_reader<R: Read>(reader: R, target: &str, standardize: bool) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let t = header
        .iter()
        .position(|h| h == target)
        .ok_or_else(|| Error::Data(format!("target column '{target}' not found; columns are {header:?}")))?;
    let names: Vec<String> = header.iter().enumerate().filter(|(j, _)| *j != t).map(|(_, h)| h.clone()).collect();
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != header.len() {
            return Err(Error::Cell {
                row: r + 1,
                col: rec.len().min(header.len()) + 1,
                msg: format!("expected {} fields, found {}", header.len(), rec.len()),
            });
        }
        let mut row = Vec::with_capacity(names.len());
        for (c, cell) in rec.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Cell {
                row: r + 1,
                col: c + 1,
                msg: format!("'{cell}' in column '{}' is not a number", header[c]),
            })?;
            if !v.is_finite() {
                return Err(Error::Cell {
                    row: r + 1,
                    col: c + 1,
                    msg: format!("non-finite value in column '{}'", header[c]),
                });
            }
            if c == t {
                y.push(v);
            } else {
                row.push(v);
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Data("CSV has no data rows".into()));
    }
    let x = Matrix::from_rows(&rows)?;
    let mut d = Dataset::new(x, y, names, target)?;
    if standardize {
        d.standardize()?;
    }
    Ok(d)
}

/// Describes an ingested benchmark: where it came from and which splits to
/// evaluate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub path: PathBuf,
    pub target: String,
    pub standardize: bool,
    pub test_fraction: f64,
    pub split_seeds: Vec<u64>,
}

impl DatasetManifest {
    pub fn new(path: impl Into<PathBuf>, target: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            target: target.into(),
            standardize: true,
            test_fraction: 0.1,
            split_seeds: (0..20).collect(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            field: "manifest".into(),
            line: None,
            msg: e.message().to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_csv_is_read_exactly() {
        let text = "a,b,y\n1,2,3\n4,5,6\n7,8.5,9\n";
        let d = ingest_csv_reader(text.as_bytes(), "y", false).unwrap();
        assert_eq!(d.x, Matrix::from_rows(&[vec![1.0, 2.0], vec![4.0, 5.0], vec![7.0, 8.5]]).unwrap());
        assert_eq!(d.y, vec![3.0, 6.0, 9.0]);
        assert_eq!(d.feature_names, vec!["a", "b"]);
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let text = "a,b,y\n1,2,3\n4,abc,6\n";
        match ingest_csv_reader(text.as_bytes(), "y", false) {
            Err(Error::Cell { row, col, .. }) => assert_eq!((row, col), (2, 2)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_target_and_constant_column() {
        let text = "a,b,y\n1,2,3\n1,5,6\n";
        assert!(matches!(ingest_csv_reader(text.as_bytes(), "z", false), Err(Error::Data(_))));
        assert!(matches!(ingest_csv_reader(text.as_bytes(), "y", true), Err(Error::Data(_))));
    }

    #[test]
    fn standardize_round_trip() {
        let x = Matrix::from_fn(7, 3, |i, j| ((i * 13 + j * 7) % 5) as f64 * 1.7 - j as f64);
        let s = Standardization::fit(&x, None).unwrap();
        let back = s.invert(&s.apply(&x));
        assert!(back.sub(&x).unwrap().max_abs() <= 1e-12);
        let z = s.apply(&x);
        for m in z.col_means() {
            assert!(m.abs() < 1e-12);
        }
    }

    #[test]
    fn split_partitions_rows() {
        let d = Dataset::new(Matrix::from_fn(20, 1, |i, _| i as f64), (0..20).map(f64::from).collect(), vec!["a".into()], "y").unwrap();
        let s = d.random_split(0.1, 4).unwrap();
        assert_eq!(s.test.len(), 2);
        let mut all: Vec<usize> = s.train.iter().chain(&s.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert_eq!(s, d.random_split(0.1, 4).unwrap());
    }

    #[test]
    fn manifest_round_trip() {
        let m = DatasetManifest::new("data/housing.csv", "price");
        assert_eq!(DatasetManifest::from_toml(&m.to_toml()).unwrap(), m);
    }
}
