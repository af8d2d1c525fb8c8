//! CSV ingestion, seeded train/test split and feature standardization.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Share of the rows used for training.
pub const TRAIN_FRACTION: f64 = 0.9;

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed CSV at line {line}: {message}")]
    MalformedCsv { line: u64, message: String },
    #[error("no column named {0:?}")]
    MissingColumn(String),
    #[error("dataset has {0} rows, need at least 2")]
    TooFewRows(usize),
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub target_name: String,
    /// Standardized features, one row per sample.
    pub inputs: DMatrix<f64>,
    /// Targets in their original units.
    pub targets: DVector<f64>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Training-split mean and standard deviation of each raw feature.
    pub feature_mean: DVector<f64>,
    pub feature_std: DVector<f64>,
}

impl Dataset {
    pub fn train_inputs(&self) -> DMatrix<f64> {
        self.inputs.select_rows(&self.train)
    }

    pub fn train_targets(&self) -> DVector<f64> {
        self.targets.select_rows(&self.train)
    }

    pub fn test_inputs(&self) -> DMatrix<f64> {
        self.inputs.select_rows(&self.test)
    }

    pub fn test_targets(&self) -> DVector<f64> {
        self.targets.select_rows(&self.test)
    }
}

/// `;` when the header has more semicolons than commas, `,` otherwise.
pub fn detect_delimiter(text: &str) -> u8 {
    let header = text.lines().next().unwrap_or("");
    let semis = header.matches(';').count();
    let commas = header.matches(',').count();
    if semis > commas {
        b';'
    } else {
        b','
    }
}

/// Raw numeric table: header names and one row per record.
pub fn parse_csv(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>), DatasetError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(detect_delimiter(text))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let malformed = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        DatasetError::MalformedCsv {
            line,
            message: e.to_string(),
        }
    };
    let header: Vec<String> = reader.headers().map_err(malformed)?.iter().map(str::to_owned).collect();
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(malformed)?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .map(|field| {
                field.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| DatasetError::MalformedCsv {
                    line,
                    message: format!("{field:?} is not a finite number"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Seeded permutation split: the first `⌊TRAIN_FRACTION · n⌋` shuffled
/// indices train, the rest test. Both lists are returned sorted.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (TRAIN_FRACTION * n as f64).floor() as usize;
    let mut train = order[..n_train].to_vec();
    let mut test = order[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}

/// Builds a split, standardized dataset from CSV text.
pub fn from_csv_text(text: &str, target_column: &str, seed: u64) -> Result<Dataset, DatasetError> {
    let (header, rows) = parse_csv(text)?;
    let target_idx = header
        .iter()
        .position(|h| h == target_column)
        .ok_or_else(|| DatasetError::MissingColumn(target_column.to_owned()))?;
    if rows.len() < 2 {
        return Err(DatasetError::TooFewRows(rows.len()));
    }
    let feature_cols: Vec<usize> = (0..header.len()).filter(|&c| c != target_idx).collect();
    let raw = DMatrix::from_fn(rows.len(), feature_cols.len(), |i, j| rows[i][feature_cols[j]]);
    let targets = DVector::from_fn(rows.len(), |i, _| rows[i][target_idx]);
    let (train, test) = split_indices(rows.len(), seed);

    let train_raw = raw.select_rows(&train);
    let n_train = train.len() as f64;
    let mean = DVector::from_fn(raw.ncols(), |j, _| train_raw.column(j).sum() / n_train);
    let std = DVector::from_fn(raw.ncols(), |j, _| {
        let var = train_raw.column(j).iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / n_train;
        // constant columns are only centred
        if var > 0.0 {
            var.sqrt()
        } else {
            1.0
        }
    });
    let inputs = DMatrix::from_fn(raw.nrows(), raw.ncols(), |i, j| (raw[(i, j)] - mean[j]) / std[j]);

    Ok(Dataset {
        feature_names: feature_cols.iter().map(|&c| header[c].clone()).collect(),
        target_name: target_column.to_owned(),
        inputs,
        targets,
        train,
        test,
        feature_mean: mean,
        feature_std: std,
    })
}

pub fn load_csv(path: &Path, target_column: &str, seed: u64) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_csv_text(&text, target_column, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delimiter_detection() {
        assert_eq!(detect_delimiter("a;b;c\n1;2;3"), b';');
        assert_eq!(detect_delimiter("a,b\n1,2"), b',');
        assert_eq!(detect_delimiter("\"a;x\",b,c\n"), b',');
    }

    #[test]
    fn toy_shapes() {
        let d = from_csv_text("x;y;t\n1;2;3\n4;5;6\n7;8;9\n", "t", 0).unwrap();
        assert_eq!(d.inputs.shape(), (3, 2));
        assert_eq!(d.targets.len(), 3);
        assert_eq!(d.feature_names, vec!["x", "y"]);
        assert_eq!(d.train.len() + d.test.len(), 3);
    }

    #[test]
    fn split_sizes_floor() {
        let (train, test) = split_indices(1599, 7);
        assert_eq!((train.len(), test.len()), (1439, 160));
        let (train, test) = split_indices(10, 7);
        assert_eq!((train.len(), test.len()), (9, 1));
    }

    #[test]
    fn split_is_seeded_and_disjoint() {
        let (a, at) = split_indices(50, 3);
        let (b, _) = split_indices(50, 3);
        let (c, _) = split_indices(50, 4);
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|i| !at.contains(i)));
    }

    #[test]
    fn training_features_standardized() {
        let text: String = std::iter::once("a,b,c,t\n".to_owned())
            .chain((0..40).map(|i| format!("{},{},5,{}\n", i * i, 3 * i + 1, i % 3)))
            .collect();
        let d = from_csv_text(&text, "t", 11).unwrap();
        let tr = d.train_inputs();
        for j in 0..tr.ncols() {
            assert!(tr.column(j).mean().abs() <= 1e-10);
        }
        let var = tr.column(0).iter().map(|x| x * x).sum::<f64>() / tr.nrows() as f64;
        assert!((var - 1.0).abs() < 1e-10);
        assert!(tr.column(2).amax() == 0.0);
    }

    #[test]
    fn errors_carry_context() {
        match from_csv_text("a,b\n1,2\n3,x\n", "b", 0) {
            Err(DatasetError::MalformedCsv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match from_csv_text("a,b\n1,2\n3\n", "b", 0) {
            Err(DatasetError::MalformedCsv { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        assert!(matches!(from_csv_text("a,b\n1,2\n3,4\n", "q", 0), Err(DatasetError::MissingColumn(_))));
    }
}
