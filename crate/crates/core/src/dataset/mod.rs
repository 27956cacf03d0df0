//! Soil dataset: schema, CSV loading, summary statistics, seeded
//! train/test splitting, min-max scaling and a synthetic generator.

mod scaler;
mod stats;
mod synth;

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

pub use scaler::MinMaxScaler;
pub use stats::{quantile_linear, summarize, ColumnStats, SummaryStats};
pub use synth::{
    bayes_noise_scale, noise_free_targets, synthesize, SynthSpec, DEFAULT_NOISE_SCALE,
    FEATURE_RANGES, TARGET_RANGES,
};

pub const N_INPUTS: usize = 7;
pub const N_TARGETS: usize = 3;

pub const INPUT_NAMES: [&str; N_INPUTS] = ["HARSH", "LL", "PL", "PI", "OMC", "CA", "MDD"];
pub const TARGET_NAMES: [&str; N_TARGETS] = ["CBR", "UCS", "R"];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("duplicate column {0:?}")]
    DuplicateColumn(String),
    #[error("cannot parse cell at data row {row}, column {col}")]
    UnparseableCell { row: usize, col: String },
    #[error("non-finite value at data row {row}, column {col}")]
    NonFiniteValue { row: usize, col: String },
    #[error("dataset needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("row ids are not unique")]
    DuplicateRowId,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("split would produce train size {train} and test size {test}; both need at least 2 rows")]
    DegenerateSplit { train: usize, test: usize },
    #[error("train fraction must lie in (0, 1), got {0}")]
    InvalidFraction(f64),
}

/// Ordered input and target column names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    input_names: Vec<String>,
    target_names: Vec<String>,
}

impl FeatureSchema {
    /// The canonical soil schema: HARSH, LL, PL, PI, OMC, CA, MDD -> CBR, UCS, R.
    pub fn soil() -> Self {
        Self {
            input_names: INPUT_NAMES.iter().map(|s| s.to_string()).collect(),
            target_names: TARGET_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn new(inputs: Vec<String>, targets: Vec<String>) -> Result<Self, DatasetError> {
        if inputs.len() != N_INPUTS || targets.len() != N_TARGETS {
            return Err(DatasetError::InvalidSchema(format!(
                "expected {N_INPUTS} inputs and {N_TARGETS} targets, got {} and {}",
                inputs.len(),
                targets.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in inputs.iter().chain(&targets) {
            if !seen.insert(name.to_ascii_lowercase()) {
                return Err(DatasetError::InvalidSchema(format!("duplicate name {name:?}")));
            }
        }
        Ok(Self {
            input_names: inputs,
            target_names: targets,
        })
    }

    pub fn input_names(&self) -> &[String] {
        &self.input_names
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    /// Case-insensitive lookup of an input feature.
    pub fn input_index(&self, name: &str) -> Option<usize> {
        self.input_names
            .iter()
            .position(|n| n.eq_ignore_ascii_case(name))
    }

    fn all_names(&self) -> impl Iterator<Item = &String> {
        self.input_names.iter().chain(&self.target_names)
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::soil()
    }
}

/// One of the three predicted soil properties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Cbr,
    Ucs,
    R,
}

impl Target {
    pub const ALL: [Target; 3] = [Target::Cbr, Target::Ucs, Target::R];

    /// Column index in the target matrix.
    pub fn index(self) -> usize {
        match self {
            Target::Cbr => 0,
            Target::Ucs => 1,
            Target::R => 2,
        }
    }

    pub fn name(self) -> &'static str {
        TARGET_NAMES[self.index()]
    }

    pub fn slug(self) -> &'static str {
        match self {
            Target::Cbr => "cbr",
            Target::Ucs => "ucs",
            Target::R => "r",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cbr" => Some(Target::Cbr),
            "ucs" => Some(Target::Ucs),
            "r" | "r-value" | "r_value" => Some(Target::R),
            _ => None,
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Validated table of input features and targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    schema: FeatureSchema,
    x: Matrix,
    y: Matrix,
    row_ids: Vec<u64>,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        x: Matrix,
        y: Matrix,
        row_ids: Vec<u64>,
    ) -> Result<Self, DatasetError> {
        let n = x.n_rows();
        if x.n_cols() != schema.input_names.len() || y.n_cols() != schema.target_names.len() {
            return Err(DatasetError::ShapeMismatch(format!(
                "x is {}x{}, y is {}x{}",
                x.n_rows(),
                x.n_cols(),
                y.n_rows(),
                y.n_cols()
            )));
        }
        if y.n_rows() != n || row_ids.len() != n {
            return Err(DatasetError::ShapeMismatch(format!(
                "{n} feature rows, {} target rows, {} row ids",
                y.n_rows(),
                row_ids.len()
            )));
        }
        if n < 2 {
            return Err(DatasetError::TooFewRows(n));
        }
        for (m, offset) in [(&x, 0), (&y, schema.input_names.len())] {
            for i in 0..n {
                if let Some(j) = m.row(i).iter().position(|v| !v.is_finite()) {
                    let col = schema.all_names().nth(offset + j).cloned().unwrap_or_default();
                    return Err(DatasetError::NonFiniteValue { row: i, col });
                }
            }
        }
        let unique: HashSet<_> = row_ids.iter().collect();
        if unique.len() != n {
            return Err(DatasetError::DuplicateRowId);
        }
        Ok(Self {
            schema,
            x,
            y,
            row_ids,
        })
    }

    /// Soil-schema dataset with row ids `0..n`.
    pub fn from_parts(x: Matrix, y: Matrix) -> Result<Self, DatasetError> {
        let ids = (0..x.n_rows() as u64).collect();
        Self::new(FeatureSchema::soil(), x, y, ids)
    }

    pub fn schema(&self) -> &FeatureSchema {
        &self.schema
    }

    pub fn n(&self) -> usize {
        self.x.n_rows()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &Matrix {
        &self.y
    }

    pub fn row_ids(&self) -> &[u64] {
        &self.row_ids
    }

    /// Values of one target column.
    pub fn target(&self, t: Target) -> Vec<f64> {
        self.y.column(t.index())
    }

    /// Rows at the given positions (not row ids), in that order.
    pub fn subset(&self, positions: &[usize]) -> Result<Self, DatasetError> {
        Self::new(
            self.schema.clone(),
            self.x.select_rows(positions),
            self.y.select_rows(positions),
            positions.iter().map(|&p| self.row_ids[p]).collect(),
        )
    }

    /// Same rows and targets with replaced inputs.
    pub(crate) fn with_inputs(&self, x: Matrix) -> Self {
        debug_assert_eq!(x.n_rows(), self.n());
        Self {
            schema: self.schema.clone(),
            x,
            y: self.y.clone(),
            row_ids: self.row_ids.clone(),
        }
    }

    pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Self, DatasetError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(file, schema)
    }

    /// Parses comma-separated data with one header row. Header names are
    /// matched case-insensitively and in any order; unknown columns are
    /// ignored.
    pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Self, DatasetError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();

        let mut column_of = Vec::new();
        for name in schema.all_names() {
            let mut hits = headers
                .iter()
                .enumerate()
                .filter(|(_, h)| h.eq_ignore_ascii_case(name));
            let Some((idx, _)) = hits.next() else {
                return Err(DatasetError::MissingColumn(name.clone()));
            };
            if hits.next().is_some() {
                return Err(DatasetError::DuplicateColumn(name.clone()));
            }
            column_of.push(idx);
        }

        let n_in = schema.input_names.len();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record?;
            for (k, (&idx, name)) in column_of.iter().zip(schema.all_names()).enumerate() {
                let cell = record.get(idx).unwrap_or("");
                let v: f64 = cell.parse().map_err(|_| DatasetError::UnparseableCell {
                    row,
                    col: name.clone(),
                })?;
                if !v.is_finite() {
                    return Err(DatasetError::NonFiniteValue {
                        row,
                        col: name.clone(),
                    });
                }
                if k < n_in {
                    xs.push(v);
                } else {
                    ys.push(v);
                }
            }
        }
        let n = xs.len() / n_in;
        if n < 2 {
            return Err(DatasetError::TooFewRows(n));
        }
        Self::new(
            schema.clone(),
            Matrix::from_vec(n, n_in, xs),
            Matrix::from_vec(n, schema.target_names.len(), ys),
            (0..n as u64).collect(),
        )
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<(), DatasetError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Writes inputs then targets under a single header row. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DatasetError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.all_names())?;
        for i in 0..self.n() {
            let cells: Vec<String> = self
                .x
                .row(i)
                .iter()
                .chain(self.y.row(i))
                .map(|v| v.to_string())
                .collect();
            w.write_record(&cells)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Seeded train/test partition; see [`SplitSpec`].
    pub fn split(&self, spec: &SplitSpec) -> Result<(Dataset, Dataset), DatasetError> {
        let (train, test) = spec.partition(self.n())?;
        Ok((self.subset(&train)?, self.subset(&test)?))
    }
}

/// Rounds to the nearest integer with halves going up. Products such as
/// 0.7 * 85 land a hair below the half in binary, so values within 1e-9 of
/// a half count as the half.
pub fn round_half_up(v: f64) -> usize {
    (v + 0.5 + 1e-9).floor().max(0.0) as usize
}

/// Train fraction and shuffle seed for a single train/test split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl SplitSpec {
    pub fn new(train_fraction: f64, seed: u64) -> Self {
        Self {
            train_fraction,
            seed,
        }
    }

    /// round(fraction * n), halves rounded up.
    pub fn train_size(&self, n: usize) -> Result<usize, DatasetError> {
        let f = self.train_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(DatasetError::InvalidFraction(f));
        }
        Ok(round_half_up(f * n as f64))
    }

    /// Row positions for (train, test): a seeded uniform shuffle of `0..n`
    /// whose prefix is the training partition.
    pub fn partition(&self, n: usize) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
        let n_train = self.train_size(n)?;
        let n_test = n.saturating_sub(n_train);
        if n_train < 2 || n_test < 2 {
            return Err(DatasetError::DegenerateSplit {
                train: n_train,
                test: n_test,
            });
        }
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut ChaCha8Rng::seed_from_u64(self.seed));
        let test = perm.split_off(n_train);
        Ok((perm, test))
    }
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self::new(0.7, 0)
    }
}
