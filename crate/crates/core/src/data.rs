//! Dataset representation, CSV ingestion, confounder encoding and
//! joint-distribution-preserving train/test splits.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng;

/// Distinct numeric values above which an undiscretized confounder column is
/// treated as continuous and refused.
pub const MAX_CATEGORICAL_LEVELS: usize = 20;

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::LengthMismatch {
                    expected: cols,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }
}

/// Categorical variable: per-sample level indices plus level names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Confounder {
    levels: Vec<usize>,
    names: Vec<String>,
}

impl Confounder {
    pub fn new(levels: Vec<usize>, names: Vec<String>) -> Result<Self> {
        if let Some(&bad) = levels.iter().find(|&&l| l >= names.len()) {
            return Err(Error::InvalidDataset(format!(
                "confounder level {bad} out of range for {} levels",
                names.len()
            )));
        }
        Ok(Self { levels, names })
    }

    /// Encode string values by order of first appearance.
    pub fn from_values<S: AsRef<str>>(values: &[S]) -> Self {
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut names = Vec::new();
        let levels = values
            .iter()
            .map(|v| {
                let v = v.as_ref();
                *index.entry(v).or_insert_with(|| {
                    names.push(v.to_string());
                    names.len() - 1
                })
            })
            .collect();
        Self { levels, names }
    }

    pub fn levels(&self) -> &[usize] {
        &self.levels
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_levels(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn name_of(&self, i: usize) -> &str {
        &self.names[self.levels[i]]
    }

    pub fn select(&self, idx: &[usize]) -> Confounder {
        Confounder {
            levels: idx.iter().map(|&i| self.levels[i]).collect(),
            names: self.names.clone(),
        }
    }
}

/// Features, binary labels, a categorical confounder and optional weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<u8>,
    confounder: Confounder,
    weights: Option<Vec<f64>>,
    feature_names: Vec<String>,
    label_name: String,
    confounder_name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<u8>, confounder: Confounder) -> Result<Self> {
        let p = features.cols();
        let ds = Self {
            feature_names: (1..=p).map(|j| format!("x{j}")).collect(),
            features,
            labels,
            confounder,
            weights: None,
            label_name: "label".into(),
            confounder_name: "confounder".into(),
        };
        ds.validate()?;
        Ok(ds)
    }

    fn validate(&self) -> Result<()> {
        let n = self.features.rows();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        if self.features.cols() == 0 {
            return Err(Error::InvalidDataset("no feature columns".into()));
        }
        for len in [self.labels.len(), self.confounder.len()] {
            if len != n {
                return Err(Error::LengthMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if self.feature_names.len() != self.features.cols() {
            return Err(Error::LengthMismatch {
                expected: self.features.cols(),
                got: self.feature_names.len(),
            });
        }
        if let Some(row) = self.labels.iter().position(|&l| l > 1) {
            return Err(Error::InvalidLabel {
                row,
                value: self.labels[row].to_string(),
            });
        }
        if let Some(w) = &self.weights {
            validate_weights(w, n)?;
        }
        Ok(())
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        validate_weights(&weights, self.n())?;
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn without_weights(mut self) -> Self {
        self.weights = None;
        self
    }

    pub fn with_names(
        mut self,
        feature_names: Vec<String>,
        label_name: impl Into<String>,
        confounder_name: impl Into<String>,
    ) -> Result<Self> {
        self.feature_names = feature_names;
        self.label_name = label_name.into();
        self.confounder_name = confounder_name.into();
        self.validate()?;
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn p(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn confounder(&self) -> &Confounder {
        &self.confounder
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Weights, or all ones when none are attached.
    pub fn weights_or_ones(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.n()])
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn label_name(&self) -> &str {
        &self.label_name
    }

    pub fn confounder_name(&self) -> &str {
        &self.confounder_name
    }

    /// Rows `idx` (in the given order, repeats allowed). Level names are kept.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            confounder: self.confounder.select(idx),
            weights: self
                .weights
                .as_ref()
                .map(|w| idx.iter().map(|&i| w[i]).collect()),
            feature_names: self.feature_names.clone(),
            label_name: self.label_name.clone(),
            confounder_name: self.confounder_name.clone(),
        }
    }

    /// Sample indices grouped by (level, label), in sorted key order.
    pub fn cells(&self) -> BTreeMap<(usize, u8), Vec<usize>> {
        let mut cells: BTreeMap<(usize, u8), Vec<usize>> = BTreeMap::new();
        for (i, (&c, &y)) in self
            .confounder
            .levels()
            .iter()
            .zip(&self.labels)
            .enumerate()
        {
            cells.entry((c, y)).or_default().push(i);
        }
        cells
    }

    /// Write as CSV: features, label, confounder and an optional `weight` column.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.feature_names.iter().map(String::as_str).collect();
        header.push(&self.label_name);
        header.push(&self.confounder_name);
        if self.weights.is_some() {
            header.push("weight");
        }
        w.write_record(&header)?;
        let mut record = Vec::with_capacity(header.len());
        for i in 0..self.n() {
            record.clear();
            record.extend(self.features.row(i).iter().map(f64::to_string));
            record.push(self.labels[i].to_string());
            record.push(self.confounder.name_of(i).to_string());
            if let Some(wt) = &self.weights {
                record.push(wt[i].to_string());
            }
            w.write_record(&record)?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn validate_weights(w: &[f64], n: usize) -> Result<()> {
    if w.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: w.len(),
        });
    }
    if w.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::InvalidDataset(
            "weights must be finite and non-negative".into(),
        ));
    }
    if !w.iter().any(|&x| x > 0.0) {
        return Err(Error::InvalidDataset("all weights are zero".into()));
    }
    Ok(())
}

/// Closed interval `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.lo, self.hi)
    }
}

/// Ordered, non-overlapping closed intervals; interval `k` is level `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretizationSpec {
    intervals: Vec<Interval>,
}

impl DiscretizationSpec {
    pub fn new(intervals: Vec<Interval>) -> Result<Self> {
        if intervals.is_empty() {
            return Err(Error::InvalidDiscretization("no intervals".into()));
        }
        for iv in &intervals {
            if !(iv.lo.is_finite() && iv.hi.is_finite()) || iv.lo > iv.hi {
                return Err(Error::InvalidDiscretization(format!("bad interval {iv}")));
            }
        }
        for pair in intervals.windows(2) {
            if pair[1].lo <= pair[0].hi {
                return Err(Error::InvalidDiscretization(format!(
                    "intervals {} and {} overlap or are out of order",
                    pair[0], pair[1]
                )));
            }
        }
        Ok(Self { intervals })
    }

    /// Parse `"18-44,45-65,66-99"`.
    pub fn parse(s: &str) -> Result<Self> {
        let intervals = s
            .split(',')
            .map(|part| {
                let part = part.trim();
                // allow a leading minus on the lower bound
                let split_at = part
                    .char_indices()
                    .skip(1)
                    .find(|&(_, c)| c == '-')
                    .map(|(i, _)| i)
                    .ok_or_else(|| {
                        Error::InvalidDiscretization(format!("expected lo-hi, got {part:?}"))
                    })?;
                let (lo, hi) = (&part[..split_at], &part[split_at + 1..]);
                let num = |t: &str| {
                    t.trim().parse::<f64>().map_err(|_| {
                        Error::InvalidDiscretization(format!("bad bound {t:?} in {part:?}"))
                    })
                };
                Ok(Interval {
                    lo: num(lo)?,
                    hi: num(hi)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(intervals)
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn level_names(&self) -> Vec<String> {
        self.intervals.iter().map(Interval::to_string).collect()
    }

    pub fn level_of(&self, v: f64) -> Result<usize> {
        self.intervals
            .iter()
            .position(|iv| iv.lo <= v && v <= iv.hi)
            .ok_or(Error::OutOfSupport { value: v })
    }
}

/// Map each value to the index of the interval containing it.
pub fn discretize(values: &[f64], spec: &DiscretizationSpec) -> Result<Vec<usize>> {
    values.iter().map(|&v| spec.level_of(v)).collect()
}

/// Cross two categorical variables. Only observed combinations get a level,
/// numbered by first appearance; names are `"a:b"`.
pub fn combine_confounders(a: &Confounder, b: &Confounder) -> Result<Confounder> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut index: HashMap<(usize, usize), usize> = HashMap::new();
    let mut names = Vec::new();
    let levels = a
        .levels()
        .iter()
        .zip(b.levels())
        .map(|(&la, &lb)| {
            *index.entry((la, lb)).or_insert_with(|| {
                names.push(format!("{}:{}", a.names()[la], b.names()[lb]));
                names.len() - 1
            })
        })
        .collect();
    Ok(Confounder { levels, names })
}

/// Train and test row indices, both sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SplitIndices {
    pub fn new(mut train: Vec<usize>, mut test: Vec<usize>, n: usize) -> Result<Self> {
        train.sort_unstable();
        test.sort_unstable();
        if train.is_empty() || test.is_empty() {
            return Err(Error::InvalidArgument(
                "train and test must be non-empty".into(),
            ));
        }
        if train.last().is_some_and(|&i| i >= n) || test.last().is_some_and(|&i| i >= n) {
            return Err(Error::InvalidArgument("split index out of range".into()));
        }
        let (mut i, mut j) = (0, 0);
        while i < train.len() && j < test.len() {
            match train[i].cmp(&test[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    return Err(Error::InvalidArgument(format!(
                        "index {} in both train and test",
                        train[i]
                    )))
                }
            }
        }
        Ok(Self { train, test })
    }
}

/// Split so every (confounder level, label) cell sends
/// `round_half_up(size * test_fraction)` samples to test, clamped so each side
/// keeps at least one.
pub fn stratified_split(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<SplitIndices> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "test fraction {test_fraction} not in (0,1)"
        )));
    }
    let mut rng = rng::stream(seed, rng::tag::SPLIT);
    let mut train = Vec::with_capacity(ds.n());
    let mut test = Vec::new();
    for ((level, label), mut members) in ds.cells() {
        let size = members.len();
        if size < 2 {
            return Err(Error::CellTooSmall { level, label, size });
        }
        let k = ((size as f64 * test_fraction + 0.5).floor() as usize).clamp(1, size - 1);
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    SplitIndices::new(train, test, ds.n())
}

/// Apportion `total` units to `shares` by largest remainder; ties go to the
/// earlier entry. Shares must be non-negative with a positive sum.
pub fn largest_remainder(shares: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (quotas[a] - quotas[a].floor(), quotas[b] - quotas[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(total.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Split with exactly `test_size` test rows, apportioned across
/// (level, label) cells by largest remainder of the cell sizes. Every cell
/// must keep at least one row on each side.
pub fn stratified_split_sized(ds: &Dataset, test_size: usize, seed: u64) -> Result<SplitIndices> {
    if test_size == 0 || test_size >= ds.n() {
        return Err(Error::InvalidArgument(format!(
            "test size {test_size} not in 1..{}",
            ds.n()
        )));
    }
    let cells = ds.cells();
    let sizes: Vec<f64> = cells.values().map(|m| m.len() as f64).collect();
    let quota = largest_remainder(&sizes, test_size);
    let mut rng = rng::stream(seed, rng::tag::SPLIT);
    let mut train = Vec::with_capacity(ds.n());
    let mut test = Vec::with_capacity(test_size);
    for (((level, label), mut members), k) in cells.into_iter().zip(quota) {
        let size = members.len();
        if k == 0 || k >= size {
            return Err(Error::CellTooSmall { level, label, size });
        }
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..k]);
        train.extend_from_slice(&members[k..]);
    }
    SplitIndices::new(train, test, ds.n())
}

/// Column roles for CSV ingestion.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub label: String,
    pub features: Vec<String>,
    /// Crossed in order when more than one is given.
    pub confounders: Vec<String>,
    pub discretize: HashMap<String, DiscretizationSpec>,
    pub weight: Option<String>,
}

/// A CSV file as untyped cells; rows are kept verbatim so subsets can be
/// written back without loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read<R: Read>(reader: R) -> Result<Self> {
        read_table(reader, Path::new("<reader>"))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        read_table(open(path)?, path)
    }

    /// Concatenate `other` below `self`, reordering its columns to this header.
    pub fn append(&mut self, other: Table, source: &str) -> Result<()> {
        let perm = self
            .header
            .iter()
            .map(|h| {
                other
                    .header
                    .iter()
                    .position(|x| x == h)
                    .ok_or_else(|| Error::MissingColumn(format!("{h} (in {source})")))
            })
            .collect::<Result<Vec<_>>>()?;
        for row in other.rows {
            self.rows.push(
                perm.iter()
                    .map(|&j| row.get(j).cloned().unwrap_or_default())
                    .collect(),
            );
        }
        Ok(())
    }

    pub fn dataset(&self, schema: &Schema) -> Result<Dataset> {
        dataset_from_table(self, schema)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        parse_numeric(name, column(self, name)?)
    }

    pub fn text_column(&self, name: &str) -> Result<Vec<&str>> {
        Ok(column(self, name)?.collect())
    }

    /// Write the rows `idx` (repeats allowed) in order. `extra` appends a
    /// numeric column, replacing any existing column of that name.
    pub fn write_rows<W: Write>(
        &self,
        writer: W,
        idx: &[usize],
        extra: Option<(&str, &[f64])>,
    ) -> Result<()> {
        let replace = extra.and_then(|(name, _)| self.header.iter().position(|h| h == name));
        let keep: Vec<usize> = (0..self.header.len())
            .filter(|&j| Some(j) != replace)
            .collect();
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = keep.iter().map(|&j| self.header[j].as_str()).collect();
        if let Some((name, _)) = extra {
            header.push(name);
        }
        w.write_record(&header)?;
        for (k, &i) in idx.iter().enumerate() {
            let mut rec: Vec<String> = keep.iter().map(|&j| self.rows[i][j].clone()).collect();
            if let Some((_, values)) = extra {
                rec.push(values[k].to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io("<csv output>", e))?;
        Ok(())
    }
}

fn read_table<R: Read>(reader: R, source: &Path) -> Result<Table> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut records = r.records();
    let header: Vec<String> = match records.next() {
        Some(h) => h?.iter().map(str::to_string).collect(),
        None => return Err(Error::EmptyFile(source.to_path_buf())),
    };
    let rows = records
        .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect::<Vec<_>>()))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if rows.is_empty() {
        return Err(Error::EmptyFile(source.to_path_buf()));
    }
    Ok(Table { header, rows })
}

fn column<'a>(table: &'a Table, name: &str) -> Result<impl Iterator<Item = &'a str> + 'a> {
    let j = table
        .header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    Ok(table
        .rows
        .iter()
        .map(move |r| r.get(j).map_or("", String::as_str)))
}

fn parse_numeric<'a>(name: &str, cells: impl Iterator<Item = &'a str>) -> Result<Vec<f64>> {
    cells
        .enumerate()
        .map(|(row, s)| match s.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(Error::NonNumeric {
                column: name.to_string(),
                row: row + 1,
                value: s.to_string(),
            }),
        })
        .collect()
}

fn confounder_column(table: &Table, name: &str, schema: &Schema) -> Result<Confounder> {
    let values: Vec<&str> = column(table, name)?.collect();
    if let Some(spec) = schema.discretize.get(name) {
        let numeric = parse_numeric(name, values.iter().copied())?;
        let levels = discretize(&numeric, spec)?;
        return Confounder::new(levels, spec.level_names());
    }
    let numeric: Option<Vec<f64>> = values.iter().map(|v| v.parse::<f64>().ok()).collect();
    if let Some(numeric) = numeric {
        let mut distinct: Vec<u64> = numeric.iter().map(|v| v.to_bits()).collect();
        distinct.sort_unstable();
        distinct.dedup();
        if distinct.len() > MAX_CATEGORICAL_LEVELS {
            return Err(Error::ContinuousConfounder(name.to_string()));
        }
    }
    Ok(Confounder::from_values(&values))
}

fn dataset_from_table(table: &Table, schema: &Schema) -> Result<Dataset> {
    if schema.features.is_empty() {
        return Err(Error::Schema("no feature columns declared".into()));
    }
    if schema.confounders.is_empty() {
        return Err(Error::Schema("no confounder columns declared".into()));
    }
    if schema.label.is_empty() {
        return Err(Error::Schema("no label column declared".into()));
    }
    let n = table.rows.len();
    let columns = schema
        .features
        .iter()
        .map(|f| parse_numeric(f, column(table, f)?))
        .collect::<Result<Vec<_>>>()?;
    let mut features = Matrix::zeros(n, columns.len());
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            features.set(i, j, v);
        }
    }
    let labels = column(table, &schema.label)?
        .enumerate()
        .map(|(row, s)| match s {
            "0" => Ok(0u8),
            "1" => Ok(1u8),
            _ => Err(Error::InvalidLabel {
                row: row + 1,
                value: s.to_string(),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let mut confounder = confounder_column(table, &schema.confounders[0], schema)?;
    for name in &schema.confounders[1..] {
        confounder = combine_confounders(&confounder, &confounder_column(table, name, schema)?)?;
    }
    let confounder_name = schema.confounders.join(":");
    let ds = Dataset::new(features, labels, confounder)?.with_names(
        schema.features.clone(),
        schema.label.clone(),
        confounder_name,
    )?;
    match &schema.weight {
        Some(w) => {
            let weights = parse_numeric(w, column(table, w)?)?;
            ds.with_weights(weights)
        }
        None => Ok(ds),
    }
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    dataset_from_table(&read_table(reader, Path::new("<reader>"))?, schema)
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| Error::io(path, e))
}

/// Load a dataset; confounder levels are numbered by first appearance.
pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Dataset> {
    let path = path.as_ref();
    dataset_from_table(&read_table(open(path)?, path)?, schema)
}

/// Load a train file and a test file into one dataset (train rows first)
/// with a shared level encoding.
pub fn load_csv_pair(
    train: impl AsRef<Path>,
    test: impl AsRef<Path>,
    schema: &Schema,
) -> Result<(Dataset, SplitIndices)> {
    let (train, test) = (train.as_ref(), test.as_ref());
    let mut a = Table::load(train)?;
    let n_train = a.rows.len();
    a.append(Table::load(test)?, &test.display().to_string())?;
    let n = a.rows.len();
    let ds = dataset_from_table(&a, schema)?;
    let split = SplitIndices::new((0..n_train).collect(), (n_train..n).collect(), n)?;
    Ok((ds, split))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema {
            label: "label".into(),
            features: vec!["f1".into()],
            confounders: vec!["conf".into()],
            ..Default::default()
        }
    }

    #[test]
    fn loads_small_file() {
        let csv = "f1,label,conf\n0.5,1,M\n1.5,1,F\n-2,0,M\n3,0,F\n";
        let ds = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!((ds.n(), ds.p()), (4, 1));
        assert_eq!(ds.labels(), &[1, 1, 0, 0]);
        assert_eq!(ds.confounder().n_levels(), 2);
    }

    #[test]
    fn first_appearance_encoding() {
        let c = Confounder::from_values(&["M", "F", "M"]);
        assert_eq!(c.levels(), &[0, 1, 0]);
        assert_eq!(c.names(), &["M".to_string(), "F".to_string()]);
    }

    #[test]
    fn load_errors_are_distinct() {
        let s = schema();
        let bad_label = "f1,label,conf\n0.5,2,M\n";
        assert!(matches!(
            read_csv(bad_label.as_bytes(), &s),
            Err(Error::InvalidLabel { .. })
        ));
        let bad_feature = "f1,label,conf\nabc,1,M\n";
        assert!(matches!(
            read_csv(bad_feature.as_bytes(), &s),
            Err(Error::NonNumeric { .. })
        ));
        let missing = "f2,label,conf\n1,1,M\n";
        assert!(matches!(
            read_csv(missing.as_bytes(), &s),
            Err(Error::MissingColumn(c)) if c == "f1"
        ));
        assert!(matches!(
            read_csv("".as_bytes(), &s),
            Err(Error::EmptyFile(_))
        ));
        assert!(matches!(
            read_csv("f1,label,conf\n".as_bytes(), &s),
            Err(Error::EmptyFile(_))
        ));
        let missing_cell = "f1,label,conf\n,1,M\n";
        assert!(matches!(
            read_csv(missing_cell.as_bytes(), &s),
            Err(Error::NonNumeric { .. })
        ));
    }

    #[test]
    fn continuous_confounder_needs_discretization() {
        let mut csv = String::from("f1,label,age\n");
        for i in 0..30 {
            csv.push_str(&format!("{i},{},{}\n", i % 2, 20 + i));
        }
        let mut s = schema();
        s.confounders = vec!["age".into()];
        assert!(matches!(
            read_csv(csv.as_bytes(), &s),
            Err(Error::ContinuousConfounder(_))
        ));
        s.discretize.insert(
            "age".into(),
            DiscretizationSpec::parse("18-34,35-99").unwrap(),
        );
        let ds = read_csv(csv.as_bytes(), &s).unwrap();
        assert_eq!(ds.confounder().n_levels(), 2);
        assert_eq!(ds.confounder().levels()[14], 0);
        assert_eq!(ds.confounder().levels()[15], 1);
    }

    #[test]
    fn discretize_boundaries() {
        let two = DiscretizationSpec::parse("18-58,59-99").unwrap();
        assert_eq!(discretize(&[59.0], &two).unwrap(), vec![1]);
        assert_eq!(discretize(&[18.0], &two).unwrap(), vec![0]);
        assert!(matches!(
            discretize(&[100.0], &two),
            Err(Error::OutOfSupport { .. })
        ));
        assert!(DiscretizationSpec::parse("18-50,40-99").is_err());
        assert!(DiscretizationSpec::parse("18").is_err());
        let neg = DiscretizationSpec::parse("-5--1,0-3").unwrap();
        assert_eq!(neg.level_of(-3.0).unwrap(), 0);
    }

    #[test]
    fn combine_cross_and_degenerate() {
        let g = Confounder::from_values(&["M", "F", "M", "F"]);
        let a = Confounder::from_values(&["young", "young", "senior", "senior"]);
        let both = combine_confounders(&g, &a).unwrap();
        assert_eq!(both.n_levels(), 4);
        assert_eq!(both.names()[0], "M:young");
        let constant = Confounder::from_values(&["x", "x", "x", "x"]);
        assert_eq!(
            combine_confounders(&g, &constant).unwrap().levels(),
            g.levels()
        );
        assert_eq!(combine_confounders(&g, &g).unwrap().levels(), g.levels());
        let short = Confounder::from_values(&["x"]);
        assert!(matches!(
            combine_confounders(&g, &short),
            Err(Error::LengthMismatch { .. })
        ));
    }

    fn toy16() -> Dataset {
        let features = Matrix::new(16, 1, (0..16).map(f64::from).collect()).unwrap();
        let labels = (0..16).map(|i| (i % 2) as u8).collect();
        let conf = Confounder::from_values(
            &(0..16)
                .map(|i| if i < 8 { "a" } else { "b" })
                .collect::<Vec<_>>(),
        );
        Dataset::new(features, labels, conf).unwrap()
    }

    #[test]
    fn split_is_proportional_and_deterministic() {
        let ds = toy16();
        let s = stratified_split(&ds, 0.25, 9).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (12, 4));
        for members in ds.cells().values() {
            assert_eq!(members.iter().filter(|i| s.test.contains(i)).count(), 1);
        }
        assert_eq!(s, stratified_split(&ds, 0.25, 9).unwrap());
    }

    #[test]
    fn split_rejects_singleton_cell() {
        let features = Matrix::new(3, 1, vec![0.0, 1.0, 2.0]).unwrap();
        let conf = Confounder::from_values(&["a", "a", "a"]);
        let ds = Dataset::new(features, vec![1, 0, 0], conf).unwrap();
        assert!(matches!(
            stratified_split(&ds, 0.5, 1),
            Err(Error::CellTooSmall { size: 1, .. })
        ));
    }

    #[test]
    fn largest_remainder_apportions_exactly() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.5, 0.25, 0.25], 8), vec![4, 2, 2]);
        assert_eq!(largest_remainder(&[0.0, 2.0, 1.0], 4), vec![0, 3, 1]);
        let c = largest_remainder(&[0.2, 0.3, 0.5, 0.0], 7);
        assert_eq!(c.iter().sum::<usize>(), 7);
    }

    #[test]
    fn sized_split_hits_requested_size() {
        let ds = toy16();
        let s = stratified_split_sized(&ds, 5, 2).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (11, 5));
        assert!(stratified_split_sized(&ds, 16, 2).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let ds = toy16().with_weights(vec![0.5; 16]).unwrap();
        let mut buf = Vec::new();
        ds.write_csv(&mut buf).unwrap();
        let schema = Schema {
            label: "label".into(),
            features: vec!["x1".into()],
            confounders: vec!["confounder".into()],
            weight: Some("weight".into()),
            ..Default::default()
        };
        assert_eq!(read_csv(buf.as_slice(), &schema).unwrap(), ds);
    }

    #[test]
    fn dataset_invariants() {
        let features = Matrix::new(2, 1, vec![0.0, 1.0]).unwrap();
        let conf = Confounder::from_values(&["a", "b"]);
        assert!(Dataset::new(features.clone(), vec![0], conf.clone()).is_err());
        assert!(Dataset::new(features.clone(), vec![0, 3], conf.clone()).is_err());
        let ds = Dataset::new(features, vec![0, 1], conf).unwrap();
        assert!(ds.clone().with_weights(vec![0.0, 0.0]).is_err());
        assert!(ds.clone().with_weights(vec![-1.0, 2.0]).is_err());
        assert!(ds.with_weights(vec![f64::NAN, 1.0]).is_err());
        assert!(Confounder::new(vec![0, 2], vec!["a".into(), "b".into()]).is_err());
    }
}
