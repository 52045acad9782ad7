use std::collections::HashMap;
use std::path::Path;

use crate::data::schema::{AttributeSource, Schema};
use crate::error::{Error, Result};

/// Column-typed rows. Storage is row-major per role; a missing continuous
/// value is stored as NaN until [`impute_continuous`] runs.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularDataset {
    schema: Schema,
    rows: usize,
    categorical: Vec<u32>,
    continuous: Vec<f64>,
    labels: Vec<u8>,
    /// One code vector per metadata-only sensitive attribute, in
    /// `schema.metadata_attributes()` order; `None` is missing.
    metadata: Vec<Vec<Option<u32>>>,
}

impl TabularDataset {
    /// Builds a dataset from flat row-major buffers, validating every invariant.
    pub fn from_parts(
        schema: Schema,
        categorical: Vec<u32>,
        continuous: Vec<f64>,
        labels: Vec<u8>,
        metadata: Vec<Vec<Option<u32>>>,
    ) -> Result<Self> {
        let m = schema.task_count();
        let rows = labels.len() / m;
        let p = schema.categorical.len();
        let q = schema.continuous.len();
        if labels.len() != rows * m || categorical.len() != rows * p || continuous.len() != rows * q
        {
            return Err(Error::Contract(
                "dataset buffers disagree on the row count".into(),
            ));
        }
        if metadata.len() != schema.metadata_attributes().len()
            || metadata.iter().any(|c| c.len() != rows)
        {
            return Err(Error::Contract(
                "metadata attribute columns disagree on the row count".into(),
            ));
        }
        for (i, &code) in categorical.iter().enumerate() {
            let col = &schema.categorical[i % p];
            if code > col.missing_code() {
                return Err(Error::Bounds {
                    what: format!("categorical column `{}`", col.name),
                    index: code as usize,
                    len: col.missing_code() as usize + 1,
                });
            }
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(Error::Contract("labels must be 0 or 1".into()));
        }
        for (k, &a) in schema.metadata_attributes().iter().enumerate() {
            let groups = schema.sensitive[a].subgroups.len() as u32;
            if metadata[k].iter().flatten().any(|&g| g >= groups) {
                return Err(Error::Contract(format!(
                    "subgroup code out of range for `{}`",
                    schema.sensitive[a].name
                )));
            }
        }
        Ok(TabularDataset {
            schema,
            rows,
            categorical,
            continuous,
            labels,
            metadata,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn categorical_row(&self, row: usize) -> &[u32] {
        let p = self.schema.categorical.len();
        &self.categorical[row * p..(row + 1) * p]
    }

    pub fn continuous_row(&self, row: usize) -> &[f64] {
        let q = self.schema.continuous.len();
        &self.continuous[row * q..(row + 1) * q]
    }

    pub fn labels_row(&self, row: usize) -> &[u8] {
        let m = self.schema.task_count();
        &self.labels[row * m..(row + 1) * m]
    }

    pub fn label(&self, row: usize, task: usize) -> u8 {
        self.labels[row * self.schema.task_count() + task]
    }

    pub fn categorical_value(&self, row: usize, col: usize) -> u32 {
        self.categorical[row * self.schema.categorical.len() + col]
    }

    pub fn continuous_value(&self, row: usize, col: usize) -> f64 {
        self.continuous[row * self.schema.continuous.len() + col]
    }

    /// Labels of one task for the given rows.
    pub fn task_labels(&self, task: usize, rows: &[usize]) -> Vec<u8> {
        rows.iter().map(|&r| self.label(r, task)).collect()
    }

    /// Subgroup code of sensitive attribute `attr` for `row`; `None` when missing.
    pub fn subgroup(&self, attr: usize, row: usize) -> Option<u32> {
        match self.schema.attribute_source(attr) {
            AttributeSource::Categorical(col) => {
                let code = self.categorical_value(row, col);
                (code < self.schema.categorical[col].missing_code()).then_some(code)
            }
            AttributeSource::Metadata => {
                let k = self
                    .schema
                    .metadata_attributes()
                    .iter()
                    .position(|&a| a == attr)
                    .expect("metadata attribute");
                self.metadata[k][row]
            }
        }
    }

    pub fn subgroups(&self, attr: usize, rows: &[usize]) -> Vec<Option<u32>> {
        rows.iter().map(|&r| self.subgroup(attr, r)).collect()
    }

    pub fn has_missing_continuous(&self) -> bool {
        self.continuous.iter().any(|v| v.is_nan())
    }

    /// Copy with categorical column `col` rearranged so that row `i` takes the
    /// value of row `perm[i]`, restricted to `rows` (other rows untouched).
    pub fn with_categorical_permuted(&self, col: usize, rows: &[usize], perm: &[usize]) -> Self {
        let mut out = self.clone();
        let p = self.schema.categorical.len();
        for (&dst, &src) in rows.iter().zip(perm) {
            out.categorical[dst * p + col] = self.categorical[rows[src] * p + col];
        }
        out
    }

    pub fn with_continuous_permuted(&self, col: usize, rows: &[usize], perm: &[usize]) -> Self {
        let mut out = self.clone();
        let q = self.schema.continuous.len();
        for (&dst, &src) in rows.iter().zip(perm) {
            out.continuous[dst * q + col] = self.continuous[rows[src] * q + col];
        }
        out
    }

    pub(crate) fn continuous_mut(&mut self) -> &mut [f64] {
        &mut self.continuous
    }
}

/// Replaces missing continuous cells with the mean of the training rows.
pub fn impute_continuous(ds: &TabularDataset, train: &[usize]) -> Result<TabularDataset> {
    if train.is_empty() {
        return Err(Error::Contract("imputation needs training rows".into()));
    }
    let q = ds.schema.continuous.len();
    let mut out = ds.clone();
    for col in 0..q {
        let observed: Vec<f64> = train
            .iter()
            .map(|&r| ds.continuous_value(r, col))
            .filter(|v| !v.is_nan())
            .collect();
        let needs = (0..ds.rows).any(|r| ds.continuous_value(r, col).is_nan());
        if !needs {
            continue;
        }
        if observed.is_empty() {
            return Err(Error::Domain(format!(
                "continuous column `{}` is entirely missing in the training rows",
                ds.schema.continuous[col]
            )));
        }
        let mean = observed.iter().sum::<f64>() / observed.len() as f64;
        for r in 0..ds.rows {
            let v = &mut out.continuous[r * q + col];
            if v.is_nan() {
                *v = mean;
            }
        }
    }
    Ok(out)
}

/// Per-column train-row z-scoring of continuous features.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardizer {
    pub fn fit(ds: &TabularDataset, train: &[usize]) -> Self {
        let q = ds.schema.continuous.len();
        let mut means = Vec::with_capacity(q);
        let mut scales = Vec::with_capacity(q);
        for col in 0..q {
            let vals: Vec<f64> = train
                .iter()
                .map(|&r| ds.continuous_value(r, col))
                .filter(|v| v.is_finite())
                .collect();
            let n = vals.len().max(1) as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            means.push(mean);
            scales.push(if var > 1e-24 { var.sqrt() } else { 1.0 });
        }
        Standardizer { means, scales }
    }

    pub fn identity(q: usize) -> Self {
        Standardizer {
            means: vec![0.0; q],
            scales: vec![1.0; q],
        }
    }

    pub fn apply(&self, ds: &TabularDataset) -> TabularDataset {
        let q = self.means.len();
        let mut out = ds.clone();
        for (i, v) in out.continuous_mut().iter_mut().enumerate() {
            let c = i % q;
            *v = (*v - self.means[c]) / self.scales[c];
        }
        out
    }
}

fn parse_label(column: &str, row: usize, cell: &str) -> Result<u8> {
    match cell.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::InvalidCell {
            column: column.into(),
            row,
            value: other.into(),
            message: "labels must be 0 or 1".into(),
        }),
    }
}

/// Reads a CSV whose header names every schema column (extra columns ignored).
pub fn load_csv(data_path: &Path, schema_path: &Path) -> Result<TabularDataset> {
    let schema = Schema::from_path(schema_path)?;
    let file = std::fs::File::open(data_path).map_err(|e| Error::io(data_path, e))?;
    read_csv(file, schema)
}

pub fn read_csv<R: std::io::Read>(reader: R, schema: Schema) -> Result<TabularDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let header: HashMap<String, usize> = rdr
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.trim().to_string(), i))
        .collect();
    let locate = |name: &str| {
        header.get(name).copied().ok_or_else(|| {
            Error::Schema(format!("required column `{name}` missing from CSV header"))
        })
    };
    let cat_idx: Vec<usize> = schema
        .categorical
        .iter()
        .map(|c| locate(&c.name))
        .collect::<Result<_>>()?;
    let cont_idx: Vec<usize> = schema
        .continuous
        .iter()
        .map(|c| locate(c))
        .collect::<Result<_>>()?;
    let task_idx: Vec<usize> = schema
        .tasks
        .iter()
        .map(|c| locate(c))
        .collect::<Result<_>>()?;
    let meta_attrs = schema.metadata_attributes();
    let meta_idx: Vec<usize> = meta_attrs
        .iter()
        .map(|&a| locate(&schema.sensitive[a].name))
        .collect::<Result<_>>()?;

    let lookups: Vec<HashMap<&str, u32>> = schema
        .categorical
        .iter()
        .map(|c| {
            c.categories
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i as u32))
                .collect()
        })
        .collect();
    let meta_lookups: Vec<HashMap<&str, u32>> = meta_attrs
        .iter()
        .map(|&a| {
            schema.sensitive[a]
                .subgroups
                .iter()
                .enumerate()
                .map(|(i, s)| (s.as_str(), i as u32))
                .collect()
        })
        .collect();

    let mut categorical = Vec::new();
    let mut continuous = Vec::new();
    let mut labels = Vec::new();
    let mut metadata: Vec<Vec<Option<u32>>> = vec![Vec::new(); meta_attrs.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("").trim();
        for (j, &ci) in cat_idx.iter().enumerate() {
            let v = cell(ci);
            let col = &schema.categorical[j];
            let code = if v.is_empty() {
                col.missing_code()
            } else {
                *lookups[j].get(v).ok_or_else(|| Error::UnknownCategory {
                    column: col.name.clone(),
                    row,
                    value: v.into(),
                })?
            };
            categorical.push(code);
        }
        for (j, &ci) in cont_idx.iter().enumerate() {
            let v = cell(ci);
            let x = if v.is_empty() {
                f64::NAN
            } else {
                let x: f64 = v.parse().map_err(|_| Error::InvalidCell {
                    column: schema.continuous[j].clone(),
                    row,
                    value: v.into(),
                    message: "not a number".into(),
                })?;
                if !x.is_finite() {
                    return Err(Error::InvalidCell {
                        column: schema.continuous[j].clone(),
                        row,
                        value: v.into(),
                        message: "not finite".into(),
                    });
                }
                x
            };
            continuous.push(x);
        }
        for (k, (&ci, lookup)) in meta_idx.iter().zip(&meta_lookups).enumerate() {
            let v = cell(ci);
            let code = if v.is_empty() {
                None
            } else {
                Some(*lookup.get(v).ok_or_else(|| Error::UnknownCategory {
                    column: schema.sensitive[meta_attrs[k]].name.clone(),
                    row,
                    value: v.into(),
                })?)
            };
            metadata[k].push(code);
        }
        for (j, &ti) in task_idx.iter().enumerate() {
            labels.push(parse_label(&schema.tasks[j], row, cell(ti))?);
        }
    }
    TabularDataset::from_parts(schema, categorical, continuous, labels, metadata)
}

/// Writes the dataset as CSV: categorical, continuous, metadata attributes,
/// then task columns. Missing cells are written empty.
pub fn write_csv<W: std::io::Write>(ds: &TabularDataset, writer: W) -> Result<()> {
    let schema = ds.schema();
    let meta_attrs = schema.metadata_attributes();
    let mut w = csv::Writer::from_writer(writer);
    let header: Vec<&str> = schema
        .categorical
        .iter()
        .map(|c| c.name.as_str())
        .chain(schema.continuous.iter().map(String::as_str))
        .chain(
            meta_attrs
                .iter()
                .map(|&a| schema.sensitive[a].name.as_str()),
        )
        .chain(schema.tasks.iter().map(String::as_str))
        .collect();
    w.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for r in 0..ds.len() {
        record.clear();
        for (j, &code) in ds.categorical_row(r).iter().enumerate() {
            let col = &schema.categorical[j];
            record.push(if code == col.missing_code() {
                String::new()
            } else {
                col.categories[code as usize].clone()
            });
        }
        for &x in ds.continuous_row(r) {
            record.push(if x.is_nan() {
                String::new()
            } else {
                format!("{x}")
            });
        }
        for (k, &a) in meta_attrs.iter().enumerate() {
            record.push(match ds.metadata[k][r] {
                Some(g) => schema.sensitive[a].subgroups[g as usize].clone(),
                None => String::new(),
            });
        }
        for &y in ds.labels_row(r) {
            record.push(y.to_string());
        }
        w.write_record(&record)?;
    }
    w.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn save_csv(ds: &TabularDataset, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(ds, std::io::BufWriter::new(file))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Schema {
        Schema::from_json_str(
            r#"{
            "categorical": [{"name": "DIAB", "categories": ["N", "Y", "U"]}],
            "continuous": ["BMI"],
            "tasks": ["T1", "T2"],
            "sensitive": [{"name": "GENDER", "subgroups": ["M", "F"]}]
        }"#,
        )
        .unwrap()
    }

    #[test]
    fn empty_categorical_cell_maps_to_missing_slot() {
        let csv = "DIAB,BMI,GENDER,T1,T2\n,21.5,M,0,1\nY,,F,1,0\n";
        let ds = read_csv(csv.as_bytes(), schema()).unwrap();
        assert_eq!(ds.categorical_value(0, 0), 3);
        assert_eq!(ds.categorical_value(1, 0), 1);
        assert!(ds.continuous_value(1, 0).is_nan());
        assert_eq!(ds.subgroup(0, 1), Some(1));
        assert_eq!(ds.labels_row(0), &[0, 1]);
    }

    #[test]
    fn header_only_gives_empty_dataset() {
        let ds = read_csv("DIAB,BMI,GENDER,T1,T2\n".as_bytes(), schema()).unwrap();
        assert_eq!(ds.len(), 0);
    }

    #[test]
    fn unknown_category_names_column_row_value() {
        let csv = "DIAB,BMI,GENDER,T1,T2\nN,1,M,0,0\nMAYBE,1,M,0,0\n";
        match read_csv(csv.as_bytes(), schema()).unwrap_err() {
            Error::UnknownCategory { column, row, value } => {
                assert_eq!((column.as_str(), row, value.as_str()), ("DIAB", 1, "MAYBE"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn missing_column_is_schema_error() {
        let csv = "DIAB,BMI,T1,T2\nN,1,0,0\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), schema()),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn bad_label_rejected() {
        let csv = "DIAB,BMI,GENDER,T1,T2\nN,1,M,2,0\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), schema()),
            Err(Error::InvalidCell { .. })
        ));
    }

    #[test]
    fn imputation_uses_training_mean() {
        let csv = "DIAB,BMI,GENDER,T1,T2\nN,1.0,M,0,0\nN,,M,0,0\nN,3.0,M,0,0\n";
        let ds = read_csv(csv.as_bytes(), schema()).unwrap();
        let out = impute_continuous(&ds, &[0, 1, 2]).unwrap();
        assert_eq!(out.continuous_value(1, 0), 2.0);
        assert!(!out.has_missing_continuous());
    }

    #[test]
    fn imputation_without_missing_is_identity() {
        let csv = "DIAB,BMI,GENDER,T1,T2\nN,1.0,M,0,0\nY,5.0,F,1,1\n";
        let ds = read_csv(csv.as_bytes(), schema()).unwrap();
        assert_eq!(impute_continuous(&ds, &[0]).unwrap(), ds);
    }

    #[test]
    fn imputation_does_not_leak_test_rows() {
        // rows 0..2 train, row 3 test; full-data mean would be (1+2+100)/3
        let csv = "DIAB,BMI,GENDER,T1,T2\nN,1.0,M,0,0\nN,2.0,M,0,0\nN,,M,0,0\nN,100.0,M,0,0\n";
        let ds = read_csv(csv.as_bytes(), schema()).unwrap();
        let out = impute_continuous(&ds, &[0, 1, 2]).unwrap();
        assert_eq!(out.continuous_value(2, 0), 1.5);
        assert_ne!(out.continuous_value(2, 0), 103.0 / 3.0);
    }

    #[test]
    fn fully_missing_train_column_is_error() {
        let csv = "DIAB,BMI,GENDER,T1,T2\nN,,M,0,0\nN,4.0,M,0,0\n";
        let ds = read_csv(csv.as_bytes(), schema()).unwrap();
        assert!(impute_continuous(&ds, &[0]).is_err());
        assert!(impute_continuous(&ds, &[]).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let csv = "DIAB,BMI,GENDER,T1,T2\n,0.1,M,0,1\nU,,,1,0\nN,-3.25e-7,F,1,1\n";
        let ds = read_csv(csv.as_bytes(), schema()).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), schema()).unwrap();
        assert_eq!(ds.categorical, back.categorical);
        assert_eq!(ds.labels, back.labels);
        assert_eq!(ds.metadata, back.metadata);
        for (a, b) in ds.continuous.iter().zip(&back.continuous) {
            assert!(a == b || (a.is_nan() && b.is_nan()));
        }
    }
}
