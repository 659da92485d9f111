//! Monte Carlo sample tables: `K` draws of `V` named scalar quantities.
//!
//! A [`SampleTable`] is the common currency between the sampler, the
//! regression backends and the value-of-information estimators. Tables are
//! immutable once built; every constructor validates that columns are finite,
//! equally long and uniquely named.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, VoiError};
use crate::stats;

/// Metadata stored next to a table as `<stem>.meta.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TableMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chains: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burnin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<String>,
    /// Anything else a producer wants to record (R-hat values, synthetic-data flags, ...).
    #[serde(default, flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleTable {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    index: HashMap<String, usize>,
    meta: Option<TableMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
    pub q2_5: f64,
    pub q97_5: f64,
}

impl SampleTable {
    /// Build a table from named columns.
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(VoiError::InvalidTable(format!(
                "{} names for {} columns",
                names.len(),
                columns.len()
            )));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (j, name) in names.iter().enumerate() {
            if index.insert(name.clone(), j).is_some() {
                return Err(VoiError::DuplicateName(name.clone()));
            }
        }
        if let Some(first) = columns.first() {
            let k = first.len();
            for (name, col) in names.iter().zip(&columns) {
                if col.len() != k {
                    return Err(VoiError::InvalidTable(format!(
                        "column `{name}` has {} rows, expected {k}",
                        col.len()
                    )));
                }
                if let Some(i) = col.iter().position(|x| !x.is_finite()) {
                    return Err(VoiError::InvalidTable(format!(
                        "column `{name}` row {i} is not finite"
                    )));
                }
            }
        }
        Ok(SampleTable {
            names,
            columns,
            index,
            meta: None,
        })
    }

    /// Convenience constructor from `(name, column)` pairs.
    pub fn from_pairs<S: Into<String>>(pairs: Vec<(S, Vec<f64>)>) -> Result<Self> {
        let (names, columns) = pairs.into_iter().map(|(n, c)| (n.into(), c)).unzip();
        Self::new(names, columns)
    }

    pub fn with_meta(mut self, meta: TableMeta) -> Self {
        self.meta = Some(meta);
        self
    }

    pub fn meta(&self) -> Option<&TableMeta> {
        self.meta.as_ref()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn nrows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn ncols(&self) -> usize {
        self.names.len()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.index
            .get(name)
            .map(|&j| self.columns[j].as_slice())
            .ok_or_else(|| VoiError::UnknownColumns(vec![name.to_string()]))
    }

    /// Look up several columns at once, reporting every missing name.
    pub fn columns_by_name<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<&[f64]>> {
        let missing: Vec<String> = names
            .iter()
            .map(AsRef::as_ref)
            .filter(|n| !self.contains(n))
            .map(str::to_string)
            .collect();
        if !missing.is_empty() {
            return Err(VoiError::UnknownColumns(missing));
        }
        Ok(names.iter().map(|n| self.column(n.as_ref()).unwrap()).collect())
    }

    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Result<SampleTable> {
        let cols = self.columns_by_name(names)?;
        let t = SampleTable::new(
            names.iter().map(|n| n.as_ref().to_string()).collect(),
            cols.into_iter().map(<[f64]>::to_vec).collect(),
        )?;
        Ok(match &self.meta {
            Some(m) => t.with_meta(m.clone()),
            None => t,
        })
    }

    /// Rows `start..end` as a new table (used to split pooled draws by chain).
    pub fn slice_rows(&self, start: usize, end: usize) -> SampleTable {
        let columns = self.columns.iter().map(|c| c[start..end].to_vec()).collect();
        SampleTable {
            names: self.names.clone(),
            columns,
            index: self.index.clone(),
            meta: self.meta.clone(),
        }
    }

    /// Append the columns of `other` (same row count, disjoint names).
    pub fn hstack(&self, other: &SampleTable) -> Result<SampleTable> {
        if self.ncols() > 0 && other.ncols() > 0 && self.nrows() != other.nrows() {
            return Err(VoiError::InvalidTable(format!(
                "row mismatch: {} vs {}",
                self.nrows(),
                other.nrows()
            )));
        }
        let mut names = self.names.clone();
        names.extend(other.names.iter().cloned());
        let mut columns = self.columns.clone();
        columns.extend(other.columns.iter().cloned());
        let t = SampleTable::new(names, columns)?;
        Ok(match &self.meta {
            Some(m) => t.with_meta(m.clone()),
            None => t,
        })
    }

    /// Posterior summaries for every column: mean, sd, median and the central
    /// 95% interval (type-7 quantiles).
    pub fn summarize(&self) -> Result<Vec<SummaryRow>> {
        let k = self.nrows();
        if k == 0 || self.ncols() == 0 {
            return Err(VoiError::NoDraws);
        }
        if k < 2 {
            return Err(VoiError::TooFewDraws { needed: 2, got: k });
        }
        Ok(self
            .names
            .iter()
            .zip(&self.columns)
            .map(|(name, col)| {
                let mut sorted = col.clone();
                sorted.sort_by(f64::total_cmp);
                SummaryRow {
                    name: name.clone(),
                    mean: stats::mean(col),
                    sd: stats::variance(col).max(0.0).sqrt(),
                    median: stats::quantile_sorted(&sorted, 0.5),
                    q2_5: stats::quantile_sorted(&sorted, 0.025),
                    q97_5: stats::quantile_sorted(&sorted, 0.975),
                }
            })
            .collect())
    }

    pub fn write_csv_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.names.join(","))?;
        let mut line = String::new();
        for i in 0..self.nrows() {
            line.clear();
            for (j, col) in self.columns.iter().enumerate() {
                if j > 0 {
                    line.push(',');
                }
                write!(line, "{}", format_number(col[i])).unwrap();
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    /// Write the table as CSV and, when metadata is attached, the sidecar
    /// `<stem>.meta.json`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| VoiError::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_csv_to(&mut w).map_err(|e| VoiError::io(path, e))?;
        w.flush().map_err(|e| VoiError::io(path, e))?;
        if let Some(meta) = &self.meta {
            write_meta(path, meta)?;
        }
        Ok(())
    }

    pub fn read_csv_from<R: Read>(reader: R, label: &str) -> Result<SampleTable> {
        let reader = BufReader::new(reader);
        let mut lines = reader.lines().enumerate();
        let parse_err = |line: usize, msg: String| VoiError::Parse {
            path: label.to_string(),
            line,
            msg,
        };
        let header = loop {
            match lines.next() {
                Some((i, l)) => {
                    let l = l.map_err(|e| parse_err(i + 1, e.to_string()))?;
                    if !l.trim().is_empty() {
                        break l;
                    }
                }
                None => return Err(parse_err(1, "missing header row".into())),
            }
        };
        let names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut seen = HashMap::new();
        for n in &names {
            if n.is_empty() {
                return Err(parse_err(1, "empty column name".into()));
            }
            if seen.insert(n.as_str(), ()).is_some() {
                return Err(parse_err(1, format!("duplicate column name `{n}`")));
            }
        }
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
        for (i, l) in lines {
            let lineno = i + 1;
            let l = l.map_err(|e| parse_err(lineno, e.to_string()))?;
            if l.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = l.split(',').collect();
            if cells.len() != names.len() {
                return Err(parse_err(
                    lineno,
                    format!("expected {} fields, found {}", names.len(), cells.len()),
                ));
            }
            for (j, cell) in cells.iter().enumerate() {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    parse_err(
                        lineno,
                        format!("column `{}`: `{}` is not a number", names[j], cell.trim()),
                    )
                })?;
                if !v.is_finite() {
                    return Err(parse_err(
                        lineno,
                        format!("column `{}`: non-finite value `{}`", names[j], cell.trim()),
                    ));
                }
                columns[j].push(v);
            }
        }
        SampleTable::new(names, columns)
    }

    /// Read a CSV table, picking up the sidecar metadata when present.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<SampleTable> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| VoiError::io(path, e))?;
        let table = Self::read_csv_from(file, &path.display().to_string())?;
        let meta_path = meta_path(path);
        if meta_path.exists() {
            let text = fs::read_to_string(&meta_path).map_err(|e| VoiError::io(&meta_path, e))?;
            let meta: TableMeta = serde_json::from_str(&text)?;
            return Ok(table.with_meta(meta));
        }
        Ok(table)
    }
}

/// 17 significant digits: enough for every `f64` to round-trip exactly.
pub fn format_number(x: f64) -> String {
    format!("{x:.16e}")
}

/// `dir/samples.csv` -> `dir/samples.meta.json`.
pub fn meta_path(csv_path: &Path) -> PathBuf {
    let stem = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    csv_path.with_file_name(format!("{stem}.meta.json"))
}

pub fn write_meta(csv_path: &Path, meta: &TableMeta) -> Result<()> {
    let path = meta_path(csv_path);
    let text = serde_json::to_string_pretty(meta)?;
    fs::write(&path, text + "\n").map_err(|e| VoiError::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn constant_column_summary() {
        let t = SampleTable::from_pairs(vec![("x", vec![5.0; 10_000])]).unwrap();
        let s = &t.summarize().unwrap()[0];
        assert_eq!(s.mean, 5.0);
        assert_eq!(s.sd, 0.0);
        assert_eq!((s.median, s.q2_5, s.q97_5), (5.0, 5.0, 5.0));
    }

    #[test]
    fn symmetric_discrete_summary() {
        let col: Vec<f64> = (1..=5).flat_map(|v| vec![v as f64; 2000]).collect();
        let t = SampleTable::from_pairs(vec![("x", col)]).unwrap();
        let s = &t.summarize().unwrap()[0];
        assert!((s.mean - 3.0).abs() < 1e-12);
        assert_eq!(s.median, 3.0);
    }

    #[test]
    fn standard_normal_summary() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let col: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let t = SampleTable::from_pairs(vec![("z", col)]).unwrap();
        let s = &t.summarize().unwrap()[0];
        assert!((0.98..=1.02).contains(&s.sd), "sd {}", s.sd);
        assert!((1.90..=2.02).contains(&s.q97_5), "q97.5 {}", s.q97_5);
        assert!(s.q2_5 <= s.median && s.median <= s.q97_5);
    }

    #[test]
    fn empty_table_has_no_draws() {
        let t = SampleTable::new(vec![], vec![]).unwrap();
        assert!(matches!(t.summarize(), Err(VoiError::NoDraws)));
        let t = SampleTable::from_pairs(vec![("x", vec![])]).unwrap();
        assert!(matches!(t.summarize(), Err(VoiError::NoDraws)));
    }

    #[test]
    fn two_by_two_round_trip_is_bit_identical() {
        let t = SampleTable::from_pairs(vec![
            ("a", vec![0.1, 1.0 / 3.0]),
            ("b", vec![-2.5e-300, 6.02214076e23]),
        ])
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv_to(&mut buf).unwrap();
        let back = SampleTable::read_csv_from(buf.as_slice(), "mem").unwrap();
        for (x, y) in t.columns().iter().zip(back.columns()) {
            for (a, b) in x.iter().zip(y) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
        assert_eq!(t.names(), back.names());
    }

    #[test]
    fn duplicate_header_is_rejected() {
        let err = SampleTable::read_csv_from("pi_G,pi_G\n1,2\n".as_bytes(), "f.csv").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("duplicate") && msg.contains("pi_G"), "{msg}");
        assert!(msg.contains("line 1"));
    }

    #[test]
    fn nan_cell_cites_row_and_column() {
        let err = SampleTable::read_csv_from("a,b\n1,2\n3,NaN\n".as_bytes(), "f.csv").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("`b`"), "{msg}");
    }

    #[test]
    fn ragged_and_non_numeric_rows() {
        let err = SampleTable::read_csv_from("a,b\n1,2\n3\n".as_bytes(), "f.csv").unwrap_err();
        assert!(err.to_string().contains("line 3"));
        let err = SampleTable::read_csv_from("a,b\n1,x\n".as_bytes(), "f.csv").unwrap_err();
        assert!(err.to_string().contains("line 2"));
    }

    #[test]
    fn missing_columns_are_all_named() {
        let t = SampleTable::from_pairs(vec![("a", vec![1.0, 2.0])]).unwrap();
        let err = t.columns_by_name(&["a", "b", "c"]).unwrap_err();
        assert_eq!(err.to_string(), "unknown column(s): b, c");
    }

    #[test]
    fn meta_sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("samples.csv");
        let mut meta = TableMeta {
            seed: Some(3),
            chains: Some(4),
            scenario: Some("base".into()),
            ..Default::default()
        };
        meta.extra.insert("synthetic".into(), serde_json::json!(true));
        let t = SampleTable::from_pairs(vec![("a", vec![1.0, 2.0])])
            .unwrap()
            .with_meta(meta.clone());
        t.write_csv(&path).unwrap();
        assert!(dir.path().join("samples.meta.json").exists());
        let back = SampleTable::read_csv(&path).unwrap();
        assert_eq!(back.meta(), Some(&meta));
    }
}
