//! Clustered current-status data and its long-format CSV representation.
//!
//! One CSV row per (cluster, unit) with the required columns `cluster_id`,
//! `unit`, `time` and `event`. Any further column is a numeric covariate,
//! except the optional stratum and weight columns named in [`CsvOptions`].

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Stratum level assigned when the data carry no stratum column.
pub const DEFAULT_STRATUM: &str = "all";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitRecord {
    pub unit: String,
    /// Monitoring time.
    pub time: f64,
    /// Whether the event had occurred by the monitoring time.
    pub event: bool,
    pub covariates: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: String,
    pub stratum: String,
    pub weight: f64,
    pub records: Vec<UnitRecord>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CurrentStatusDataset {
    pub clusters: Vec<Cluster>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RowIssue {
    MalformedRow { line: u64, reason: String },
    DuplicateUnit { line: u64, cluster: String, unit: String },
    NegativeTime { line: u64 },
    BadEventFlag { line: u64, value: String },
    InconsistentStratum { line: u64, cluster: String },
    BadWeight { line: u64 },
}

impl std::fmt::Display for RowIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RowIssue::MalformedRow { line, reason } => write!(f, "line {line}: malformed row ({reason})"),
            RowIssue::DuplicateUnit { line, cluster, unit } => {
                write!(f, "line {line}: unit `{unit}` repeated in cluster `{cluster}`")
            }
            RowIssue::NegativeTime { line } => write!(f, "line {line}: negative monitoring time"),
            RowIssue::BadEventFlag { line, value } => {
                write!(f, "line {line}: event flag must be 0 or 1, got `{value}`")
            }
            RowIssue::InconsistentStratum { line, cluster } => {
                write!(f, "line {line}: stratum differs from earlier rows of cluster `{cluster}`")
            }
            RowIssue::BadWeight { line } => write!(f, "line {line}: weight must be positive"),
        }
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("{} rejected row(s): {}", .0.len(), join_issues(.0))]
    Rejected(Vec<RowIssue>),
    #[error("invalid dataset: {0}")]
    Invalid(String),
}

fn join_issues(issues: &[RowIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CsvOptions {
    pub stratum_column: Option<String>,
    pub weight_column: Option<String>,
}

impl CurrentStatusDataset {
    pub fn new(clusters: Vec<Cluster>) -> Result<Self, DataError> {
        let d = Self { clusters };
        d.validate()?;
        Ok(d)
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn validate(&self) -> Result<(), DataError> {
        for c in &self.clusters {
            if c.records.is_empty() {
                return Err(DataError::Invalid(format!("cluster `{}` has no unit records", c.id)));
            }
            if !(c.weight.is_finite() && c.weight > 0.0) {
                return Err(DataError::Invalid(format!("cluster `{}` has a non-positive weight", c.id)));
            }
            for (i, r) in c.records.iter().enumerate() {
                if !(r.time.is_finite() && r.time >= 0.0) {
                    return Err(DataError::Invalid(format!(
                        "cluster `{}` has an invalid monitoring time {}",
                        c.id, r.time
                    )));
                }
                if c.records[..i].iter().any(|o| o.unit == r.unit) {
                    return Err(DataError::Invalid(format!(
                        "unit `{}` repeated in cluster `{}`",
                        r.unit, c.id
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, options: &CsvOptions) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| -> Result<usize, DataError> {
            headers
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DataError::MissingColumn(name.to_string()))
        };
        let i_cluster = col("cluster_id")?;
        let i_unit = col("unit")?;
        let i_time = col("time")?;
        let i_event = col("event")?;
        let i_stratum = options.stratum_column.as_deref().map(col).transpose()?;
        let i_weight = options.weight_column.as_deref().map(col).transpose()?;
        let reserved = [Some(i_cluster), Some(i_unit), Some(i_time), Some(i_event), i_stratum, i_weight];
        let covariate_cols: Vec<(usize, String)> = headers
            .iter()
            .enumerate()
            .filter(|(i, _)| !reserved.contains(&Some(*i)))
            .map(|(i, h)| (i, h.to_string()))
            .collect();

        let mut issues = Vec::new();
        let mut clusters: Vec<Cluster> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for (row_no, row) in rdr.records().enumerate() {
            // header is line 1
            let line = row_no as u64 + 2;
            let row = match row {
                Ok(r) => r,
                Err(e) => {
                    issues.push(RowIssue::MalformedRow { line, reason: e.to_string() });
                    continue;
                }
            };
            if row.len() != headers.len() {
                issues.push(RowIssue::MalformedRow {
                    line,
                    reason: format!("expected {} fields, found {}", headers.len(), row.len()),
                });
                continue;
            }
            let cluster_id = row[i_cluster].to_string();
            let unit = row[i_unit].to_string();
            if cluster_id.is_empty() || unit.is_empty() {
                issues.push(RowIssue::MalformedRow { line, reason: "empty cluster_id or unit".into() });
                continue;
            }
            let time: f64 = match row[i_time].parse() {
                Ok(t) => t,
                Err(_) => {
                    issues.push(RowIssue::MalformedRow {
                        line,
                        reason: format!("time `{}` is not a number", &row[i_time]),
                    });
                    continue;
                }
            };
            if !time.is_finite() {
                issues.push(RowIssue::MalformedRow { line, reason: "time is not finite".into() });
                continue;
            }
            if time < 0.0 {
                issues.push(RowIssue::NegativeTime { line });
                continue;
            }
            let event = match &row[i_event] {
                "0" => false,
                "1" => true,
                other => {
                    issues.push(RowIssue::BadEventFlag { line, value: other.to_string() });
                    continue;
                }
            };
            let stratum = i_stratum.map_or_else(|| DEFAULT_STRATUM.to_string(), |i| row[i].to_string());
            let weight = match i_weight {
                None => 1.0,
                Some(i) => match row[i].parse::<f64>() {
                    Ok(w) if w.is_finite() && w > 0.0 => w,
                    _ => {
                        issues.push(RowIssue::BadWeight { line });
                        continue;
                    }
                },
            };
            let mut covariates = BTreeMap::new();
            let mut bad = None;
            for (i, name) in &covariate_cols {
                match row[*i].parse::<f64>() {
                    Ok(v) => {
                        covariates.insert(name.clone(), v);
                    }
                    Err(_) => {
                        bad = Some(format!("covariate `{name}` value `{}` is not numeric", &row[*i]));
                        break;
                    }
                }
            }
            if let Some(reason) = bad {
                issues.push(RowIssue::MalformedRow { line, reason });
                continue;
            }
            let record = UnitRecord { unit, time, event, covariates };
            match index.get(&cluster_id) {
                Some(&ci) => {
                    let c = &mut clusters[ci];
                    if c.records.iter().any(|r| r.unit == record.unit) {
                        issues.push(RowIssue::DuplicateUnit {
                            line,
                            cluster: cluster_id,
                            unit: record.unit,
                        });
                    } else if c.stratum != stratum || c.weight != weight {
                        issues.push(RowIssue::InconsistentStratum { line, cluster: cluster_id });
                    } else {
                        c.records.push(record);
                    }
                }
                None => {
                    index.insert(cluster_id.clone(), clusters.len());
                    clusters.push(Cluster {
                        id: cluster_id,
                        stratum,
                        weight,
                        records: vec![record],
                    });
                }
            }
        }
        if !issues.is_empty() {
            return Err(DataError::Rejected(issues));
        }
        Self::new(clusters)
    }

    pub fn read_csv_path(path: &Path, options: &CsvOptions) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), options)
    }

    /// Write the long-format CSV. Values use the shortest representation that
    /// parses back to the same `f64`, so reading the output reproduces `self`.
    pub fn write_csv<W: Write>(&self, writer: W, options: &CsvOptions) -> Result<(), DataError> {
        let mut covariate_names: Vec<&String> = self
            .clusters
            .iter()
            .flat_map(|c| c.records.iter().flat_map(|r| r.covariates.keys()))
            .collect();
        covariate_names.sort();
        covariate_names.dedup();

        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = vec!["cluster_id", "unit", "time", "event"];
        if let Some(s) = &options.stratum_column {
            header.push(s);
        }
        if let Some(s) = &options.weight_column {
            header.push(s);
        }
        header.extend(covariate_names.iter().map(|s| s.as_str()));
        w.write_record(&header)?;
        for c in &self.clusters {
            for r in &c.records {
                let mut row = vec![
                    c.id.clone(),
                    r.unit.clone(),
                    r.time.to_string(),
                    if r.event { "1".into() } else { "0".into() },
                ];
                if options.stratum_column.is_some() {
                    row.push(c.stratum.clone());
                }
                if options.weight_column.is_some() {
                    row.push(c.weight.to_string());
                }
                for name in &covariate_names {
                    let v = r.covariates.get(*name).ok_or_else(|| {
                        DataError::Invalid(format!(
                            "record of cluster `{}` lacks covariate `{name}`",
                            c.id
                        ))
                    })?;
                    row.push(v.to_string());
                }
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path, options: &CsvOptions) -> Result<(), DataError> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file), options)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, opts: &CsvOptions) -> Result<CurrentStatusDataset, DataError> {
        CurrentStatusDataset::read_csv(text.as_bytes(), opts)
    }

    #[test]
    fn two_rows_one_cluster() {
        let d = read("cluster_id,unit,time,event\n7,HPV16,31.5,1\n7,HPV18,31.5,0\n", &CsvOptions::default()).unwrap();
        assert_eq!(d.len(), 1);
        let c = &d.clusters[0];
        assert_eq!(c.stratum, DEFAULT_STRATUM);
        let with_event: Vec<_> = c.records.iter().filter(|r| r.event).map(|r| r.unit.as_str()).collect();
        assert_eq!(with_event, vec!["HPV16"]);
    }

    #[test]
    fn rejects_are_reported_with_line_numbers() {
        let text = "cluster_id,unit,time,event\n1,a,3,2\n1,b,-1,0\n2,a,1,1\n2,a,1,0\nx,a,notanumber,0\n";
        match read(text, &CsvOptions::default()) {
            Err(DataError::Rejected(issues)) => {
                assert_eq!(
                    issues,
                    vec![
                        RowIssue::BadEventFlag { line: 2, value: "2".into() },
                        RowIssue::NegativeTime { line: 3 },
                        RowIssue::DuplicateUnit { line: 5, cluster: "2".into(), unit: "a".into() },
                        RowIssue::MalformedRow {
                            line: 6,
                            reason: "time `notanumber` is not a number".into()
                        },
                    ]
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column() {
        assert!(matches!(
            read("cluster_id,unit,event\n", &CsvOptions::default()),
            Err(DataError::MissingColumn(c)) if c == "time"
        ));
    }

    #[test]
    fn stratum_weight_and_covariates_round_trip() {
        let opts = CsvOptions {
            stratum_column: Some("sex".into()),
            weight_column: Some("w".into()),
        };
        let text = "cluster_id,unit,time,event,sex,w,age\n1,a,0.1,1,f,2.5,0.3333333333333333\n1,b,0.1,0,f,2.5,1e-7\n2,a,4,0,m,1,2\n";
        let d = read(text, &opts).unwrap();
        assert_eq!(d.clusters[0].stratum, "f");
        assert_eq!(d.clusters[0].weight, 2.5);
        assert_eq!(d.clusters[0].records[0].covariates["age"], 1.0 / 3.0);
        let mut out = Vec::new();
        d.write_csv(&mut out, &opts).unwrap();
        let back = CurrentStatusDataset::read_csv(out.as_slice(), &opts).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn empty_clusters_are_invalid() {
        let c = Cluster { id: "1".into(), stratum: "all".into(), weight: 1.0, records: vec![] };
        assert!(CurrentStatusDataset::new(vec![c]).is_err());
    }
}
