use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::compare::EvalReport;
use crate::error::{Error, Result};
use crate::panel::{ObservationMask, PanelMatrix};

/// A panel read from long-format CSV.
#[derive(Clone, Debug)]
pub struct PanelData {
    pub y: PanelMatrix,
    pub mask: ObservationMask,
    pub units: Vec<String>,
    pub periods: Vec<String>,
    /// Outcome text as it appeared in the file, row-major; `None` when empty.
    pub raw_outcomes: Vec<Option<String>>,
}

impl PanelData {
    /// Wraps an in-memory panel with labels `0..N` and `0..T`.
    pub fn from_matrix(y: PanelMatrix, mask: ObservationMask) -> Result<Self> {
        mask.check_shape(y.shape())?;
        let (n, t) = y.shape();
        let raw_outcomes = (0..n * t).map(|k| Some(format!("{}", y.get(k / t, k % t)))).collect();
        Ok(PanelData {
            units: (0..n).map(|i| i.to_string()).collect(),
            periods: (0..t).map(|p| p.to_string()).collect(),
            y,
            mask,
            raw_outcomes,
        })
    }
}

/// Assigns contiguous indices to labels by first appearance.
#[derive(Default)]
struct Labels {
    names: Vec<String>,
    index: HashMap<String, usize>,
}

impl Labels {
    fn intern(&mut self, label: &str) -> usize {
        if let Some(&k) = self.index.get(label) {
            return k;
        }
        self.names.push(label.to_string());
        self.index.insert(label.to_string(), self.names.len() - 1);
        self.names.len() - 1
    }
}

fn reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(1, format!("missing column `{name}`")))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

struct Cell {
    line: u64,
    outcome: Option<(f64, String)>,
    treated: bool,
}

/// Reads `unit,time,outcome,treated` rows (header required, extra columns
/// ignored). A cell is missing when `treated = 1` or the outcome is empty;
/// missing cells hold 0 in `y` unless an outcome was given.
pub fn read_panel_csv<R: Read>(source: R) -> Result<PanelData> {
    let mut rdr = reader(source);
    let headers = rdr.headers()?.clone();
    let cols = [
        column(&headers, "unit")?,
        column(&headers, "time")?,
        column(&headers, "outcome")?,
        column(&headers, "treated")?,
    ];
    let (mut units, mut periods) = (Labels::default(), Labels::default());
    let mut cells: HashMap<(usize, usize), Cell> = HashMap::new();
    let mut first_line_of_unit: Vec<u64> = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let field = |k: usize| record.get(cols[k]).unwrap_or("");
        let i = units.intern(field(0));
        if i == first_line_of_unit.len() {
            first_line_of_unit.push(line);
        }
        let t = periods.intern(field(1));
        let outcome = match field(2) {
            "" => None,
            text => {
                let v: f64 = text
                    .parse()
                    .map_err(|_| Error::parse(line, format!("outcome `{text}` is not a number")))?;
                if !v.is_finite() {
                    return Err(Error::parse(line, format!("outcome `{text}` is not finite")));
                }
                Some((v, text.to_string()))
            }
        };
        let treated = match field(3) {
            "0" => false,
            "1" => true,
            other => return Err(Error::parse(line, format!("treated must be 0 or 1, got `{other}`"))),
        };
        if let Some(prev) = cells.insert((i, t), Cell { line, outcome, treated }) {
            return Err(Error::parse(
                line,
                format!(
                    "duplicate cell (unit `{}`, time `{}`), first seen on line {}",
                    field(0),
                    field(1),
                    prev.line
                ),
            ));
        }
    }
    let (n, t) = (units.names.len(), periods.names.len());
    if n == 0 {
        return Err(Error::parse(1, "no data rows"));
    }
    let mut values = DMatrix::zeros(n, t);
    let mut observed = vec![false; n * t];
    let mut raw_outcomes = vec![None; n * t];
    for i in 0..n {
        for p in 0..t {
            let cell = cells.remove(&(i, p)).ok_or_else(|| {
                Error::parse(
                    first_line_of_unit[i],
                    format!(
                        "unit `{}` has no row for time `{}`; the panel must be rectangular",
                        units.names[i], periods.names[p]
                    ),
                )
            })?;
            if let Some((v, text)) = cell.outcome {
                values[(i, p)] = v;
                raw_outcomes[i * t + p] = Some(text);
                observed[i * t + p] = !cell.treated;
            }
        }
    }
    let mask = ObservationMask::from_fn(n, t, |i, p| observed[i * t + p])?;
    Ok(PanelData {
        y: PanelMatrix::new(values)?,
        mask,
        units: units.names,
        periods: periods.names,
        raw_outcomes,
    })
}

pub fn load_panel_csv(path: impl AsRef<Path>) -> Result<PanelData> {
    read_panel_csv(BufReader::new(File::open(path)?))
}

/// Writes every cell as `unit,time,outcome,treated`; missing cells carry
/// `treated = 1` and their stored value, so reading back gives the same
/// matrix and mask.
pub fn write_panel_csv<W: Write>(sink: W, data: &PanelData) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["unit", "time", "outcome", "treated"])?;
    let (n, t) = data.y.shape();
    for i in 0..n {
        for p in 0..t {
            let value = format!("{}", data.y.get(i, p));
            let treated = if data.mask.is_observed(i, p) { "0" } else { "1" };
            w.write_record([data.units[i].as_str(), &data.periods[p], &value, treated])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes `unit,time,outcome,imputed`: observed cells repeat the input text,
/// missing cells hold the estimate and `imputed = 1`.
pub fn write_imputed_csv<W: Write>(sink: W, data: &PanelData, estimate: &PanelMatrix) -> Result<()> {
    estimate.check_shape(data.y.shape())?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["unit", "time", "outcome", "imputed"])?;
    let (n, t) = data.y.shape();
    for i in 0..n {
        for p in 0..t {
            let (text, flag) = if data.mask.is_observed(i, p) {
                let raw = data.raw_outcomes[i * t + p].clone();
                (raw.unwrap_or_else(|| format!("{}", data.y.get(i, p))), "0")
            } else {
                (format!("{}", estimate.get(i, p)), "1")
            };
            w.write_record([data.units[i].as_str(), &data.periods[p], &text, flag])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Covariates read from CSV, with the column names after the key columns.
#[derive(Clone, Debug)]
pub struct CovariateTable {
    pub names: Vec<String>,
    pub values: Vec<DMatrix<f64>>,
}

/// Reads a table keyed by one or two label columns. Every combination of
/// the given labels must appear exactly once; `values[k]` holds column `k`.
fn read_keyed<R: Read>(source: R, keys: &[(&str, &[String])]) -> Result<CovariateTable> {
    let mut rdr = reader(source);
    let headers = rdr.headers()?.clone();
    let key_cols: Vec<usize> = keys
        .iter()
        .map(|(name, _)| column(&headers, name))
        .collect::<Result<_>>()?;
    let value_cols: Vec<usize> = (0..headers.len()).filter(|c| !key_cols.contains(c)).collect();
    if value_cols.is_empty() {
        return Err(Error::parse(1, "no covariate columns"));
    }
    let lookups: Vec<HashMap<&str, usize>> = keys
        .iter()
        .map(|(_, labels)| labels.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect())
        .collect();
    let rows = keys[0].1.len();
    let cols = keys.get(1).map_or(1, |k| k.1.len());
    let mut values = vec![DMatrix::zeros(rows, cols); value_cols.len()];
    let mut seen: HashMap<(usize, usize), u64> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let mut idx = [0usize; 2];
        for (k, &c) in key_cols.iter().enumerate() {
            let label = record.get(c).unwrap_or("");
            idx[k] = *lookups[k]
                .get(label)
                .ok_or_else(|| Error::parse(line, format!("unknown {} `{label}`", keys[k].0)))?;
        }
        if let Some(prev) = seen.insert((idx[0], idx[1]), line) {
            return Err(Error::parse(line, format!("duplicate row, first seen on line {prev}")));
        }
        for (k, &c) in value_cols.iter().enumerate() {
            let text = record.get(c).unwrap_or("");
            let v: f64 = text.parse().ok().filter(|v: &f64| v.is_finite()).ok_or_else(|| {
                Error::parse(
                    line,
                    format!("covariate `{}` value `{text}` is not a finite number", &headers[c]),
                )
            })?;
            values[k][(idx[0], idx[1])] = v;
        }
    }
    if seen.len() != rows * cols {
        return Err(Error::parse(
            line_of(rdr.headers()?) + seen.len() as u64 + 1,
            format!("expected {} rows, found {}", rows * cols, seen.len()),
        ));
    }
    Ok(CovariateTable {
        names: value_cols.iter().map(|&c| headers[c].to_string()).collect(),
        values,
    })
}

/// `unit,<name>...`: returns the `N x P` matrix of unit covariates.
pub fn read_unit_covariates<R: Read>(source: R, units: &[String]) -> Result<(Vec<String>, DMatrix<f64>)> {
    let table = read_keyed(source, &[("unit", units)])?;
    Ok((table.names, columns_to_matrix(&table.values)))
}

/// `time,<name>...`: returns the `T x Q` matrix of period covariates.
pub fn read_time_covariates<R: Read>(source: R, periods: &[String]) -> Result<(Vec<String>, DMatrix<f64>)> {
    let table = read_keyed(source, &[("time", periods)])?;
    Ok((table.names, columns_to_matrix(&table.values)))
}

/// `unit,time,<name>...`: one `N x T` matrix per covariate.
pub fn read_cell_covariates<R: Read>(source: R, units: &[String], periods: &[String]) -> Result<CovariateTable> {
    read_keyed(source, &[("unit", units), ("time", periods)])
}

fn columns_to_matrix(columns: &[DMatrix<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(columns[0].nrows(), columns.len(), |r, k| columns[k][(r, 0)])
}

/// Serializes any report-like value as pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize, W: Write>(mut sink: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut sink, value)?;
    sink.write_all(b"\n")?;
    Ok(())
}

/// Flat rows `estimator,replication,rmse,effective_rank` for plotting;
/// skipped replications have an empty `rmse`.
pub fn write_replications_csv<W: Write>(sink: W, report: &EvalReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["estimator", "replication", "rmse", "effective_rank"])?;
    for e in &report.estimators {
        for (r, value) in e.per_replication.iter().enumerate() {
            let rmse = value.map(|v| format!("{v}")).unwrap_or_default();
            let rank = e
                .effective_ranks
                .get(r)
                .copied()
                .flatten()
                .map(|k| k.to_string())
                .unwrap_or_default();
            w.write_record([e.name.as_str(), &r.to_string(), &rmse, &rank])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the JSON report and, if requested, the per-replication CSV.
pub fn write_report(report: &EvalReport, json_path: impl AsRef<Path>, csv_path: Option<&Path>) -> Result<()> {
    let mut json = BufWriter::new(File::create(json_path)?);
    write_json(&mut json, report)?;
    json.flush()?;
    if let Some(path) = csv_path {
        write_replications_csv(BufWriter::new(File::create(path)?), report)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::compare::EstimatorSummary;
    use std::collections::BTreeMap;

    fn parse(text: &str) -> Result<PanelData> {
        read_panel_csv(text.as_bytes())
    }

    #[test]
    fn two_by_two_with_one_treated_row() {
        let d = parse("unit,time,outcome,treated\na,2000,1,0\na,2001,2,0\nb,2000,3,0\nb,2001,9.5,1\n").unwrap();
        assert_eq!(d.mask.n_missing(), 1);
        assert!(!d.mask.is_observed(1, 1));
        assert_eq!(d.units, ["a", "b"]);
        assert_eq!(d.periods, ["2000", "2001"]);
        assert_eq!(d.y.get(1, 0), 3.0);
    }

    #[test]
    fn empty_outcome_is_missing_and_labels_follow_first_appearance() {
        let d = parse("time,unit,treated,outcome\nt2,z,0,\nt1,z,0,4\nt2,y,0,5\nt1,y,0,6\n").unwrap();
        assert_eq!(d.units, ["z", "y"]);
        assert_eq!(d.periods, ["t2", "t1"]);
        assert!(!d.mask.is_observed(0, 0));
        assert_eq!(d.y.get(0, 0), 0.0);
        assert_eq!(d.mask.n_missing(), 1);
    }

    #[test]
    fn duplicate_cell_names_its_line() {
        let err = parse("unit,time,outcome,treated\na,1,1,0\na,2,1,0\na,1,5,0\n").unwrap_err();
        match err {
            Error::Parse { line, message } => {
                assert_eq!(line, 4);
                assert!(message.contains("line 2"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_and_ragged_panels_are_rejected() {
        assert!(matches!(
            parse("unit,time,outcome\na,1,1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        let ragged = parse("unit,time,outcome,treated\na,1,1,0\na,2,1,0\nb,1,2,0\n").unwrap_err();
        assert!(matches!(ragged, Error::Parse { line: 4, .. }), "{ragged}");
        assert!(matches!(
            parse("unit,time,outcome,treated\na,1,x,0\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse("unit,time,outcome,treated\na,1,1,2\n"),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(parse("unit,time,outcome,treated\n").is_err());
    }

    #[test]
    fn write_then_read_round_trips_exactly() {
        let y = PanelMatrix::from_fn(4, 3, |i, t| (i as f64 + 0.1) / (t as f64 + 3.0) - 1e-9).unwrap();
        let mask = ObservationMask::staggered(3, &[3, 1, 2, 3]).unwrap();
        let data = PanelData::from_matrix(y.clone(), mask.clone()).unwrap();
        let mut buf = Vec::new();
        write_panel_csv(&mut buf, &data).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(back.y, y);
        assert_eq!(back.mask.observed_pairs(), mask.observed_pairs());
        assert_eq!(back.units, data.units);
    }

    #[test]
    fn imputed_csv_passes_observed_text_through() {
        let d = parse("unit,time,outcome,treated\na,1,1.50,0\na,2,2,0\nb,1,3,0\nb,2,,1\n").unwrap();
        let est = PanelMatrix::from_rows(&[vec![0.0, 0.0], vec![0.0, 4.0]]).unwrap();
        let mut buf = Vec::new();
        write_imputed_csv(&mut buf, &d, &est).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "unit,time,outcome,imputed\na,1,1.50,0\na,2,2,0\nb,1,3,0\nb,2,4,1\n"
        );
    }

    #[test]
    fn covariate_tables_map_labels() {
        let units = vec!["a".to_string(), "b".to_string()];
        let periods = vec!["1".to_string(), "2".to_string(), "3".to_string()];
        let (names, x) = read_unit_covariates("unit,age,size\nb,2,20\na,1,10\n".as_bytes(), &units).unwrap();
        assert_eq!(names, ["age", "size"]);
        assert_eq!(x, DMatrix::from_row_slice(2, 2, &[1.0, 10.0, 2.0, 20.0]));
        let (_, z) = read_time_covariates("time,trend\n1,0\n2,1\n3,2\n".as_bytes(), &periods).unwrap();
        assert_eq!(z.shape(), (3, 1));
        assert_eq!(z[(2, 0)], 2.0);
        let mut cells = String::from("unit,time,v\n");
        for u in ["a", "b"] {
            for t in 1..=3 {
                cells.push_str(&format!("{u},{t},{t}\n"));
            }
        }
        let v = read_cell_covariates(cells.as_bytes(), &units, &periods).unwrap();
        assert_eq!(v.values[0][(1, 2)], 3.0);
        assert!(read_unit_covariates("unit,age\na,1\n".as_bytes(), &units).is_err());
        assert!(read_unit_covariates("unit,age\na,1\nc,2\n".as_bytes(), &units).is_err());
        assert!(read_unit_covariates("unit,age\na,1\na,2\n".as_bytes(), &units).is_err());
    }

    #[test]
    fn report_json_has_documented_fields_and_csv_rows() {
        let report = EvalReport {
            estimators: vec![EstimatorSummary {
                name: "did".into(),
                mean_rmse: Some(0.5),
                se: Some(0.1),
                n_reps: 1,
                skipped: 1,
                per_replication: vec![Some(0.5), None],
                effective_ranks: vec![],
                skip_reason: Some("ill-posed".into()),
            }],
            config_echo: BTreeMap::from([("k".to_string(), "v".to_string())]),
            seed: 7,
        };
        let mut json = Vec::new();
        write_json(&mut json, &report).unwrap();
        let value: serde_json::Value = serde_json::from_slice(&json).unwrap();
        for key in ["name", "mean_rmse", "se", "n_reps", "skipped"] {
            assert!(value["estimators"][0].get(key).is_some(), "{key}");
        }
        assert_eq!(value["seed"], 7);
        assert_eq!(value["config_echo"]["k"], "v");
        let mut csv = Vec::new();
        write_replications_csv(&mut csv, &report).unwrap();
        assert_eq!(
            String::from_utf8(csv).unwrap(),
            "estimator,replication,rmse,effective_rank\ndid,0,0.5,\ndid,1,,\n"
        );
    }
}
