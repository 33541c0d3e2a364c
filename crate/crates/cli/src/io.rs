//! CSV input, estimate tables, key=value summaries and plot files.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use locbayes_core::Dataset;

use crate::CliError;

/// 17 significant digits, enough to reproduce any finite `f64` exactly.
pub fn fmt17(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Reads a dataset with header `x,y` or `x1,...,xd,y`. When `dims` is given
/// the header must match it.
pub fn ingest_csv(path: &Path, dims: Option<usize>) -> Result<Dataset, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    ingest_reader(file, &path.display().to_string(), dims)
}

pub fn ingest_reader<R: Read>(reader: R, name: &str, dims: Option<usize>) -> Result<Dataset, CliError> {
    let parse_err = |line: u64, message: String| CliError::Parse {
        path: name.to_string(),
        line,
        message,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header == [""] {
        return Err(parse_err(1, "empty file".into()));
    }
    let d = header_dims(&header).ok_or_else(|| parse_err(1, format!("header must be `x,y` or `x1,...,xd,y`, found `{}`", header.join(","))))?;
    if let Some(want) = dims {
        if want != d {
            return Err(parse_err(1, format!("header has {d} covariates but dims = {want}")));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != d + 1 {
            return Err(parse_err(line, format!("expected {} fields, found {}", d + 1, record.len())));
        }
        for (j, field) in record.iter().enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("cannot parse `{field}` in column {}", header[j])))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("non-finite value in column {}", header[j])));
            }
            if j < d {
                xs.push(v);
            } else {
                ys.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(parse_err(2, "no data rows".into()));
    }
    Ok(Dataset::with_dim(d, xs, ys)?)
}

fn header_dims(header: &[String]) -> Option<usize> {
    let n = header.len();
    if n < 2 || header[n - 1] != "y" {
        return None;
    }
    if n == 2 && header[0] == "x" {
        return Some(1);
    }
    header[..n - 1]
        .iter()
        .enumerate()
        .all(|(j, h)| *h == format!("x{}", j + 1))
        .then_some(n - 1)
}

fn covariate_header(dims: usize) -> Vec<String> {
    if dims == 1 {
        vec!["x".into()]
    } else {
        (1..=dims).map(|j| format!("x{j}")).collect()
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = covariate_header(data.dim());
    header.push("y".into());
    w.write_record(&header)?;
    for i in 0..data.len() {
        let mut row: Vec<String> = data.row(i).iter().map(|&v| fmt17(v)).collect();
        row.push(fmt17(data.y(i)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// One row of the estimate table.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimateRow {
    pub x: Vec<f64>,
    pub estimate: f64,
    pub prior_weight: f64,
    pub sd: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn write_estimates(path: &Path, dims: usize, rows: &[EstimateRow]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let mut header = covariate_header(dims);
    header.extend(["estimate", "prior_weight", "sd", "lower", "upper"].map(String::from));
    w.write_record(&header)?;
    for r in rows {
        let mut rec: Vec<String> = r.x.iter().map(|&v| fmt17(v)).collect();
        rec.extend([r.estimate, r.prior_weight, r.sd, r.lower, r.upper].map(fmt17));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_summary(path: &Path, entries: &[(String, String)]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for (k, v) in entries {
        writeln!(w, "{k} = {v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Two whitespace-separated columns `x value`.
pub fn write_plot(path: &Path, xs: &[f64], values: &[f64]) -> Result<(), CliError> {
    let mut w = create(path)?;
    for (x, v) in xs.iter().zip(values) {
        writeln!(w, "{} {}", fmt17(*x), fmt17(*v))?;
    }
    w.flush()?;
    Ok(())
}

/// Generic CSV table with a header.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_point_dataset() {
        let d = ingest_reader("x,y\n0,1\n1,2".as_bytes(), "t", None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.dim(), 1);
        assert_eq!(d.ys(), &[1.0, 2.0]);
    }

    #[test]
    fn multivariate_header() {
        let d = ingest_reader("x1,x2,y\n0,1,2\n3,4,5\n".as_bytes(), "t", None).unwrap();
        assert_eq!(d.dim(), 2);
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert!(ingest_reader("x1,x2,y\n0,1,2\n".as_bytes(), "t", Some(3)).is_err());
    }

    #[test]
    fn parse_error_names_the_line() {
        let err = ingest_reader("x,y\na,b\n".as_bytes(), "data.csv", None).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 2, .. }), "{err}");
        let err = ingest_reader("x,y\n1,2\n3,inf\n".as_bytes(), "data.csv", None).unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
        assert!(ingest_reader("".as_bytes(), "t", None).is_err());
        assert!(ingest_reader("x,y\n".as_bytes(), "t", None).is_err());
        assert!(ingest_reader("a,b\n1,2\n".as_bytes(), "t", None).is_err());
    }

    #[test]
    fn fmt17_is_exact() {
        for v in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, 0.0] {
            assert_eq!(fmt17(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt17(f64::NAN), "NaN");
    }

    proptest! {
        #[test]
        fn dataset_round_trip(pairs in proptest::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..30)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("d.csv");
            let (xs, ys): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            let data = Dataset::new(xs, ys).unwrap();
            write_dataset(&path, &data).unwrap();
            prop_assert_eq!(ingest_csv(&path, None).unwrap(), data);
        }
    }
}
