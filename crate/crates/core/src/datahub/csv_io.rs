use std::path::Path;

use super::{scale_columns, Dataset, Split};
use crate::error::{Error, Result};

fn parse_err(path: &Path, message: String) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        message,
    }
}

/// Reads numeric feature columns followed by an integer label column.
///
/// Features are min-max scaled per column into `[0, 1]`. Every sample is
/// tagged `Train`; use [`Dataset::assign_random_splits`] to partition.
pub fn load_csv(path: &Path, has_header: bool) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(has_header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, e.to_string()))?;

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, record) in reader.records().enumerate() {
        let line = i + 1 + usize::from(has_header);
        let record = record.map_err(|e| parse_err(path, format!("line {line}: {e}")))?;
        if record.len() < 2 {
            return Err(parse_err(path, format!("line {line}: need at least one feature and a label")));
        }
        let width = record.len() - 1;
        match dim {
            None => dim = Some(width),
            Some(d) if d != width => {
                return Err(parse_err(path, format!("line {line}: expected {d} features, found {width}")));
            }
            _ => {}
        }
        for (c, field) in record.iter().take(width).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, format!("line {line}, column {}: '{field}' is not a number", c + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(path, format!("line {line}, column {}: non-finite value", c + 1)));
            }
            features.push(v);
        }
        let raw = &record[width];
        let y: usize = raw
            .parse()
            .map_err(|_| parse_err(path, format!("line {line}: label '{raw}' is not a non-negative integer")))?;
        labels.push(y);
    }
    let dim = dim.ok_or_else(|| parse_err(path, "no data rows".into()))?;
    scale_columns(&mut features, dim);
    let num_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
    let n = labels.len();
    Dataset::new(
        features,
        dim,
        labels,
        num_classes,
        vec![Split::Train; n],
        format!("csv:{}", path.display()),
    )
}

/// Writes features and the label column; values use shortest round-trip formatting.
pub fn write_csv(ds: &Dataset, path: &Path, header: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| parse_err(path, e.to_string()))?;
    let to_err = |e: csv::Error| parse_err(path, e.to_string());
    if header {
        let mut names: Vec<String> = (0..ds.dim()).map(|c| format!("x{c}")).collect();
        names.push("label".into());
        w.write_record(&names).map_err(to_err)?;
    }
    for i in 0..ds.len() {
        let mut row: Vec<String> = ds.features()[i * ds.dim()..(i + 1) * ds.dim()]
            .iter()
            .map(|v| format!("{v:?}"))
            .collect();
        row.push(ds.labels()[i].to_string());
        w.write_record(&row).map_err(to_err)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn parses_and_scales() {
        let f = write("a,b,label\n1,10,0\n3,20,1\n2,30,2\n");
        let ds = load_csv(f.path(), true).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.labels(), &[0, 1, 2]);
        assert_eq!(ds.num_classes(), 3);
        assert_eq!(ds.features(), &[0.0, 0.0, 1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write("");
        assert!(load_csv(f.path(), false).is_err());
    }

    #[test]
    fn malformed_row_names_the_line() {
        let f = write("1,2,0\n3,x,1\n");
        let err = load_csv(f.path(), false).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let f = write("1,2,0\n3,1\n");
        let err = load_csv(f.path(), false).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        let f = write("1,2,0.5\n");
        assert!(load_csv(f.path(), false).is_err());
    }

    #[test]
    fn round_trip_preserves_features() {
        let f = write("0.1,7,1\n0.35,2,0\n0.9,4.5,1\n0.2,3,0\n");
        let ds = load_csv(f.path(), false).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        write_csv(&ds, out.path(), true).unwrap();
        let back = load_csv(out.path(), true).unwrap();
        assert_eq!(back.labels(), ds.labels());
        for (a, b) in back.features().iter().zip(ds.features()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }
}
