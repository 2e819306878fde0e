use std::fs;
use std::path::Path;

use crate::data::{CovariateMatrix, IdMap};
use crate::error::{Error, Result};

/// Read whitespace-separated `item_id v_1 .. v_L` rows aligned to `item_ids`.
///
/// Rows are renormalized to sum to one. Rows for unknown items are ignored;
/// items without a row are an error that lists the first ten missing IDs.
pub fn load_covariates(path: impl AsRef<Path>, item_ids: &IdMap) -> Result<CovariateMatrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_owned(),
        line: line as u64,
        message,
    };

    let mut dim: Option<usize> = None;
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; item_ids.len()];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let raw = raw.trim();
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let mut fields = raw.split_whitespace();
        let id = fields.next().expect("non-empty line has a field");
        let values = fields
            .map(|f| {
                f.parse::<f64>()
                    .map_err(|_| parse_err(line, format!("`{f}` is not a number")))
            })
            .collect::<Result<Vec<f64>>>()?;
        match dim {
            None if values.is_empty() => {
                return Err(parse_err(line, "row has no covariate values".into()))
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(parse_err(
                    line,
                    format!("row has {} values, earlier rows have {d}", values.len()),
                ))
            }
            Some(_) => {}
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(parse_err(line, format!("covariate value {v} is negative or not finite")));
        }
        if values.iter().all(|&v| v == 0.0) {
            return Err(parse_err(line, format!("covariate row for `{id}` is all zero")));
        }
        if let Some(item) = item_ids.index_of(id) {
            if rows[item].is_some() {
                return Err(parse_err(line, format!("duplicate covariate row for `{id}`")));
            }
            rows[item] = Some(values);
        }
    }

    let missing: Vec<&str> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_none())
        .map(|(i, _)| item_ids.id(i).unwrap_or("?"))
        .collect();
    if !missing.is_empty() {
        let shown: Vec<&str> = missing.iter().take(10).copied().collect();
        return Err(Error::Data(format!(
            "{} items have no covariate row in {}: {}",
            missing.len(),
            path.display(),
            shown.join(", ")
        )));
    }
    let dim = dim.ok_or_else(|| Error::Data(format!("{} has no covariate rows", path.display())))?;
    let data = rows.into_iter().flatten().flatten().collect();
    CovariateMatrix::new(item_ids.len(), dim, data)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn load(contents: &str, ids: &[&str]) -> Result<CovariateMatrix> {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        let ids: IdMap = ids.iter().collect();
        load_covariates(f.path(), &ids)
    }

    #[test]
    fn reads_and_normalizes() {
        let x = load("paper2 2 2\npaper1 0.2 0.8\nother 1 1\n", &["paper1", "paper2"]).unwrap();
        assert_eq!(x.dim(), 2);
        assert!((x.row(0)[0] - 0.2).abs() < 1e-15 && (x.row(0)[1] - 0.8).abs() < 1e-15);
        assert_eq!(x.row(1), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_negative_and_zero_rows() {
        assert!(matches!(load("paper1 -1 2\n", &["paper1"]), Err(Error::Parse { line: 1, .. })));
        assert!(load("paper1 0 0\n", &["paper1"]).is_err());
    }

    #[test]
    fn rejects_ragged_rows() {
        assert!(matches!(
            load("a 1 2\nb 1 2 3\n", &["a", "b"]),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn lists_missing_items() {
        let ids: Vec<String> = (0..15).map(|i| format!("m{i}")).collect();
        let mut all: Vec<&str> = vec!["have"];
        all.extend(ids.iter().map(String::as_str));
        let err = load("have 1 1\n", &all).unwrap_err().to_string();
        assert!(err.contains("15 items") && err.contains("m9") && !err.contains("m10"));
    }
}
