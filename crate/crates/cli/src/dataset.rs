//! Two-column `t,y` data files.

use std::path::Path;

use redopt::{DataPoint, Dataset};

use crate::error::CliError;

/// Parses comma-separated `t,y` rows. A first row that is not numeric is a
/// header; blank lines and lines starting with `#` are skipped.
pub fn parse_dataset(name: &str, text: &str) -> Result<Dataset, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut points = Vec::new();
    let mut first = true;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            token: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let parsed: Vec<Result<f64, &str>> = record.iter().map(|f| f.parse::<f64>().map_err(|_| f)).collect();
        let is_header = first && parsed.iter().any(|v| v.is_err());
        first = false;
        if is_header {
            continue;
        }
        if let Some(Err(token)) = parsed.iter().find(|v| v.is_err()) {
            return Err(CliError::Parse {
                line,
                token: token.to_string(),
            });
        }
        if parsed.len() != 2 {
            return Err(CliError::Parse {
                line,
                token: record.iter().collect::<Vec<_>>().join(","),
            });
        }
        points.push(DataPoint {
            t: parsed[0].unwrap(),
            y: parsed[1].unwrap(),
        });
    }
    if points.is_empty() {
        return Err(CliError::EmptyDataset);
    }
    Dataset::new(name, points).map_err(CliError::Setup)
}

pub fn load_dataset(path: &Path) -> Result<Dataset, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_dataset(&name, &text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_and_rows() {
        let d = parse_dataset("d", "t,y\n0,0.043\n60,0.12\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.point(1).t, 60.0);
    }

    #[test]
    fn bad_token_reports_line() {
        match parse_dataset("d", "0,0.043\nbad,1\n") {
            Err(CliError::Parse { line, token }) => {
                assert_eq!(line, 2);
                assert_eq!(token, "bad");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn comments_only_is_empty() {
        assert!(matches!(parse_dataset("d", "# nothing\n#\n"), Err(CliError::EmptyDataset)));
        assert!(matches!(parse_dataset("d", "t,y\n"), Err(CliError::EmptyDataset)));
    }

    #[test]
    fn blanks_comments_duplicates() {
        let d = parse_dataset("d", "# run 3\n\n1,2\n\n1, 2.5\n# end\n3,4\n").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.point(1).y, 2.5);
        assert_eq!(d.point(0).t, d.point(1).t);
    }

    #[test]
    fn wrong_column_count() {
        assert!(matches!(parse_dataset("d", "1,2\n3,4,5\n"), Err(CliError::Parse { line: 2, .. })));
    }
}
