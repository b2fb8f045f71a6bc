//! Minimal CSV helpers shared by the exportable value types.
//!
//! Numbers are written with the shortest decimal string that parses back to
//! the same `f64`, so files round-trip exactly and are byte-stable.

use crate::error::{Error, Result};

/// Shortest round-trip decimal; scientific notation for very large or very
/// small magnitudes.
pub fn format_f64(x: f64) -> String {
    let a = x.abs();
    if x != 0.0 && x.is_finite() && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// One CSV row of numbers in the format of [`format_f64`].
pub fn join_row(values: impl IntoIterator<Item = f64>) -> String {
    values.into_iter().map(format_f64).collect::<Vec<_>>().join(",")
}

/// Splits a CSV document into its header and numeric rows.
pub fn parse_numeric(text: &str) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::InvalidInput("empty CSV".into()))?
        .split(',')
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let row = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::InvalidInput(format!("CSV row {}: {e}", k + 1)))?;
        if row.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "CSV row {} has {} cells, header has {}",
                k + 1,
                row.len(),
                header.len()
            )));
        }
        rows.push(row);
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips() {
        for x in [0.0, -0.0, 1.0, 0.1, 1.0 / 3.0, 1e-7, -2.5e300, 123456.789, f64::MIN_POSITIVE] {
            assert_eq!(format_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits(), "{x}");
        }
        assert_eq!(format_f64(0.5), "0.5");
        assert_eq!(format_f64(1e-7), "1e-7");
    }

    #[test]
    fn parses_rows() {
        let (h, rows) = parse_numeric("a,b\n1,2\n3,4.5\n").unwrap();
        assert_eq!(h, vec!["a", "b"]);
        assert_eq!(rows, vec![vec![1.0, 2.0], vec![3.0, 4.5]]);
        assert!(parse_numeric("a,b\n1\n").is_err());
    }
}
