//! Number formatting for the CSV and text artifacts.

/// Shortest representation that parses back to the identical `f64`.
pub fn format_full(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x}")
    }
}

/// Fixed-decimal display form; negative zero prints without a sign.
pub fn format_rounded(x: f64, decimals: usize) -> String {
    let s = format!("{x:.decimals$}");
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Quote a CSV field when it contains a separator, quote or newline.
pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub(crate) fn csv_line<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut line = fields
        .into_iter()
        .map(|f| csv_field(f.as_ref()))
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_precision_round_trips() {
        for &x in &[0.1, 1.0 / 3.0, -2.5e-17, 123456.789] {
            assert_eq!(format_full(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(format_full(-0.0), "0");
    }

    #[test]
    fn rounded_drops_negative_zero() {
        assert_eq!(format_rounded(-0.001, 2), "0.00");
        assert_eq!(format_rounded(1.005, 1), "1.0");
        assert_eq!(format_rounded(-1.5, 2), "-1.50");
    }

    #[test]
    fn csv_quoting() {
        assert_eq!(csv_line(["a", "b,c"]), "a,\"b,c\"\n");
    }
}
