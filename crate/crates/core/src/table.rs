//! Tab-separated figure-data tables with a provenance footer.

use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.headers.len(), "row width must match headers");
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn column(&self, name: &str) -> Option<Vec<&str>> {
        let idx = self.headers.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[idx].as_str()).collect())
    }

    /// Header line, rows, then `# key=value` footer lines.
    pub fn to_tsv(&self, footer: &[(&str, String)]) -> String {
        let mut out = self.headers.join("\t");
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join("\t"));
            out.push('\n');
        }
        for (k, v) in footer {
            let _ = writeln!(out, "# {k}={v}");
        }
        out
    }
}

pub fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else {
        "NA".into()
    }
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_with_footer() {
        let mut t = Table::new(["a", "b"]);
        t.push(vec!["1".into(), num(0.5)]);
        t.push(vec!["2".into(), opt_num(None)]);
        assert_eq!(t.to_tsv(&[("config_hash", "ab".into())]), "a\tb\n1\t0.5\n2\t\n# config_hash=ab\n");
        assert_eq!(t.column("b").unwrap(), vec!["0.5", ""]);
        assert_eq!(num(f64::NAN), "NA");
    }
}
