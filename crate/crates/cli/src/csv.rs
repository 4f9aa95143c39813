//! Minimal CSV writer. Every file starts with the version line so column
//! changes can be detected by readers.

pub const VERSION_LINE: &str = "# pwap-csv v1";

pub struct Table {
    columns: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &'static [&'static str]) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.columns.len(), "row width");
        self.rows.push(row);
    }

    pub fn extend(&mut self, rows: impl IntoIterator<Item = Vec<String>>) {
        for r in rows {
            self.push(r);
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!("{VERSION_LINE}\n{}\n", self.columns.join(","));
        for r in &self.rows {
            s += &r.join(",");
            s.push('\n');
        }
        s
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:e}")
}

pub fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Parses a rendered table back into its header and rows.
pub fn parse(text: &str) -> Option<(Vec<String>, Vec<Vec<String>>)> {
    let mut lines = text.lines();
    if lines.next()? != VERSION_LINE {
        return None;
    }
    let split = |l: &str| l.split(',').map(str::to_string).collect::<Vec<_>>();
    let header = split(lines.next()?);
    Some((header, lines.map(split).collect()))
}
