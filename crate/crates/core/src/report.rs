//! Output helpers: provenance headers and tables rendered as aligned text or CSV.

use sha2::{Digest, Sha256};

use crate::randomize::RNG_ID;

pub const TOOL_VERSION: &str = concat!("clusterate ", env!("CARGO_PKG_VERSION"));

/// Hex SHA-256 of `text`.
pub fn sha256_hex(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Comment lines naming the tool version, RNG, seed and config digest.
pub fn provenance(seed: Option<u64>, config: &str) -> String {
    let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
    format!(
        "# tool: {TOOL_VERSION}\n# rng: {RNG_ID}\n# seed: {seed}\n# config_sha256: {}\n",
        sha256_hex(config)
    )
}

/// A rectangular table of preformatted cells.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Table {
        Table {
            headers: headers.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }

    /// Space-aligned columns, numbers right-aligned and text left-aligned.
    pub fn to_text(&self) -> String {
        let widths: Vec<usize> = (0..self.headers.len())
            .map(|c| {
                self.rows
                    .iter()
                    .map(|r| r[c].len())
                    .chain([self.headers[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let numeric: Vec<bool> = (0..self.headers.len())
            .map(|c| !self.rows.is_empty() && self.rows.iter().all(|r| looks_numeric(&r[c])))
            .collect();
        let line = |cells: &[String]| -> String {
            let parts: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    if numeric[c] {
                        format!("{s:>w$}", w = widths[c])
                    } else {
                        format!("{s:<w$}", w = widths[c])
                    }
                })
                .collect();
            parts.join("  ").trim_end().to_string() + "\n"
        };
        let mut out = line(&self.headers);
        for r in &self.rows {
            out.push_str(&line(r));
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.headers).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
    }
}

fn looks_numeric(s: &str) -> bool {
    s.parse::<f64>().is_ok() || s == "NA"
}

/// Fixed six-decimal rendering for text tables.
pub fn fmt6(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x:.6}")
    }
}

/// Shortest round-trip rendering for machine-readable output.
pub fn fmt_full(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:?}")
    }
}
