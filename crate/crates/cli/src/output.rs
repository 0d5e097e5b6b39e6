//! Output directory handling and table formatting.

use std::path::{Path, PathBuf};

use ordrd::Error;

/// Writes named files into one directory, each prefixed with the
/// provenance line `# manifest_sha256=<hex> seed=<seed>`.
pub struct OutDir {
    dir: PathBuf,
    header: String,
}

impl OutDir {
    pub fn create(dir: &Path, sha256: &str, seed: u64) -> Result<Self, Error> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Self {
            dir: dir.to_path_buf(),
            header: format!("# manifest_sha256={sha256} seed={seed}\n"),
        })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&self, name: &str, body: &str) -> Result<(), Error> {
        let path = self.dir.join(name);
        let mut text = self.header.clone();
        text.push_str(body);
        std::fs::write(&path, text).map_err(|source| Error::Io { path, source })
    }
}

/// Shortest round-trip representation; `NA` for NaN.
pub fn num(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x}")
    }
}

/// Fixed-precision form for human-readable tables.
pub fn fixed(x: f64, digits: usize) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:.digits$}")
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_tsv(&self) -> String {
        let mut s = self.columns.join("\t");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }

    /// Copy with every non-integer numeric cell printed to `digits` places.
    pub fn rounded(&self, digits: usize) -> Self {
        let round = |c: &String| match c.parse::<f64>() {
            Ok(v) if c.contains(['.', 'e']) => fixed(v, digits),
            _ => c.clone(),
        };
        Self {
            columns: self.columns.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| r.iter().map(round).collect())
                .collect(),
        }
    }

    /// Space-aligned columns; first column left-aligned, the rest right.
    pub fn to_aligned(&self) -> String {
        let mut width: Vec<usize> = self.columns.iter().map(|c| c.chars().count()).collect();
        for r in &self.rows {
            for (w, cell) in width.iter_mut().zip(r) {
                *w = (*w).max(cell.chars().count());
            }
        }
        let line = |cells: &[String]| {
            let mut s = String::new();
            for (k, (cell, &w)) in cells.iter().zip(&width).enumerate() {
                if k == 0 {
                    s.push_str(&format!("{cell:<w$}"));
                } else {
                    s.push_str(&format!("  {cell:>w$}"));
                }
            }
            s.trim_end().to_string() + "\n"
        };
        let mut s = line(&self.columns);
        for r in &self.rows {
            s.push_str(&line(r));
        }
        s
    }
}
