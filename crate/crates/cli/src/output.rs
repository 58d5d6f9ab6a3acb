//! CSV tables and the summary file. Floats are written with 17 significant
//! digits so that reruns are byte-identical and values round-trip.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

pub enum Cell {
    Num(f64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(if v { "true" } else { "false" }.into())
    }
}

pub struct Table {
    header: Vec<&'static str>,
    body: String,
}

impl Table {
    pub fn new(header: &[&'static str]) -> Self {
        Self {
            header: header.to_vec(),
            body: String::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        assert_eq!(cells.len(), self.header.len(), "row width");
        let parts: Vec<String> = cells
            .into_iter()
            .map(|c| match c {
                Cell::Num(v) => format!("{v:.16e}"),
                Cell::Text(s) => s,
            })
            .collect();
        let _ = writeln!(self.body, "{}", parts.join(","));
    }

    pub fn write(&self, dir: &Path, name: &str) -> Result<PathBuf> {
        let path = dir.join(name);
        let text = format!("{}\n{}", self.header.join(","), self.body);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

#[macro_export]
macro_rules! row {
    ($($c:expr),* $(,)?) => { vec![$($crate::output::Cell::from($c)),*] };
}

/// Pass/fail lines for the checks a run exercised.
#[derive(Default)]
pub struct Summary {
    lines: Vec<String>,
    failed: Vec<String>,
}

impl Summary {
    pub fn check(&mut self, name: &str, ok: bool, detail: impl AsRef<str>) {
        let tag = if ok { "PASS" } else { "FAIL" };
        self.lines.push(format!("{tag} {name}: {}", detail.as_ref()));
        if !ok {
            self.failed.push(name.to_string());
        }
    }

    pub fn note(&mut self, line: impl Into<String>) {
        self.lines.push(line.into());
    }

    pub fn failed(&self) -> &[String] {
        &self.failed
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("summary.txt");
        let mut text = self.lines.join("\n");
        text.push('\n');
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
