//! Result bundle serialization: time series, frames, plot data, metadata, log.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use gvs_core::Pose;
use nalgebra::DVector;
use serde_json::{json, Map, Value};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Scientific notation with 17 significant digits, which round-trips exactly.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// A table of named columns written as CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self { header, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<f64>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.header.iter().position(|h| h == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = BufWriter::new(create(path)?);
        writeln!(w, "{}", self.header.join(","))?;
        for r in &self.rows {
            let line: Vec<String> = r.iter().map(|v| num(*v)).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let f = File::open(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = BufReader::new(f).lines();
        let header: Vec<String> = match lines.next() {
            Some(h) => h?.split(',').map(str::to_string).collect(),
            None => return Err(CliError::Parse(format!("{}: empty table", path.display()))),
        };
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let line = line?;
            let row = line
                .split(',')
                .map(|s| s.parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Parse(format!("{} line {}: {e}", path.display(), k + 2)))?;
            if row.len() != header.len() {
                return Err(CliError::Parse(format!(
                    "{} line {}: {} columns, header has {}",
                    path.display(),
                    k + 2,
                    row.len(),
                    header.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self { header, rows })
    }
}

/// Header `t, q_0.., qd_0..` followed by the extra column names.
pub fn state_header(n: usize, extras: &[String]) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((0..n).map(|i| format!("q_{i}")));
    h.extend((0..n).map(|i| format!("qd_{i}")));
    h.extend(extras.iter().cloned());
    h
}

pub fn state_row(t: f64, q: &DVector<f64>, qd: &DVector<f64>, extras: &[f64]) -> Vec<f64> {
    let mut r = Vec::with_capacity(1 + 2 * q.len() + extras.len());
    r.push(t);
    r.extend(q.iter());
    r.extend(qd.iter());
    r.extend_from_slice(extras);
    r
}

/// Line-delimited JSON frames `(t, point, R row-major, r)`.
pub struct FrameWriter {
    w: BufWriter<File>,
}

impl FrameWriter {
    pub fn create(path: &Path) -> Result<Self, CliError> {
        Ok(Self {
            w: BufWriter::new(create(path)?),
        })
    }

    pub fn write(&mut self, t: f64, poses: &[Pose], extra: Option<(&str, Value)>) -> Result<(), CliError> {
        for (i, g) in poses.iter().enumerate() {
            let r = &g.rotation;
            let mut obj = Map::new();
            obj.insert("t".into(), json!(t));
            obj.insert("point".into(), json!(i));
            obj.insert(
                "R".into(),
                json!([r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]]),
            );
            obj.insert("r".into(), json!([g.translation.x, g.translation.y, g.translation.z]));
            if let Some((k, v)) = &extra {
                obj.insert((*k).into(), v.clone());
            }
            serde_json::to_writer(&mut self.w, &Value::Object(obj)).map_err(|e| CliError::Io(e.to_string()))?;
            self.w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.w.flush()?;
        Ok(())
    }
}

/// Two-dimensional plot series written as `series,x,y` rows.
#[derive(Debug, Clone, Default)]
pub struct PlotData {
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

impl PlotData {
    pub fn add(&mut self, name: &str, points: Vec<(f64, f64)>) {
        self.series.push((name.to_string(), points));
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = BufWriter::new(create(path)?);
        writeln!(w, "series,x,y")?;
        for (name, pts) in &self.series {
            for (x, y) in pts {
                writeln!(w, "{name},{},{}", num(*x), num(*y))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Output directory of one run.
#[derive(Debug)]
pub struct Bundle {
    pub dir: PathBuf,
    pub meta: Map<String, Value>,
    pub log: Vec<String>,
}

impl Bundle {
    pub fn new(dir: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let probe = dir.join(".write-test");
        File::create(&probe).map_err(|e| CliError::Io(format!("{} is not writable: {e}", dir.display())))?;
        fs::remove_file(&probe)?;
        let mut meta = Map::new();
        meta.insert("schema_version".into(), json!(SCHEMA_VERSION));
        meta.insert("tool_version".into(), json!(env!("CARGO_PKG_VERSION")));
        Ok(Self {
            dir: dir.to_path_buf(),
            meta,
            log: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn set(&mut self, key: &str, v: Value) {
        self.meta.insert(key.into(), v);
    }

    pub fn log(&mut self, line: impl Into<String>) {
        self.log.push(line.into());
    }

    pub fn finish(&self) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(&Value::Object(self.meta.clone())).map_err(|e| CliError::Io(e.to_string()))?;
        fs::write(self.path("meta.json"), text + "\n")?;
        let mut log = self.log.join("\n");
        log.push('\n');
        fs::write(self.path("log.txt"), log)?;
        Ok(())
    }
}

fn create(path: &Path) -> Result<File, CliError> {
    File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}
