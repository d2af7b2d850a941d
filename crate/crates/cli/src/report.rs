use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::options::Common;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, bad config or an infeasible setting.
    Usage(String),
    /// A check ran and did not hold.
    Verification(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Verification(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Verification(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<cglab_core::Error> for CliError {
    fn from(e: cglab_core::Error) -> Self {
        use cglab_core::Error as E;
        match e {
            E::Io { .. } | E::MalformedDump { .. } | E::SizeMismatch { .. } => CliError::Io(e.to_string()),
            E::PatternViolated { .. } => CliError::Verification(e.to_string()),
            other => CliError::Usage(other.to_string()),
        }
    }
}

/// 64-bit content hash: the first 8 bytes of SHA-256, as hex.
pub fn digest_bytes(bytes: &[u8]) -> String {
    Sha256::digest(bytes)[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Digests of every regular file in a dump directory, keyed by `dir/file`.
pub fn digest_dump(dir: &Path) -> Result<BTreeMap<String, String>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let mut out = BTreeMap::new();
    for entry in entries {
        let entry = entry.map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let path = entry.path();
        if path.is_file() {
            let bytes = fs::read(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            out.insert(path.display().to_string(), digest_bytes(&bytes));
        }
    }
    Ok(out)
}

#[derive(Debug, Serialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub command: String,
    pub config: Value,
    pub seed: u64,
    pub results: Value,
    pub provenance: BTreeMap<String, String>,
}

impl ExperimentReport {
    pub fn new(command: &str, config: &impl Serialize, seed: u64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            results: Value::Object(Default::default()),
            provenance: BTreeMap::new(),
        }
    }

    pub fn set(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("result serializes");
        self.results
            .as_object_mut()
            .expect("results is an object")
            .insert(key.to_string(), v);
    }
}

/// Wall time per named stage. Written only on request and kept out of the
/// report so that reports stay byte-identical across runs.
#[derive(Debug)]
pub struct Stopwatch {
    start: Instant,
    stages: Vec<(String, f64)>,
}

impl Stopwatch {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
            stages: Vec::new(),
        }
    }

    pub fn lap(&mut self, stage: &str) {
        let now = Instant::now();
        self.stages.push((stage.to_string(), (now - self.start).as_secs_f64()));
        self.start = now;
    }
}

pub struct Table {
    name: String,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.iter().map(|c| csv_field(c)).collect::<Vec<_>>().join(","));
            s.push('\n');
        }
        s
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Formats floats with full round-trip precision.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    f.write_all(contents)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

/// Writes `<out>/<command>.json`, one CSV per table, and the timings sidecar
/// when requested.
pub fn emit(common: &Common, report: &ExperimentReport, tables: &[Table], mut watch: Stopwatch) -> Result<(), CliError> {
    let out = &common.out;
    fs::create_dir_all(out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let mut json = serde_json::to_string_pretty(report).expect("report serializes");
    json.push('\n');
    write_file(&out.join(format!("{}.json", report.command)), json.as_bytes())?;
    for t in tables {
        write_file(&out.join(format!("{}.csv", t.name)), t.render().as_bytes())?;
    }
    watch.lap("write");
    if common.timings {
        let value: Vec<Value> = watch
            .stages
            .iter()
            .map(|(s, t)| serde_json::json!({ "stage": s, "seconds": t }))
            .collect();
        let text = serde_json::to_string_pretty(&value).expect("timings serialize");
        write_file(&out.join(format!("{}.timings.json", report.command)), text.as_bytes())?;
    }
    Ok(())
}
