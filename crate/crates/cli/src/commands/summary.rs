use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::options::{resolve, Common};
use crate::report::{digest_bytes, emit, CliError, ExperimentReport, Stopwatch, Table};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Directory of reports written by other subcommands.
    #[arg(long)]
    inputs: PathBuf,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {}

/// Scalar leaves of a JSON tree keyed by dotted paths.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => m.iter().for_each(|(k, v)| flatten(&key(k), v, out)),
        Value::Array(a) => a.iter().enumerate().for_each(|(i, v)| flatten(&key(&i.to_string()), v, out)),
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

pub fn run(common: &Common, args: Args) -> Result<(), CliError> {
    let mut watch = Stopwatch::new();
    let (cfg, seed) = resolve::<Config>(common)?;
    let mut report = ExperimentReport::new("report", &cfg, seed);
    let io = |e: std::io::Error| CliError::Io(format!("{}: {e}", args.inputs.display()));
    let mut files: Vec<PathBuf> = fs::read_dir(&args.inputs)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".timings.json") && name != "report.json"
        })
        .collect();
    files.sort();
    let mut table = Table::new("report-summary", &["report", "command", "seed", "metric", "value"]);
    let mut summary = serde_json::Map::new();
    for path in &files {
        let bytes = fs::read(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let v: Value = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Io(format!("{}: not a report ({e})", path.display())))?;
        let (Some(command), Some(results)) = (v.get("command").and_then(Value::as_str), v.get("results")) else {
            continue;
        };
        let seed = v.get("seed").map(|s| s.to_string()).unwrap_or_default();
        let name = path.file_name().expect("file").to_string_lossy().to_string();
        report.provenance.insert(path.display().to_string(), digest_bytes(&bytes));
        let mut leaves = Vec::new();
        flatten("", results, &mut leaves);
        for (metric, value) in &leaves {
            table.push(vec![name.clone(), command.to_string(), seed.clone(), metric.clone(), value.clone()]);
        }
        summary.insert(name, serde_json::json!({ "command": command, "metrics": leaves.len() }));
    }
    watch.lap("collect");
    println!("report: {} reports, {} rows", files.len(), table.len());
    report.set("reports", summary);
    emit(common, &report, &[table], watch)
}
