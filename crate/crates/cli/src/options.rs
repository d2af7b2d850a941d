use std::path::{Path, PathBuf};

use cglab_core::{ConceptSpace, ValidityRule};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::report::CliError;

pub const SEED_ENV: &str = "CGLAB_SEED";

#[derive(clap::Args, Debug, Clone)]
pub struct Common {
    /// Random seed [default: $CGLAB_SEED, else 0].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// JSON object of settings; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads for independent cells and trials.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Directory receiving the JSON report and CSV tables.
    #[arg(long, global = true, default_value = "cglab-out")]
    pub out: PathBuf,
    /// Also write per-stage wall times next to the report.
    #[arg(long, global = true)]
    pub timings: bool,
}

/// Settings resolved from built-in defaults, then the config file, then flags.
/// The seed follows the same order with `CGLAB_SEED` between the defaults and
/// the file.
pub fn resolve<C: DeserializeOwned + Default + Serialize>(common: &Common) -> Result<(C, u64), CliError> {
    let mut seed = match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| CliError::Usage(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?,
        Err(_) => 0,
    };
    let config = match &common.config {
        None => C::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
            let mut value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            let obj = value
                .as_object_mut()
                .ok_or_else(|| CliError::Usage(format!("{}: expected a JSON object", path.display())))?;
            if let Some(s) = obj.remove("seed") {
                seed = s
                    .as_u64()
                    .ok_or_else(|| CliError::Usage(format!("{}: seed must be an unsigned integer", path.display())))?;
            }
            serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
    };
    if let Some(s) = common.seed {
        seed = s;
    }
    Ok((config, seed))
}

/// Concept cardinalities from either an explicit list or `k` copies of `n`.
pub fn space_from(cards: &[usize]) -> Result<ConceptSpace, CliError> {
    ConceptSpace::new(cards.to_vec()).map_err(|e| CliError::Usage(e.to_string()))
}

/// Parses `full`, `majority`, `fraction:RHO`, `size:N` or `cross:C0,C1,...`.
pub fn parse_rule(s: &str) -> Result<ValidityRule, CliError> {
    let bad = || CliError::Usage(format!("unknown support rule {s:?}"));
    let (head, tail) = s.split_once(':').unwrap_or((s, ""));
    Ok(match head {
        "full" => ValidityRule::FullGrid,
        "majority" => ValidityRule::BinaryMajority,
        "fraction" => ValidityRule::Fraction(tail.parse().map_err(|_| bad())?),
        "size" => ValidityRule::FixedSize(tail.parse().map_err(|_| bad())?),
        "cross" => ValidityRule::CrossAt(parse_list(tail).map_err(|_| bad())?),
        _ => return Err(bad()),
    })
}

pub fn parse_list(s: &str) -> Result<Vec<usize>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("{p:?} in {s:?} is not a non-negative integer")))
        })
        .collect()
}

pub fn check_dir(path: &Path) -> Result<(), CliError> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{}: no such dump directory", path.display())))
    }
}
