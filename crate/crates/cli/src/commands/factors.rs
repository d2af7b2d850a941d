use std::path::PathBuf;

use cglab_core::factor_model::{recover_by_averaging, recover_by_least_squares, write_factors};
use cglab_core::metrics::{orthogonality, projected_whitened_r2, R2Options};
use serde::{Deserialize, Serialize};

use crate::commands::{load_dump, present};
use crate::options::{parse_rule, resolve, Common};
use crate::report::{emit, num, CliError, ExperimentReport, Stopwatch, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Averaging,
    LeastSquares,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    dump: PathBuf,
    #[arg(long, value_enum)]
    method: Option<Method>,
    /// Rows used for recovery: `full`, `fraction:RHO`, `size:N`, `cross:C0,C1,..`.
    #[arg(long)]
    support: Option<String>,
    /// Store the factors in the dump.
    #[arg(long)]
    write: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub method: Method,
    pub support: String,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            method: Method::Averaging,
            support: "full".into(),
        }
    }
}

pub fn run(common: &Common, args: Args) -> Result<(), CliError> {
    let mut watch = Stopwatch::new();
    let (mut cfg, seed) = resolve::<Config>(common)?;
    if let Some(m) = args.method {
        cfg.method = m;
    }
    if let Some(s) = &args.support {
        cfg.support = s.clone();
    }
    let rule = parse_rule(&cfg.support)?;
    let mut report = ExperimentReport::new("recover-factors", &cfg, seed);
    let set = load_dump(&args.dump, &mut report)?;
    watch.lap("read");
    let support = present(&set, &set.space().sample_support(&rule, seed)?);
    let sub = set.subset(&set.select_rows(support.tuples())?);
    let factors = match cfg.method {
        Method::Averaging => recover_by_averaging(&sub)?,
        Method::LeastSquares => recover_by_least_squares(&sub)?,
    };
    watch.lap("recover");

    let plain = R2Options {
        whiten: false,
        ..R2Options::default()
    };
    let r2 = projected_whitened_r2(&set, &factors, None, &plain)?;
    let whitened = projected_whitened_r2(&set, &factors, None, &R2Options::default())?;
    let orth = orthogonality(&factors)?;
    report.set("support_tuples", support.len());
    report.set("support_rows", sub.rows());
    report.set("centering_residual", factors.centering_residual());
    report.set("r2", r2.r2);
    report.set("r2_whitened", whitened.r2);
    report.set("mean_within", orth.mean_within());
    report.set("mean_across", orth.mean_across());

    let mut norms = Table::new("factor-norms", &["concept", "value", "norm"]);
    for i in 0..factors.space().k() {
        for j in 0..factors.space().cardinality(i) {
            norms.push(vec![i.to_string(), j.to_string(), num(factors.factor(i, j).norm())]);
        }
    }
    if args.write {
        write_factors(&factors, &args.dump)?;
    }
    watch.lap("metrics");
    println!(
        "recover-factors: {} tuples, R^2 {:.4} (whitened {:.4})",
        support.len(),
        r2.r2,
        whitened.r2
    );
    emit(common, &report, &[norms], watch)
}
