use cglab_core::synthetic_lab::free::{min_dim_scan, ScanConfig};
use cglab_core::{Geometry, Loss};
use serde::{Deserialize, Serialize};

use crate::options::{parse_list, resolve, Common};
use crate::report::{emit, num, CliError, ExperimentReport, Stopwatch, Table};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Concept counts, e.g. `2,3,4`.
    #[arg(long)]
    k: Option<String>,
    /// Values per concept, e.g. `2,6`.
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    loss: Option<Loss>,
    #[arg(long)]
    geometry: Option<Geometry>,
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    d_max: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Mean per-concept accuracy counted as success.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub k: Vec<usize>,
    pub n: Vec<usize>,
    pub loss: Loss,
    pub geometry: Geometry,
    pub restarts: usize,
    pub d_max: usize,
    pub epochs: usize,
    pub lr: f64,
    pub success_threshold: f64,
    pub grid_cap: usize,
}

impl Default for Config {
    fn default() -> Self {
        let s = ScanConfig::default();
        Self {
            k: vec![2, 3, 4],
            n: vec![2, 6],
            loss: Loss::Ce,
            geometry: Geometry::Euclidean,
            restarts: s.restarts,
            d_max: s.d_max,
            epochs: s.epochs,
            lr: s.lr,
            success_threshold: s.success_threshold,
            grid_cap: s.grid_cap,
        }
    }
}

pub fn run(common: &Common, args: Args) -> Result<(), CliError> {
    let mut watch = Stopwatch::new();
    let (mut cfg, seed) = resolve::<Config>(common)?;
    if let Some(v) = &args.k {
        cfg.k = parse_list(v)?;
    }
    if let Some(v) = &args.n {
        cfg.n = parse_list(v)?;
    }
    if let Some(v) = args.loss {
        cfg.loss = v;
    }
    if let Some(v) = args.geometry {
        cfg.geometry = v;
    }
    if let Some(v) = args.restarts {
        cfg.restarts = v;
    }
    if let Some(v) = args.d_max {
        cfg.d_max = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    if let Some(v) = args.threshold {
        cfg.success_threshold = v;
    }
    let scan = ScanConfig {
        restarts: cfg.restarts,
        d_max: cfg.d_max,
        epochs: cfg.epochs,
        lr: cfg.lr,
        seed,
        success_threshold: cfg.success_threshold,
        grid_cap: cfg.grid_cap,
    };
    watch.lap("setup");
    let table = min_dim_scan(&cfg.k, &cfg.n, cfg.loss, cfg.geometry, &scan)?;
    watch.lap("scan");

    let mut report = ExperimentReport::new("min-dim-scan", &cfg, seed);
    report.set("cells", &table.cells);
    report.set(
        "below_bound",
        table.cells.iter().filter(|c| c.below_bound()).map(|c| (c.k, c.n)).collect::<Vec<_>>(),
    );
    let (loss, geom) = (cfg.loss.to_string(), cfg.geometry.to_string());
    let mut cells = Table::new("min-dim", &["loss", "geometry", "k", "n", "min_d", "approximate"]);
    let mut attempts = Table::new(
        "min-dim-attempts",
        &["loss", "geometry", "k", "n", "d", "best_mean_accuracy", "best_min_accuracy", "success"],
    );
    for c in &table.cells {
        cells.push(vec![
            loss.clone(),
            geom.clone(),
            c.k.to_string(),
            c.n.to_string(),
            c.min_d.map_or(String::new(), |d| d.to_string()),
            c.approximate.to_string(),
        ]);
        for a in &c.attempts {
            attempts.push(vec![
                loss.clone(),
                geom.clone(),
                c.k.to_string(),
                c.n.to_string(),
                a.d.to_string(),
                num(a.best_mean_accuracy),
                num(a.best_min_accuracy),
                a.success.to_string(),
            ]);
        }
        println!(
            "k={} n={}: minimal d {}",
            c.k,
            c.n,
            c.min_d.map_or(format!("> {}", cfg.d_max), |d| d.to_string())
        );
    }
    emit(common, &report, &[cells, attempts], watch)
}
