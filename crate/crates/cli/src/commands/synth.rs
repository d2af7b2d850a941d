use std::path::PathBuf;

use cglab_core::probe_trainer::write_probes;
use cglab_core::synthetic_lab::free::{train_free_embeddings, LabConfig, DEFAULT_GRID_CAP};
use cglab_core::{write_dump, Geometry, Loss};
use serde::{Deserialize, Serialize};

use crate::options::{parse_list, resolve, space_from, Common};
use crate::report::{emit, num, CliError, ExperimentReport, Stopwatch, Table};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Concept cardinalities, e.g. `3,3,4`.
    #[arg(long)]
    cardinalities: Option<String>,
    /// Number of concepts (with --n, a uniform grid).
    #[arg(long)]
    k: Option<usize>,
    /// Values per concept (with --k).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    loss: Option<Loss>,
    #[arg(long)]
    geometry: Option<Geometry>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Write the trained embeddings and probes as a dump here.
    #[arg(long)]
    dump: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cardinalities: Vec<usize>,
    pub d: usize,
    pub loss: Loss,
    pub geometry: Geometry,
    pub epochs: usize,
    pub lr: f64,
    pub grid_cap: usize,
}

impl Default for Config {
    fn default() -> Self {
        let lab = LabConfig::default();
        Self {
            cardinalities: vec![3, 3],
            d: 2,
            loss: lab.loss,
            geometry: lab.geometry,
            epochs: lab.epochs,
            lr: lab.lr,
            grid_cap: DEFAULT_GRID_CAP,
        }
    }
}

pub fn run(common: &Common, args: Args) -> Result<(), CliError> {
    let mut watch = Stopwatch::new();
    let (mut cfg, seed) = resolve::<Config>(common)?;
    if let Some(c) = &args.cardinalities {
        cfg.cardinalities = parse_list(c)?;
    }
    match (args.k, args.n) {
        (Some(k), Some(n)) => cfg.cardinalities = vec![n; k],
        (None, None) => {}
        _ => return Err(CliError::Usage("--k and --n go together".into())),
    }
    if let Some(v) = args.d {
        cfg.d = v;
    }
    if let Some(v) = args.loss {
        cfg.loss = v;
    }
    if let Some(v) = args.geometry {
        cfg.geometry = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    let space = space_from(&cfg.cardinalities)?;
    let lab = LabConfig {
        loss: cfg.loss,
        geometry: cfg.geometry,
        epochs: cfg.epochs,
        lr: cfg.lr,
        seed,
        grid_cap: cfg.grid_cap,
        allow_sampling: true,
    };
    watch.lap("setup");
    let run = train_free_embeddings(&space, cfg.d, &lab)?;
    watch.lap("train");

    let mut report = ExperimentReport::new("synth-train", &cfg, seed);
    report.set("accuracy", &run.accuracy);
    report.set("mean_accuracy", run.mean_accuracy());
    report.set("min_accuracy", run.min_accuracy());
    report.set("final_loss", run.history.last().copied().unwrap_or(f64::NAN));
    report.set("temperature", run.bank.temperature());
    report.set("approximate", run.approximate);
    report.set("rows", run.set.rows());
    let mut history = Table::new("synth-train-loss", &["epoch", "loss"]);
    for (e, l) in run.history.iter().enumerate() {
        history.push(vec![e.to_string(), num(*l)]);
    }
    if let Some(dir) = &args.dump {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        write_dump(&run.set, dir)?;
        write_probes(&run.bank, dir)?;
    }
    println!(
        "synth-train: {:?} d={} mean accuracy {:.4}",
        cfg.cardinalities,
        cfg.d,
        run.mean_accuracy()
    );
    emit(common, &report, &[history], watch)
}
