use std::path::PathBuf;

use cglab_core::metrics::compositional_accuracy;
use cglab_core::probe_trainer::{train_probes, write_probes};
use cglab_core::{Geometry, Loss, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::commands::{heldout_split, load_dump, present};
use crate::options::{parse_rule, resolve, Common};
use crate::report::{emit, num, CliError, ExperimentReport, Stopwatch, Table};

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    dump: PathBuf,
    /// Training support: `full`, `majority`, `fraction:RHO`, `size:N`, `cross:C0,C1,..`.
    #[arg(long, conflicts_with = "heldout_fraction")]
    support: Option<String>,
    /// Hold out this fraction of tuples and train on the rest.
    #[arg(long)]
    heldout_fraction: Option<f64>,
    #[arg(long)]
    loss: Option<Loss>,
    #[arg(long)]
    geometry: Option<Geometry>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Store the probes in the dump.
    #[arg(long)]
    write: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub support: String,
    pub heldout_fraction: Option<f64>,
    pub loss: Loss,
    pub geometry: Geometry,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            support: "full".into(),
            heldout_fraction: None,
            loss: t.loss,
            geometry: t.geometry,
            epochs: t.epochs,
            lr: t.lr,
        }
    }
}

pub fn run(common: &Common, args: Args) -> Result<(), CliError> {
    let mut watch = Stopwatch::new();
    let (mut cfg, seed) = resolve::<Config>(common)?;
    if let Some(s) = &args.support {
        cfg.support = s.clone();
        cfg.heldout_fraction = None;
    }
    if let Some(v) = args.heldout_fraction {
        cfg.heldout_fraction = Some(v);
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
    let mut report = ExperimentReport::new("probe-train", &cfg, seed);
    let set = load_dump(&args.dump, &mut report)?;
    let space = set.space().clone();
    let (train, heldout) = match cfg.heldout_fraction {
        Some(rho) => {
            let (t, h) = heldout_split(&space, rho, seed)?;
            (t, Some(h))
        }
        None => (space.sample_support(&parse_rule(&cfg.support)?, seed)?, None),
    };
    let train = present(&set, &train);
    let heldout = heldout.map(|h| present(&set, &h)).filter(|h| !h.is_empty());
    watch.lap("read");
    let tc = TrainConfig {
        loss: cfg.loss,
        geometry: cfg.geometry,
        epochs: cfg.epochs,
        lr: cfg.lr,
        seed,
        convergence: None,
    };
    let trained = train_probes(&set, &train, &tc)?;
    watch.lap("train");

    let train_acc = compositional_accuracy(&trained.bank, &set, &train)?;
    report.set("train_tuples", train.len());
    report.set("train_accuracy", &train_acc);
    if let Some(h) = &heldout {
        report.set("heldout_tuples", h.len());
        report.set("heldout_accuracy", compositional_accuracy(&trained.bank, &set, h)?);
    }
    report.set("final_loss", trained.history.last().copied().unwrap_or(f64::NAN));
    report.set("temperature", trained.bank.temperature());
    let mut history = Table::new("probe-train-loss", &["epoch", "loss"]);
    for (e, l) in trained.history.iter().enumerate() {
        history.push(vec![e.to_string(), num(*l)]);
    }
    if args.write {
        write_probes(&trained.bank, &args.dump)?;
    }
    println!("probe-train: training accuracy {:.4}", train_acc.mean);
    emit(common, &report, &[history], watch)
}
