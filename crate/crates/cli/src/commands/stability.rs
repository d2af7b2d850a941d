use std::path::PathBuf;

use cglab_core::synthetic_lab::generators::{generate_factorized, generate_unstable_binary};
use cglab_core::synthetic_lab::stability::{stability_experiment, Readout};
use cglab_core::{ConceptSpace, Geometry, Loss, TrainConfig, ValidityRule};
use serde::{Deserialize, Serialize};

use crate::commands::load_dump;
use crate::options::{resolve, Common};
use crate::report::{emit, num, CliError, ExperimentReport, Stopwatch, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Synthetic {
    /// Orthogonal additive binary factors.
    Factorized,
    /// Additive factors plus a bump on one tuple.
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    Majority,
    Cross,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReadoutKind {
    Svm,
    Trained,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Binary-grid dump; without it a synthetic grid is generated.
    #[arg(long, conflicts_with = "synthetic")]
    dump: Option<PathBuf>,
    #[arg(long, value_enum)]
    synthetic: Option<Synthetic>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long, value_enum)]
    rule: Option<RuleKind>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    readout: Option<ReadoutKind>,
    #[arg(long)]
    loss: Option<Loss>,
    #[arg(long)]
    geometry: Option<Geometry>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub synthetic: Synthetic,
    pub k: usize,
    pub d: usize,
    pub bump: f64,
    pub rule: RuleKind,
    pub trials: usize,
    pub readout: ReadoutKind,
    pub loss: Loss,
    pub geometry: Geometry,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            synthetic: Synthetic::Factorized,
            k: 4,
            d: 6,
            bump: 0.8,
            rule: RuleKind::Majority,
            trials: 10,
            readout: ReadoutKind::Svm,
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
    if let Some(v) = args.synthetic {
        cfg.synthetic = v;
    }
    if let Some(v) = args.k {
        cfg.k = v;
    }
    if let Some(v) = args.d {
        cfg.d = v;
    }
    if let Some(v) = args.rule {
        cfg.rule = v;
    }
    if let Some(v) = args.trials {
        cfg.trials = v;
    }
    if let Some(v) = args.readout {
        cfg.readout = v;
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
    let mut report = ExperimentReport::new("stability", &cfg, seed);
    let set = match &args.dump {
        Some(path) => load_dump(path, &mut report)?,
        None => match cfg.synthetic {
            Synthetic::Factorized => generate_factorized(&ConceptSpace::binary(cfg.k)?, cfg.d, true, 1.0, seed)?.0,
            Synthetic::Unstable => generate_unstable_binary(cfg.k, cfg.d, cfg.bump, seed)?.0,
        },
    };
    let rule = match cfg.rule {
        RuleKind::Majority => ValidityRule::BinaryMajority,
        RuleKind::Cross => ValidityRule::CrossAt(vec![0; set.space().k()]),
    };
    let readout = match cfg.readout {
        ReadoutKind::Svm => Readout::Svm,
        ReadoutKind::Trained => Readout::Trained(TrainConfig {
            loss: cfg.loss,
            geometry: cfg.geometry,
            epochs: cfg.epochs,
            lr: cfg.lr,
            seed,
            convergence: None,
        }),
    };
    watch.lap("setup");
    let r = stability_experiment(&set, &rule, cfg.trials, &readout, seed)?;
    watch.lap("readouts");

    let mut table = Table::new("stability", &["concept", "max_tv", "direction_dispersion"]);
    for (i, (tv, disp)) in r.per_concept_tv.iter().zip(&r.direction_dispersion).enumerate() {
        table.push(vec![i.to_string(), num(*tv), num(*disp)]);
    }
    println!("stability: {} supports, max posterior difference {:.3e}", r.trials, r.max_tv);
    report.set("stability", &r);
    emit(common, &report, &[table], watch)
}
