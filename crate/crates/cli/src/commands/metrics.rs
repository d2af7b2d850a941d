use std::path::PathBuf;

use cglab_core::embedding_store::{Manifest, DEFAULT_WHITEN_TOL};
use cglab_core::factor_model::recover_by_averaging;
use cglab_core::metrics::{
    compositional_accuracy, effective_rank, orthogonality, projected_whitened_r2, PipelineOrder, R2Options,
    DEFAULT_RANK_THRESHOLD,
};
use cglab_core::probe_trainer::{read_probes, train_probes};
use cglab_core::{Geometry, Loss, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::commands::{heldout_split, load_dump, present};
use crate::options::{resolve, Common};
use crate::report::{emit, num, CliError, ExperimentReport, Stopwatch, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeSource {
    /// Probes stored in the dump if present, else trained.
    Auto,
    Dump,
    Train,
}

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Embedding dump; repeat to compare models.
    #[arg(long, required = true)]
    dump: Vec<PathBuf>,
    #[arg(long)]
    heldout_fraction: Option<f64>,
    #[arg(long, value_enum)]
    probes: Option<ProbeSource>,
    /// Skip whitening.
    #[arg(long)]
    no_whiten: bool,
    #[arg(long, value_enum)]
    order: Option<Order>,
    #[arg(long)]
    rank_threshold: Option<f64>,
    #[arg(long)]
    loss: Option<Loss>,
    #[arg(long)]
    geometry: Option<Geometry>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Order {
    ProjectThenWhiten,
    WhitenThenProject,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub heldout_fraction: f64,
    pub probes: ProbeSource,
    pub whiten: bool,
    pub order: PipelineOrder,
    pub whiten_tol: f64,
    pub rank_threshold: f64,
    pub loss: Loss,
    pub geometry: Geometry,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for Config {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            heldout_fraction: 0.1,
            probes: ProbeSource::Auto,
            whiten: true,
            order: PipelineOrder::default(),
            whiten_tol: DEFAULT_WHITEN_TOL,
            rank_threshold: DEFAULT_RANK_THRESHOLD,
            loss: t.loss,
            geometry: t.geometry,
            epochs: t.epochs,
            lr: t.lr,
        }
    }
}

#[derive(Debug, Serialize)]
struct ModelResult {
    dump: String,
    probes: &'static str,
    cardinalities: Vec<usize>,
    r2: f64,
    r2_unwhitened: f64,
    projection_rank: Option<usize>,
    whitening_rank: Option<usize>,
    mean_within: f64,
    mean_across: f64,
    across: Vec<Vec<f64>>,
    effective_rank: Vec<usize>,
    train_tuples: usize,
    heldout_tuples: usize,
    compositional_accuracy: Option<f64>,
    per_concept_accuracy: Option<Vec<f64>>,
}

pub fn run(common: &Common, args: Args) -> Result<(), CliError> {
    let mut watch = Stopwatch::new();
    let (mut cfg, seed) = resolve::<Config>(common)?;
    if let Some(v) = args.heldout_fraction {
        cfg.heldout_fraction = v;
    }
    if let Some(v) = args.probes {
        cfg.probes = v;
    }
    if args.no_whiten {
        cfg.whiten = false;
    }
    if let Some(o) = args.order {
        cfg.order = match o {
            Order::ProjectThenWhiten => PipelineOrder::ProjectThenWhiten,
            Order::WhitenThenProject => PipelineOrder::WhitenThenProject,
        };
    }
    if let Some(v) = args.rank_threshold {
        cfg.rank_threshold = v;
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
    if !(cfg.rank_threshold > 0.0 && cfg.rank_threshold <= 1.0) {
        return Err(CliError::Usage(format!("rank threshold {} must lie in (0, 1]", cfg.rank_threshold)));
    }

    let mut report = ExperimentReport::new("metrics", &cfg, seed);
    let mut models = Vec::new();
    for path in &args.dump {
        let set = load_dump(path, &mut report)?;
        let space = set.space().clone();
        let (train, heldout) = heldout_split(&space, cfg.heldout_fraction, seed)?;
        let (train, heldout) = (present(&set, &train), present(&set, &heldout));
        let stored = Manifest::read(path)?.get("probes.blocks").is_some();
        let (bank, source) = match (cfg.probes, stored) {
            (ProbeSource::Dump, false) => {
                return Err(CliError::Usage(format!("{} holds no probes", path.display())));
            }
            (ProbeSource::Dump, true) | (ProbeSource::Auto, true) => (read_probes(path)?, "dump"),
            _ => {
                let tc = TrainConfig {
                    loss: cfg.loss,
                    geometry: cfg.geometry,
                    epochs: cfg.epochs,
                    lr: cfg.lr,
                    seed,
                    convergence: None,
                };
                (train_probes(&set, &train, &tc)?.bank, "trained")
            }
        };
        let factors = recover_by_averaging(&set)?;
        let opts = R2Options {
            whiten: cfg.whiten,
            order: cfg.order,
            whiten_tol: cfg.whiten_tol,
        };
        let r2 = projected_whitened_r2(&set, &factors, Some(&bank), &opts)?;
        let raw = projected_whitened_r2(&set, &factors, Some(&bank), &R2Options { whiten: false, ..opts })?;
        let orth = orthogonality(&factors)?;
        let ranks = (0..space.k())
            .map(|i| effective_rank(&factors, i, cfg.rank_threshold).map(|r| r.rank))
            .collect::<Result<Vec<_>, _>>()?;
        let acc = if heldout.is_empty() {
            None
        } else {
            Some(compositional_accuracy(&bank, &set, &heldout)?)
        };
        models.push(ModelResult {
            dump: path.display().to_string(),
            probes: source,
            cardinalities: space.cardinalities().to_vec(),
            r2: r2.r2,
            r2_unwhitened: raw.r2,
            projection_rank: r2.pipeline.projection_rank,
            whitening_rank: r2.pipeline.whitening_rank,
            mean_within: orth.mean_within(),
            mean_across: orth.mean_across(),
            across: orth.across.clone(),
            effective_rank: ranks,
            train_tuples: train.len(),
            heldout_tuples: heldout.len(),
            compositional_accuracy: acc.as_ref().map(|a| a.mean),
            per_concept_accuracy: acc.map(|a| a.per_concept),
        });
        watch.lap(&format!("model {}", path.display()));
    }

    let mut summary = Table::new(
        "metrics-models",
        &["model", "probes", "r2", "r2_unwhitened", "mean_within", "mean_across", "compositional_accuracy"],
    );
    let mut cosines = Table::new("metrics-orthogonality", &["model", "concept_a", "concept_b", "mean_abs_cos"]);
    let mut ranks = Table::new("metrics-effective-rank", &["model", "concept", "values", "effective_rank"]);
    for m in &models {
        summary.push(vec![
            m.dump.clone(),
            m.probes.to_string(),
            num(m.r2),
            num(m.r2_unwhitened),
            num(m.mean_within),
            num(m.mean_across),
            m.compositional_accuracy.map_or(String::new(), num),
        ]);
        for (a, row) in m.across.iter().enumerate() {
            for (b, v) in row.iter().enumerate() {
                cosines.push(vec![m.dump.clone(), a.to_string(), b.to_string(), num(*v)]);
            }
        }
        for (i, r) in m.effective_rank.iter().enumerate() {
            ranks.push(vec![m.dump.clone(), i.to_string(), m.cardinalities[i].to_string(), r.to_string()]);
        }
        println!(
            "metrics: {} R^2 {:.4} (unwhitened {:.4}), within {:.3}, across {:.3}, accuracy {}",
            m.dump,
            m.r2,
            m.r2_unwhitened,
            m.mean_within,
            m.mean_across,
            m.compositional_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
    }
    report.set("models", &models);
    emit(common, &report, &[summary, cosines, ranks], watch)
}
