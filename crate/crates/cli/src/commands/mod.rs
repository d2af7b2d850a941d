pub mod factors;
pub mod metrics;
pub mod probes;
pub mod scan;
pub mod stability;
pub mod summary;
pub mod synth;
pub mod verify;

use std::path::Path;

use cglab_core::concept_space::TrainingSupport;
use cglab_core::{read_dump, ConceptSpace, EmbeddingSet, ValidityRule};

use crate::report::{digest_dump, CliError, ExperimentReport};

/// Reads a dump and records its file digests in the report.
pub fn load_dump(path: &Path, report: &mut ExperimentReport) -> Result<EmbeddingSet, CliError> {
    crate::options::check_dir(path)?;
    let set = read_dump(path)?;
    report.provenance.extend(digest_dump(path)?);
    Ok(set)
}

/// Splits the grid into a uniformly drawn held-out part of `floor(rho * grid)`
/// tuples and the training remainder.
pub fn heldout_split(space: &ConceptSpace, rho: f64, seed: u64) -> Result<(TrainingSupport, TrainingSupport), CliError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(CliError::Usage(format!("held-out fraction {rho} must lie in (0, 1)")));
    }
    // Small grids can round the fraction down to nothing; hold out one tuple then.
    let heldout = space
        .sample_support(&ValidityRule::Fraction(rho), seed)
        .or_else(|_| space.sample_support(&ValidityRule::FixedSize(1), seed))?;
    Ok((heldout.complement(space), heldout))
}

/// Tuples of `support` that actually have rows in `set`.
pub fn present(set: &EmbeddingSet, support: &TrainingSupport) -> TrainingSupport {
    let have = set.rows_by_tuple();
    let space = set.space();
    let tuples = support
        .tuples()
        .iter()
        .filter(|t| have.contains_key(&space.tuple_index(t).expect("valid tuple")))
        .cloned()
        .collect();
    TrainingSupport::from_tuples(space, tuples, support.rule().clone())
}
