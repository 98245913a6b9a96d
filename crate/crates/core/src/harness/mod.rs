//! Datasets, preprocessing, split protocol, experiment grids and persistence.

pub mod data;
pub mod grid;
pub mod methods;
pub mod preprocess;
pub mod saved;
pub mod selftest;
pub mod splits;
pub mod synthetic;

pub use data::{parse_svmlight, parse_svmlight_str, write_svmlight, Dataset, SourceFormat};
pub use grid::{run_grid, summarize_best, write_outcome, GridOutcome, GridSpec};
pub use methods::{evaluate_model, fit_method, Family, FittedModel, Method};
pub use preprocess::{preprocess, PreprocMode, Preprocessing};
pub use saved::SavedModel;
pub use splits::{make_splits, Split};

use crate::error::Result;

/// Loads a dataset from an svmlight path or a `synth:` specifier.
pub fn load_dataset(source: &str) -> Result<Dataset> {
    if source.starts_with("synth:") {
        synthetic::from_spec(source)
    } else {
        parse_svmlight(source)
    }
}
