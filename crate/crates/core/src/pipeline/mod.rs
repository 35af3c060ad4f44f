//! Dataset ingestion, dimensionality reduction, synthetic generation, and
//! the logistic-regression baseline.

mod baseline;
mod csv_io;
mod reduce;
mod synthetic;

pub use baseline::{all_combinations, logistic_baseline, BaselineRow, BaselineSettings};
pub use csv_io::{load_csv_dataset, write_dataset_csv};
pub use reduce::{reduce_features, ReductionMethod, ReductionOutcome, ReductionSettings};
pub use synthetic::{generate_synthetic, SyntheticModalitySpec, SyntheticSpec};
