//! Auction domain types, the synthetic log generator, and dataset I/O.

mod generator;
mod io;
mod types;

pub use generator::{generate_dataset, Generator, GeneratorConfig, QUALITY_FEATURE};
pub use io::{read_all, read_dataset, write_dataset, DatasetReader, DATASET_FORMAT, DATASET_VERSION};
pub use types::{AdCandidate, AuctionInstance, DataError, MetricId, MetricWeight, ObjectiveSpec};
