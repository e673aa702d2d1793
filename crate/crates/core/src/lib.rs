//! Memory-bank anomaly detection with structure-aware image scoring.
//!
//! The pipeline consumes per-image patch features exported from a frozen
//! backbone and, per category, fits
//!
//! * a coreset-compressed memory bank of projected patch embeddings,
//! * a small bank of unit-norm routing prototypes,
//! * train-good statistics of a structural descriptor of anomaly maps.
//!
//! At inference an image is routed to a category, its patches are scored by
//! exact kNN distance to that category's memory bank, the scores are turned
//! into a smoothed anomaly map, and three image scores are produced: the
//! max-pooled base score, the structural distance, and their calibrated sum.
//!
//! ```
//! use structcore::synth::FeatureFixture;
//! use structcore::pipeline::{fit_category, CategoryModel};
//!
//! let fixture = FeatureFixture { categories: 1, ..Default::default() };
//! let images = fixture.generate()?;
//! let train: Vec<_> = images.iter().filter(|i| i.train).map(|i| i.features.clone()).collect();
//!
//! let bundle = fit_category("cat0", &train, &fixture.pipeline_config())?;
//! let model = CategoryModel::new(bundle)?;
//! let test = images.iter().find(|i| !i.train).unwrap();
//! let score = model.score(&test.features)?;
//! assert!(score.hybrid >= score.base);
//! # Ok::<(), structcore::Error>(())
//! ```

pub mod config;
pub mod coreset;
pub mod error;
pub mod feature_store;
pub mod knn;
pub mod manifest;
pub mod map;
pub mod metrics;
pub mod pipeline;
pub mod projection;
pub mod routing;
pub mod structural;
pub mod synth;

pub use config::PipelineConfig;
pub use error::{Error, ErrorClass, Result};
pub use feature_store::{Label, ModelBundle, PatchFeatureSet};
pub use map::AnomalyMap;
