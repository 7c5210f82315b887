//! Estimating the number of significant principal components of tabular data
//! with missing values.
//!
//! A VBPCA fit supplies an elementwise Gaussian posterior for the reconstructed
//! data. Null spectra sampled from that posterior give Monte Carlo p-values for
//! the normalized eigenvalues of the reconstruction, tested in rank order with
//! Holm step-down correction.

pub mod error;
pub mod ingest;
pub mod numlin;
pub mod pipeline;
pub mod report;
pub mod sigtest;
pub mod synthgen;
pub mod vbpca;

pub use error::{Error, Result};
pub use ingest::{ColumnKind, ColumnSchema, Dataset};
pub use numlin::{MaskedMatrix, Matrix, RngStream};
pub use pipeline::{analyze_dataset, analyze_matrix, AnalysisConfig};
pub use report::AnalysisReport;
pub use sigtest::{SigTestConfig, Spectrum, SpectrumTestResult};
pub use synthgen::{Scenario, SyntheticSpec};
pub use vbpca::{PosteriorReconstruction, VbpcaConfig, VbpcaModel};
