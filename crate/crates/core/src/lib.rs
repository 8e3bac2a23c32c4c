//! Spinal MRI morphometry toolkit.
//!
//! The crate covers the non-learned parts of a spine segmentation and
//! measurement pipeline:
//!
//! * [`volgrid`]: volumes, label maps, geometry and RAS orientation
//! * [`niftiio`]: single-file NIfTI-1 codec
//! * [`prep`]: isotropic resampling, z-score normalization, WW/WC windowing
//! * [`autoplan`]: dataset fingerprint and the fixed segmentation plan
//! * [`postseg`]: connected components and small-component removal
//! * [`morpho`]: disc height and spinal canal AP diameter
//! * [`evalkit`]: Dice, precision/recall, MSE, composite loss and reports
//! * [`phantom`]: synthetic spine phantoms and a threshold segmenter
//! * [`cohort`]: scan manifest ingestion and cohort tables
//! * [`cli`]: the `spinemorph` command line
//!
//! Segmentation itself is pluggable: label maps come either from an external
//! model or from [`phantom::segment_baseline`].

pub mod autoplan;
pub mod cli;
pub mod cohort;
pub mod error;
pub mod evalkit;
pub mod fsutil;
pub mod morpho;
pub mod niftiio;
pub mod phantom;
pub mod postseg;
pub mod prep;
pub mod volgrid;

pub use error::{Error, Result};
pub use volgrid::{Geometry, Grid, LabelMap, LabelScheme, Mask, Orientation, Structure, Vertebra, Volume};

/// Version string recorded in reports and run logs.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
