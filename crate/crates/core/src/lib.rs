pub mod error;
pub mod eval;
pub mod io;
pub mod manifest;
pub mod preprocess;
pub mod runtime;
pub mod segnet;
pub mod synthgen;
pub mod types;

pub use error::{Error, Result};
pub use manifest::{DatasetManifest, ManifestEntry, Provenance, Split};
pub use types::{validate_pair, BinaryMask, Detection, FluorescenceImage, ParticleSpec, Polymer, Raster};
