//! External-memory geometric hashing for substructure search.
//!
//! A database of small 3D substructures ("patches") is indexed by
//! transforming every patch atom into one intrinsic frame per residue and
//! bucketing the result into a sparse, Morton-ordered grid stored on disk.
//! A whole query structure is matched against the database by building the
//! same kind of grid for the query (clipped to the largest patch radius) and
//! merge-scanning the two grids in z-order.
//!
//! Module map:
//!
//! * [`geometry`]: points, rigid frames and frame transforms.
//! * [`ingest`]: structure / template / keyword file parsing, site patches,
//!   duplicate removal.
//! * [`grid`]: cell quantization, Morton codes, sorted runs on disk, cursors
//!   and run compaction.
//! * [`preprocess`]: per-residue frames and patch database construction.
//! * [`matcher`]: query grid, merge-scan join, score table, thresholding.
//! * [`baseline`]: the naive in-memory geometric hashing oracle.
//! * [`eval`]: redundancy filtering and keyword-recovery TP rates.
//! * [`synth`]: seeded synthetic instances used by tests, benches and the CLI.
//! * [`fsutil`]: atomic file replacement and the database writer lock.

pub mod baseline;
pub mod error;
pub mod eval;
pub mod exec;
pub mod extsort;
pub mod fsutil;
pub mod geometry;
pub mod grid;
pub mod ingest;
pub mod matcher;
pub mod preprocess;
pub mod synth;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{Point3, RigidFrame};
pub use grid::{CellEntry, CellIndex, DiskGrid, GridParams, RefId, ZValue};
pub use ingest::{AtomRecord, KeywordAnnotation, Patch, PatchOrigin, Protein};
pub use matcher::{MatchResult, ScoreTable};
pub use preprocess::PatchDatabase;
