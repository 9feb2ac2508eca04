//! Training and verification of control policies that are provably affine
//! over a polytopic buffer next to an affine state constraint, so that a
//! vertex-level repulsion check certifies closed-loop constraint
//! satisfaction.
//!
//! The crate is organized around the pipeline:
//!
//! 1. [`sysid`] — sample transitions, estimate the buffer radius, and fit the
//!    constraint-projected affine dynamics surrogate with its approximation
//!    measure ε.
//! 2. [`geometry`] — build the buffer slab and enumerate its vertices.
//! 3. [`verifier`] — existence analysis (is a repelling admissible affine
//!    policy possible at all?) and the vertex repulsion certificate.
//! 4. [`net`] / [`police`] — piecewise-affine networks with one enforced
//!    activation pattern over the buffer, affine-map extraction, and
//!    bias fusion.
//! 5. [`trainer`] — two-phase actor-critic training that alternates reward
//!    optimization with vertex repulsion until the certificate holds.

pub mod checkpoint;
pub mod envs;
pub mod geometry;
pub mod linalg;
pub mod lp;
pub mod net;
pub mod police;
pub mod sysid;
pub mod trainer;
pub mod verifier;

mod error;

pub use error::{Error, Result};

use std::path::Path;

/// Write a file atomically (temp file in the same directory, then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let file_name = path
        .file_name()
        .ok_or_else(|| Error::Config(format!("invalid output path {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp", file_name.to_string_lossy()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}
