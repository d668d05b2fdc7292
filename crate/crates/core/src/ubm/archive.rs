//! `FEA1` feature archives and `POS1` posterior archives.
//!
//! Both are a 4-byte magic followed by back-to-back records:
//!
//! ```text
//! FEA1 record: id_len u32 | id utf-8 | T u32 | D u32 | has_energy u8 | T*D f32 | [T f32]
//! POS1 header: source u8 (0 gmm, 1 external-senone, 2 synthetic)
//! POS1 record: id_len u32 | id utf-8 | T u32 | C u32 | T*C f32
//! ```
//!
//! All integers and floats are little-endian, matrices row-major.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::binio;
use crate::{Error, Result};

use super::{validate_rows, FeatureSequence, PosteriorArchive, PosteriorEntry, PosteriorSource};

/// Row-sum tolerance for posteriors read back from disk (stored as f32).
pub const ARCHIVE_ROW_TOLERANCE: f64 = 1e-4;

pub fn write_feature_archive(path: &Path, utterances: &[FeatureSequence]) -> Result<()> {
    let mut w = binio::create(path)?;
    binio::write_magic(&mut w, b"FEA1")?;
    for u in utterances {
        binio::write_id(&mut w, &u.utterance_id)?;
        binio::write_u32(&mut w, u.num_frames())?;
        binio::write_u32(&mut w, u.dim())?;
        binio::write_u8(&mut w, u.energies.is_some() as u8)?;
        binio::write_matrix_f32(&mut w, &u.frames)?;
        if let Some(e) = &u.energies {
            binio::write_matrix_f32(&mut w, &DMatrix::from_column_slice(e.len(), 1, e.as_slice()))?;
        }
    }
    binio::flush(w, path)
}

pub fn read_feature_archive(path: &Path) -> Result<Vec<FeatureSequence>> {
    let mut r = binio::open(path)?;
    binio::expect_magic(&mut r, b"FEA1")?;
    let mut out: Vec<FeatureSequence> = Vec::new();
    while let Some(len) = binio::read_record_start(&mut r)? {
        let id = binio::read_id_bytes(&mut r, len)?;
        let t = binio::read_u32(&mut r)?;
        let d = binio::read_u32(&mut r)?;
        let has_energy = binio::read_u8(&mut r)? != 0;
        let frames = binio::read_matrix_f32(&mut r, t, d)?;
        let energies = if has_energy {
            Some(DVector::from_column_slice(
                binio::read_matrix_f32(&mut r, t, 1)?.as_slice(),
            ))
        } else {
            None
        };
        if let Some(prev) = out.iter().find(|u| u.num_frames() > 0) {
            if t > 0 && prev.dim() != d {
                return Err(Error::Dimension(format!(
                    "{id}: feature dim {d}, archive uses {}",
                    prev.dim()
                )));
            }
        }
        out.push(FeatureSequence::new(id, frames, energies)?);
    }
    Ok(out)
}

pub fn write_posterior_archive(path: &Path, archive: &PosteriorArchive) -> Result<()> {
    let mut w = binio::create(path)?;
    binio::write_magic(&mut w, b"POS1")?;
    binio::write_u8(&mut w, archive.source.tag())?;
    for e in &archive.entries {
        binio::write_id(&mut w, &e.utterance_id)?;
        binio::write_u32(&mut w, e.posteriors.nrows())?;
        binio::write_u32(&mut w, e.posteriors.ncols())?;
        binio::write_matrix_f32(&mut w, &e.posteriors)?;
    }
    binio::flush(w, path)
}

/// Load and validate a posterior archive. When `expected_components` is
/// given every record must have that many columns.
pub fn load_posterior_archive(
    path: &Path,
    expected_components: Option<usize>,
) -> Result<PosteriorArchive> {
    let mut r = binio::open(path)?;
    binio::expect_magic(&mut r, b"POS1")?;
    let source = PosteriorSource::from_tag(binio::read_u8(&mut r)?)?;
    let mut archive = PosteriorArchive::new(source);
    while let Some(len) = binio::read_record_start(&mut r)? {
        let id = binio::read_id_bytes(&mut r, len)?;
        let t = binio::read_u32(&mut r)?;
        let c = binio::read_u32(&mut r)?;
        if let Some(expected) = expected_components.or(archive.num_components()) {
            if c != expected {
                return Err(Error::Dimension(format!(
                    "utterance {id}: {c} posterior columns, expected {expected}"
                )));
            }
        }
        let posteriors = binio::read_matrix_f32(&mut r, t, c)?;
        validate_rows(&id, &posteriors, ARCHIVE_ROW_TOLERANCE)?;
        archive.entries.push(PosteriorEntry {
            utterance_id: id,
            posteriors,
        });
    }
    Ok(archive)
}
