//! On-disk dataset container: a directory holding `manifest.json` and
//! `data.bin`.
//!
//! Every array in the blob is little-endian `f32` behind a 16-byte header:
//! magic `HMF1`, rank (always 2), then both dimensions as `u32`. Motions are
//! stored as `[J·F, 3]` and reshaped with the manifest's joint count.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::data::{MotionSequence, Sample, SceneCloud};
use crate::error::{HumofError, Result};

pub const MAGIC: &[u8; 4] = b"HMF1";
pub const FORMAT_VERSION: u32 = 1;
pub const HEADER_BYTES: usize = 16;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const BLOB_FILE: &str = "data.bin";

/// Appends one headered array.
pub fn encode_array(a: &Array2<f64>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&2u32.to_le_bytes());
    out.extend_from_slice(&(a.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(a.ncols() as u32).to_le_bytes());
    for &v in a.iter() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

fn read_u32(blob: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(blob[at..at + 4].try_into().expect("4 bytes"))
}

/// Decodes the array starting at `offset`; returns it and the next offset.
pub fn decode_array(blob: &[u8], offset: usize) -> Result<(Array2<f64>, usize)> {
    if blob.len() < offset + HEADER_BYTES {
        return Err(HumofError::CorruptContainer(format!(
            "array header at byte {offset} runs past the end ({} bytes)",
            blob.len()
        )));
    }
    if &blob[offset..offset + 4] != MAGIC {
        return Err(HumofError::BadContainer(format!("bad array magic at byte {offset}")));
    }
    let rank = read_u32(blob, offset + 4);
    if rank != 2 {
        return Err(HumofError::BadContainer(format!("unsupported array rank {rank} at byte {offset}")));
    }
    let rows = read_u32(blob, offset + 8) as usize;
    let cols = read_u32(blob, offset + 12) as usize;
    let start = offset + HEADER_BYTES;
    let end = start + 4 * rows * cols;
    if blob.len() < end {
        return Err(HumofError::CorruptContainer(format!(
            "array of {rows}x{cols} at byte {offset} is truncated"
        )));
    }
    let data = blob[start..end]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
        .collect();
    let a = Array2::from_shape_vec((rows, cols), data).expect("shape matches length");
    Ok((a, end))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub offset: u64,
    pub others: usize,
    pub has_future: bool,
    pub canonical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub joints: usize,
    pub history: usize,
    pub horizon: usize,
    pub fps: f64,
    pub count: usize,
    pub samples: Vec<SampleEntry>,
}

fn motion_array(m: &MotionSequence) -> Array2<f64> {
    let (j, f, _) = m.coords.dim();
    m.coords.to_shape((j * f, 3)).expect("contiguous reshape").to_owned()
}

fn motion_from(a: Array2<f64>, joints: usize, fps: f64) -> Result<MotionSequence> {
    if a.ncols() != 3 || joints == 0 || a.nrows() % joints != 0 {
        return Err(HumofError::BadContainer(format!(
            "motion array {}x{} does not fit {joints} joints",
            a.nrows(),
            a.ncols()
        )));
    }
    let frames = a.nrows() / joints;
    let coords: Array3<f64> = a.into_shape_with_order((joints, frames, 3)).expect("checked");
    MotionSequence::new(coords, fps)
}

/// Writes `samples` to the directory `path` (created if missing).
pub fn write_dataset(samples: &[Sample], path: &Path) -> Result<()> {
    let (joints, history, fps) = samples
        .first()
        .map_or((0, 0, 0.0), |s| (s.joints(), s.history(), s.target.fps));
    let horizon = samples
        .iter()
        .find_map(|s| s.future.as_ref().map(|f| f.frames()))
        .unwrap_or(0);
    let mut blob = Vec::new();
    let mut entries = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        s.validate()?;
        let future_len = s.future.as_ref().map(|f| f.frames());
        if s.joints() != joints || s.history() != history || s.target.fps != fps || future_len.is_some_and(|t| t != horizon) {
            return Err(HumofError::BadShape(format!("sample {i} does not share the dataset's J, H, T and fps")));
        }
        entries.push(SampleEntry {
            offset: blob.len() as u64,
            others: s.others.len(),
            has_future: s.future.is_some(),
            canonical: s.canonical,
        });
        encode_array(&motion_array(&s.target), &mut blob);
        for o in &s.others {
            encode_array(&motion_array(o), &mut blob);
        }
        encode_array(&s.scene.points, &mut blob);
        if let Some(f) = &s.future {
            encode_array(&motion_array(f), &mut blob);
        }
    }
    let manifest = Manifest {
        format: String::from_utf8_lossy(MAGIC).into_owned(),
        version: FORMAT_VERSION,
        joints,
        history,
        horizon,
        fps,
        count: samples.len(),
        samples: entries,
    };
    fs::create_dir_all(path)?;
    fs::write(path.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
    fs::write(path.join(BLOB_FILE), blob)?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path.join(MANIFEST_FILE))?;
    let manifest: Manifest =
        serde_json::from_str(&text).map_err(|e| HumofError::BadContainer(format!("unreadable manifest: {e}")))?;
    if manifest.format.as_bytes() != MAGIC || manifest.version != FORMAT_VERSION {
        return Err(HumofError::BadContainer(format!(
            "format {} version {}, expected HMF1 version {FORMAT_VERSION}",
            manifest.format, manifest.version
        )));
    }
    if manifest.count != manifest.samples.len() {
        return Err(HumofError::BadContainer(format!(
            "manifest lists {} samples but declares {}",
            manifest.samples.len(),
            manifest.count
        )));
    }
    Ok(manifest)
}

pub fn read_dataset(path: &Path) -> Result<Vec<Sample>> {
    let manifest = read_manifest(path)?;
    let blob = fs::read(path.join(BLOB_FILE))?;
    let (j, fps) = (manifest.joints, manifest.fps);
    manifest
        .samples
        .iter()
        .map(|e| {
            let mut at = e.offset as usize;
            let next = |at: &mut usize| -> Result<Array2<f64>> {
                let (a, end) = decode_array(&blob, *at)?;
                *at = end;
                Ok(a)
            };
            let target = motion_from(next(&mut at)?, j, fps)?;
            let others = (0..e.others)
                .map(|_| motion_from(next(&mut at)?, j, fps))
                .collect::<Result<Vec<_>>>()?;
            let scene = SceneCloud::new(next(&mut at)?)?;
            let future = if e.has_future {
                Some(motion_from(next(&mut at)?, j, fps)?)
            } else {
                None
            };
            Ok(Sample {
                target,
                others,
                scene,
                future,
                canonical: e.canonical,
            })
        })
        .collect()
}

/// Reads a single sample file (a container holding exactly one sample).
pub fn read_single(path: &Path) -> Result<Sample> {
    let mut samples = read_dataset(path)?;
    if samples.len() != 1 {
        return Err(HumofError::BadContainer(format!(
            "expected one sample, found {}",
            samples.len()
        )));
    }
    Ok(samples.remove(0))
}
