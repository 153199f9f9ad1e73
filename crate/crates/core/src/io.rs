//! Token blob ("NRTN v1") and JSON manifest ingestion.
//!
//! Blob layout, all little-endian:
//!
//! ```text
//! 0..4    b"NRTN"
//! 4..8    u32 row count
//! 8..12   u32 embedding dimension
//! 12..    rows * dim f32 values, row-major
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ClipRecord, Dataset, TokenMatrix, VideoDocument};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"NRTN";
const HEADER_LEN: usize = 12;

/// Top-level manifest document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub dim: usize,
    pub normalize: bool,
    pub videos: Vec<ManifestVideo>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestVideo {
    pub id: String,
    pub clips: Vec<ManifestClip>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestClip {
    pub clip: PathBuf,
    pub caption: PathBuf,
    pub start_s: f64,
    pub end_s: f64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Decode an NRTN blob already held in memory. `path` is only used for
/// error messages.
pub fn decode_token_matrix(bytes: &[u8], path: &Path) -> Result<TokenMatrix> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::CorruptHeader(format!(
            "{}: header is {} bytes, expected {HEADER_LEN}",
            path.display(),
            bytes.len()
        )));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().expect("4-byte slice"));
    let dim = u32::from_le_bytes(bytes[8..12].try_into().expect("4-byte slice"));
    if rows == 0 || dim == 0 {
        return Err(Error::CorruptHeader(format!(
            "{}: rows={rows} dim={dim}, both must be positive",
            path.display()
        )));
    }
    let overflow = || Error::SizeOverflow {
        path: path.to_path_buf(),
        rows,
        dim,
    };
    let count = (rows as usize)
        .checked_mul(dim as usize)
        .ok_or_else(overflow)?;
    let expected = count.checked_mul(4).ok_or_else(overflow)?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected as u64,
            found: payload.len() as u64,
        });
    }
    if payload.len() > expected {
        return Err(Error::CorruptHeader(format!(
            "{}: {} trailing bytes after payload",
            path.display(),
            payload.len() - expected
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    TokenMatrix::new(rows as usize, dim as usize, values)
}

/// Encode a token matrix as an NRTN blob.
pub fn encode_token_matrix(t: &TokenMatrix) -> Result<Vec<u8>> {
    let rows = u32::try_from(t.rows()).map_err(|_| Error::invalid("row count exceeds u32"))?;
    let dim = u32::try_from(t.dim()).map_err(|_| Error::invalid("dim exceeds u32"))?;
    let mut out = Vec::with_capacity(HEADER_LEN + t.values().len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&dim.to_le_bytes());
    for v in t.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn load_token_matrix(path: &Path) -> Result<TokenMatrix> {
    if !path.exists() {
        return Err(Error::MissingTokenFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_token_matrix(&bytes, path)
}

pub fn save_token_matrix(t: &TokenMatrix, path: &Path) -> Result<()> {
    let bytes = encode_token_matrix(t)?;
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Load every token blob referenced by a manifest. Relative blob paths are
/// resolved against the manifest's directory.
pub fn load_dataset(manifest_path: &Path) -> Result<Dataset> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    dataset_from_manifest(&manifest, base)
}

pub fn dataset_from_manifest(manifest: &Manifest, base: &Path) -> Result<Dataset> {
    if manifest.dim == 0 {
        return Err(Error::CorruptHeader("manifest dim must be positive".into()));
    }
    let load = |rel: &Path| -> Result<TokenMatrix> {
        let t = load_token_matrix(&base.join(rel))?;
        if t.dim() != manifest.dim {
            return Err(Error::DimensionMismatch {
                expected: manifest.dim,
                found: t.dim(),
            });
        }
        if manifest.normalize {
            t.l2_normalize_rows()
        } else {
            Ok(t)
        }
    };
    let mut videos = Vec::with_capacity(manifest.videos.len());
    for mv in &manifest.videos {
        let mut clips = Vec::with_capacity(mv.clips.len());
        for mc in &mv.clips {
            clips.push(ClipRecord::new(
                load(&mc.clip)?,
                load(&mc.caption)?,
                mc.start_s,
                mc.end_s,
            )?);
        }
        videos.push(VideoDocument::new(mv.id.clone(), clips)?);
    }
    Dataset::new(videos)
}

/// Write a dataset as a manifest plus one blob per token matrix under `dir`.
/// Blob names are derived from video and clip position, so the output is a
/// deterministic function of the dataset.
pub fn write_dataset(dataset: &Dataset, dir: &Path, normalize: bool) -> Result<PathBuf> {
    let blobs = dir.join("tokens");
    fs::create_dir_all(&blobs).map_err(io_err(&blobs))?;
    let mut videos = Vec::with_capacity(dataset.videos.len());
    for (vi, video) in dataset.videos.iter().enumerate() {
        let mut clips = Vec::with_capacity(video.clips.len());
        for (ci, rec) in video.clips.iter().enumerate() {
            let clip = PathBuf::from("tokens").join(format!("v{vi:04}_c{ci:03}_clip.nrtn"));
            let caption = PathBuf::from("tokens").join(format!("v{vi:04}_c{ci:03}_caption.nrtn"));
            save_token_matrix(&rec.clip_tokens, &dir.join(&clip))?;
            save_token_matrix(&rec.caption_tokens, &dir.join(&caption))?;
            clips.push(ManifestClip {
                clip,
                caption,
                start_s: rec.start_s,
                end_s: rec.end_s,
            });
        }
        videos.push(ManifestVideo {
            id: video.id.clone(),
            clips,
        });
    }
    let manifest = Manifest {
        dim: dataset.dim,
        normalize,
        videos,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(io_err(&path))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(magic: &[u8; 4], rows: u32, dim: u32, floats: usize) -> Vec<u8> {
        let mut b = magic.to_vec();
        b.extend_from_slice(&rows.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        for i in 0..floats {
            b.extend_from_slice(&(i as f32).to_le_bytes());
        }
        b
    }

    #[test]
    fn decodes_two_by_three() {
        let t = decode_token_matrix(&blob(MAGIC, 2, 3, 6), Path::new("x")).unwrap();
        assert_eq!((t.rows(), t.dim()), (2, 3));
        assert_eq!(t.row(1), &[3.0, 4.0, 5.0]);
    }

    #[test]
    fn rejects_bad_magic() {
        let err = decode_token_matrix(&blob(b"XXXX", 2, 3, 6), Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("bad magic"));
    }

    #[test]
    fn rejects_truncated_payload() {
        let err = decode_token_matrix(&blob(MAGIC, 10, 2, 18), Path::new("x")).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn rejects_overflowing_header() {
        let err =
            decode_token_matrix(&blob(MAGIC, u32::MAX, u32::MAX, 0), Path::new("x")).unwrap_err();
        // 64-bit targets overflow on the byte count, never on allocation.
        assert!(matches!(
            err,
            Error::SizeOverflow { .. } | Error::Truncated { .. }
        ));
    }

    #[test]
    fn rejects_short_header_and_trailing_bytes() {
        let mut b = MAGIC.to_vec();
        b.extend_from_slice(&[1, 0]);
        assert!(matches!(
            decode_token_matrix(&b, Path::new("x")),
            Err(Error::CorruptHeader(_))
        ));
        assert!(matches!(
            decode_token_matrix(&blob(MAGIC, 1, 2, 3), Path::new("x")),
            Err(Error::CorruptHeader(_))
        ));
    }

    #[test]
    fn encode_decode_is_bit_exact() {
        let t = TokenMatrix::new(2, 2, vec![0.1, -3.5e-8, 1e30, 7.0]).unwrap();
        let back = decode_token_matrix(&encode_token_matrix(&t).unwrap(), Path::new("x")).unwrap();
        assert_eq!(t, back);
    }
}
