//! On-disk datasets: `<dir>/frames/%06d.pgm` plus `<dir>/manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Dataset, DatasetManifest, Frame, Split, MANIFEST_SCHEMA_VERSION};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
const FRAMES_DIR: &str = "frames";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FrameEntry {
    file: String,
    split: Split,
    sha256: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestFile {
    #[serde(flatten)]
    manifest: DatasetManifest,
    frames: Vec<FrameEntry>,
}

/// Encodes a frame as binary PGM (1 channel) or PPM (3 channels).
pub fn write_pnm(frame: &Frame) -> Result<Vec<u8>> {
    let magic = match frame.channels {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::Config(format!("cannot store a {c}-channel frame as PNM"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", frame.width, frame.height).into_bytes();
    out.extend_from_slice(&frame.pixels);
    Ok(out)
}

/// Parses binary PGM/PPM with maxval 255. Errors are plain strings; the
/// caller attaches the frame index and path.
pub fn read_pnm(bytes: &[u8]) -> std::result::Result<Frame, String> {
    let mut pos = 0;
    let mut token = || -> std::result::Result<String, String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let channels = match token()?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(format!("unsupported magic {m:?}")),
    };
    let mut num = |what: &str| -> std::result::Result<usize, String> {
        let t = token()?;
        t.parse().map_err(|_| format!("bad {what} {t:?}"))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(format!("maxval {maxval} unsupported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let body = pos + 1;
    let need = width * height * channels;
    let have = bytes.len().saturating_sub(body);
    if have != need {
        return Err(format!("expected {need} pixel bytes, found {have} (truncated or oversized)"));
    }
    Ok(Frame {
        width,
        height,
        channels,
        pixels: bytes[body..].to_vec(),
    })
}

fn frame_file(index: usize, channels: usize) -> String {
    let ext = if channels == 3 { "ppm" } else { "pgm" };
    format!("{FRAMES_DIR}/{index:06}.{ext}")
}

/// Writes frames and manifest under `dir`, creating it if needed.
pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    ds.manifest.validate()?;
    if ds.frames.len() != ds.manifest.num_frames() {
        return Err(Error::Manifest(format!(
            "{} frames for a manifest describing {}",
            ds.frames.len(),
            ds.manifest.num_frames()
        )));
    }
    let frames_dir = dir.join(FRAMES_DIR);
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    let mut entries = Vec::with_capacity(ds.frames.len());
    for (i, frame) in ds.frames.iter().enumerate() {
        let file = frame_file(i, frame.channels);
        let bytes = write_pnm(frame)?;
        let path = dir.join(&file);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(FrameEntry {
            file,
            split: ds.manifest.split_of(i),
            sha256: hex::encode(Sha256::digest(&bytes)),
        });
    }
    let doc = ManifestFile {
        manifest: ds.manifest.clone(),
        frames: entries,
    };
    let path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&doc)?;
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}

/// Reads a dataset written by [`write_dataset`], verifying every checksum.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let doc: ManifestFile =
        serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
    let manifest = doc.manifest;
    if manifest.schema_version != MANIFEST_SCHEMA_VERSION {
        return Err(Error::Manifest(format!(
            "schema version {} (expected {MANIFEST_SCHEMA_VERSION})",
            manifest.schema_version
        )));
    }
    manifest.validate()?;
    if doc.frames.len() != manifest.num_frames() {
        return Err(Error::Manifest(format!(
            "{} frame entries for {} frames",
            doc.frames.len(),
            manifest.num_frames()
        )));
    }
    let mut frames = Vec::with_capacity(doc.frames.len());
    for (index, entry) in doc.frames.iter().enumerate() {
        let path: PathBuf = dir.join(&entry.file);
        let bytes = fs::read(&path).map_err(|e| Error::Frame {
            index,
            path: path.clone(),
            reason: e.to_string(),
        })?;
        let frame = read_pnm(&bytes).map_err(|reason| Error::Frame {
            index,
            path: path.clone(),
            reason,
        })?;
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(Error::Checksum { index, path });
        }
        frames.push(frame);
    }
    Ok(Dataset { frames, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pnm_round_trip() {
        let f = Frame {
            width: 3,
            height: 2,
            channels: 3,
            pixels: (0..18).collect(),
        };
        assert_eq!(read_pnm(&write_pnm(&f).unwrap()).unwrap(), f);
        let g = Frame {
            channels: 1,
            pixels: vec![10, 32, 255, 0, 9, 13],
            ..f
        };
        assert_eq!(read_pnm(&write_pnm(&g).unwrap()).unwrap(), g);
    }

    #[test]
    fn pnm_with_comment_and_truncation() {
        let mut bytes = b"P5\n# c\n2 2\n255\n".to_vec();
        bytes.extend([1, 2, 3, 4]);
        assert_eq!(read_pnm(&bytes).unwrap().pixels, vec![1, 2, 3, 4]);
        bytes.pop();
        assert!(read_pnm(&bytes).unwrap_err().contains("truncated"));
    }
}
