//! HMP1 heatmap files and frame directories.
//!
//! Layout (little-endian): magic `HMP1`, `u32` width, `u32` height, then
//! `width * height` `f32` values row-major, top row first. A frame directory
//! `frames/NNNNNN/` holds one file per channel, named by
//! [`Channel::file_stem`] with extension `.hmp`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::heatmap::{Channel, ImageGrid, ProjectionImageSet};

pub const MAGIC: &[u8; 4] = b"HMP1";
const HEADER_LEN: usize = 12;

pub fn encode(grid: &ImageGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * grid.data().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    for &v in grid.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Parses an HMP1 buffer. `path` is only used in error messages.
pub fn decode(bytes: &[u8], path: &Path) -> Result<ImageGrid> {
    let fail = |offset: usize, message: String| Error::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fail(bytes.len(), format!("truncated header ({} bytes)", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(fail(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let width = u32_at(4) as usize;
    let height = u32_at(8) as usize;
    if width == 0 {
        return Err(fail(4, "zero width".into()));
    }
    if height == 0 {
        return Err(fail(8, "zero height".into()));
    }
    let expected = HEADER_LEN + 4 * width * height;
    if bytes.len() != expected {
        return Err(fail(
            bytes.len().min(expected),
            format!("expected {expected} bytes for {width}x{height}, found {}", bytes.len()),
        ));
    }
    let mut data = Vec::with_capacity(width * height);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(fail(HEADER_LEN + 4 * i, format!("non-finite value {v}")));
        }
        data.push(f64::from(v));
    }
    ImageGrid::new(width, height, data)
}

pub fn read_grid(path: &Path) -> Result<ImageGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

pub fn write_grid(path: &Path, grid: &ImageGrid) -> Result<()> {
    write_atomic(path, &encode(grid))
}

/// 16-bit binary PGM for eyeballing a channel.
pub fn encode_pgm16(grid: &ImageGrid) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n65535\n", grid.width(), grid.height()).into_bytes();
    for &v in grid.data() {
        let level = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        out.extend_from_slice(&level.to_be_bytes());
    }
    out
}

pub fn frame_dir(frames_root: &Path, frame_index: usize) -> PathBuf {
    frames_root.join(format!("{frame_index:06}"))
}

pub fn write_frame(frames_root: &Path, set: &ProjectionImageSet) -> Result<()> {
    let dir = frame_dir(frames_root, set.frame_index);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    for (channel, grid) in set.channels() {
        write_grid(&dir.join(format!("{}.hmp", channel.file_stem())), grid)?;
    }
    Ok(())
}

pub fn read_frame(frames_root: &Path, frame_index: usize) -> Result<ProjectionImageSet> {
    let dir = frame_dir(frames_root, frame_index);
    let mut grids = Vec::with_capacity(Channel::ALL.len());
    for channel in Channel::ALL {
        let path = dir.join(format!("{}.hmp", channel.file_stem()));
        if !path.is_file() {
            return Err(Error::MissingChannel {
                frame: frame_index,
                channel: channel.file_stem(),
                path,
            });
        }
        grids.push(read_grid(&path)?);
    }
    ProjectionImageSet::new(frame_index, grids).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", dir.display())),
        other => other,
    })
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = parent.join(format!(".{}.tmp", name.to_string_lossy()));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> ImageGrid {
        ImageGrid::from_fn(3, 2, |u, v| (u as f64 + 3.0 * v as f64) / 8.0)
    }

    #[test]
    fn byte_layout() {
        let bytes = encode(&grid());
        assert_eq!(&bytes[0..4], b"HMP1");
        assert_eq!(&bytes[4..8], &3u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &2u32.to_le_bytes());
        assert_eq!(bytes.len(), 12 + 6 * 4);
        // second pixel of the top row
        assert_eq!(&bytes[16..20], &0.125f32.to_le_bytes());
        // first pixel of the second row
        assert_eq!(&bytes[24..28], &0.375f32.to_le_bytes());
        let back = decode(&bytes, Path::new("x.hmp")).unwrap();
        assert_eq!(back, grid());
    }

    #[test]
    fn malformed_headers_report_offset() {
        let mut bytes = encode(&grid());
        bytes[0] = b'X';
        match decode(&bytes, Path::new("bad.hmp")) {
            Err(Error::Format { offset, path, .. }) => {
                assert_eq!(offset, 0);
                assert_eq!(path, Path::new("bad.hmp"));
            }
            other => panic!("{other:?}"),
        }
        let good = encode(&grid());
        match decode(&good[..10], Path::new("short.hmp")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 10),
            other => panic!("{other:?}"),
        }
        match decode(&good[..good.len() - 2], Path::new("cut.hmp")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, good.len() as u64 - 2),
            other => panic!("{other:?}"),
        }
        let mut nan = good.clone();
        nan[20..24].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode(&nan, Path::new("nan.hmp")) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 20),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pgm_header() {
        let pgm = encode_pgm16(&grid());
        assert!(pgm.starts_with(b"P5\n3 2\n65535\n"));
        assert_eq!(pgm.len(), b"P5\n3 2\n65535\n".len() + 12);
    }

    #[test]
    fn frame_round_trip_and_missing_channel() {
        let dir = tempfile::tempdir().unwrap();
        let set = ProjectionImageSet::new(7, vec![grid(); 7]).unwrap();
        write_frame(dir.path(), &set).unwrap();
        assert!(dir.path().join("000007/Lb.hmp").is_file());
        assert_eq!(read_frame(dir.path(), 7).unwrap(), set);
        std::fs::remove_file(dir.path().join("000007/Pr.hmp")).unwrap();
        match read_frame(dir.path(), 7) {
            Err(Error::MissingChannel { channel, frame, .. }) => {
                assert_eq!(channel, "Pr");
                assert_eq!(frame, 7);
            }
            other => panic!("{other:?}"),
        }
    }
}
