//! Frame, saliency, and mask I/O.
//!
//! Binary PGM (P5, 8-bit) is the canonical interchange format; 8-bit PNG is
//! accepted on input. Color inputs are converted to luma before flattening.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{ForegroundMask, FrameVector, ImageGrid, SaliencyVector};

/// Raw 8-bit raster with dimensions, independent of interpretation.
struct Raster {
    width: usize,
    height: usize,
    bytes: Vec<u8>,
}

fn read_pgm(path: &Path) -> Result<Raster> {
    let data = fs::read(path).map_err(|e| Error::io(path, e))?;
    if data.len() < 2 || &data[0..2] != b"P5" {
        return Err(Error::format(path, "not a binary PGM (missing P5 magic)"));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3]; // width, height, maxval
    for field in fields.iter_mut() {
        // skip whitespace and '#' comment lines between header tokens
        loop {
            match data.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(path, "truncated PGM header")),
            }
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err(Error::format(path, "malformed PGM header token"));
        }
        let text = std::str::from_utf8(&data[start..pos]).expect("digits are ascii");
        *field = text
            .parse()
            .map_err(|_| Error::format(path, "PGM header value out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(
            path,
            format!("unsupported PGM maxval {maxval} (only 8-bit supported)"),
        ));
    }
    // exactly one whitespace byte separates the header from the raster
    match data.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::format(path, "missing raster separator")),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format(path, "image dimensions overflow"))?;
    let raster = data
        .get(pos..pos + n)
        .ok_or_else(|| Error::format(path, "truncated PGM raster"))?;
    Ok(Raster {
        width,
        height,
        bytes: raster.to_vec(),
    })
}

fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    let mut out = Vec::with_capacity(raster.bytes.len() + 32);
    write!(out, "P5\n{} {}\n255\n", raster.width, raster.height).expect("vec write");
    out.extend_from_slice(&raster.bytes);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// BT.601 luma weights, rounded to the nearest integer.
fn luma(r: u8, g: u8, b: u8) -> u8 {
    (0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b)).round() as u8
}

fn read_png(path: &Path) -> Result<Raster> {
    use image::DynamicImage;
    let img = image::open(path).map_err(|e| Error::format(path, e.to_string()))?;
    let width = img.width() as usize;
    let height = img.height() as usize;
    let bytes = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw(),
        DynamicImage::ImageLumaA8(g) => g.pixels().map(|p| p.0[0]).collect(),
        DynamicImage::ImageRgb8(c) => c.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        DynamicImage::ImageRgba8(c) => c.pixels().map(|p| luma(p.0[0], p.0[1], p.0[2])).collect(),
        other => {
            return Err(Error::format(
                path,
                format!("unsupported PNG pixel format {:?} (8-bit only)", other.color()),
            ))
        }
    };
    Ok(Raster {
        width,
        height,
        bytes,
    })
}

fn read_raster(path: &Path) -> Result<Raster> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("pgm") => read_pgm(path),
        Some(ext) if ext.eq_ignore_ascii_case("png") => read_png(path),
        _ => Err(Error::format(path, "unsupported format (expected .pgm or .png)")),
    }
}

fn check_grid(path: &Path, raster: &Raster, grid: ImageGrid) -> Result<()> {
    if raster.width != grid.width() || raster.height != grid.height() {
        return Err(Error::DimensionMismatch {
            context: path.display().to_string(),
            expected_width: grid.width(),
            expected_height: grid.height(),
            found_width: raster.width,
            found_height: raster.height,
        });
    }
    Ok(())
}

/// List the files in `directory` matching a filename glob, in lexicographic order.
pub fn list_frames(directory: &Path, pattern: &str) -> Result<Vec<PathBuf>> {
    let full = directory.join(pattern);
    let full_str = full.to_str().ok_or_else(|| {
        Error::InvalidParam(format!("non-unicode path {}", full.display()))
    })?;
    let mut paths: Vec<PathBuf> = glob::glob(full_str)
        .map_err(|e| Error::InvalidParam(format!("bad glob pattern `{pattern}`: {e}")))?
        .filter_map(|entry| entry.ok())
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::NoFramesMatched {
            dir: directory.to_path_buf(),
            pattern: pattern.into(),
        });
    }
    Ok(paths)
}

/// Load one frame as intensities on the 0–255 scale.
pub fn load_frame(path: &Path) -> Result<FrameVector> {
    let raster = read_raster(path)?;
    let grid = ImageGrid::new(raster.width, raster.height)
        .map_err(|_| Error::format(path, "empty image"))?;
    FrameVector::from_bytes(grid, &raster.bytes)
}

/// Load every frame matching `pattern` under `directory`, in lexicographic
/// filename order. All frames must share identical dimensions.
pub fn load_frame_sequence(directory: &Path, pattern: &str) -> Result<Vec<FrameVector>> {
    let paths = list_frames(directory, pattern)?;
    let mut frames = Vec::with_capacity(paths.len());
    let mut grid: Option<ImageGrid> = None;
    for path in &paths {
        let frame = load_frame(path)?;
        match grid {
            None => grid = Some(frame.grid),
            Some(g) if g != frame.grid => {
                return Err(Error::DimensionMismatch {
                    context: path.display().to_string(),
                    expected_width: g.width(),
                    expected_height: g.height(),
                    found_width: frame.grid.width(),
                    found_height: frame.grid.height(),
                })
            }
            Some(_) => {}
        }
        frames.push(frame);
    }
    Ok(frames)
}

/// Load a saliency map; 8-bit values are divided by 255 into [0, 1].
pub fn load_saliency(path: &Path, grid: ImageGrid) -> Result<SaliencyVector> {
    let raster = read_raster(path)?;
    check_grid(path, &raster, grid)?;
    let values = nalgebra::DVector::from_iterator(
        raster.bytes.len(),
        raster.bytes.iter().map(|&b| f64::from(b) / 255.0),
    );
    SaliencyVector::new(grid, values)
}

/// Load a ground-truth mask; any nonzero pixel counts as foreground.
pub fn load_mask(path: &Path, grid: ImageGrid) -> Result<ForegroundMask> {
    let raster = read_raster(path)?;
    check_grid(path, &raster, grid)?;
    let values = raster.bytes.iter().map(|&b| u8::from(b != 0)).collect();
    ForegroundMask::new(grid, values)
}

/// Write a mask as binary PGM with foreground = 255, background = 0.
pub fn write_mask(mask: &ForegroundMask, path: &Path) -> Result<()> {
    let raster = Raster {
        width: mask.grid.width(),
        height: mask.grid.height(),
        bytes: mask.values.iter().map(|&v| v * 255).collect(),
    };
    write_pgm(path, &raster)
}

/// Write intensities (0–255 scale, clamped and rounded) as binary PGM.
pub fn write_gray(grid: ImageGrid, values: &[f64], path: &Path) -> Result<()> {
    assert_eq!(values.len(), grid.n());
    let raster = Raster {
        width: grid.width(),
        height: grid.height(),
        bytes: values
            .iter()
            .map(|&v| v.round().clamp(0.0, 255.0) as u8)
            .collect(),
    };
    write_pgm(path, &raster)
}
