//! Image grid and the pixel vectors that live on it.
//!
//! Every module shares the same row-major flattening convention, owned by
//! [`ImageGrid`]: pixel `(row, col)` maps to index `row * width + col`.

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Dimensions of a frame plus the flattening convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageGrid {
    width: usize,
    height: usize,
}

impl ImageGrid {
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidParam(format!(
                "grid dimensions must be positive, got {width}x{height}"
            )));
        }
        Ok(ImageGrid { width, height })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Total pixel count N = width × height.
    pub fn n(&self) -> usize {
        self.width * self.height
    }

    /// Row-major flattening: `(row, col) -> row * width + col`.
    pub fn flatten(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.height && col < self.width);
        row * self.width + col
    }

    /// Exact inverse of [`ImageGrid::flatten`].
    pub fn unflatten(&self, index: usize) -> (usize, usize) {
        debug_assert!(index < self.n());
        (index / self.width, index % self.width)
    }
}

/// One grayscale frame flattened to an N-vector of intensities on the 0–255 scale.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameVector {
    pub grid: ImageGrid,
    pub values: DVector<f64>,
}

impl FrameVector {
    pub fn new(grid: ImageGrid, values: DVector<f64>) -> Result<Self> {
        check_len("frame", grid, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("frame intensities".into()));
        }
        Ok(FrameVector { grid, values })
    }

    pub fn from_bytes(grid: ImageGrid, bytes: &[u8]) -> Result<Self> {
        check_len("frame", grid, bytes.len())?;
        let values = DVector::from_iterator(bytes.len(), bytes.iter().map(|&b| f64::from(b)));
        Ok(FrameVector { grid, values })
    }
}

/// Per-pixel saliency in [0, 1], ingested from file.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyVector {
    pub grid: ImageGrid,
    pub values: DVector<f64>,
}

impl SaliencyVector {
    pub fn new(grid: ImageGrid, values: DVector<f64>) -> Result<Self> {
        check_len("saliency", grid, values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("saliency values".into()));
        }
        // 8-bit inputs arrive pre-divided by 255; float inputs are clamped here.
        let values = values.map(|v| v.clamp(0.0, 1.0));
        Ok(SaliencyVector { grid, values })
    }

    /// All-zero saliency (explicit substitute when no map is available).
    pub fn zeros(grid: ImageGrid) -> Self {
        SaliencyVector {
            grid,
            values: DVector::zeros(grid.n()),
        }
    }
}

/// Binary foreground mask: 1 marks a moving-object pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForegroundMask {
    pub grid: ImageGrid,
    pub values: Vec<u8>,
}

impl ForegroundMask {
    pub fn new(grid: ImageGrid, values: Vec<u8>) -> Result<Self> {
        check_len("mask", grid, values.len())?;
        if values.iter().any(|&v| v > 1) {
            return Err(Error::InvalidParam(
                "mask values must be exactly 0 or 1".into(),
            ));
        }
        Ok(ForegroundMask { grid, values })
    }

    pub fn foreground_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

fn check_len(context: &str, grid: ImageGrid, found: usize) -> Result<()> {
    if found != grid.n() {
        return Err(Error::LengthMismatch {
            context: context.into(),
            expected: grid.n(),
            found,
        });
    }
    Ok(())
}
