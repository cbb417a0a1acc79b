//! Deterministic synthetic test sequences: a smooth background with optional
//! flicker pixels, sensor noise, and a bright moving square, plus perfect
//! ground truth and oracle saliency (with a degraded variant for robustness
//! tests).

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ForegroundMask, FrameVector, ImageGrid, SaliencyVector};
use crate::io;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
    /// Gaussian sensor noise sigma on the 0–255 scale.
    pub noise_sigma: f64,
    /// Fraction of pixels that toggle intensity every frame (dynamic background).
    pub flicker_fraction: f64,
    /// Flicker toggle amplitude, ± on the 0–255 scale.
    pub flicker_amplitude: f64,
    /// Side length of the moving square; 0 disables the object.
    pub object_size: usize,
    /// Intensity added on the object.
    pub object_intensity: f64,
    /// Leading object-free frames (the training window).
    pub warmup: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            width: 64,
            height: 64,
            frames: 80,
            noise_sigma: 5.0,
            flicker_fraction: 0.0,
            flicker_amplitude: 60.0,
            object_size: 12,
            object_intensity: 100.0,
            warmup: 20,
            seed: 0,
        }
    }
}

/// A fully generated scene, kept in memory exactly as it round-trips through
/// the 8-bit files.
#[derive(Debug, Clone)]
pub struct SynthScene {
    pub spec: SynthSpec,
    pub grid: ImageGrid,
    pub frames: Vec<FrameVector>,
    pub truths: Vec<ForegroundMask>,
    pub saliency: Vec<SaliencyVector>,
    pub saliency_degraded: Vec<SaliencyVector>,
}

/// Top-left corner of the square in frame `idx`, bouncing inside a 2-pixel
/// margin; `None` while the object is absent or disabled.
fn object_position(spec: &SynthSpec, idx: usize) -> Option<(usize, usize)> {
    if spec.object_size == 0 || idx < spec.warmup {
        return None;
    }
    let travel = |extent: usize, step: usize, t: usize| -> usize {
        let span = extent.saturating_sub(spec.object_size + 4).max(1);
        let p = (t * step) % (2 * span);
        2 + if p <= span { p } else { 2 * span - p }
    };
    let t = idx - spec.warmup;
    Some((travel(spec.height, 1, t), travel(spec.width, 2, t)))
}

fn smooth_background(grid: ImageGrid, row: usize, col: usize) -> f64 {
    let h = (grid.height().max(2) - 1) as f64;
    let w = (grid.width().max(2) - 1) as f64;
    70.0 + 50.0 * row as f64 / h + 30.0 * col as f64 / w
}

fn quantize(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}

/// Generate the scene. The same spec (and seed) always produces the same
/// bytes.
pub fn generate(spec: &SynthSpec) -> Result<SynthScene> {
    if spec.frames == 0 {
        return Err(Error::InvalidParam("synthetic scene needs at least one frame".into()));
    }
    if !(0.0..=1.0).contains(&spec.flicker_fraction) {
        return Err(Error::InvalidParam("flicker fraction must lie in [0, 1]".into()));
    }
    if spec.object_size > 0
        && (spec.object_size + 4 > spec.width || spec.object_size + 4 > spec.height)
    {
        return Err(Error::InvalidParam(format!(
            "object size {} does not fit a {}x{} frame with margins",
            spec.object_size, spec.width, spec.height
        )));
    }
    let grid = ImageGrid::new(spec.width, spec.height)?;
    let n = grid.n();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::InvalidParam(format!("bad noise sigma: {e}")))?;

    let flicker: Vec<bool> = (0..n)
        .map(|_| rng.gen_bool(spec.flicker_fraction))
        .collect();

    let mut scene = SynthScene {
        spec: spec.clone(),
        grid,
        frames: Vec::with_capacity(spec.frames),
        truths: Vec::with_capacity(spec.frames),
        saliency: Vec::with_capacity(spec.frames),
        saliency_degraded: Vec::with_capacity(spec.frames),
    };

    for idx in 0..spec.frames {
        let pos = object_position(spec, idx);
        let in_object = |row: usize, col: usize| -> bool {
            pos.is_some_and(|(top, left)| {
                row >= top && row < top + spec.object_size && col >= left && col < left + spec.object_size
            })
        };

        let mut values = DVector::zeros(n);
        let mut truth = vec![0u8; n];
        let mut oracle = DVector::zeros(n);
        for i in 0..n {
            let (row, col) = grid.unflatten(i);
            let mut v = smooth_background(grid, row, col);
            if flicker[i] {
                let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
                v += sign * spec.flicker_amplitude;
            }
            if in_object(row, col) {
                v += spec.object_intensity;
                truth[i] = 1;
                oracle[i] = 1.0;
            }
            if spec.noise_sigma > 0.0 {
                v += noise.sample(&mut rng);
            }
            values[i] = quantize(v);
        }

        let degraded = degrade_saliency(grid, &oracle, &mut rng);
        scene.frames.push(FrameVector::new(grid, values)?);
        scene.truths.push(ForegroundMask::new(grid, truth)?);
        scene
            .saliency
            .push(SaliencyVector::new(grid, oracle)?);
        scene.saliency_degraded.push(degraded);
    }
    Ok(scene)
}

/// Blur with a 5×5 box filter (clipped at the borders) and randomize 10% of
/// the pixels, then quantize to the 8-bit grid the files carry.
fn degrade_saliency(grid: ImageGrid, oracle: &DVector<f64>, rng: &mut ChaCha8Rng) -> SaliencyVector {
    let w = grid.width() as isize;
    let h = grid.height() as isize;
    let mut blurred = DVector::zeros(grid.n());
    for row in 0..h {
        for col in 0..w {
            let mut sum = 0.0;
            let mut count = 0.0;
            for dr in -2..=2 {
                for dc in -2..=2 {
                    let (r, c) = (row + dr, col + dc);
                    if r >= 0 && r < h && c >= 0 && c < w {
                        sum += oracle[(r * w + c) as usize];
                        count += 1.0;
                    }
                }
            }
            blurred[(row * w + col) as usize] = sum / count;
        }
    }
    for i in 0..grid.n() {
        if rng.gen_bool(0.10) {
            blurred[i] = rng.gen_range(0.0..1.0);
        }
        blurred[i] = quantize(blurred[i] * 255.0) / 255.0;
    }
    SaliencyVector::new(grid, blurred).expect("degraded saliency in range")
}

/// Output directories for a written scene.
#[derive(Debug, Clone)]
pub struct SceneDirs {
    pub frames: PathBuf,
    pub truth: PathBuf,
    pub saliency: PathBuf,
    pub saliency_degraded: PathBuf,
}

/// Write the scene as PGM files under `out`, mirroring frame names across all
/// four subdirectories, plus a `scene.json` with the generating spec.
pub fn write_scene(scene: &SynthScene, out: &Path) -> Result<SceneDirs> {
    let dirs = SceneDirs {
        frames: out.join("frames"),
        truth: out.join("truth"),
        saliency: out.join("saliency"),
        saliency_degraded: out.join("saliency_degraded"),
    };
    for dir in [&dirs.frames, &dirs.truth, &dirs.saliency, &dirs.saliency_degraded] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir.clone(), e))?;
    }
    for (idx, frame) in scene.frames.iter().enumerate() {
        let name = format!("{idx:04}.pgm");
        io::write_gray(scene.grid, frame.values.as_slice(), &dirs.frames.join(&name))?;
        io::write_mask(&scene.truths[idx], &dirs.truth.join(&name))?;
        let s255: Vec<f64> = scene.saliency[idx].values.iter().map(|v| v * 255.0).collect();
        io::write_gray(scene.grid, &s255, &dirs.saliency.join(&name))?;
        let d255: Vec<f64> = scene.saliency_degraded[idx]
            .values
            .iter()
            .map(|v| v * 255.0)
            .collect();
        io::write_gray(scene.grid, &d255, &dirs.saliency_degraded.join(&name))?;
    }
    let spec_json = serde_json::to_string_pretty(&scene.spec)?;
    let spec_path = out.join("scene.json");
    fs::write(&spec_path, spec_json).map_err(|e| Error::io(spec_path, e))?;
    Ok(dirs)
}
