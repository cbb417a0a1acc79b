//! Pipeline wiring for the command-line front end: training on the leading
//! window, streaming detection, evaluation against ground truth, and the
//! three-mode ablation comparison.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diff::DifferenceOperator;
use crate::error::{Error, Result};
use crate::eval::{self, FrameScore, VideoReport};
use crate::grid::{ForegroundMask, FrameVector, ImageGrid, SaliencyVector};
use crate::io;
use crate::params::{
    self, derive_params, training_stats, ParamOverrides, ResidualEma, SolverParams, TrainingStats,
};
use crate::solver::{process_frame, AblationMode, FrameResult};
use crate::subspace::{init_subspace, SubspaceState};

pub const DEFAULT_TRAINING_COUNT: usize = 20;

/// Configuration of one detection run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub frames_dir: PathBuf,
    pub saliency_dir: Option<PathBuf>,
    pub truth_dir: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub mode: AblationMode,
    pub overrides: ParamOverrides,
    pub training_count: usize,
    pub seed: u64,
    pub verbose: bool,
    /// Substitute all-zero saliency for missing map files.
    pub allow_missing_saliency: bool,
    /// Optional ROC CSV path; requires `truth_dir`.
    pub roc_out: Option<PathBuf>,
}

impl RunConfig {
    pub fn new(
        frames_dir: impl Into<PathBuf>,
        output_dir: impl Into<PathBuf>,
        mode: AblationMode,
    ) -> RunConfig {
        RunConfig {
            frames_dir: frames_dir.into(),
            saliency_dir: None,
            truth_dir: None,
            output_dir: output_dir.into(),
            mode,
            overrides: ParamOverrides::default(),
            training_count: DEFAULT_TRAINING_COUNT,
            seed: 0,
            verbose: false,
            allow_missing_saliency: false,
            roc_out: None,
        }
    }
}

/// List the supported image files (.pgm / .png) under `dir`, sorted by name.
pub fn list_supported(dir: &Path) -> Result<Vec<PathBuf>> {
    let paths: Vec<PathBuf> = io::list_frames(dir, "*")
        .map_err(|e| match e {
            Error::NoFramesMatched { dir, .. } => Error::NoFramesMatched {
                dir,
                pattern: "*.pgm|*.png".into(),
            },
            other => other,
        })?
        .into_iter()
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("pgm") || e.eq_ignore_ascii_case("png"))
        })
        .collect();
    if paths.is_empty() {
        return Err(Error::NoFramesMatched {
            dir: dir.to_path_buf(),
            pattern: "*.pgm|*.png".into(),
        });
    }
    Ok(paths)
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn load_saliency_for(
    frame_path: &Path,
    saliency_dir: &Path,
    grid: ImageGrid,
    allow_missing: bool,
) -> Result<SaliencyVector> {
    let path = saliency_dir.join(frame_path.file_name().unwrap_or_default());
    if path.is_file() {
        io::load_saliency(&path, grid)
    } else if allow_missing {
        log::warn!("no saliency map for {}; substituting zeros", file_name(frame_path));
        Ok(SaliencyVector::zeros(grid))
    } else {
        Err(Error::MissingSaliency(path))
    }
}

/// Everything learned from the training window.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub subspace: SubspaceState,
    pub params: SolverParams,
    pub stats: TrainingStats,
    pub grid: ImageGrid,
}

/// Initialize the subspace and derive parameters from the leading window.
pub fn train(
    training_frames: &[FrameVector],
    training_saliency: Option<&[SaliencyVector]>,
    overrides: &ParamOverrides,
    seed: u64,
) -> Result<TrainedModel> {
    if training_frames.is_empty() {
        return Err(Error::EmptyInput("training window".into()));
    }
    let grid = training_frames[0].grid;
    let m = overrides.m.unwrap_or(SolverParams::default().m);
    if training_frames.len() < m {
        return Err(Error::InvalidParam(format!(
            "training window of {} frames is smaller than the subspace dimension m = {m}",
            training_frames.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subspace = init_subspace(training_frames, m, &mut rng)?;
    let stats = training_stats(&subspace, training_frames, training_saliency)?;
    let params = derive_params(&stats, overrides)?;
    Ok(TrainedModel {
        subspace,
        params,
        stats,
        grid,
    })
}

/// Streaming detector: one video, one mode, frames strictly in order.
///
/// Carries the warm-started background vector between frames and refreshes
/// the sparsity weight from a running residual estimate, unless the
/// corresponding parameter was explicitly overridden.
pub struct Stream {
    subspace: SubspaceState,
    diff: DifferenceOperator,
    params: SolverParams,
    mode: AblationMode,
    prev_b: Option<DVector<f64>>,
    ema: ResidualEma,
    beta_auto: bool,
    lambda_auto: bool,
    alpha_auto: bool,
}

impl Stream {
    pub fn new(model: &TrainedModel, mode: AblationMode, overrides: &ParamOverrides) -> Stream {
        Stream {
            subspace: model.subspace.clone(),
            diff: DifferenceOperator::new(model.grid),
            params: model.params.clone(),
            mode,
            prev_b: None,
            ema: ResidualEma::new(model.stats.sigma_hat_sq),
            beta_auto: overrides.beta.is_none(),
            lambda_auto: overrides.lambda.is_none(),
            alpha_auto: overrides.alpha.is_none(),
        }
    }

    pub fn params(&self) -> &SolverParams {
        &self.params
    }

    pub fn subspace(&self) -> &SubspaceState {
        &self.subspace
    }

    /// Process the next frame of the stream.
    pub fn step(
        &mut self,
        frame: &FrameVector,
        saliency: Option<&SaliencyVector>,
    ) -> Result<FrameResult> {
        let result = process_frame(
            &mut self.subspace,
            frame,
            saliency,
            &self.diff,
            &self.params,
            self.mode,
            self.prev_b.as_ref(),
        )?;
        self.prev_b = Some(result.b.clone());

        // keep the empirical rules live on the stream
        let term = params::frame_residual_term(&self.subspace, frame)?;
        self.ema.observe(term);
        if self.beta_auto {
            self.params.beta = params::update_beta(self.params.beta, self.ema.value());
            if self.lambda_auto {
                self.params.lambda = 5.0 * self.params.beta;
            }
        }
        if self.alpha_auto {
            self.params.alpha = self.params.alpha.min(6.5 * self.params.beta);
        }
        Ok(result)
    }
}

#[derive(Debug, Serialize)]
struct FrameDiagnostics<'a> {
    frame: &'a str,
    objective_trace: &'a [f64],
    converged: bool,
    feas_w_b: f64,
    feas_c_dw: f64,
    final_mu: f64,
    beta: f64,
    alpha: f64,
    lambda: f64,
    elapsed_ms: f64,
}

/// Summary returned by [`cmd_run`].
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub frames_processed: usize,
    pub converged_frames: usize,
    pub params: SolverParams,
}

/// Train on the leading window, stream the rest, write one mask per frame
/// (mirroring input names, `.pgm`), a `params.json`, and optional JSONL
/// diagnostics and ROC CSV.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary> {
    let paths = list_supported(&config.frames_dir)?;
    if config.training_count == 0 || config.training_count >= paths.len() {
        return Err(Error::InvalidParam(format!(
            "training count {} must leave at least one frame to process (found {})",
            config.training_count,
            paths.len()
        )));
    }
    if config.mode.requires_saliency() && config.saliency_dir.is_none() {
        return Err(Error::InvalidParam(
            "saliency mode requires --saliency DIR".into(),
        ));
    }
    if config.roc_out.is_some() && config.truth_dir.is_none() {
        return Err(Error::InvalidParam("--roc requires --truth DIR".into()));
    }

    let (train_paths, stream_paths) = paths.split_at(config.training_count);

    // fail on missing saliency maps before any mask is written
    if config.mode.requires_saliency() && !config.allow_missing_saliency {
        let dir = config.saliency_dir.as_ref().expect("checked above");
        for path in &paths {
            let map = dir.join(path.file_name().unwrap_or_default());
            if !map.is_file() {
                return Err(Error::MissingSaliency(map));
            }
        }
    }

    let mut training_frames = Vec::with_capacity(train_paths.len());
    let mut grid: Option<ImageGrid> = None;
    for path in train_paths {
        let frame = io::load_frame(path)?;
        if let Some(g) = grid {
            if frame.grid != g {
                return Err(Error::DimensionMismatch {
                    context: path.display().to_string(),
                    expected_width: g.width(),
                    expected_height: g.height(),
                    found_width: frame.grid.width(),
                    found_height: frame.grid.height(),
                });
            }
        } else {
            grid = Some(frame.grid);
        }
        training_frames.push(frame);
    }
    let grid = grid.expect("training window is nonempty");

    let training_saliency = match (&config.saliency_dir, config.mode.requires_saliency()) {
        (Some(dir), true) => {
            let maps = train_paths
                .iter()
                .map(|p| load_saliency_for(p, dir, grid, config.allow_missing_saliency))
                .collect::<Result<Vec<_>>>()?;
            Some(maps)
        }
        _ => None,
    };

    let model = train(
        &training_frames,
        training_saliency.as_deref(),
        &config.overrides,
        config.seed,
    )?;
    drop(training_frames);

    fs::create_dir_all(&config.output_dir)
        .map_err(|e| Error::io(config.output_dir.clone(), e))?;
    let params_path = config.output_dir.join("params.json");
    fs::write(&params_path, model.params.to_json()).map_err(|e| Error::io(params_path, e))?;

    let mut diagnostics = if config.verbose {
        let path = config.output_dir.join("diagnostics.jsonl");
        Some(fs::File::create(&path).map_err(|e| Error::io(path, e))?)
    } else {
        None
    };

    let mut stream = Stream::new(&model, config.mode, &config.overrides);
    let mut summary = RunSummary {
        frames_processed: 0,
        converged_frames: 0,
        params: model.params.clone(),
    };
    let mut roc_data: Vec<(DVector<f64>, ForegroundMask)> = Vec::new();

    for path in stream_paths {
        let frame = io::load_frame(path)?;
        if frame.grid != grid {
            return Err(Error::DimensionMismatch {
                context: path.display().to_string(),
                expected_width: grid.width(),
                expected_height: grid.height(),
                found_width: frame.grid.width(),
                found_height: frame.grid.height(),
            });
        }
        let saliency = match (&config.saliency_dir, config.mode.requires_saliency()) {
            (Some(dir), true) => Some(load_saliency_for(
                path,
                dir,
                grid,
                config.allow_missing_saliency,
            )?),
            _ => None,
        };
        // weights the frame is solved with, before the per-frame refresh
        let (beta, alpha, lambda) = (
            stream.params().beta,
            stream.params().alpha,
            stream.params().lambda,
        );
        let started = Instant::now();
        let result = stream.step(&frame, saliency.as_ref())?;
        let elapsed_ms = started.elapsed().as_secs_f64() * 1e3;

        let mask_name = Path::new(&file_name(path)).with_extension("pgm");
        io::write_mask(&result.mask, &config.output_dir.join(&mask_name))?;

        if let Some(file) = diagnostics.as_mut() {
            let name = file_name(path);
            let record = FrameDiagnostics {
                frame: &name,
                objective_trace: &result.objective_trace,
                converged: result.converged,
                feas_w_b: result.feas_w_b,
                feas_c_dw: result.feas_c_dw,
                final_mu: result.final_mu,
                beta,
                alpha,
                lambda,
                elapsed_ms,
            };
            serde_json::to_writer(&mut *file, &record)?;
            writeln!(file).map_err(|e| Error::io(config.output_dir.clone(), e))?;
        }

        if let (Some(truth_dir), Some(_)) = (&config.truth_dir, &config.roc_out) {
            let truth_path = truth_dir.join(path.file_name().unwrap_or_default());
            if truth_path.is_file() {
                roc_data.push((result.b.clone(), io::load_mask(&truth_path, grid)?));
            }
        }

        summary.frames_processed += 1;
        if result.converged {
            summary.converged_frames += 1;
        }
    }

    if let Some(roc_path) = &config.roc_out {
        if roc_data.is_empty() {
            return Err(Error::EmptyInput(
                "no ground-truth masks matched the processed frames for the ROC sweep".into(),
            ));
        }
        let (bs, truths): (Vec<_>, Vec<_>) = roc_data.into_iter().unzip();
        let curve = eval::roc_sweep(&bs, &truths, grid, 101)?;
        fs::write(roc_path, curve.to_csv()).map_err(|e| Error::io(roc_path.clone(), e))?;
    }

    Ok(summary)
}

/// Score a directory of masks against ground truth; evaluates exactly the
/// frames for which a truth file with the same name exists.
pub fn cmd_evaluate(masks_dir: &Path, truth_dir: &Path, out_csv: &Path) -> Result<VideoReport> {
    let mask_paths = list_supported(masks_dir)?;
    let pairs: Vec<(PathBuf, PathBuf)> = mask_paths
        .into_iter()
        .filter_map(|m| {
            let t = truth_dir.join(m.file_name()?);
            t.is_file().then_some((m, t))
        })
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no overlapping filenames between {} and {}",
            masks_dir.display(),
            truth_dir.display()
        )));
    }
    let grid = io::load_frame(&pairs[0].0)?.grid;
    let frames: Vec<FrameScore> = pairs
        .par_iter()
        .map(|(mask_path, truth_path)| {
            let mask = io::load_mask(mask_path, grid)?;
            let truth = io::load_mask(truth_path, grid)?;
            let counts = eval::confusion(&mask, &truth)?;
            Ok(FrameScore {
                name: file_name(mask_path),
                f1: eval::f1_score(&counts),
                counts,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let video = masks_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "video".into());
    let report = VideoReport::from_frames(video, frames);
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.to_path_buf(), e))?;
        }
    }
    fs::write(out_csv, report.to_csv()).map_err(|e| Error::io(out_csv.to_path_buf(), e))?;
    Ok(report)
}

/// One row of the ablation comparison.
#[derive(Debug, Clone, Serialize)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub mean_f1: f64,
    pub total_false_pos: u64,
    pub total_false_neg: u64,
}

/// Input description for [`cmd_ablate`].
#[derive(Debug, Clone)]
pub struct AblateConfig {
    pub frames_dir: PathBuf,
    pub saliency_dir: PathBuf,
    pub truth_dir: PathBuf,
    pub out_csv: PathBuf,
    pub overrides: ParamOverrides,
    pub training_count: usize,
    pub seed: u64,
}

/// Run all three objective variants over the same stream with shared
/// training, and emit a `mode,mean_f1,total_fp,total_fn` comparison CSV.
pub fn cmd_ablate(config: &AblateConfig) -> Result<Vec<AblationRow>> {
    let paths = list_supported(&config.frames_dir)?;
    if config.training_count == 0 || config.training_count >= paths.len() {
        return Err(Error::InvalidParam(format!(
            "training count {} must leave at least one frame to process (found {})",
            config.training_count,
            paths.len()
        )));
    }
    let (train_paths, stream_paths) = paths.split_at(config.training_count);

    let training_frames = train_paths
        .iter()
        .map(|p| io::load_frame(p))
        .collect::<Result<Vec<_>>>()?;
    let grid = training_frames[0].grid;
    let training_saliency = train_paths
        .iter()
        .map(|p| load_saliency_for(p, &config.saliency_dir, grid, false))
        .collect::<Result<Vec<_>>>()?;

    let model = train(
        &training_frames,
        Some(&training_saliency),
        &config.overrides,
        config.seed,
    )?;

    let stream_frames = stream_paths
        .iter()
        .map(|p| io::load_frame(p))
        .collect::<Result<Vec<_>>>()?;
    let stream_saliency = stream_paths
        .iter()
        .map(|p| load_saliency_for(p, &config.saliency_dir, grid, false))
        .collect::<Result<Vec<_>>>()?;
    let truths = stream_paths
        .iter()
        .map(|p| {
            let t = config.truth_dir.join(p.file_name().unwrap_or_default());
            io::load_mask(&t, grid)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    for mode in [
        AblationMode::Baseline,
        AblationMode::AddConnectivity,
        AblationMode::AddSaliencyMap,
    ] {
        let mut stream = Stream::new(&model, mode, &config.overrides);
        let mut scores = Vec::with_capacity(stream_frames.len());
        let mut total = eval::ConfusionCounts::default();
        for (idx, frame) in stream_frames.iter().enumerate() {
            let saliency = mode.requires_saliency().then(|| &stream_saliency[idx]);
            let result = stream.step(frame, saliency)?;
            let counts = eval::confusion(&result.mask, &truths[idx])?;
            total.merge(&counts);
            scores.push(eval::f1_score(&counts));
        }
        rows.push(AblationRow {
            mode,
            mean_f1: scores.iter().sum::<f64>() / scores.len().max(1) as f64,
            total_false_pos: total.false_pos,
            total_false_neg: total.false_neg,
        });
    }

    let mut csv = String::from("mode,mean_f1,total_fp,total_fn\n");
    for row in &rows {
        use std::fmt::Write as _;
        writeln!(
            csv,
            "{},{},{},{}",
            row.mode, row.mean_f1, row.total_false_pos, row.total_false_neg
        )
        .expect("string write");
    }
    if let Some(parent) = config.out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent.to_path_buf(), e))?;
        }
    }
    fs::write(&config.out_csv, csv).map_err(|e| Error::io(config.out_csv.clone(), e))?;
    Ok(rows)
}

/// Generate and write a synthetic scene.
pub fn cmd_synth(spec: &crate::synth::SynthSpec, out: &Path) -> Result<crate::synth::SceneDirs> {
    let scene = crate::synth::generate(spec)?;
    crate::synth::write_scene(&scene, out)
}

/// JSON config file accepted by the run command; flags override these fields.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ConfigFile {
    pub frames: Option<PathBuf>,
    pub saliency: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub mode: Option<String>,
    pub train_count: Option<usize>,
    pub seed: Option<u64>,
    pub verbose: Option<bool>,
    pub allow_missing_saliency: Option<bool>,
    #[serde(default)]
    pub params: ParamOverrides,
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<ConfigFile> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}
