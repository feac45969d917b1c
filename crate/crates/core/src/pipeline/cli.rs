//! Argument parsing and dispatch for the `mastgeoref` binary.

use super::commands::{self, FitMethod, HeadingOptions, ScatterOptions};
use super::config::ProjectConfig;
use super::{exit, PipelineError, Result};
use crate::evalmetrics::EvalMode;
use clap::{Parser, Subcommand, ValueEnum};
use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

#[derive(Debug, Parser)]
#[command(
    name = "mastgeoref",
    version,
    about = "Ship georeferencing toolkit for fixed harbour cameras",
    after_help = "Environment:\n  MASTGEOREF_CONFIG  optional TOML project configuration; flags override it\n\n\
Exit status: 0 success, 1 runtime error, 2 usage or precondition, 3 schema violation"
)]
pub struct Cli {
    /// Worker threads for per-image and per-slice work (default from config, else 1).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Ls,
    Dlt,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Box,
    Mask,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the image-to-map homography from pixel/lat/lon correspondences.
    Calibrate {
        #[arg(long)]
        corr: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "ls")]
        method: MethodArg,
    },
    /// Georeference every instance mask to a GeoJSON point.
    Georef {
        #[arg(long)]
        homography: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Heading triangles (moving) and points (stationary) from optical flow.
    Heading {
        #[arg(long)]
        homography: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        /// Flow file, or a directory of `<image_id>.flow` files.
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        min_mag: Option<f64>,
        /// Triangle size in meters.
        #[arg(long)]
        marker_size: Option<f64>,
    },
    /// Write the slice grid of a frame.
    SlicePlan {
        #[arg(long)]
        width: u32,
        #[arg(long)]
        height: u32,
        #[arg(long)]
        slice_w: Option<u32>,
        #[arg(long)]
        slice_h: Option<u32>,
        #[arg(long)]
        overlap: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge per-slice predictions (`slice_NNNN.json`) into one frame.
    Merge {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        pred_dir: PathBuf,
        #[arg(long)]
        nms_iou: Option<f64>,
        /// Let boxes of different classes suppress each other.
        #[arg(long)]
        class_agnostic: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// COCO-style mAP and, with a homography, GDE statistics.
    ///
    /// Metrics come only from the supplied files. Given ShipSG-format
    /// predictions and annotations this computes the mAP and GDE tables; the
    /// accuracy and latency of trained models are not reproduced here.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Enables GDE for ground truth carrying `georef` positions.
        #[arg(long)]
        homography: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// First-order scattering coefficient maps of a PGM or raw real map.
    Scatter {
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        scales: usize,
        #[arg(long)]
        orients: usize,
        #[arg(long)]
        kernel_size: Option<usize>,
        #[arg(long)]
        no_downsample: bool,
        /// Resolution-preserving block variant (needs `--scales 1`).
        #[arg(long, conflicts_with = "no_downsample")]
        block: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn run_command(cmd: Command, cfg: &ProjectConfig, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let warn = |err: &mut dyn Write, warnings: &[String]| {
        for w in warnings {
            let _ = writeln!(err, "warning: {w}");
        }
        if !warnings.is_empty() {
            let _ = writeln!(err, "warning: {} instance(s) skipped", warnings.len());
        }
    };
    match cmd {
        Command::Calibrate { corr, out: path, method } => {
            let method = match method {
                MethodArg::Ls => FitMethod::LeastSquares,
                MethodArg::Dlt => FitMethod::Dlt,
            };
            let doc = commands::calibrate(&corr, &path, method)?;
            let _ = writeln!(out, "rows {} rmse {}", doc.source_rows, doc.rmse);
        }
        Command::Georef {
            homography,
            pred,
            out: path,
        } => {
            let s = commands::georef(&homography, &pred, &path)?;
            warn(err, &s.warnings);
            let _ = writeln!(out, "features {}", s.collection.features.len());
        }
        Command::Heading {
            homography,
            pred,
            flow,
            out: path,
            min_mag,
            marker_size,
        } => {
            let mut opts = HeadingOptions::from_config(cfg);
            if let Some(m) = min_mag {
                if !(m >= 0.0 && m.is_finite()) {
                    return Err(PipelineError::Usage(format!("--min-mag {m} must be >= 0")));
                }
                opts.min_mag = m;
            }
            if let Some(s) = marker_size {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(PipelineError::Usage(format!("--marker-size {s} must be positive")));
                }
                opts.marker_size = s;
            }
            let s = commands::heading(&homography, &pred, &flow, &path, opts)?;
            warn(err, &s.warnings);
            let _ = writeln!(out, "features {}", s.collection.features.len());
        }
        Command::SlicePlan {
            width,
            height,
            slice_w,
            slice_h,
            overlap,
            out: path,
        } => {
            let plan = commands::slice_plan(
                width,
                height,
                slice_w.unwrap_or(cfg.slice.width),
                slice_h.unwrap_or(cfg.slice.height),
                overlap.unwrap_or(cfg.slice.overlap),
                &path,
            )?;
            let _ = writeln!(out, "slices {}", plan.len());
        }
        Command::Merge {
            plan,
            pred_dir,
            nms_iou,
            class_agnostic,
            out: path,
        } => {
            let class_aware = cfg.class_aware_nms && !class_agnostic;
            let s = commands::merge(&plan, &pred_dir, nms_iou.unwrap_or(cfg.nms_iou), class_aware, &path)?;
            for i in &s.missing_slices {
                let _ = writeln!(err, "warning: no predictions file for slice {i}");
            }
            let _ = writeln!(out, "input {} merged {}", s.input_predictions, s.merged);
        }
        Command::Evaluate {
            pred,
            gt,
            mode,
            homography,
            out: path,
        } => {
            let mode = match mode {
                Some(ModeArg::Box) => EvalMode::Box,
                Some(ModeArg::Mask) => EvalMode::Mask,
                None => cfg.eval.mode,
            };
            let r = commands::evaluate(&pred, &gt, homography.as_deref(), mode, cfg, &path)?;
            let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |x| format!("{x}"));
            let _ = writeln!(out, "mAP {} mAP50 {} mAP75 {}", fmt(r.map), fmt(r.map_50), fmt(r.map_75));
            if let Some(g) = &r.gde {
                let _ = writeln!(
                    out,
                    "GDE {} +/- {} m over {} pairs",
                    g.stats.overall.mean, g.stats.overall.std, g.pairs
                );
            }
        }
        Command::Scatter {
            image,
            scales,
            orients,
            kernel_size,
            no_downsample,
            block,
            out_dir,
        } => {
            let opts = ScatterOptions {
                scales,
                orientations: orients,
                kernel_size,
                downsample: !no_downsample,
                block,
            };
            let (m, _) = commands::scatter(&image, &opts, &out_dir)?;
            let _ = writeln!(out, "channels {} size {}x{}", m.channels.len(), m.width, m.height);
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::OK };
            let rendered = e.render().to_string();
            let _ = if code == exit::OK {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    let result = ProjectConfig::from_env().and_then(|mut cfg| {
        if let Some(j) = cli.jobs {
            if j == 0 {
                return Err(PipelineError::Usage("--jobs must be >= 1".into()));
            }
            cfg.jobs = j;
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| PipelineError::Runtime(e.to_string()))?;
        let (mut o, mut e) = (Vec::new(), Vec::new());
        let r = pool.install(|| run_command(cli.command, &cfg, &mut o, &mut e));
        let _ = out.write_all(&o);
        let _ = err.write_all(&e);
        r
    });
    match result {
        Ok(()) => exit::OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}
