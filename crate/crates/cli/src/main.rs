//! Single executable exposing the pipeline stages as subcommands.
//!
//! Parameter precedence: command-line flags > --config file > built-in
//! defaults. The config file uses the pipeline JSON schema; stage
//! subcommands read only the parameter fields they need from it.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use calcmatch::cluster::Template;
use calcmatch::detect::DetectParams;
use calcmatch::error::Error;
use calcmatch::evaluate::{evaluate_matches, PredictionMode};
use calcmatch::image::Rect;
use calcmatch::io;
use calcmatch::matching::MatchSet;
use calcmatch::pipeline::{
    config_violations, exit_code_for, run_pipeline, stage_cluster, stage_match, stage_segment,
    write_overlay, PipelineConfig,
};
use calcmatch::synth::{generate_case, write_case, SynthParams};

#[derive(Parser)]
#[command(
    name = "calcmatch",
    version,
    about = "Detects bright point-like objects, clusters them into a template, \
             and locates the template in a larger raster by cross-correlation",
    after_help = "Parameter precedence: flags > --config file > built-in defaults.\n\
                  Exit codes: 0 ok, 1 usage/IO error, 2 no cluster found, 3 empty match selection."
)]
struct Cli {
    /// JSON config supplying parameter defaults (pipeline schema)
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads (0 = auto)
    #[arg(long, global = true, default_value_t = 0, value_name = "N")]
    threads: usize,

    /// Verbose logging
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DetectFlags {
    /// Smallest blob scale (sigma, pixels)
    #[arg(long)]
    sigma_min: Option<f64>,
    /// Largest blob scale (sigma, pixels)
    #[arg(long)]
    sigma_max: Option<f64>,
    /// Scale samples per doubling of sigma
    #[arg(long)]
    scales_per_octave: Option<u32>,
    /// Minimum difference-of-Gaussians response
    #[arg(long)]
    dog_threshold: Option<f32>,
    /// Maximum principal-curvature ratio (rejects ridges)
    #[arg(long)]
    hessian_ratio_max: Option<f64>,
    /// Ignore detections within this many pixels of the border
    #[arg(long)]
    border_margin: Option<u32>,
}

impl DetectFlags {
    fn apply(&self, p: &mut DetectParams) {
        if let Some(v) = self.sigma_min {
            p.sigma_min = v;
        }
        if let Some(v) = self.sigma_max {
            p.sigma_max = v;
        }
        if let Some(v) = self.scales_per_octave {
            p.scales_per_octave = v;
        }
        if let Some(v) = self.dog_threshold {
            p.dog_threshold = v;
        }
        if let Some(v) = self.hessian_ratio_max {
            p.hessian_ratio_max = v;
        }
        if let Some(v) = self.border_margin {
            p.border_margin = v;
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Segment bright blobs from a grayscale PGM into a mask and centroid CSV
    Segment {
        /// Input grayscale raster (PGM P5)
        #[arg(long, value_name = "PATH")]
        image: PathBuf,
        /// Output binary mask (PGM P5)
        #[arg(long, value_name = "PATH")]
        out_mask: PathBuf,
        /// Output centroid list (CSV x,y)
        #[arg(long, value_name = "PATH")]
        out_points: PathBuf,
        #[command(flatten)]
        detect: DetectFlags,
    },
    /// Cluster centroids, cut the largest-cluster template, and write its
    /// four rotation variants
    Cluster {
        /// Specimen binary mask (PGM P5)
        #[arg(long, value_name = "PATH")]
        mask: PathBuf,
        /// Specimen centroid list (CSV x,y)
        #[arg(long, value_name = "PATH")]
        points: PathBuf,
        /// Case metadata JSON (magnification factors)
        #[arg(long, value_name = "PATH")]
        meta: PathBuf,
        /// DBSCAN neighborhood radius (pixels)
        #[arg(long)]
        eps: Option<f64>,
        /// DBSCAN core-point threshold (neighborhood includes the point)
        #[arg(long)]
        min_pts: Option<usize>,
        /// Extra pixels around the cluster bounding box
        #[arg(long)]
        pad: Option<u32>,
        /// Output prefix; writes <prefix>000.pgm ... <prefix>270.pgm
        #[arg(long, value_name = "PREFIX")]
        out_template_prefix: String,
    },
    /// Cross-correlate template variants against a scene mask and select
    /// matches by percentile
    Match {
        /// Scene binary mask (PGM P5)
        #[arg(long, value_name = "PATH")]
        scene_mask: PathBuf,
        /// Template prefix; reads <prefix>000.pgm ... <prefix>270.pgm
        #[arg(long, value_name = "PREFIX")]
        template_prefix: String,
        /// Selection percentile (strictly-above rule)
        #[arg(long)]
        percentile: Option<f64>,
        /// Normalize scores by template and window magnitudes
        #[arg(long)]
        ncc: bool,
        /// Output prefix; writes <prefix><rot>.scoremap per variant
        #[arg(long, value_name = "PREFIX")]
        out_scores: String,
        /// Output match set JSON
        #[arg(long, value_name = "PATH")]
        out_matches: PathBuf,
    },
    /// Score a match set against a reference box on a patch grid
    Evaluate {
        /// Scene binary mask (defines grid dimensions and the overlay base)
        #[arg(long, value_name = "PATH")]
        scene_mask: PathBuf,
        /// Match set JSON from `match`
        #[arg(long, value_name = "PATH")]
        matches: PathBuf,
        /// Reference box as x0,y0,w,h (scene pixels)
        #[arg(long, value_name = "X0,Y0,W,H", value_parser = parse_box)]
        reference_box: [u32; 4],
        /// Patch edge length (pixels)
        #[arg(long)]
        patch_size: Option<u32>,
        /// Prediction mode: top1 or all-selected
        #[arg(long)]
        mode: Option<PredictionMode>,
        /// Output report JSON
        #[arg(long, value_name = "PATH")]
        out_report: PathBuf,
        /// Also render a color overlay (PPM P6) to this path
        #[arg(long, value_name = "PATH")]
        overlay: Option<PathBuf>,
    },
    /// Generate a seeded synthetic scene/specimen pair with ground truth
    Synth {
        /// Output directory (scene.pgm, specimen.pgm, case.json, truth.json)
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Plant a second, identical cluster
        #[arg(long)]
        confuser: bool,
        #[arg(long)]
        scene_w: Option<u32>,
        #[arg(long)]
        scene_h: Option<u32>,
        /// Number of background distractor blobs
        #[arg(long)]
        n_background_blobs: Option<u32>,
        #[arg(long)]
        cluster_size: Option<u32>,
        /// Cluster radius (pixels)
        #[arg(long)]
        cluster_spread: Option<f64>,
        #[arg(long)]
        blob_sigma_min: Option<f64>,
        #[arg(long)]
        blob_sigma_max: Option<f64>,
        #[arg(long)]
        blob_amplitude_min: Option<f64>,
        #[arg(long)]
        blob_amplitude_max: Option<f64>,
        /// Planted rotation: 0, 90, 180, or 270 degrees
        #[arg(long)]
        planted_rotation: Option<u16>,
        #[arg(long)]
        specimen_magnification: Option<f64>,
        /// Gaussian pixel-noise sigma
        #[arg(long)]
        noise_sigma: Option<f64>,
    },
    /// Run segment, cluster, match, and evaluate end to end from a config
    Pipeline {
        #[command(flatten)]
        detect: DetectFlags,
        #[arg(long, value_name = "PATH")]
        scene_image: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        specimen_image: Option<PathBuf>,
        #[arg(long, value_name = "PATH")]
        case_meta: Option<PathBuf>,
        /// Reference box as x0,y0,w,h (scene pixels)
        #[arg(long, value_name = "X0,Y0,W,H", value_parser = parse_box)]
        reference_box: Option<[u32; 4]>,
        #[arg(long, value_name = "DIR")]
        out_dir: Option<PathBuf>,
        /// Also write overlay.ppm into the output directory
        #[arg(long)]
        overlay: bool,
        #[arg(long)]
        eps: Option<f64>,
        #[arg(long)]
        min_pts: Option<usize>,
        #[arg(long)]
        pad: Option<u32>,
        #[arg(long)]
        percentile: Option<f64>,
        /// Normalize scores by template and window magnitudes
        #[arg(long)]
        ncc: bool,
        #[arg(long)]
        patch_size: Option<u32>,
        /// Prediction mode: top1 or all-selected
        #[arg(long)]
        mode: Option<PredictionMode>,
        /// Only validate the merged config; print violations and exit
        #[arg(long)]
        validate_only: bool,
    },
}

fn parse_box(s: &str) -> Result<[u32; 4], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 4 {
        return Err(format!("expected x0,y0,w,h, got {s:?}"));
    }
    let mut out = [0u32; 4];
    for (slot, part) in out.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .map_err(|e| format!("bad component {part:?}: {e}"))?;
    }
    Ok(out)
}

/// Parses the optional --config file into the pipeline schema. Only the
/// schema is checked here; path existence matters only to `pipeline`.
fn base_config(path: &Option<PathBuf>) -> Result<PipelineConfig, Error> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::Io {
                path: p.clone(),
                source: e,
            })?;
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        }
    }
}

fn load_templates(prefix: &str) -> Result<Vec<Template>, Error> {
    let mut out = Vec::new();
    for rot in [0u16, 90, 180, 270] {
        let path = PathBuf::from(format!("{prefix}{rot:03}.pgm"));
        if path.exists() {
            let bits = io::load_mask(&path)?;
            let rect = Rect::new(0, 0, bits.width, bits.height);
            out.push(Template {
                bits,
                rotation_deg: rot,
                scale_applied: 1.0,
                source_rect: rect,
            });
        }
    }
    if out.is_empty() {
        return Err(Error::Config(format!(
            "no templates at prefix {prefix:?} (expected {prefix}000.pgm ...)"
        )));
    }
    Ok(out)
}

fn write_json<T: serde::Serialize>(value: &T, path: &PathBuf) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("serializable artifact");
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })
}

fn print_report(report: &calcmatch::evaluate::EvalReport) {
    println!("patches\tAccuracy\tPrecision\tRecall\tSpecificity\tNPV");
    println!(
        "{}",
        report.metrics.report_row(&format!(
            "tp={} fp={} fn={} tn={}",
            report.counts.tp, report.counts.fp, report.counts.fn_, report.counts.tn
        ))
    );
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let base = base_config(&cli.config)?;
    match cli.command {
        Command::Segment {
            image,
            out_mask,
            out_points,
            detect,
        } => {
            let mut params = base.detect.clone();
            detect.apply(&mut params);
            params.validate()?;
            let input = io::load_gray_image(&image)?;
            let (mask, points) = stage_segment(&input, &params)?;
            io::save_mask(&mask, &out_mask)?;
            io::save_points(&points, &out_points)?;
            log::info!("{} detections", points.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Cluster {
            mask,
            points,
            meta,
            eps,
            min_pts,
            pad,
            out_template_prefix,
        } => {
            let mask = io::load_mask(&mask)?;
            let points = io::load_points(&points)?;
            let meta = io::load_case_meta(&meta)?;
            let templates = stage_cluster(
                &mask,
                &points,
                &meta,
                eps.unwrap_or(base.eps),
                min_pts.unwrap_or(base.min_pts),
                pad.unwrap_or(base.pad),
            )?;
            for t in &templates {
                let path = PathBuf::from(format!(
                    "{out_template_prefix}{:03}.pgm",
                    t.rotation_deg
                ));
                io::save_mask(&t.bits, &path)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Match {
            scene_mask,
            template_prefix,
            percentile,
            ncc,
            out_scores,
            out_matches,
        } => {
            let scene = io::load_mask(&scene_mask)?;
            let templates = load_templates(&template_prefix)?;
            let (maps, match_set) = stage_match(
                &scene,
                &templates,
                percentile.unwrap_or(base.percentile),
                ncc || base.ncc,
            )?;
            for map in &maps {
                let path =
                    PathBuf::from(format!("{out_scores}{:03}.scoremap", map.template_rotation));
                io::save_score_map(map, &path)?;
            }
            write_json(&match_set, &out_matches)?;
            if match_set.locations.is_empty() {
                return Err(Error::EmptyMatchSet);
            }
            log::info!("{} match locations", match_set.locations.len());
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate {
            scene_mask,
            matches,
            reference_box,
            patch_size,
            mode,
            out_report,
            overlay,
        } => {
            let scene = io::load_mask(&scene_mask)?;
            let text = std::fs::read_to_string(&matches).map_err(|e| Error::Io {
                path: matches.clone(),
                source: e,
            })?;
            let match_set: MatchSet =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let [x0, y0, w, h] = reference_box;
            let reference = Rect::new(x0, y0, w, h);
            let report = evaluate_matches(
                scene.width,
                scene.height,
                patch_size.unwrap_or(base.patch_size),
                &match_set,
                &reference,
                mode.unwrap_or(base.mode),
            )?;
            write_json(&report, &out_report)?;
            if let Some(path) = overlay {
                // mask rendered as grayscale so boxes have a visible base
                let mut gray = calcmatch::image::GrayImage::zeros(scene.width, scene.height);
                for (px, bit) in gray.pixels.iter_mut().zip(&scene.bits) {
                    *px = if *bit { 1.0 } else { 0.0 };
                }
                write_overlay(&gray, &report, &match_set, &reference, path)?;
            }
            print_report(&report);
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth {
            out_dir,
            seed,
            confuser,
            scene_w,
            scene_h,
            n_background_blobs,
            cluster_size,
            cluster_spread,
            blob_sigma_min,
            blob_sigma_max,
            blob_amplitude_min,
            blob_amplitude_max,
            planted_rotation,
            specimen_magnification,
            noise_sigma,
        } => {
            let d = SynthParams::default();
            let params = SynthParams {
                scene_w: scene_w.unwrap_or(d.scene_w),
                scene_h: scene_h.unwrap_or(d.scene_h),
                n_background_blobs: n_background_blobs.unwrap_or(d.n_background_blobs),
                cluster_size: cluster_size.unwrap_or(d.cluster_size),
                cluster_spread: cluster_spread.unwrap_or(d.cluster_spread),
                blob_sigma_range: (
                    blob_sigma_min.unwrap_or(d.blob_sigma_range.0),
                    blob_sigma_max.unwrap_or(d.blob_sigma_range.1),
                ),
                blob_amplitude_range: (
                    blob_amplitude_min.unwrap_or(d.blob_amplitude_range.0),
                    blob_amplitude_max.unwrap_or(d.blob_amplitude_range.1),
                ),
                planted_rotation: planted_rotation.unwrap_or(d.planted_rotation),
                specimen_magnification: specimen_magnification
                    .unwrap_or(d.specimen_magnification),
                noise_sigma: noise_sigma.unwrap_or(d.noise_sigma),
                seed: seed.unwrap_or(d.seed),
                confuser,
            };
            let case = generate_case(&params)?;
            write_case(&case, &out_dir)?;
            println!(
                "wrote scene.pgm, specimen.pgm, case.json, truth.json to {}",
                out_dir.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Pipeline {
            detect,
            scene_image,
            specimen_image,
            case_meta,
            reference_box,
            out_dir,
            overlay,
            eps,
            min_pts,
            pad,
            percentile,
            ncc,
            patch_size,
            mode,
            validate_only,
        } => {
            let mut config = base;
            detect.apply(&mut config.detect);
            if let Some(v) = scene_image {
                config.scene_image = v;
            }
            if let Some(v) = specimen_image {
                config.specimen_image = v;
            }
            if let Some(v) = case_meta {
                config.case_meta = v;
            }
            if let Some(v) = reference_box {
                config.reference_box = v;
            }
            if let Some(v) = out_dir {
                config.out_dir = v;
            }
            if overlay {
                config.overlay = true;
            }
            if let Some(v) = eps {
                config.eps = v;
            }
            if let Some(v) = min_pts {
                config.min_pts = v;
            }
            if let Some(v) = pad {
                config.pad = v;
            }
            if let Some(v) = percentile {
                config.percentile = v;
            }
            if ncc {
                config.ncc = true;
            }
            if let Some(v) = patch_size {
                config.patch_size = v;
            }
            if let Some(v) = mode {
                config.mode = v;
            }

            let violations = config_violations(&config);
            if validate_only {
                if violations.is_empty() {
                    println!("ok");
                    return Ok(ExitCode::SUCCESS);
                }
                for v in &violations {
                    println!("violation: {v}");
                }
                return Ok(ExitCode::from(1));
            }
            if !violations.is_empty() {
                return Err(Error::Config(violations.join("; ")));
            }
            let report = run_pipeline(&config, cli.threads)?;
            print_report(&report);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn stage_hint(err: &Error) -> Option<&'static str> {
    match err {
        Error::NoCluster => {
            Some("cluster stage found no cluster: raise --eps, lower --min-pts, or check specimen detections")
        }
        Error::EmptyMatchSet => {
            Some("match stage selected nothing: lower --percentile or inspect the score maps")
        }
        Error::DegenerateScaleRange { .. } => {
            Some("segment stage needs >= 3 scale levels: widen --sigma-min/--sigma-max or raise --scales-per-octave")
        }
        _ => None,
    }
}

fn main() -> ExitCode {
    // usage errors are exit code 1 by contract; help/version stay 0
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = u8::from(e.use_stderr());
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new()
        .filter_level(if cli.verbose {
            log::LevelFilter::Debug
        } else {
            log::LevelFilter::Warn
        })
        .init();
    if cli.threads > 0 {
        // best effort; run_pipeline builds its own scoped pool anyway
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if let Some(hint) = stage_hint(&e) {
                eprintln!("hint: {hint}");
            }
            ExitCode::from(exit_code_for(&e) as u8)
        }
    }
}
