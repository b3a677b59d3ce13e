//! End-to-end orchestration: segment both rasters with the same detection
//! parameters, cluster the specimen, cut/scale/rotate the template, match
//! against the scene mask, and evaluate on the patch grid.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cluster::{
    cluster_bbox, cut_template, dbscan, largest_cluster, rotation_variants, scale_template,
    Template,
};
use crate::detect::{blobs_to_mask, centroids, detect_blobs, DetectParams};
use crate::error::{Error, Result};
use crate::evaluate::{evaluate_matches, EvalReport, PredictionMode};
use crate::image::{BinaryMask, CaseMeta, GrayImage, PointSet, Rect};
use crate::matching::{
    cross_correlate_fft, normalized_score_map, select_matches, MatchSet, ScoreMap,
};

/// Algorithm knobs shared by the pipeline, the sweep, and the CLI.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineParams {
    pub detect: DetectParams,
    pub eps: f64,
    pub min_pts: usize,
    pub pad: u32,
    pub percentile: f64,
    pub ncc: bool,
    pub patch_size: u32,
    pub mode: PredictionMode,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            detect: DetectParams::default(),
            eps: 40.0,
            min_pts: 3,
            pad: 2,
            percentile: 99.0,
            ncc: false,
            patch_size: 300,
            mode: PredictionMode::AllSelected,
        }
    }
}

impl PipelineParams {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if let Err(e) = self.detect.validate() {
            v.push(e.to_string());
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            v.push(format!("eps: must be > 0, got {}", self.eps));
        }
        if self.min_pts < 1 {
            v.push("min_pts: must be >= 1".into());
        }
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            v.push(format!("percentile: must be in (0, 100), got {}", self.percentile));
        }
        if self.patch_size < 1 {
            v.push("patch_size: must be >= 1".into());
        }
        v
    }
}

/// Wiring for a full pipeline run: input paths, the reference box, output
/// directory, and every algorithm parameter. Strict schema: unknown JSON
/// keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub scene_image: PathBuf,
    pub specimen_image: PathBuf,
    pub case_meta: PathBuf,
    /// x0, y0, w, h in scene pixels.
    pub reference_box: [u32; 4],
    pub out_dir: PathBuf,
    /// Also write a diagnostic overlay (overlay.ppm).
    pub overlay: bool,
    pub detect: DetectParams,
    pub eps: f64,
    pub min_pts: usize,
    pub pad: u32,
    pub percentile: f64,
    pub ncc: bool,
    pub patch_size: u32,
    pub mode: PredictionMode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let p = PipelineParams::default();
        Self {
            scene_image: PathBuf::new(),
            specimen_image: PathBuf::new(),
            case_meta: PathBuf::new(),
            reference_box: [0, 0, 1, 1],
            out_dir: PathBuf::new(),
            overlay: false,
            detect: p.detect,
            eps: p.eps,
            min_pts: p.min_pts,
            pad: p.pad,
            percentile: p.percentile,
            ncc: p.ncc,
            patch_size: p.patch_size,
            mode: p.mode,
        }
    }
}

impl PipelineConfig {
    pub fn reference_rect(&self) -> Rect {
        let [x0, y0, w, h] = self.reference_box;
        Rect::new(x0, y0, w, h)
    }

    pub fn params(&self) -> PipelineParams {
        PipelineParams {
            detect: self.detect.clone(),
            eps: self.eps,
            min_pts: self.min_pts,
            pad: self.pad,
            percentile: self.percentile,
            ncc: self.ncc,
            patch_size: self.patch_size,
            mode: self.mode,
        }
    }
}

/// Validates a config file. Returns the list of violations (empty = ok);
/// errors only when the file cannot be read or is not JSON at all.
pub fn validate_config(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("unparseable JSON: {e}")))?;
    let config: PipelineConfig = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => return Ok(vec![e.to_string()]),
    };
    Ok(config_violations(&config))
}

/// Parameter-bound and input-path violations for an already-parsed config.
pub fn config_violations(config: &PipelineConfig) -> Vec<String> {
    let mut violations = config.params().violations();
    let [_, _, w, h] = config.reference_box;
    if w < 1 || h < 1 {
        violations.push("reference_box: w and h must be >= 1".into());
    }
    for (name, p) in [
        ("scene_image", &config.scene_image),
        ("specimen_image", &config.specimen_image),
        ("case_meta", &config.case_meta),
    ] {
        if !p.exists() {
            violations.push(format!("{name}: path {} does not exist", p.display()));
        }
    }
    violations
}

/// Loads and validates a config, erroring on any violation.
pub fn load_config(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let path = path.as_ref();
    let violations = validate_config(path)?;
    if !violations.is_empty() {
        return Err(Error::Config(violations.join("; ")));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))
}

/// Stage 1: segment bright objects, returning the mask and its centroids.
pub fn stage_segment(image: &GrayImage, detect: &DetectParams) -> Result<(BinaryMask, PointSet)> {
    let blobs = detect_blobs(image, detect)?;
    let mask = blobs_to_mask(&blobs, image.width, image.height);
    let points = centroids(&mask);
    Ok((mask, points))
}

/// Stage 2: cluster specimen centroids and build the four scaled rotation
/// variants of the largest-cluster template.
pub fn stage_cluster(
    mask: &BinaryMask,
    points: &PointSet,
    meta: &CaseMeta,
    eps: f64,
    min_pts: usize,
    pad: u32,
) -> Result<Vec<Template>> {
    let labeling = dbscan(points, eps, min_pts)?;
    let (_, members) = largest_cluster(&labeling, points)?;
    let rect = cluster_bbox(&members, mask, pad);
    let template = cut_template(mask, rect)?;
    let scaled = scale_template(&template, meta)?;
    Ok(rotation_variants(&scaled))
}

/// Stage 3: correlate every template variant against the scene mask and
/// select matches by percentile.
pub fn stage_match(
    scene_mask: &BinaryMask,
    templates: &[Template],
    percentile: f64,
    ncc: bool,
) -> Result<(Vec<ScoreMap>, MatchSet)> {
    let mut maps = Vec::with_capacity(templates.len());
    for t in templates {
        let raw = cross_correlate_fft(t, scene_mask)?;
        maps.push(if ncc {
            normalized_score_map(&raw, t, scene_mask)
        } else {
            raw
        });
    }
    let match_set = select_matches(&maps, percentile)?;
    Ok((maps, match_set))
}

/// Runs segment (scene + specimen with the same parameters), cluster, match,
/// and evaluate entirely in memory. Used by the sweep and the tests.
pub fn run_case_in_memory(
    scene: &GrayImage,
    specimen: &GrayImage,
    meta: &CaseMeta,
    reference_box: &Rect,
    params: &PipelineParams,
) -> Result<EvalReport> {
    let (scene_mask, _) = stage_segment(scene, &params.detect)?;
    let (specimen_mask, specimen_points) = stage_segment(specimen, &params.detect)?;
    let templates = stage_cluster(
        &specimen_mask,
        &specimen_points,
        meta,
        params.eps,
        params.min_pts,
        params.pad,
    )?;
    let (_, match_set) = stage_match(&scene_mask, &templates, params.percentile, params.ncc)?;
    if match_set.locations.is_empty() {
        return Err(Error::EmptyMatchSet);
    }
    evaluate_matches(
        scene.width,
        scene.height,
        params.patch_size,
        &match_set,
        reference_box,
        params.mode,
    )
}

fn rotation_suffix(deg: u16) -> String {
    format!("{deg:03}")
}

/// Runs the full pipeline from a config, writing every stage artifact into
/// `out_dir`. `threads` bounds the rayon pool (0 = auto); results are
/// independent of the thread count.
pub fn run_pipeline(config: &PipelineConfig, threads: usize) -> Result<EvalReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_pipeline_inner(config))
}

fn run_pipeline_inner(config: &PipelineConfig) -> Result<EvalReport> {
    let params = config.params();
    let params = &params;
    let dir = &config.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.clone(),
        source: e,
    })?;

    let scene = crate::io::load_gray_image(&config.scene_image)?;
    let specimen = crate::io::load_gray_image(&config.specimen_image)?;
    let meta = crate::io::load_case_meta(&config.case_meta)?;

    let (scene_mask, scene_points) = stage_segment(&scene, &params.detect)?;
    crate::io::save_mask(&scene_mask, dir.join("scene_mask.pgm"))?;
    crate::io::save_points(&scene_points, dir.join("scene_points.csv"))?;

    let (specimen_mask, specimen_points) = stage_segment(&specimen, &params.detect)?;
    crate::io::save_mask(&specimen_mask, dir.join("specimen_mask.pgm"))?;
    crate::io::save_points(&specimen_points, dir.join("specimen_points.csv"))?;

    let templates = stage_cluster(
        &specimen_mask,
        &specimen_points,
        &meta,
        params.eps,
        params.min_pts,
        params.pad,
    )?;
    for t in &templates {
        let name = format!("tpl_{}.pgm", rotation_suffix(t.rotation_deg));
        crate::io::save_mask(&t.bits, dir.join(name))?;
    }

    let (maps, match_set) = stage_match(&scene_mask, &templates, params.percentile, params.ncc)?;
    for map in &maps {
        let name = format!("scores_{}.scoremap", rotation_suffix(map.template_rotation));
        crate::io::save_score_map(map, dir.join(name))?;
    }
    let matches_json =
        serde_json::to_string_pretty(&match_set).expect("MatchSet serializes");
    std::fs::write(dir.join("matches.json"), matches_json).map_err(|e| Error::Io {
        path: dir.join("matches.json"),
        source: e,
    })?;
    if match_set.locations.is_empty() {
        return Err(Error::EmptyMatchSet);
    }

    let reference = config.reference_rect();
    let report = evaluate_matches(
        scene.width,
        scene.height,
        params.patch_size,
        &match_set,
        &reference,
        params.mode,
    )?;
    let report_json = serde_json::to_string_pretty(&report).expect("EvalReport serializes");
    std::fs::write(dir.join("report.json"), report_json).map_err(|e| Error::Io {
        path: dir.join("report.json"),
        source: e,
    })?;

    if config.overlay {
        write_overlay(&scene, &report, &match_set, &reference, dir.join("overlay.ppm"))?;
    }
    Ok(report)
}

/// Diagnostic overlay: reference box in green, predicted patches and the
/// best-match box in red.
pub fn write_overlay(
    base: &GrayImage,
    report: &EvalReport,
    match_set: &MatchSet,
    reference: &Rect,
    path: impl AsRef<Path>,
) -> Result<()> {
    let grid = crate::evaluate::build_grid(base.width, base.height, report.patch_size);
    let mut boxes = vec![(*reference, crate::io::BoxRole::Reference)];
    for &idx in &report.predicted {
        boxes.push((grid.patches[idx], crate::io::BoxRole::Predicted));
    }
    if let Ok(best) = crate::matching::best_match(match_set) {
        let half = (report.patch_size / 10).max(4);
        let x0 = best.x.saturating_sub(half);
        let y0 = best.y.saturating_sub(half);
        let w = (2 * half).min(base.width - x0);
        let h = (2 * half).min(base.height - y0);
        boxes.push((Rect::new(x0, y0, w, h), crate::io::BoxRole::Predicted));
    }
    crate::io::render_overlay(base, &boxes, path)
}

/// Maps pipeline errors onto the CLI exit code contract:
/// 2 = no cluster found, 3 = empty match selection, 1 = everything else.
pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::NoCluster => 2,
        Error::EmptyMatchSet => 3,
        _ => 1,
    }
}
