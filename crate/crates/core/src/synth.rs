//! Synthetic scene/specimen pairs with known ground truth, plus a parameter
//! sweep that runs the full pipeline per case and tabulates the results.
//!
//! Generation is fully deterministic: a fixed-algorithm RNG (ChaCha8) seeded
//! from `SynthParams::seed` makes case files bit-identical across platforms.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{CaseMeta, GrayImage, PointSet, Rect};
use crate::pipeline::{run_case_in_memory, PipelineParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthParams {
    pub scene_w: u32,
    pub scene_h: u32,
    pub n_background_blobs: u32,
    pub cluster_size: u32,
    pub cluster_spread: f64,
    pub blob_sigma_range: (f64, f64),
    pub blob_amplitude_range: (f64, f64),
    pub planted_rotation: u16,
    pub specimen_magnification: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Plants a second, identical cluster to provoke ambiguous matches.
    pub confuser: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            scene_w: 900,
            scene_h: 700,
            n_background_blobs: 20,
            cluster_size: 6,
            cluster_spread: 20.0,
            blob_sigma_range: (1.5, 2.5),
            blob_amplitude_range: (0.5, 0.9),
            planted_rotation: 0,
            specimen_magnification: 1.0,
            noise_sigma: 0.01,
            seed: 0,
            confuser: false,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParam { name, reason });
        if self.cluster_size < 3 {
            return bad("cluster_size", "must be >= 3".into());
        }
        #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
        if !(self.cluster_spread > 0.0) {
            return bad("cluster_spread", "must be > 0".into());
        }
        if self.blob_sigma_range.0 <= 0.0 || self.blob_sigma_range.0 > self.blob_sigma_range.1 {
            return bad("blob_sigma_range", "must be ordered and positive".into());
        }
        let (a0, a1) = self.blob_amplitude_range;
        if !(a0 > 0.0 && a0 <= a1 && a1 <= 1.0) {
            return bad("blob_amplitude_range", "must be ordered and within (0, 1]".into());
        }
        if ![0u16, 90, 180, 270].contains(&self.planted_rotation) {
            return bad("planted_rotation", "must be one of 0, 90, 180, 270".into());
        }
        if !(self.specimen_magnification > 0.0 && self.specimen_magnification.is_finite()) {
            return bad("specimen_magnification", "must be > 0".into());
        }
        if self.noise_sigma < 0.0 {
            return bad("noise_sigma", "must be >= 0".into());
        }
        Ok(())
    }
}

/// Everything planted in a generated case.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub cluster_centroids_scene: Vec<(f64, f64)>,
    pub reference_box: Rect,
    pub planted_rotation: u16,
    pub planted_offset: (u32, u32),
}

#[derive(Debug, Clone)]
pub struct SynthCase {
    pub scene: GrayImage,
    pub specimen: GrayImage,
    pub meta: CaseMeta,
    pub truth: GroundTruth,
}

/// Adds `amplitude * exp(-r^2 / (2 sigma^2))` around (cx, cy), clamping to 1.
pub fn render_gaussian_spot(img: &mut GrayImage, cx: f64, cy: f64, sigma: f64, amplitude: f64) {
    let radius = (4.0 * sigma).ceil();
    let x_lo = ((cx - radius).floor().max(0.0)) as u32;
    let x_hi = ((cx + radius).ceil().min(img.width as f64 - 1.0)) as u32;
    let y_lo = ((cy - radius).floor().max(0.0)) as u32;
    let y_hi = ((cy + radius).ceil().min(img.height as f64 - 1.0)) as u32;
    let inv = -0.5 / (sigma * sigma);
    for y in y_lo..=y_hi {
        for x in x_lo..=x_hi {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let v = amplitude * ((dx * dx + dy * dy) * inv).exp();
            let new = (img.get(x, y) as f64 + v).min(1.0) as f32;
            img.set(x, y, new);
        }
    }
}

/// Rotates an offset by `deg` counter-clockwise in raster coordinates
/// (x right, y down), the same direction as the template raster rotation.
fn rotate_offset(deg: u16, d: (f64, f64)) -> (f64, f64) {
    match deg {
        0 => d,
        90 => (d.1, -d.0),
        180 => (-d.0, -d.1),
        270 => (-d.1, d.0),
        _ => unreachable!("rotation validated"),
    }
}

fn inverse_rotation(deg: u16) -> u16 {
    (360 - deg) % 360
}

/// Smallest integer rect containing the points (floor/ceil), clipped to the
/// raster bounds.
fn bounding_rect(points: &[(f64, f64)], w: u32, h: u32) -> Rect {
    let min_x = points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let min_y = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let max_x = points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let max_y = points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let x0 = (min_x.floor().max(0.0)) as u32;
    let y0 = (min_y.floor().max(0.0)) as u32;
    let x1 = ((max_x.ceil() as u32) + 1).min(w);
    let y1 = ((max_y.ceil() as u32) + 1).min(h);
    Rect::new(x0, y0, x1 - x0, y1 - y0)
}

struct BlobSpec {
    offset: (f64, f64),
    sigma: f64,
    amplitude: f64,
}

/// Generates one deterministic scene/specimen pair with ground truth.
pub fn generate_case(params: &SynthParams) -> Result<SynthCase> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let (w, h) = (params.scene_w, params.scene_h);
    let sigma_max = params.blob_sigma_range.1;
    let margin = params.cluster_spread + 4.0 * sigma_max + 8.0;
    if 2.0 * margin >= w as f64 || 2.0 * margin >= h as f64 {
        return Err(Error::ClusterDoesNotFit);
    }
    let rand_in = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| rng.gen_range(lo..=hi);

    let cluster_center = (
        rand_in(&mut rng, margin, w as f64 - margin),
        rand_in(&mut rng, margin, h as f64 - margin),
    );
    let mut blobs = Vec::with_capacity(params.cluster_size as usize);
    for _ in 0..params.cluster_size {
        // uniform in a disc of radius cluster_spread
        let offset = loop {
            let dx = rand_in(&mut rng, -params.cluster_spread, params.cluster_spread);
            let dy = rand_in(&mut rng, -params.cluster_spread, params.cluster_spread);
            if dx * dx + dy * dy <= params.cluster_spread * params.cluster_spread {
                break (dx, dy);
            }
        };
        blobs.push(BlobSpec {
            offset,
            sigma: rand_in(&mut rng, params.blob_sigma_range.0, params.blob_sigma_range.1),
            amplitude: rand_in(
                &mut rng,
                params.blob_amplitude_range.0,
                params.blob_amplitude_range.1,
            ),
        });
    }

    let clear_of_cluster = |p: (f64, f64), centers: &[(f64, f64)]| {
        centers.iter().all(|c| {
            let (dx, dy) = (p.0 - c.0, p.1 - c.1);
            (dx * dx + dy * dy).sqrt() > 3.0 * params.cluster_spread
        })
    };

    let mut planted_centers = vec![cluster_center];
    let confuser_center = if params.confuser {
        let mut attempts = 0;
        let c = loop {
            let p = (
                rand_in(&mut rng, margin, w as f64 - margin),
                rand_in(&mut rng, margin, h as f64 - margin),
            );
            if clear_of_cluster(p, &planted_centers) {
                break p;
            }
            attempts += 1;
            if attempts > 10_000 {
                return Err(Error::ClusterDoesNotFit);
            }
        };
        planted_centers.push(c);
        Some(c)
    } else {
        None
    };

    let small_margin = 4.0 * sigma_max + 2.0;
    let mut distractors = Vec::with_capacity(params.n_background_blobs as usize);
    let mut attempts = 0;
    while distractors.len() < params.n_background_blobs as usize {
        let p = (
            rand_in(&mut rng, small_margin, w as f64 - small_margin),
            rand_in(&mut rng, small_margin, h as f64 - small_margin),
        );
        if clear_of_cluster(p, &planted_centers) {
            distractors.push((
                p,
                rand_in(&mut rng, params.blob_sigma_range.0, params.blob_sigma_range.1),
                rand_in(
                    &mut rng,
                    params.blob_amplitude_range.0,
                    params.blob_amplitude_range.1,
                ),
            ));
        }
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::ClusterDoesNotFit);
        }
    }

    let mut scene = GrayImage::zeros(w, h);
    let mut centroids = Vec::with_capacity(blobs.len());
    for b in &blobs {
        let (cx, cy) = (cluster_center.0 + b.offset.0, cluster_center.1 + b.offset.1);
        render_gaussian_spot(&mut scene, cx, cy, b.sigma, b.amplitude);
        centroids.push((cx, cy));
    }
    if let Some(cc) = confuser_center {
        for b in &blobs {
            render_gaussian_spot(&mut scene, cc.0 + b.offset.0, cc.1 + b.offset.1, b.sigma, b.amplitude);
        }
    }
    for &(p, sigma, amplitude) in &distractors {
        render_gaussian_spot(&mut scene, p.0, p.1, sigma, amplitude);
    }
    if params.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, params.noise_sigma).unwrap();
        for v in scene.pixels.iter_mut() {
            *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }

    // Specimen: the cluster alone, rotated by the inverse of the planted
    // rotation and rendered at specimen pixel scale (scene * magnification),
    // so the pipeline must undo both.
    let mag = params.specimen_magnification;
    let inv = inverse_rotation(params.planted_rotation);
    let spec_offsets: Vec<(f64, f64)> = blobs
        .iter()
        .map(|b| {
            let r = rotate_offset(inv, b.offset);
            (r.0 * mag, r.1 * mag)
        })
        .collect();
    let extent = spec_offsets
        .iter()
        .map(|o| o.0.abs().max(o.1.abs()))
        .fold(0.0, f64::max);
    let pad = 4.0 * sigma_max * mag + 8.0;
    let half = extent + pad;
    let side = (2.0 * half).ceil() as u32 + 1;
    let mut specimen = GrayImage::zeros(side, side);
    let spec_center = (side as f64 - 1.0) / 2.0;
    for (o, b) in spec_offsets.iter().zip(&blobs) {
        render_gaussian_spot(
            &mut specimen,
            spec_center + o.0,
            spec_center + o.1,
            b.sigma * mag,
            b.amplitude,
        );
    }

    let reference_box = bounding_rect(&centroids, w, h);
    Ok(SynthCase {
        scene,
        specimen,
        meta: CaseMeta {
            case_id: format!("synth-{}", params.seed),
            magnification_factor_specimen: mag,
            magnification_factor_scene: 1.0,
        },
        truth: GroundTruth {
            cluster_centroids_scene: centroids,
            reference_box,
            planted_rotation: params.planted_rotation,
            planted_offset: (reference_box.x0, reference_box.y0),
        },
    })
}

/// Writes scene.pgm, specimen.pgm, case.json, truth.json into `out_dir`.
pub fn write_case(case: &SynthCase, out_dir: impl AsRef<Path>) -> Result<()> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    crate::io::save_gray_image(&case.scene, dir.join("scene.pgm"), 65535)?;
    crate::io::save_gray_image(&case.specimen, dir.join("specimen.pgm"), 65535)?;
    crate::io::save_case_meta(&case.meta, dir.join("case.json"))?;
    let truth = serde_json::to_string_pretty(&case.truth).expect("GroundTruth serializes");
    std::fs::write(dir.join("truth.json"), truth).map_err(|e| Error::Io {
        path: dir.join("truth.json"),
        source: e,
    })
}

/// One sweep result row.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub index: usize,
    pub seed: u64,
    pub rotation: u16,
    pub magnification: f64,
    pub distractors: u32,
    pub confuser: bool,
    pub status: String,
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub metrics: Option<crate::evaluate::EvalMetrics>,
}

const SWEEP_HEADER: &str =
    "index,seed,rotation,magnification,distractors,confuser,status,tp,fp,fn,tn,accuracy,precision,recall,specificity,npv";

/// Runs generate_case + the full in-memory pipeline for every grid cell and
/// writes `sweep.csv` into `out_dir`. Per-case failures become rows flagged
/// `failed:<stage>`; the sweep itself never aborts.
pub fn sweep(
    grid: &[SynthParams],
    pipeline: &PipelineParams,
    out_dir: impl AsRef<Path>,
) -> Result<Vec<SweepRow>> {
    let dir = out_dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    let mut rows = Vec::with_capacity(grid.len());
    for (index, params) in grid.iter().enumerate() {
        let mut row = SweepRow {
            index,
            seed: params.seed,
            rotation: params.planted_rotation,
            magnification: params.specimen_magnification,
            distractors: params.n_background_blobs,
            confuser: params.confuser,
            status: "ok".into(),
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 0,
            metrics: None,
        };
        match generate_case(params) {
            Err(e) => row.status = format!("failed:generate ({e})"),
            Ok(case) => match run_case_in_memory(
                &case.scene,
                &case.specimen,
                &case.meta,
                &case.truth.reference_box,
                pipeline,
            ) {
                Err(e) => row.status = format!("failed:pipeline ({e})"),
                Ok(report) => {
                    row.tp = report.counts.tp;
                    row.fp = report.counts.fp;
                    row.fn_ = report.counts.fn_;
                    row.tn = report.counts.tn;
                    row.metrics = Some(report.metrics);
                }
            },
        }
        rows.push(row);
    }

    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for r in &rows {
        let m = |f: fn(&crate::evaluate::EvalMetrics) -> Option<f64>| {
            r.metrics
                .as_ref()
                .and_then(f)
                .map(|v| format!("{v:.4}"))
                .unwrap_or_else(|| "n/a".into())
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.index,
            r.seed,
            r.rotation,
            r.magnification,
            r.distractors,
            r.confuser,
            r.status.replace(',', ";"),
            r.tp,
            r.fp,
            r.fn_,
            r.tn,
            m(|m| m.accuracy),
            m(|m| m.precision),
            m(|m| m.recall),
            m(|m| m.specificity),
            m(|m| m.npv),
        ));
    }
    let path = dir.join("sweep.csv");
    std::fs::write(&path, csv).map_err(|e| Error::Io { path, source: e })?;
    Ok(rows)
}

/// Point list accessor used by tests and the CLI.
pub fn truth_points(truth: &GroundTruth) -> PointSet {
    PointSet::new(truth.cluster_centroids_scene.clone())
}
