//! Template matching: zero-padded cross-correlation score maps (direct and
//! FFT-accelerated), percentile-based match selection, and the optional
//! normalized-score mode.
//!
//! The score at map sample (x, y) is the inner product of the template with
//! the padded scene window whose top-left sits at padded coordinate (x, y).
//! Padding by half the template size per side makes the map index coincide
//! with the unpadded scene coordinate under the template center.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::cluster::Template;
use crate::error::{Error, Result};
use crate::image::BinaryMask;

/// Cross-correlation scores for one template variant. Dims equal the
/// unpadded scene dims.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    pub width: u32,
    pub height: u32,
    pub scores: Vec<f32>,
    pub template_rotation: u16,
}

impl ScoreMap {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.scores[y as usize * self.width as usize + x as usize]
    }
}

/// A selected match location in unpadded scene coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchLocation {
    pub x: u32,
    pub y: u32,
    pub score: f32,
    pub rotation_deg: u16,
}

/// Per-map threshold actually applied during selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapThreshold {
    pub rotation_deg: u16,
    pub threshold_value: f64,
    /// True when all scores in the map were equal and nothing was selected.
    pub degenerate: bool,
}

/// Union of per-map selections, sorted by descending score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSet {
    pub locations: Vec<MatchLocation>,
    pub percentile_used: f64,
    pub thresholds: Vec<MapThreshold>,
}

/// Zero-pads the scene by floor(template_dim / 2) on each side.
pub fn pad_scene(mask: &BinaryMask, tw: u32, th: u32) -> BinaryMask {
    let px = tw / 2;
    let py = th / 2;
    let mut out = BinaryMask::zeros(mask.width + 2 * px, mask.height + 2 * py);
    for y in 0..mask.height {
        for x in 0..mask.width {
            if mask.get(x, y) {
                out.set(x + px, y + py, true);
            }
        }
    }
    out
}

fn check_fit(template: &Template, padded: &BinaryMask) -> Result<()> {
    let (tw, th) = (template.bits.width, template.bits.height);
    if tw > padded.width || th > padded.height {
        return Err(Error::TemplateTooLarge {
            tw,
            th,
            sw: padded.width,
            sh: padded.height,
        });
    }
    Ok(())
}

/// Direct-summation cross-correlation. Exploits sparsity: each (scene bit,
/// template bit) pair contributes one count.
pub fn cross_correlate_direct(template: &Template, scene: &BinaryMask) -> Result<ScoreMap> {
    let (tw, th) = (template.bits.width, template.bits.height);
    let padded = pad_scene(scene, tw, th);
    check_fit(template, &padded)?;
    let (w, h) = (scene.width as usize, scene.height as usize);
    let mut scores = vec![0f32; w * h];

    let template_bits: Vec<(i64, i64)> = (0..th)
        .flat_map(|y| (0..tw).map(move |x| (x, y)))
        .filter(|&(x, y)| template.bits.get(x, y))
        .map(|(x, y)| (x as i64, y as i64))
        .collect();
    for by in 0..padded.height {
        for bx in 0..padded.width {
            if !padded.get(bx, by) {
                continue;
            }
            for &(tx, ty) in &template_bits {
                let x = bx as i64 - tx;
                let y = by as i64 - ty;
                if x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h {
                    scores[y as usize * w + x as usize] += 1.0;
                }
            }
        }
    }
    Ok(ScoreMap {
        width: scene.width,
        height: scene.height,
        scores,
        template_rotation: template.rotation_deg,
    })
}

/// Smallest integer >= n with no prime factors other than 2, 3, 5.
fn next_fast_size(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// In-place 2D FFT over a row-major `h x w` complex buffer; rows in
/// parallel, then columns via transpose.
fn fft_2d(buf: &mut [Complex<f64>], w: usize, h: usize, direction: FftDirection) {
    let mut planner = FftPlanner::new();
    let row_fft: Arc<dyn Fft<f64>> = planner.plan_fft(w, direction);
    buf.par_chunks_mut(w).for_each(|row| row_fft.process(row));

    let mut t = vec![Complex::default(); w * h];
    for y in 0..h {
        for x in 0..w {
            t[x * h + y] = buf[y * w + x];
        }
    }
    let col_fft: Arc<dyn Fft<f64>> = planner.plan_fft(h, direction);
    t.par_chunks_mut(h).for_each(|col| col_fft.process(col));
    for x in 0..w {
        for y in 0..h {
            buf[y * w + x] = t[x * h + y];
        }
    }
}

/// FFT-accelerated cross-correlation; sample-for-sample equivalent to
/// [`cross_correlate_direct`]. Binary inputs make every true score an
/// integer, so the result is rounded to the nearest integer.
pub fn cross_correlate_fft(template: &Template, scene: &BinaryMask) -> Result<ScoreMap> {
    let (tw, th) = (template.bits.width as usize, template.bits.height as usize);
    let padded = pad_scene(scene, template.bits.width, template.bits.height);
    check_fit(template, &padded)?;
    let (pw, ph) = (padded.width as usize, padded.height as usize);
    let fw = next_fast_size(pw);
    let fh = next_fast_size(ph);
    let n = fw * fh;

    let mut scene_f = vec![Complex::new(0.0, 0.0); n];
    for y in 0..ph {
        for x in 0..pw {
            if padded.get(x as u32, y as u32) {
                scene_f[y * fw + x] = Complex::new(1.0, 0.0);
            }
        }
    }
    let mut tmpl_f = vec![Complex::new(0.0, 0.0); n];
    for y in 0..th {
        for x in 0..tw {
            if template.bits.get(x as u32, y as u32) {
                tmpl_f[y * fw + x] = Complex::new(1.0, 0.0);
            }
        }
    }

    fft_2d(&mut scene_f, fw, fh, FftDirection::Forward);
    fft_2d(&mut tmpl_f, fw, fh, FftDirection::Forward);
    // S * conj(T) gives f(x, y) = sum t(x', y') s(x + x', y + y')
    for (s, t) in scene_f.iter_mut().zip(&tmpl_f) {
        *s *= t.conj();
    }
    fft_2d(&mut scene_f, fw, fh, FftDirection::Inverse);

    let (w, h) = (scene.width as usize, scene.height as usize);
    let norm = 1.0 / n as f64;
    let mut scores = vec![0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            scores[y * w + x] = (scene_f[y * fw + x].re * norm).round().max(0.0) as f32;
        }
    }
    Ok(ScoreMap {
        width: scene.width,
        height: scene.height,
        scores,
        template_rotation: template.rotation_deg,
    })
}

/// Divides each raw score by `sqrt(template_bits * window_bits)`, the
/// normalized cross-correlation of binary rasters. Zero-bit windows score 0.
pub fn normalized_score_map(map: &ScoreMap, template: &Template, scene: &BinaryMask) -> ScoreMap {
    let padded = pad_scene(scene, template.bits.width, template.bits.height);
    let (pw, ph) = (padded.width as usize, padded.height as usize);
    // integral image of padded bits, (pw+1) x (ph+1)
    let mut integral = vec![0u64; (pw + 1) * (ph + 1)];
    for y in 0..ph {
        for x in 0..pw {
            let bit = padded.get(x as u32, y as u32) as u64;
            integral[(y + 1) * (pw + 1) + (x + 1)] = bit
                + integral[y * (pw + 1) + (x + 1)]
                + integral[(y + 1) * (pw + 1) + x]
                - integral[y * (pw + 1) + x];
        }
    }
    let window_sum = |x: usize, y: usize, w: usize, h: usize| -> u64 {
        integral[(y + h) * (pw + 1) + (x + w)] + integral[y * (pw + 1) + x]
            - integral[y * (pw + 1) + (x + w)]
            - integral[(y + h) * (pw + 1) + x]
    };
    let n_t = template.set_bit_count() as f64;
    let (tw, th) = (template.bits.width as usize, template.bits.height as usize);
    let scores = map
        .scores
        .iter()
        .enumerate()
        .map(|(i, &raw)| {
            let x = i % map.width as usize;
            let y = i / map.width as usize;
            let n_w = window_sum(x, y, tw, th) as f64;
            if n_w == 0.0 || n_t == 0.0 {
                0.0
            } else {
                (raw as f64 / (n_t * n_w).sqrt()) as f32
            }
        })
        .collect();
    ScoreMap {
        width: map.width,
        height: map.height,
        scores,
        template_rotation: map.template_rotation,
    }
}

/// Empirical percentile with linear interpolation between order statistics
/// (inclusive), matching the usual "linear" definition.
pub fn percentile(values: &[f32], p: f64) -> f64 {
    assert!(!values.is_empty());
    let mut sorted: Vec<f64> = values.iter().map(|&v| v as f64).collect();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let frac = rank - lo as f64;
    if lo + 1 < sorted.len() {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    } else {
        sorted[lo]
    }
}

/// Selects, per map, every location whose score strictly exceeds that map's
/// percentile threshold; the union is sorted by descending score (ties by
/// rotation, then y, then x). A constant map selects nothing and warns.
pub fn select_matches(maps: &[ScoreMap], pct: f64) -> Result<MatchSet> {
    if maps.is_empty() {
        return Err(Error::InvalidParam {
            name: "maps",
            reason: "at least one score map required".into(),
        });
    }
    if !(pct > 0.0 && pct < 100.0) {
        return Err(Error::InvalidParam {
            name: "percentile",
            reason: format!("must be in (0, 100), got {pct}"),
        });
    }
    let dims = (maps[0].width, maps[0].height);
    let mut locations = Vec::new();
    let mut thresholds = Vec::new();
    for map in maps {
        if (map.width, map.height) != dims {
            return Err(Error::InvalidParam {
                name: "maps",
                reason: "score maps must share dimensions".into(),
            });
        }
        let threshold = percentile(&map.scores, pct);
        let mut degenerate = true;
        for (i, &s) in map.scores.iter().enumerate() {
            if (s as f64) > threshold {
                degenerate = false;
                locations.push(MatchLocation {
                    x: (i % map.width as usize) as u32,
                    y: (i / map.width as usize) as u32,
                    score: s,
                    rotation_deg: map.template_rotation,
                });
            }
        }
        if degenerate {
            log::warn!(
                "score map (rotation {}) is degenerate: no score exceeds the {}th percentile; nothing selected",
                map.template_rotation,
                pct
            );
        }
        thresholds.push(MapThreshold {
            rotation_deg: map.template_rotation,
            threshold_value: threshold,
            degenerate,
        });
    }
    locations.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap()
            .then(a.rotation_deg.cmp(&b.rotation_deg))
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
    });
    Ok(MatchSet {
        locations,
        percentile_used: pct,
        thresholds,
    })
}

/// The single top-scoring location; ties broken by rotation order
/// 0, 90, 180, 270, then y, then x.
pub fn best_match(match_set: &MatchSet) -> Result<MatchLocation> {
    match_set
        .locations
        .iter()
        .copied()
        .min_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.rotation_deg.cmp(&b.rotation_deg))
                .then(a.y.cmp(&b.y))
                .then(a.x.cmp(&b.x))
        })
        .ok_or(Error::EmptyMatchSet)
}
