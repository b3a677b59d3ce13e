//! Bright point-like object segmentation: multi-scale difference-of-Gaussians
//! with a Hessian curvature-ratio test, plus mask rasterization and
//! connected-component centroids.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{BinaryMask, GrayImage, PointSet};

/// Detection parameters. Scale sampling is a geometric progression
/// `sigma_min * 2^(k / scales_per_octave)` up to `sigma_max`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectParams {
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub scales_per_octave: u32,
    pub dog_threshold: f32,
    /// Max allowed ratio of principal-curvature magnitudes; round blobs pass,
    /// ridges and edges fail.
    pub hessian_ratio_max: f64,
    pub border_margin: u32,
}

impl Default for DetectParams {
    fn default() -> Self {
        Self {
            sigma_min: 1.0,
            sigma_max: 4.0,
            scales_per_octave: 3,
            dog_threshold: 0.01,
            hessian_ratio_max: 5.0,
            border_margin: 4,
        }
    }
}

impl DetectParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: String| Err(Error::InvalidParam { name, reason });
        if !(self.sigma_min.is_finite() && self.sigma_min > 0.0) {
            return bad("sigma_min", format!("must be > 0, got {}", self.sigma_min));
        }
        if !(self.sigma_max.is_finite() && self.sigma_max > self.sigma_min) {
            return bad(
                "sigma_max",
                format!("must be > sigma_min ({}), got {}", self.sigma_min, self.sigma_max),
            );
        }
        if self.scales_per_octave < 1 {
            return bad("scales_per_octave", "must be >= 1".into());
        }
        if !(self.dog_threshold.is_finite() && self.dog_threshold > 0.0) {
            return bad("dog_threshold", format!("must be > 0, got {}", self.dog_threshold));
        }
        if !(self.hessian_ratio_max.is_finite() && self.hessian_ratio_max >= 1.0) {
            return bad(
                "hessian_ratio_max",
                format!("must be >= 1, got {}", self.hessian_ratio_max),
            );
        }
        Ok(())
    }
}

/// A detected bright blob.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    /// Sub-pixel (x, y) center.
    pub center: (f64, f64),
    /// Scale of the peak response, pixels.
    pub sigma: f64,
    /// DoG value at the peak.
    pub response: f32,
}

/// A raster of signed responses, same layout as [`GrayImage`] but without
/// the `[0, 1]` range restriction.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMap {
    pub width: u32,
    pub height: u32,
    pub values: Vec<f32>,
}

impl ResponseMap {
    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f32 {
        self.values[y as usize * self.width as usize + x as usize]
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f32> {
    let radius = (3.0 * sigma).ceil() as i64;
    let inv = -0.5 / (sigma * sigma);
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| ((i * i) as f64 * inv).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in k.iter_mut() {
        *v /= sum;
    }
    k.into_iter().map(|v| v as f32).collect()
}

/// Separable 1D convolution along rows then columns, edge-replicated borders.
fn blur_plane(width: usize, height: usize, src: &[f32], kernel: &[f32]) -> Vec<f32> {
    let radius = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0f32; src.len()];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        let out = &mut tmp[y * width..(y + 1) * width];
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sx = (x as i64 + ki as i64 - radius).clamp(0, width as i64 - 1) as usize;
                acc += row[sx] * kv;
            }
            *o = acc;
        }
    }
    let mut dst = vec![0.0f32; src.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0f32;
            for (ki, &kv) in kernel.iter().enumerate() {
                let sy = (y as i64 + ki as i64 - radius).clamp(0, height as i64 - 1) as usize;
                acc += tmp[sy * width + x] * kv;
            }
            dst[y * width + x] = acc;
        }
    }
    dst
}

/// Gaussian blur with a truncated kernel (radius `ceil(3*sigma)`),
/// normalized to sum 1, edge-replicated borders.
pub fn gaussian_blur(image: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidParam {
            name: "sigma",
            reason: format!("must be > 0, got {sigma}"),
        });
    }
    let kernel = gaussian_kernel(sigma);
    let pixels = blur_plane(
        image.width as usize,
        image.height as usize,
        &image.pixels,
        &kernel,
    );
    // Convex combination of in-range values; clamp away float dust.
    let pixels = pixels.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    Ok(GrayImage {
        width: image.width,
        height: image.height,
        pixels,
        pixel_spacing: image.pixel_spacing,
    })
}

/// Band-pass response `blur(image, sigma_lo) - blur(image, sigma_hi)`.
pub fn dog_response(image: &GrayImage, sigma_lo: f64, sigma_hi: f64) -> Result<ResponseMap> {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    if !(sigma_lo < sigma_hi) {
        return Err(Error::InvalidParam {
            name: "sigma_lo",
            reason: format!("sigma_lo ({sigma_lo}) must be < sigma_hi ({sigma_hi})"),
        });
    }
    let lo = gaussian_blur(image, sigma_lo)?;
    let hi = gaussian_blur(image, sigma_hi)?;
    let values = lo
        .pixels
        .iter()
        .zip(&hi.pixels)
        .map(|(a, b)| a - b)
        .collect();
    Ok(ResponseMap {
        width: image.width,
        height: image.height,
        values,
    })
}

/// Sigmas for the scale stack: `sigma_min * 2^(k/spo)` while `<= sigma_max`,
/// plus one extra level so the last DoG pair is defined.
fn scale_sigmas(params: &DetectParams) -> Vec<f64> {
    let step = 2f64.powf(1.0 / params.scales_per_octave as f64);
    let mut sigmas = Vec::new();
    let mut s = params.sigma_min;
    while s <= params.sigma_max * (1.0 + 1e-12) {
        sigmas.push(s);
        s *= step;
    }
    sigmas.push(s);
    sigmas
}

/// Detects bright blobs as strict 3x3x3 scale-space maxima of the DoG stack
/// passing the Hessian curvature-ratio test. Output sorted by descending
/// response.
pub fn detect_blobs(image: &GrayImage, params: &DetectParams) -> Result<Vec<Blob>> {
    params.validate()?;
    if image.width < 3 || image.height < 3 {
        return Err(Error::InvalidParam {
            name: "image",
            reason: format!("must be at least 3x3, got {}x{}", image.width, image.height),
        });
    }
    let sigmas = scale_sigmas(params);
    let n_levels = sigmas.len().saturating_sub(1);
    if n_levels < 3 {
        return Err(Error::DegenerateScaleRange { levels: n_levels });
    }

    let blurred: Vec<Vec<f32>> = sigmas
        .iter()
        .map(|&s| {
            blur_plane(
                image.width as usize,
                image.height as usize,
                &image.pixels,
                &gaussian_kernel(s),
            )
        })
        .collect();
    let dog: Vec<Vec<f32>> = (0..n_levels)
        .map(|l| {
            blurred[l]
                .iter()
                .zip(&blurred[l + 1])
                .map(|(a, b)| a - b)
                .collect()
        })
        .collect();

    let w = image.width as usize;
    let h = image.height as usize;
    let margin = params.border_margin.max(1) as usize;
    if 2 * margin >= w || 2 * margin >= h {
        return Ok(Vec::new());
    }
    let eps = 1e-12f64;
    let mut blobs = Vec::new();
    for l in 1..n_levels - 1 {
        let level = &dog[l];
        for y in margin..h - margin {
            for x in margin..w - margin {
                let v = level[y * w + x];
                if v < params.dog_threshold {
                    continue;
                }
                let mut is_max = true;
                'nb: for dl in -1i64..=1 {
                    let plane = &dog[(l as i64 + dl) as usize];
                    for dy in -1i64..=1 {
                        for dx in -1i64..=1 {
                            if dl == 0 && dy == 0 && dx == 0 {
                                continue;
                            }
                            let nv = plane
                                [((y as i64 + dy) as usize) * w + (x as i64 + dx) as usize];
                            if nv >= v {
                                is_max = false;
                                break 'nb;
                            }
                        }
                    }
                }
                if !is_max {
                    continue;
                }
                // 2x2 Hessian of the DoG level by central differences.
                let at = |xx: usize, yy: usize| level[yy * w + xx] as f64;
                let c = at(x, y);
                let dxx = at(x + 1, y) - 2.0 * c + at(x - 1, y);
                let dyy = at(x, y + 1) - 2.0 * c + at(x, y - 1);
                let dxy = 0.25
                    * (at(x + 1, y + 1) - at(x - 1, y + 1) - at(x + 1, y - 1)
                        + at(x - 1, y - 1));
                let tr = dxx + dyy;
                let disc = ((dxx - dyy) * (dxx - dyy) + 4.0 * dxy * dxy).sqrt();
                let e1 = 0.5 * (tr + disc);
                let e2 = 0.5 * (tr - disc);
                let (l1, l2) = if e1.abs() >= e2.abs() { (e1, e2) } else { (e2, e1) };
                if l1 >= 0.0 {
                    continue;
                }
                if l1.abs() / l2.abs().max(eps) > params.hessian_ratio_max {
                    continue;
                }
                // Parabolic sub-pixel refinement per axis.
                let offset = |m: f64, c0: f64, p: f64| {
                    let denom = m - 2.0 * c0 + p;
                    if denom.abs() < 1e-12 {
                        0.0
                    } else {
                        (0.5 * (m - p) / denom).clamp(-0.5, 0.5)
                    }
                };
                let ox = offset(at(x - 1, y), c, at(x + 1, y));
                let oy = offset(at(x, y - 1), c, at(x, y + 1));
                blobs.push(Blob {
                    center: (x as f64 + ox, y as f64 + oy),
                    sigma: sigmas[l],
                    response: v,
                });
            }
        }
    }
    blobs.sort_by(|a, b| {
        b.response
            .partial_cmp(&a.response)
            .unwrap()
            .then(a.center.1.partial_cmp(&b.center.1).unwrap())
            .then(a.center.0.partial_cmp(&b.center.0).unwrap())
    });
    Ok(blobs)
}

/// Rasterizes blobs as filled discs of radius `max(1, round(sqrt(2)*sigma))`,
/// unioned over blobs.
pub fn blobs_to_mask(blobs: &[Blob], width: u32, height: u32) -> BinaryMask {
    let mut mask = BinaryMask::zeros(width, height);
    for blob in blobs {
        let r = (std::f64::consts::SQRT_2 * blob.sigma).round().max(1.0);
        let (cx, cy) = blob.center;
        let x_lo = ((cx - r).floor().max(0.0)) as u32;
        let x_hi = ((cx + r).ceil().min(width as f64 - 1.0)) as u32;
        let y_lo = ((cy - r).floor().max(0.0)) as u32;
        let y_hi = ((cy + r).ceil().min(height as f64 - 1.0)) as u32;
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy <= r * r {
                    mask.set(x, y, true);
                }
            }
        }
    }
    mask
}

/// Pixel-mean centroids of the 8-connected components of set bits, ordered
/// by the (y, x) scan position of each component's first pixel.
pub fn centroids(mask: &BinaryMask) -> PointSet {
    let w = mask.width as usize;
    let h = mask.height as usize;
    let mut visited = vec![false; w * h];
    let mut points = Vec::new();
    let mut queue = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || visited[start] {
            continue;
        }
        visited[start] = true;
        queue.clear();
        queue.push(start);
        let (mut sx, mut sy, mut n) = (0f64, 0f64, 0u64);
        while let Some(i) = queue.pop() {
            let (x, y) = (i % w, i / w);
            sx += x as f64;
            sy += y as f64;
            n += 1;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits[j] && !visited[j] {
                        visited[j] = true;
                        queue.push(j);
                    }
                }
            }
        }
        points.push((sx / n as f64, sy / n as f64));
    }
    PointSet::new(points)
}
