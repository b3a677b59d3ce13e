//! DBSCAN clustering of centroids and template extraction: largest-cluster
//! bounding box, crop, magnification rescale, and the four rotation variants.

use crate::error::{Error, Result};
use crate::image::{BinaryMask, CaseMeta, PointSet, Rect};

pub const NOISE: i32 = -1;

/// Per-point cluster labels: -1 for noise, `0..k` for clusters, renumbered
/// by first appearance in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterLabeling {
    pub labels: Vec<i32>,
    pub k: usize,
}

impl ClusterLabeling {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &l in &self.labels {
            if l >= 0 {
                sizes[l as usize] += 1;
            }
        }
        sizes
    }
}

/// DBSCAN with Euclidean distance. A point's eps-neighborhood includes the
/// point itself; core points have neighborhoods of size >= `min_pts`.
/// Points are processed in input order, so border points reachable from
/// multiple clusters deterministically join the cluster expanded first.
pub fn dbscan(points: &PointSet, eps: f64, min_pts: usize) -> Result<ClusterLabeling> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::InvalidParam {
            name: "eps",
            reason: format!("must be > 0, got {eps}"),
        });
    }
    let pts = &points.points;
    let n = pts.len();
    let eps2 = eps * eps;
    let neighbors = |i: usize| -> Vec<usize> {
        let (xi, yi) = pts[i];
        (0..n)
            .filter(|&j| {
                let (dx, dy) = (pts[j].0 - xi, pts[j].1 - yi);
                dx * dx + dy * dy <= eps2
            })
            .collect()
    };

    const UNVISITED: i32 = -2;
    let mut labels = vec![UNVISITED; n];
    let mut k = 0usize;
    for i in 0..n {
        if labels[i] != UNVISITED {
            continue;
        }
        let nb = neighbors(i);
        if nb.len() < min_pts {
            labels[i] = NOISE;
            continue;
        }
        let cluster = k as i32;
        k += 1;
        labels[i] = cluster;
        let mut queue: std::collections::VecDeque<usize> = nb.into_iter().collect();
        while let Some(j) = queue.pop_front() {
            if labels[j] == NOISE {
                labels[j] = cluster; // border point
            }
            if labels[j] != UNVISITED {
                continue;
            }
            labels[j] = cluster;
            let nbj = neighbors(j);
            if nbj.len() >= min_pts {
                queue.extend(nbj);
            }
        }
    }
    for l in labels.iter_mut() {
        debug_assert!(*l != UNVISITED);
    }
    Ok(ClusterLabeling { labels, k })
}

/// Returns the most populous cluster (lowest id on ties) and its members in
/// input order. Errors when every point is noise.
pub fn largest_cluster(
    labeling: &ClusterLabeling,
    points: &PointSet,
) -> Result<(usize, PointSet)> {
    let sizes = labeling.cluster_sizes();
    let best = sizes
        .iter()
        .enumerate()
        .max_by(|(ia, a), (ib, b)| a.cmp(b).then(ib.cmp(ia)))
        .filter(|(_, &s)| s > 0)
        .map(|(i, _)| i)
        .ok_or(Error::NoCluster)?;
    let members = points
        .points
        .iter()
        .zip(&labeling.labels)
        .filter(|(_, &l)| l == best as i32)
        .map(|(&p, _)| p)
        .collect();
    Ok((best, PointSet::new(members)))
}

/// Smallest integer rect containing the members (floor/ceil of sub-pixel
/// coordinates), expanded by `pad` per side and clipped to the mask bounds.
pub fn cluster_bbox(members: &PointSet, mask: &BinaryMask, pad: u32) -> Rect {
    assert!(!members.is_empty(), "cluster_bbox requires members");
    let mut min_x = f64::INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for &(x, y) in &members.points {
        min_x = min_x.min(x);
        min_y = min_y.min(y);
        max_x = max_x.max(x);
        max_y = max_y.max(y);
    }
    let x0 = (min_x.floor() as i64 - pad as i64).max(0) as u32;
    let y0 = (min_y.floor() as i64 - pad as i64).max(0) as u32;
    let x1 = ((max_x.ceil() as i64 + 1 + pad as i64) as u32).min(mask.width);
    let y1 = ((max_y.ceil() as i64 + 1 + pad as i64) as u32).min(mask.height);
    Rect::new(x0, y0, x1 - x0, y1 - y0)
}

/// A cropped binary template with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Template {
    pub bits: BinaryMask,
    /// One of 0, 90, 180, 270.
    pub rotation_deg: u16,
    pub scale_applied: f64,
    /// Crop rect in specimen coordinates.
    pub source_rect: Rect,
}

impl Template {
    pub fn set_bit_count(&self) -> usize {
        self.bits.count_set()
    }
}

/// Copies the mask sub-region into a new template (rotation 0, scale 1).
/// Errors when the crop contains no set bits.
pub fn cut_template(mask: &BinaryMask, rect: Rect) -> Result<Template> {
    if !rect.fits_within(mask.width, mask.height) {
        return Err(Error::OutOfBounds {
            x0: rect.x0 as i64,
            y0: rect.y0 as i64,
            w: rect.w,
            h: rect.h,
            width: mask.width,
            height: mask.height,
        });
    }
    let mut bits = BinaryMask::zeros(rect.w, rect.h);
    for y in 0..rect.h {
        for x in 0..rect.w {
            bits.set(x, y, mask.get(rect.x0 + x, rect.y0 + y));
        }
    }
    if bits.count_set() == 0 {
        return Err(Error::EmptyTemplate);
    }
    Ok(Template {
        bits,
        rotation_deg: 0,
        scale_applied: 1.0,
        source_rect: rect,
    })
}

/// Rescales the template from specimen pixel scale into scene pixel scale by
/// the ratio scene/specimen of magnification factors, nearest-neighbor.
pub fn scale_template(t: &Template, meta: &CaseMeta) -> Result<Template> {
    meta.validate()?;
    let s = meta.magnification_factor_scene / meta.magnification_factor_specimen;
    let (in_w, in_h) = (t.bits.width, t.bits.height);
    let out_w = ((in_w as f64 * s).round() as u32).max(1);
    let out_h = ((in_h as f64 * s).round() as u32).max(1);
    let mut bits = BinaryMask::zeros(out_w, out_h);
    for y in 0..out_h {
        // center-based nearest-neighbor sampling
        let sy = (((y as f64 + 0.5) * in_h as f64 / out_h as f64).floor() as u32).min(in_h - 1);
        for x in 0..out_w {
            let sx = (((x as f64 + 0.5) * in_w as f64 / out_w as f64).floor() as u32).min(in_w - 1);
            bits.set(x, y, t.bits.get(sx, sy));
        }
    }
    Ok(Template {
        bits,
        rotation_deg: t.rotation_deg,
        scale_applied: s,
        source_rect: t.source_rect,
    })
}

/// One lossless 90-degree counter-clockwise raster rotation (x right, y down):
/// `out(x', y') = in(W - 1 - y', x')`, output dims swapped.
fn rotate90(bits: &BinaryMask) -> BinaryMask {
    let (w, h) = (bits.width, bits.height);
    let mut out = BinaryMask::zeros(h, w);
    for y in 0..w {
        for x in 0..h {
            out.set(x, y, bits.get(w - 1 - y, x));
        }
    }
    out
}

/// The four rotation variants of a template, in order [0, 90, 180, 270].
pub fn rotation_variants(t: &Template) -> Vec<Template> {
    let mut variants = Vec::with_capacity(4);
    let mut bits = t.bits.clone();
    for deg in [0u16, 90, 180, 270] {
        if deg != 0 {
            bits = rotate90(&bits);
        }
        variants.push(Template {
            bits: bits.clone(),
            rotation_deg: deg,
            scale_applied: t.scale_applied,
            source_rect: t.source_rect,
        });
    }
    variants
}
