//! Patch-grid evaluation: tile the scene into non-overlapping patches,
//! label positives from the reference box, map matched locations to
//! predicted patches, and compute the confusion counts and metrics.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::image::Rect;
use crate::matching::{best_match, MatchSet};

/// A non-overlapping tiling of the scene; only the last row/column may be
/// smaller than `patch_size`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub patch_size: u32,
    pub cols: u32,
    pub rows: u32,
    pub patches: Vec<Rect>,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Index of the patch containing (x, y); half-open pixel intervals, so a
    /// point exactly on x = patch_size falls in the next column.
    pub fn patch_index_of(&self, x: f64, y: f64) -> usize {
        let col = ((x / self.patch_size as f64).floor() as u32).min(self.cols - 1);
        let row = ((y / self.patch_size as f64).floor() as u32).min(self.rows - 1);
        (row * self.cols + col) as usize
    }
}

/// Tiles a `scene_w x scene_h` scene; edge patches are truncated, never
/// discarded.
pub fn build_grid(scene_w: u32, scene_h: u32, patch_size: u32) -> PatchGrid {
    assert!(patch_size >= 1 && scene_w >= 1 && scene_h >= 1);
    let cols = scene_w.div_ceil(patch_size);
    let rows = scene_h.div_ceil(patch_size);
    let mut patches = Vec::with_capacity((cols * rows) as usize);
    for r in 0..rows {
        for c in 0..cols {
            let x0 = c * patch_size;
            let y0 = r * patch_size;
            patches.push(Rect::new(
                x0,
                y0,
                (scene_w - x0).min(patch_size),
                (scene_h - y0).min(patch_size),
            ));
        }
    }
    PatchGrid {
        patch_size,
        cols,
        rows,
        patches,
    }
}

/// Patches whose rect intersects the reference box by at least 1 px².
pub fn positive_patches(grid: &PatchGrid, reference_box: &Rect) -> BTreeSet<usize> {
    grid.patches
        .iter()
        .enumerate()
        .filter(|(_, p)| p.intersection_area(reference_box) >= 1)
        .map(|(i, _)| i)
        .collect()
}

/// Prediction mode: the single top-scoring patch, or every patch containing
/// at least one selected location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PredictionMode {
    Top1,
    #[default]
    AllSelected,
}

impl std::str::FromStr for PredictionMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "top1" => Ok(PredictionMode::Top1),
            "all-selected" => Ok(PredictionMode::AllSelected),
            other => Err(format!("unknown mode {other:?}; expected top1 or all-selected")),
        }
    }
}

/// Maps matched locations to predicted patch indices. An empty match set
/// predicts nothing.
pub fn predicted_patches(
    grid: &PatchGrid,
    match_set: &MatchSet,
    mode: PredictionMode,
) -> BTreeSet<usize> {
    match mode {
        PredictionMode::Top1 => match best_match(match_set) {
            Ok(best) => [grid.patch_index_of(best.x as f64, best.y as f64)].into(),
            Err(_) => BTreeSet::new(),
        },
        PredictionMode::AllSelected => match_set
            .locations
            .iter()
            .map(|l| grid.patch_index_of(l.x as f64, l.y as f64))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

pub fn confusion(
    grid: &PatchGrid,
    predicted: &BTreeSet<usize>,
    positive: &BTreeSet<usize>,
) -> ConfusionCounts {
    let tp = predicted.intersection(positive).count() as u64;
    let fp = predicted.difference(positive).count() as u64;
    let fn_ = positive.difference(predicted).count() as u64;
    let tn = grid.len() as u64 - tp - fp - fn_;
    ConfusionCounts { tp, fp, fn_, tn }
}

/// The five report metrics. `None` marks an undefined value (zero
/// denominator), serialized as JSON null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub npv: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    if den == 0 {
        None
    } else {
        Some(num as f64 / den as f64)
    }
}

/// Computes accuracy, precision, recall, specificity, and NPV. When `pooled`
/// is given, counts are summed across cases before division (micro-average).
pub fn metrics(counts: &ConfusionCounts, pooled: Option<&[ConfusionCounts]>) -> EvalMetrics {
    let mut c = *counts;
    if let Some(rest) = pooled {
        for r in rest {
            c.tp += r.tp;
            c.fp += r.fp;
            c.fn_ += r.fn_;
            c.tn += r.tn;
        }
    }
    EvalMetrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
    }
}

impl EvalMetrics {
    /// One report row in column order Accuracy, Precision, Recall,
    /// Specificity, NPV; undefined values render as "n/a".
    pub fn report_row(&self, label: &str) -> String {
        let fmt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.2}"),
            None => "n/a".to_string(),
        };
        format!(
            "{label}\t{}\t{}\t{}\t{}\t{}",
            fmt(self.accuracy),
            fmt(self.precision),
            fmt(self.recall),
            fmt(self.specificity),
            fmt(self.npv)
        )
    }
}

/// Full evaluation artifact written as report.json.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub grid_cols: u32,
    pub grid_rows: u32,
    pub patch_size: u32,
    pub mode: PredictionMode,
    pub predicted: Vec<usize>,
    pub positive: Vec<usize>,
    pub counts: ConfusionCounts,
    pub metrics: EvalMetrics,
}

/// End-to-end patch evaluation of a match set against a reference box.
pub fn evaluate_matches(
    scene_w: u32,
    scene_h: u32,
    patch_size: u32,
    match_set: &MatchSet,
    reference_box: &Rect,
    mode: PredictionMode,
) -> Result<EvalReport> {
    let grid = build_grid(scene_w, scene_h, patch_size);
    let positive = positive_patches(&grid, reference_box);
    let predicted = predicted_patches(&grid, match_set, mode);
    let counts = confusion(&grid, &predicted, &positive);
    Ok(EvalReport {
        grid_cols: grid.cols,
        grid_rows: grid.rows,
        patch_size,
        mode,
        predicted: predicted.into_iter().collect(),
        positive: positive.into_iter().collect(),
        counts,
        metrics: metrics(&counts, None),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matching::{MatchLocation, MatchSet};

    fn match_set(locs: &[(u32, u32, f32, u16)]) -> MatchSet {
        MatchSet {
            locations: locs
                .iter()
                .map(|&(x, y, score, rotation_deg)| MatchLocation {
                    x,
                    y,
                    score,
                    rotation_deg,
                })
                .collect(),
            percentile_used: 99.0,
            thresholds: vec![],
        }
    }

    #[test]
    fn grid_exact_tiling() {
        let g = build_grid(600, 600, 300);
        assert_eq!(g.len(), 4);
        assert!(g.patches.iter().all(|p| p.w == 300 && p.h == 300));
    }

    #[test]
    fn grid_truncated_column() {
        let g = build_grid(650, 600, 300);
        assert_eq!((g.cols, g.rows), (3, 2));
        assert_eq!(g.len(), 6);
        assert_eq!(g.patches[2].w, 50);
        assert_eq!(g.patches[5].w, 50);
    }

    #[test]
    fn grid_single_small_patch() {
        let g = build_grid(100, 100, 300);
        assert_eq!(g.len(), 1);
        assert_eq!(g.patches[0], Rect::new(0, 0, 100, 100));
    }

    #[test]
    fn grid_tiles_exactly() {
        for (w, h, s) in [(650u32, 601u32, 300u32), (13, 7, 5), (300, 300, 300)] {
            let g = build_grid(w, h, s);
            let area: u64 = g.patches.iter().map(|p| p.w as u64 * p.h as u64).sum();
            assert_eq!(area, w as u64 * h as u64);
            for (i, a) in g.patches.iter().enumerate() {
                for b in &g.patches[i + 1..] {
                    assert_eq!(a.intersection_area(b), 0);
                }
            }
        }
    }

    #[test]
    fn positives_from_reference_box() {
        let g = build_grid(900, 900, 300);
        // strictly inside one patch
        assert_eq!(positive_patches(&g, &Rect::new(10, 10, 50, 50)).len(), 1);
        // spanning a patch boundary
        let two = positive_patches(&g, &Rect::new(280, 10, 40, 40));
        assert_eq!(two, BTreeSet::from([0, 1]));
        // covering the whole scene
        assert_eq!(positive_patches(&g, &Rect::new(0, 0, 900, 900)).len(), 9);
    }

    #[test]
    fn predicted_patch_membership() {
        let g = build_grid(900, 900, 300);
        let ms = match_set(&[(10, 10, 5.0, 0)]);
        assert_eq!(
            predicted_patches(&g, &ms, PredictionMode::AllSelected),
            BTreeSet::from([0])
        );

        // boundary x = 300 belongs to column 1
        let ms = match_set(&[(300, 0, 5.0, 0)]);
        assert_eq!(
            predicted_patches(&g, &ms, PredictionMode::AllSelected),
            BTreeSet::from([1])
        );

        // top1 with locations in 3 patches -> 1 predicted
        let ms = match_set(&[(10, 10, 9.0, 0), (400, 10, 5.0, 0), (10, 400, 7.0, 0)]);
        let top1 = predicted_patches(&g, &ms, PredictionMode::Top1);
        assert_eq!(top1, BTreeSet::from([0]));

        // empty match set predicts nothing
        let empty = match_set(&[]);
        assert!(predicted_patches(&g, &empty, PredictionMode::Top1).is_empty());
        assert!(predicted_patches(&g, &empty, PredictionMode::AllSelected).is_empty());
    }

    #[test]
    fn confusion_set_arithmetic() {
        let g = build_grid(3000, 3000, 300); // 100 patches
        let case = |pred: &[usize], pos: &[usize]| {
            confusion(
                &g,
                &pred.iter().copied().collect(),
                &pos.iter().copied().collect(),
            )
        };
        assert_eq!(case(&[7], &[7]), ConfusionCounts { tp: 1, fp: 0, fn_: 0, tn: 99 });
        assert_eq!(case(&[1], &[2]), ConfusionCounts { tp: 0, fp: 1, fn_: 1, tn: 98 });
        assert_eq!(
            case(&[1, 2], &[2, 3]),
            ConfusionCounts { tp: 1, fp: 1, fn_: 1, tn: 97 }
        );
    }

    #[test]
    fn metrics_arithmetic() {
        let m = metrics(&ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 96 }, None);
        assert!((m.precision.unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert!((m.recall.unwrap() - 2.0 / 3.0).abs() < 1e-9);
        assert!((m.accuracy.unwrap() - 0.98).abs() < 1e-9);
        assert!((m.specificity.unwrap() - 96.0 / 97.0).abs() < 1e-9);
        assert!((m.npv.unwrap() - 96.0 / 97.0).abs() < 1e-9);
    }

    #[test]
    fn metrics_zero_denominators() {
        let m = metrics(&ConfusionCounts { tp: 0, fp: 0, fn_: 0, tn: 50 }, None);
        assert!(m.precision.is_none());
        assert!(m.recall.is_none());
        assert_eq!(m.accuracy, Some(1.0));
    }

    #[test]
    fn metrics_pooled_permutation_invariant() {
        let a = ConfusionCounts { tp: 1, fp: 2, fn_: 3, tn: 94 };
        let b = ConfusionCounts { tp: 5, fp: 0, fn_: 1, tn: 94 };
        let c = ConfusionCounts { tp: 0, fp: 1, fn_: 0, tn: 99 };
        let m1 = metrics(&a, Some(&[b, c]));
        let m2 = metrics(&c, Some(&[a, b]));
        assert_eq!(m1, m2);
    }

    #[test]
    fn report_row_column_order() {
        let m = metrics(&ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 96 }, None);
        let row = m.report_row("Magnified ML");
        assert_eq!(row, "Magnified ML\t0.98\t0.67\t0.67\t0.99\t0.99");
    }

    #[test]
    fn top1_has_single_prediction() {
        let g = build_grid(900, 900, 300);
        let ms = match_set(&[(500, 500, 3.0, 90), (10, 10, 2.0, 0)]);
        let pred = predicted_patches(&g, &ms, PredictionMode::Top1);
        let pos = BTreeSet::from([4usize]);
        let c = confusion(&g, &pred, &pos);
        assert_eq!(c.tp + c.fp, 1);
    }
}
