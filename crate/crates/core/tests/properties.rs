//! Property tests: independent brute-force references and invariants.

use std::collections::BTreeSet;

use proptest::prelude::*;

use calcmatch::cluster::{dbscan, rotation_variants, scale_template, Template, NOISE};
use calcmatch::evaluate::{build_grid, confusion, metrics, ConfusionCounts};
use calcmatch::image::{BinaryMask, CaseMeta, PointSet, Rect};
use calcmatch::matching::{cross_correlate_direct, cross_correlate_fft};

// ---------------------------------------------------------------------------
// Brute-force DBSCAN reference: core points from neighborhood counts,
// clusters as connected components of the core-point graph, border points
// assigned to the lowest-labeled reachable cluster (labels ordered by first
// core appearance). Independent of the BFS expansion in the implementation.
// ---------------------------------------------------------------------------

#[allow(clippy::needless_range_loop)]
pub fn dbscan_reference(points: &[(f64, f64)], eps: f64, min_pts: usize) -> Vec<i32> {
    let n = points.len();
    let eps2 = eps * eps;
    let near = |i: usize, j: usize| {
        let (dx, dy) = (points[i].0 - points[j].0, points[i].1 - points[j].1);
        dx * dx + dy * dy <= eps2
    };
    let core: Vec<bool> = (0..n)
        .map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts)
        .collect();

    // union-find over core points
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        if parent[i] != i {
            let r = find(parent, parent[i]);
            parent[i] = r;
        }
        parent[i]
    }
    for i in 0..n {
        if !core[i] {
            continue;
        }
        for j in i + 1..n {
            if core[j] && near(i, j) {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    // label components by first core appearance
    let mut labels = vec![NOISE; n];
    let mut next = 0i32;
    let mut root_label = std::collections::HashMap::new();
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            let l = *root_label.entry(r).or_insert_with(|| {
                let l = next;
                next += 1;
                l
            });
            labels[i] = l;
        }
    }
    // border points join the lowest-labeled core neighbor's cluster
    for i in 0..n {
        if core[i] {
            continue;
        }
        let best = (0..n)
            .filter(|&j| core[j] && near(i, j))
            .map(|j| labels[j])
            .min();
        if let Some(l) = best {
            labels[i] = l;
        }
    }
    labels
}

fn random_points(rng: &mut impl rand::Rng, n: usize, extent: f64) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (rng.gen::<f64>() * extent, rng.gen::<f64>() * extent))
        .collect()
}

#[test]
fn dbscan_matches_reference_on_random_sets() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let n = rng.gen_range(0..120);
        let pts = random_points(&mut rng, n, 50.0);
        let eps = rng.gen_range(1.0..10.0);
        let min_pts = rng.gen_range(1..6);
        let got = dbscan(&PointSet::new(pts.clone()), eps, min_pts).unwrap();
        let want = dbscan_reference(&pts, eps, min_pts);
        assert_eq!(got.labels, want, "eps {eps} min_pts {min_pts} pts {pts:?}");
    }
}

#[test]
fn dbscan_translation_invariant() {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
    let pts = random_points(&mut rng, 80, 30.0);
    let shifted: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x + 1234.5, y - 77.25)).collect();
    let a = dbscan(&PointSet::new(pts), 4.0, 3).unwrap();
    let b = dbscan(&PointSet::new(shifted), 4.0, 3).unwrap();
    assert_eq!(a, b);
}

proptest! {
    #[test]
    fn dbscan_counts_partition(n in 0usize..60, eps in 0.5f64..8.0, min_pts in 1usize..6, seed in 0u64..1000) {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pts = random_points(&mut rng, n, 25.0);
        let labeling = dbscan(&PointSet::new(pts), eps, min_pts).unwrap();
        let noise = labeling.labels.iter().filter(|&&l| l == NOISE).count();
        let total: usize = labeling.cluster_sizes().iter().sum();
        prop_assert_eq!(noise + total, n);
        for &l in &labeling.labels {
            prop_assert!(l == NOISE || (l >= 0 && (l as usize) < labeling.k));
        }
        for s in labeling.cluster_sizes() {
            prop_assert!(s >= 1);
        }
    }
}

// ---------------------------------------------------------------------------
// Template invariants
// ---------------------------------------------------------------------------

fn arb_mask(max_w: u32, max_h: u32) -> impl Strategy<Value = BinaryMask> {
    (1..=max_w, 1..=max_h)
        .prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), (w * h) as usize)
                .prop_map(move |bits| BinaryMask { width: w, height: h, bits })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rotation_preserves_bits_and_identity(mask in arb_mask(12, 12)) {
        let t = Template {
            bits: mask.clone(),
            rotation_deg: 0,
            scale_applied: 1.0,
            source_rect: Rect::new(0, 0, mask.width, mask.height),
        };
        let variants = rotation_variants(&t);
        for v in &variants {
            prop_assert_eq!(v.set_bit_count(), t.set_bit_count());
        }
        // fourth rotation of the 270 variant returns to the original
        let again = rotation_variants(&variants[3]);
        prop_assert_eq!(&again[1].bits, &t.bits);
    }

    #[test]
    fn unit_scale_is_identity(mask in arb_mask(16, 16), factor in 0.25f64..4.0) {
        let t = Template {
            bits: mask.clone(),
            rotation_deg: 0,
            scale_applied: 1.0,
            source_rect: Rect::new(0, 0, mask.width, mask.height),
        };
        let meta = CaseMeta {
            case_id: "p".into(),
            magnification_factor_specimen: factor,
            magnification_factor_scene: factor,
        };
        let s = scale_template(&t, &meta).unwrap();
        prop_assert_eq!(s.bits, mask);
    }
}

// ---------------------------------------------------------------------------
// Matching invariants
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fft_equals_direct(seed in 0u64..10_000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (sw, sh) = (rng.gen_range(8..96u32), rng.gen_range(8..96u32));
        let (tw, th) = (rng.gen_range(1..24u32), rng.gen_range(1..24u32));
        let mut scene = BinaryMask::zeros(sw, sh);
        for b in scene.bits.iter_mut() {
            *b = rng.gen_bool(0.08);
        }
        let mut bits = BinaryMask::zeros(tw, th);
        for b in bits.bits.iter_mut() {
            *b = rng.gen_bool(0.3);
        }
        let t = Template {
            bits,
            rotation_deg: 0,
            scale_applied: 1.0,
            source_rect: Rect::new(0, 0, tw, th),
        };
        let d = cross_correlate_direct(&t, &scene).unwrap();
        let f = cross_correlate_fft(&t, &scene).unwrap();
        prop_assert_eq!(d.scores, f.scores);
    }

    #[test]
    fn planted_template_argmax(seed in 0u64..10_000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (tw, th) = (rng.gen_range(2..12u32), rng.gen_range(2..12u32));
        let mut bits = BinaryMask::zeros(tw, th);
        for b in bits.bits.iter_mut() {
            *b = rng.gen_bool(0.5);
        }
        // corner bits force uniqueness of the covering window
        bits.set(0, 0, true);
        bits.set(tw - 1, th - 1, true);
        let t = Template {
            bits: bits.clone(),
            rotation_deg: 0,
            scale_applied: 1.0,
            source_rect: Rect::new(0, 0, tw, th),
        };
        let (sw, sh) = (64u32, 48u32);
        let ox = rng.gen_range(0..sw - tw);
        let oy = rng.gen_range(0..sh - th);
        let mut scene = BinaryMask::zeros(sw, sh);
        for y in 0..th {
            for x in 0..tw {
                if bits.get(x, y) {
                    scene.set(ox + x, oy + y, true);
                }
            }
        }
        let map = cross_correlate_fft(&t, &scene).unwrap();
        let k = t.set_bit_count() as f32;
        let argmax = map
            .scores
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let (ax, ay) = (argmax as u32 % sw, argmax as u32 / sw);
        // exact alignment: top-left at padded coord (ox + floor(tw/2), ...)
        prop_assert_eq!((ax, ay), (ox + tw / 2, oy + th / 2));
        prop_assert_eq!(map.get(ax, ay), k);
    }
}

// ---------------------------------------------------------------------------
// Metrics vs a naive per-patch loop
// ---------------------------------------------------------------------------

fn naive_confusion(
    total: usize,
    predicted: &BTreeSet<usize>,
    positive: &BTreeSet<usize>,
) -> ConfusionCounts {
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for i in 0..total {
        match (predicted.contains(&i), positive.contains(&i)) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    ConfusionCounts { tp, fp, fn_, tn }
}

proptest! {
    #[test]
    fn confusion_matches_naive_loop(
        cols in 1u32..12,
        rows in 1u32..12,
        pred_bits in proptest::collection::vec(any::<bool>(), 144),
        pos_bits in proptest::collection::vec(any::<bool>(), 144),
    ) {
        let grid = build_grid(cols * 10, rows * 10, 10);
        let total = grid.len();
        let predicted: BTreeSet<usize> = (0..total).filter(|&i| pred_bits[i]).collect();
        let positive: BTreeSet<usize> = (0..total).filter(|&i| pos_bits[i]).collect();
        let got = confusion(&grid, &predicted, &positive);
        let want = naive_confusion(total, &predicted, &positive);
        prop_assert_eq!(got, want);
        prop_assert_eq!(got.total(), total as u64);
        let m = metrics(&got, None);
        if got.tp + got.fp > 0 {
            prop_assert!((m.precision.unwrap() - got.tp as f64 / (got.tp + got.fp) as f64).abs() < 1e-12);
        } else {
            prop_assert!(m.precision.is_none());
        }
    }
}

// ---------------------------------------------------------------------------
// Mask file round-trip
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mask_file_roundtrip(mask in arb_mask(48, 48)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        calcmatch::io::save_mask(&mask, &path).unwrap();
        let back = calcmatch::io::load_mask(&path).unwrap();
        prop_assert_eq!(back, mask);
    }
}
