//! Blob detection and clustering stage benchmarks.

use calcmatch::cluster::dbscan;
use calcmatch::detect::{detect_blobs, DetectParams};
use calcmatch::image::{GrayImage, PointSet};
use calcmatch::synth::render_gaussian_spot;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spotted_image(seed: u64, w: u32, h: u32, n: u32) -> GrayImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = GrayImage::zeros(w, h);
    for _ in 0..n {
        let cx = rng.gen::<f64>() * w as f64;
        let cy = rng.gen::<f64>() * h as f64;
        render_gaussian_spot(&mut img, cx, cy, 2.0, 0.8);
    }
    img
}

fn bench_detect(c: &mut Criterion) {
    let img = spotted_image(3, 512, 512, 40);
    let params = DetectParams::default();
    let mut group = c.benchmark_group("detect");
    group.sample_size(10);
    group.bench_function("detect_blobs_512", |b| {
        b.iter(|| detect_blobs(&img, &params).unwrap())
    });
    group.finish();
}

fn bench_dbscan(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let pts: Vec<(f64, f64)> = (0..2000)
        .map(|_| (rng.gen::<f64>() * 1000.0, rng.gen::<f64>() * 1000.0))
        .collect();
    let points = PointSet::new(pts);
    c.bench_function("dbscan_2000", |b| {
        b.iter(|| dbscan(&points, 25.0, 3).unwrap())
    });
}

criterion_group!(benches, bench_detect, bench_dbscan);
criterion_main!(benches);
