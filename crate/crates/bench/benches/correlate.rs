//! Direct vs FFT cross-correlation across scene sizes.

use calcmatch::matching::{cross_correlate_direct, cross_correlate_fft};
use calcmatch_bench::{random_mask, random_template};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn bench_correlate(c: &mut Criterion) {
    let template = random_template(1, 64, 64, 0.05);
    let mut group = c.benchmark_group("cross_correlate");
    group.sample_size(10);
    for side in [256u32, 512, 1024] {
        let scene = random_mask(2, side, side, 0.002);
        group.bench_with_input(BenchmarkId::new("direct", side), &scene, |b, s| {
            b.iter(|| cross_correlate_direct(&template, s).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("fft", side), &scene, |b, s| {
            b.iter(|| cross_correlate_fft(&template, s).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_correlate);
criterion_main!(benches);
