use criterion::{criterion_group, criterion_main, Criterion};
use flashsr_bench::one_second_clip;
use flashsr_core::dsp::mel_spectrogram;
use flashsr_core::eval::{lsd, MetricConfig};

fn frontend(c: &mut Criterion) {
    let (clip, mel) = one_second_clip().unwrap();
    let quiet = clip.scaled(0.5).unwrap();
    c.bench_function("mel-1s-desk", |b| b.iter(|| mel_spectrogram(&clip, &mel).unwrap()));
    c.bench_function("lsd-1s-desk", |b| b.iter(|| lsd(&clip, &quiet, &MetricConfig::desk()).unwrap()));
}

criterion_group!(benches, frontend);
criterion_main!(benches);
