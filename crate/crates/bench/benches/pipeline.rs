//! Benchmarks for the hot paths: signed-log quadrature, classifier fits,
//! and the Hankel orthonormalization.

use criterion::{black_box, criterion_group, criterion_main, Criterion};
use momdet::criteria::{carleman_partial_sums, classify_terms};
use momdet::density::{gram_matrix, orthonormalize};
use momdet::logdomain::SignedLog;
use momdet::measure::MeasureSpec;
use momdet::moments::MomentEngine;
use momdet::quad::{integrate, tail_profile, QuadSettings};

fn bench_quadrature(c: &mut Criterion) {
    let s = QuadSettings::default();
    let normal = MeasureSpec::standard_normal(1);
    c.bench_function("integrate_gaussian_x8", |b| {
        b.iter(|| {
            let f = |x: &[f64]| SignedLog::from_f64(x[0]).powi(8);
            black_box(integrate(&f, &normal, &s).unwrap().value)
        })
    });

    let lognormal = MeasureSpec::LogNormal1D { location: 0.0, scale: 1.0 };
    c.bench_function("integrate_lognormal_x40_logdomain", |b| {
        b.iter(|| {
            let f = |x: &[f64]| SignedLog::from_f64(x[0]).powi(40);
            black_box(integrate(&f, &lognormal, &s).unwrap().value)
        })
    });

    c.bench_function("tail_profile_exp_norm", |b| {
        b.iter(|| {
            let f = |x: &[f64]| SignedLog::from_ln(x[0].abs());
            black_box(tail_profile(&f, &normal, &s).unwrap().partials.len())
        })
    });
}

fn bench_carleman(c: &mut Criterion) {
    let s = QuadSettings::default();
    let spec = MeasureSpec::standard_normal(1);
    let engine = MomentEngine::new(&spec, None, &s);
    let moments: Vec<SignedLog> = (1..=30).map(|m| engine.directional(0, 2 * m).value).collect();
    c.bench_function("carleman_terms_and_fit", |b| {
        b.iter(|| {
            let (terms, _) = carleman_partial_sums(black_box(&moments));
            black_box(classify_terms(&terms).outcome)
        })
    });
}

fn bench_orthonormalize(c: &mut Criterion) {
    let s = QuadSettings::default();
    let spec = MeasureSpec::standard_normal(1);
    let engine = MomentEngine::new(&spec, None, &s);
    let gram = gram_matrix(&engine, 15).unwrap();
    c.bench_function("orthonormalize_hermite_15", |b| {
        b.iter(|| black_box(orthonormalize(black_box(&gram), "bench".into()).unwrap().len()))
    });
}

criterion_group!(benches, bench_quadrature, bench_carleman, bench_orthonormalize);
criterion_main!(benches);
