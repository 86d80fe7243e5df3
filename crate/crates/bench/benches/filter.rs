use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use geps_core::event::synth_dataset;
use geps_core::filter::{evaluate, parse, CompiledFilter};
use geps_core::{Calibration, Schema};
use std::hint::black_box;

const FILTER: &str = "bx>50000&gotmean<6000|(evr<10|levr>=230)&bx!=0";

fn parsing(c: &mut Criterion) {
    c.bench_function("parse", |b| b.iter(|| black_box(parse(black_box(FILTER)).unwrap())));
    let expr = parse(FILTER).unwrap();
    c.bench_function("render", |b| b.iter(|| black_box(expr.render())));
}

fn scanning(c: &mut Criterion) {
    let schema = Schema::default_physics();
    let events = synth_dataset(3, 4096, &schema, 0);
    let expr = parse(FILTER).unwrap();
    let cal = Calibration::new().with("bx", 1.25, -40.0);
    let mut g = c.benchmark_group("scan_4096");
    g.throughput(Throughput::Elements(events.len() as u64));
    g.bench_function("evaluate", |b| {
        b.iter(|| {
            events
                .iter()
                .filter(|e| evaluate(&expr, e, &schema, Some(&cal)).unwrap())
                .count()
        })
    });
    let compiled = CompiledFilter::new(&expr, &schema, Some(&cal)).unwrap();
    g.bench_function("compiled", |b| {
        b.iter(|| events.iter().filter(|e| compiled.test(e)).count())
    });
    g.finish();
}

criterion_group!(benches, parsing, scanning);
criterion_main!(benches);
