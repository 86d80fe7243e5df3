use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use geps_core::event::{merge_fragments, split_dataset, synth_dataset};
use geps_core::{FragmentFile, FragmentMeta, Schema};
use std::hint::black_box;

fn fragment(n: usize, payload: usize) -> FragmentFile {
    let schema = Schema::default_physics();
    FragmentFile {
        meta: FragmentMeta {
            dataset_id: 1,
            fragment_index: 0,
            event_count: n as u32,
            first_event_ordinal: 0,
        },
        events: synth_dataset(1, n, &schema, payload),
        schema,
    }
}

fn codec(c: &mut Criterion) {
    let mut g = c.benchmark_group("codec");
    for payload in [0usize, 4096] {
        let f = fragment(1024, payload);
        let bytes = f.encode().unwrap();
        g.throughput(Throughput::Bytes(bytes.len() as u64));
        g.bench_with_input(BenchmarkId::new("encode", payload), &f, |b, f| {
            b.iter(|| black_box(f.encode().unwrap()))
        });
        g.bench_with_input(BenchmarkId::new("decode", payload), &bytes, |b, bytes| {
            b.iter(|| black_box(FragmentFile::decode(bytes).unwrap()))
        });
    }
    g.finish();
}

fn split_merge(c: &mut Criterion) {
    let schema = Schema::default_physics();
    let events = synth_dataset(2, 8192, &schema, 0);
    let parts = split_dataset(events.clone(), &schema, 8, 1).unwrap();
    c.bench_function("split_8192_into_8", |b| {
        b.iter(|| black_box(split_dataset(events.clone(), &schema, 8, 1).unwrap()))
    });
    c.bench_function("merge_8_fragments", |b| {
        b.iter(|| black_box(merge_fragments(parts.clone()).unwrap()))
    });
}

criterion_group!(benches, codec, split_merge);
criterion_main!(benches);
