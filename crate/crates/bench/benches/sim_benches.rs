//! Microbenchmarks for the hot paths: the host write, garbage collection
//! over mixed blocks, chain walking, the payload codec, and the sealed
//! channel.

use criterion::{black_box, criterion_group, criterion_main, Criterion, Throughput};
use vssd_bench::churned_device;
use vssd_core::compress::{rle_compress, rle_decompress};
use vssd_core::seal::{seal, verify, DeviceKey};
use vssd_core::shim::DEMO_DEVICE_KEY;
use vssd_core::{Device, DeviceConfig, Lpa, NandGeometry};

fn bench_host_write(c: &mut Criterion) {
    let mut group = c.benchmark_group("host_write");
    group.throughput(Throughput::Bytes(4096));
    group.bench_function("plain_overwrite", |b| {
        let geometry = NandGeometry::tiny(64, 16, 32);
        let mut dev = Device::new(DeviceConfig::new(geometry, DEMO_DEVICE_KEY)).unwrap();
        let data = vec![0x5Au8; dev.page_size()];
        let mut i = 0u32;
        b.iter(|| {
            dev.host_write(Lpa(i % 512), black_box(&data), None).unwrap();
            i += 1;
        });
    });
    group.finish();
}

fn bench_gc(c: &mut Criterion) {
    c.bench_function("gc_run_mixed_victim", |b| {
        b.iter_batched(
            || churned_device(3),
            |mut dev| {
                dev.gc_run().unwrap();
                dev
            },
            criterion::BatchSize::LargeInput,
        );
    });
}

fn bench_chain_walk(c: &mut Criterion) {
    c.bench_function("chain_walk_depth_8", |b| {
        let mut dev = churned_device(8);
        b.iter(|| black_box(dev.chain_walk(Lpa(0)).unwrap().len()));
    });
}

fn bench_codec(c: &mut Criterion) {
    let mut group = c.benchmark_group("rle");
    group.throughput(Throughput::Bytes(4096));
    let zeros = vec![0u8; 4096];
    let mixed: Vec<u8> = (0..4096).map(|i| if i % 97 < 60 { 0 } else { i as u8 }).collect();
    group.bench_function("compress_zero_page", |b| {
        b.iter(|| black_box(rle_compress(black_box(&zeros))));
    });
    group.bench_function("compress_mixed_page", |b| {
        b.iter(|| black_box(rle_compress(black_box(&mixed))));
    });
    let packed = rle_compress(&mixed);
    group.bench_function("decompress_mixed_page", |b| {
        b.iter(|| black_box(rle_decompress(black_box(&packed), 4096).unwrap()));
    });
    group.finish();
}

fn bench_seal(c: &mut Criterion) {
    let key = DeviceKey([7u8; 32]);
    let payload = vec![0xABu8; 64];
    c.bench_function("seal_verify_roundtrip", |b| {
        let mut counter = 0u64;
        b.iter(|| {
            counter += 1;
            let sealed = seal(black_box(&payload), &key, counter);
            let (_, accepted) = verify(&sealed, &key, counter - 1).unwrap();
            black_box(accepted)
        });
    });
}

criterion_group!(
    benches,
    bench_host_write,
    bench_gc,
    bench_chain_walk,
    bench_codec,
    bench_seal
);
criterion_main!(benches);
