use criterion::{black_box, criterion_group, criterion_main, Criterion};
use inceptnet::network::{build_model, Mode, NetworkSpec, Variant};
use inceptnet::ops::{conv2d, Padding};
use inceptnet::recurrent::{convlstm_step, ConvLstmParams, ConvLstmState};
use inceptnet::{Kernel4, KernelShape, Shape4, Tensor4};

fn ramp(s: Shape4) -> Tensor4 {
    Tensor4::from_vec(s, (0..s.len()).map(|i| ((i * 7919) % 1000) as f64 / 1000.0 - 0.5).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let x = ramp(Shape4::new(4, 64, 64, 16));
    let k = KernelShape::new(3, 3, 16, 16);
    let kernel = Kernel4::new(k, vec![0.01; k.len()], vec![0.0; 16]).unwrap();
    c.bench_function("conv2d 3x3 4x64x64x16", |b| b.iter(|| conv2d(black_box(&x), &kernel, Padding::Same).unwrap()));
}

fn convlstm(c: &mut Criterion) {
    let x = ramp(Shape4::new(2, 32, 32, 16));
    let mut p = ConvLstmParams::zeros(16, 8, 3);
    for t in p.tensors_mut() {
        t.iter_mut().enumerate().for_each(|(i, v)| *v = ((i % 13) as f64 - 6.0) * 0.01);
    }
    let state = ConvLstmState {
        h: Tensor4::zeros(Shape4::new(2, 32, 32, 8)),
        c: Tensor4::zeros(Shape4::new(2, 32, 32, 8)),
    };
    c.bench_function("convlstm step 2x32x32x16 -> 8", |b| b.iter(|| convlstm_step(black_box(&x), &state, &p).unwrap()));
}

fn network(c: &mut Criterion) {
    let mut group = c.benchmark_group("train step 64x64 filters 8..64");
    group.sample_size(10);
    for variant in [Variant::Unet, Variant::Bcdu, Variant::Inceptnet] {
        let mut spec = NetworkSpec::new(variant, 1, [64, 64, 1]);
        spec.base_filters = vec![8, 16, 32, 64];
        let mut graph = build_model(&spec).unwrap();
        let x = ramp(Shape4::new(2, 64, 64, 1));
        group.bench_function(variant.to_string(), |b| {
            b.iter(|| {
                let y = graph.forward(black_box(&x), Mode::Train).unwrap();
                graph.backward(&y).unwrap();
                graph.store_mut().zero_grad();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, conv, convlstm, network);
criterion_main!(benches);
