use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use trigbound_core::chaos::{trig_chaos_coeff, ChaosTruncSpec, Trig, TwoPointFunctional};
use trigbound_core::field::{build_spectrum, sample_field, CovarianceSpec};
use trigbound_core::geometry::{build_lattice, ScalingGeometry, TestFunction};
use trigbound_core::isserlis::wick_moment;
use trigbound_core::kernel::RenormKernel;
use trigbound_core::operator::{DiagonalPolicy, OperatorConfig};

fn kernel_eval(c: &mut Criterion) {
    let g = ScalingGeometry::new(vec![2.0, 1.0]).unwrap();
    let k = RenormKernel::new(1.0, 1.0, 2, g).unwrap();
    c.bench_function("kernel_eval_re0_2d", |b| b.iter(|| k.eval(black_box(&[0.01, 0.05]), black_box(&[0.3, -0.2]))));
    let g1 = ScalingGeometry::euclidean(1);
    let k1 = RenormKernel::with_re(0.4, 1, g1).unwrap();
    c.bench_function("kernel_eval_re1_1d", |b| b.iter(|| k1.eval(black_box(&[0.02]), black_box(&[0.5]))));
}

fn chaos(c: &mut Criterion) {
    c.bench_function("trig_chaos_coeff_n12", |b| {
        b.iter(|| trig_chaos_coeff(Trig::Sin, black_box(11), black_box(20.0), black_box(1.0)))
    });
}

fn wick(c: &mut Criterion) {
    let cov: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| if i == j { 1.0 } else { 0.3 }).collect()).collect();
    c.bench_function("wick_moment_3333", |b| b.iter(|| wick_moment(black_box(&[3, 3, 3, 3]), black_box(&cov)).unwrap()));
}

fn field_and_operator(c: &mut Criterion) {
    let g = ScalingGeometry::euclidean(1);
    let lattice = build_lattice(&g, 1.0 / 256.0, &[2.0]).unwrap();
    let spectrum = build_spectrum(&CovarianceSpec::new(0.6, 0.05, 2.0).unwrap(), &lattice).unwrap();
    c.bench_function("sample_field_1025", |b| {
        let mut k = 0u64;
        b.iter(|| {
            k += 1;
            sample_field(&spectrum, 1, k)
        })
    });
    let kernel = RenormKernel::with_re(0.4, 1, g).unwrap();
    let test = TestFunction::new(vec![0.0], 0.2).unwrap();
    let op = OperatorConfig::new(kernel, test, lattice, DiagonalPolicy::default()).unwrap();
    let f = TwoPointFunctional::new(ChaosTruncSpec::for_order(1), ChaosTruncSpec::for_order(1), [10.0, 1.0], [0, 0]).unwrap();
    let sample = sample_field(&spectrum, 1, 0);
    c.bench_function("operator_apply_1025", |b| b.iter(|| op.apply(black_box(&f), black_box(&sample)).unwrap()));
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernel_eval, chaos, wick, field_and_operator
}
criterion_main!(benches);
