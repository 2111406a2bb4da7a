use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use geoflow::experiments::{gen_planar_classification, planar_network, PlanarSpec};
use geoflow::linalg;
use geoflow::train::{grad, LossSpec, Targets};

fn setup(n: usize) -> (geoflow::blocks::Network, Vec<Vec<f64>>, Targets) {
    let net = planar_network(&PlanarSpec { width: 8, ..Default::default() }, &mut linalg::rng(1)).unwrap();
    let d = gen_planar_classification(n / 2, 0.0, 2).unwrap();
    (net, d.inputs, d.targets)
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_all");
    for n in [256, 2048] {
        let (net, x, _) = setup(n);
        g.bench_with_input(BenchmarkId::new("parallel", n), &x, |b, x| b.iter(|| net.forward_all(black_box(x)).unwrap()));
        g.bench_with_input(BenchmarkId::new("sequential", n), &x, |b, x| b.iter(|| net.forward_all_seq(black_box(x)).unwrap()));
    }
    g.finish();
}

fn batch_grad(c: &mut Criterion) {
    let mut g = c.benchmark_group("batch_grad");
    let loss = LossSpec::Hinge { margin: 0.5 };
    for n in [64, 512] {
        let (net, x, t) = setup(n);
        let labels = t.labels().unwrap().to_vec();
        g.bench_with_input(BenchmarkId::new("parallel", n), &x, |b, x| b.iter(|| grad(&net, &loss, black_box(x), &t).unwrap()));
        // Per-sample reverse passes in a plain loop.
        g.bench_with_input(BenchmarkId::new("sequential", n), &x, |b, x| {
            b.iter(|| {
                let mut acc = vec![0.0; geoflow::params::Parameterized::n_params(&net)];
                for (xi, &l) in black_box(x).iter().zip(&labels) {
                    let z = net.forward(xi).unwrap();
                    let mut w = vec![0.0; 2];
                    if 0.5 - (z[l] - z[1 - l]) > 0.0 {
                        w[l] = -1.0;
                        w[1 - l] = 1.0;
                    }
                    let (_, gi) = net.vjp(xi, &w).unwrap();
                    linalg::axpy(&mut acc, 1.0, &gi);
                }
                acc
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward, batch_grad);
criterion_main!(benches);
