use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dgnet::{Architecture, MlpParams};
use ndarray::Array2;

fn inputs(rows: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, dim), |(r, c)| ((r * 31 + c * 7) % 97) as f64 / 97.0)
}

fn forward_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("mlp");
    for (dim, width) in [(2, 20), (4, 60), (54, 100)] {
        let arch = Architecture::new(dim, 4, width, 2);
        let p = MlpParams::init(arch, 1).unwrap();
        let x = inputs(1024, dim);
        g.bench_with_input(BenchmarkId::new("forward", width), &x, |b, x| {
            b.iter(|| black_box(p.forward_batch(x.view(), None)))
        });
        g.bench_with_input(BenchmarkId::new("forward_tangent", width), &x, |b, x| {
            b.iter(|| black_box(p.forward_batch(x.view(), Some(0))))
        });
        let tape = p.forward_batch(x.view(), None);
        let adj = vec![1.0; x.nrows()];
        let mut grad = vec![0.0; p.len()];
        g.bench_function(BenchmarkId::new("backward", width), |b| {
            b.iter(|| {
                grad.iter_mut().for_each(|v| *v = 0.0);
                p.backward_batch(&tape, &adj, None, &mut grad, false);
                black_box(grad[0])
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
