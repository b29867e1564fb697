use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use dicerl_core::dice::normalize_zeta;
use dicerl_core::numcore::{Matrix, Mlp, Rng, Tape};
use dicerl_core::{Config, Mode, Trainer};

fn mlp_forward_backward(c: &mut Criterion) {
    let mut rng = Rng::new(0);
    let net = Mlp::new(&[8, 64, 64, 1], &mut rng);
    let x = Matrix::from_shape_fn((256, 8), |_| rng.normal());
    c.bench_function("mlp 8-64-64-1 forward+backward, batch 256", |b| {
        b.iter(|| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let out = net.forward(&mut t, xv);
            let sq = t.square(out);
            let l = t.mean(sq);
            black_box(t.backward(l).unwrap());
        })
    });
}

fn weight_normalization(c: &mut Criterion) {
    let mut rng = Rng::new(1);
    let zeta: Vec<f64> = (0..256).map(|_| rng.uniform_range(0.01, 5.0)).collect();
    c.bench_function("normalize 256 ratios, T = 2", |b| b.iter(|| black_box(normalize_zeta(black_box(&zeta), 2.0))));
}

fn trainer_step(c: &mut Criterion) {
    for mode in [Mode::Ours, Mode::NoDice] {
        let config = Config {
            mode,
            total_steps: 1_000_000,
            warmup_steps: 300,
            eval_interval: 1_000_000,
            ..Config::desk()
        };
        let mut warm = Trainer::new(config).unwrap();
        for _ in 0..400 {
            warm.advance(&mut ()).unwrap();
        }
        c.bench_function(&format!("desk training step, {mode}"), |b| {
            b.iter_batched_ref(|| warm.clone(), |t| t.advance(&mut ()).unwrap(), BatchSize::LargeInput)
        });
    }
}

criterion_group!(benches, mlp_forward_backward, weight_normalization, trainer_step);
criterion_main!(benches);
