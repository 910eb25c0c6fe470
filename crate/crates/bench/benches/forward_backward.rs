use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use mucap_bench::{bench_experiment, fixture};
use mucap_core::data::SongInstance;
use mucap_core::trainer::{train_step, Adam};
use mucap_core::Graph;

fn forward_backward(c: &mut Criterion) {
    let exp = bench_experiment();
    let (splits, model) = fixture(&exp);
    let batch: Vec<&SongInstance> = splits.train.iter().take(exp.train.batch_size).collect();
    let opts = exp.train.loss_options();

    c.bench_function("forward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, false);
            let l = model.batch_losses(&mut g, &bound, &batch, opts).unwrap();
            black_box(g.item(l.total))
        })
    });

    c.bench_function("forward_backward", |b| {
        b.iter(|| {
            let mut g = Graph::new();
            let bound = model.bind(&mut g, false);
            let l = model.batch_losses(&mut g, &bound, &batch, opts).unwrap();
            g.backward(l.total).unwrap();
            black_box(g.item(l.total))
        })
    });

    c.bench_function("train_step", |b| {
        b.iter_batched(
            || (model.clone(), Adam::new(&model.params, exp.train.lr)),
            |(mut m, mut adam)| train_step(&mut m, &mut adam, &batch, opts, false, 1).unwrap(),
            BatchSize::LargeInput,
        )
    });

    let s = &splits.test[0];
    c.bench_function("generate", |b| {
        b.iter(|| model.generate(&s.music, &s.lyrics, exp.train.max_gen_len).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = forward_backward
}
criterion_main!(benches);
