use std::hint::black_box;

use clmn_core::data::PlantedTask;
use clmn_core::diffmath::Graph;
use clmn_core::encoder::Vocabulary;
use clmn_core::training::{train_step, Adam, Clmn, Example, TrainConfig};
use criterion::{criterion_group, criterion_main, BatchSize, Criterion};

fn setup(batch: usize) -> (Clmn, Vec<Example>, TrainConfig) {
    let task = PlantedTask::restaurant(0.0).unwrap();
    let records = task.generate(batch, 7).unwrap();
    let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
    let vocab = Vocabulary::build(&texts, 1).unwrap();
    let config = TrainConfig::default();
    let model = Clmn::init(&config, task.spec.clone(), task.n_classes(), vocab).unwrap();
    let examples = model.prepare(&records).unwrap();
    (model, examples, config)
}

fn forward_backward(c: &mut Criterion) {
    for batch in [8, 32] {
        let (model, examples, config) = setup(batch);
        let refs: Vec<&Example> = examples.iter().collect();

        c.bench_function(&format!("forward/{batch}"), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let vars = model.bind(&mut g, &mut Vec::new());
                let fwd = model.forward(&mut g, &vars, black_box(&refs)).unwrap();
                model
                    .total_loss(&mut g, &fwd, &refs, config.alpha1, config.alpha2)
                    .unwrap()
            })
        });

        c.bench_function(&format!("forward_backward/{batch}"), |b| {
            b.iter(|| {
                let mut g = Graph::new();
                let vars = model.bind(&mut g, &mut Vec::new());
                let fwd = model.forward(&mut g, &vars, black_box(&refs)).unwrap();
                let loss = model
                    .total_loss(&mut g, &fwd, &refs, config.alpha1, config.alpha2)
                    .unwrap();
                g.backward(loss.total).unwrap();
                g
            })
        });

        c.bench_function(&format!("train_step/{batch}"), |b| {
            b.iter_batched(
                || {
                    let m = model.clone();
                    let opt = Adam::new(&m, config.learning_rate, config.adam);
                    (m, opt)
                },
                |(mut m, mut opt)| {
                    train_step(&mut m, &mut opt, &refs, config.alpha1, config.alpha2).unwrap()
                },
                BatchSize::LargeInput,
            )
        });
    }
}

criterion_group!(benches, forward_backward);
criterion_main!(benches);
