//! Trains on the default planted task and prints metrics and extracted rules.
//!
//! `cargo run --release -p clmn-core --example planted -- [seed] [noise] [alpha1] [alpha2]`

use clmn_core::data::{split, PlantedTask};
use clmn_core::reasoner::Thresholds;
use clmn_core::training::{fit, TrainConfig};

fn main() -> clmn_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(42);
    let noise: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0.0);
    let alpha1: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(100.0);
    let alpha2: f64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(10.0);

    let task = PlantedTask::restaurant(noise)?;
    let records = task.generate(3000, seed)?;
    let (train, val, test) = split(&records, (2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0), seed)?;
    let config = TrainConfig {
        seed,
        alpha1,
        alpha2,
        ..TrainConfig::default()
    };
    let start = std::time::Instant::now();
    let ck = fit(&config, &task.spec, task.n_classes(), &train, &val)?;
    println!("trained in {:.1?}", start.elapsed());
    for r in &ck.history {
        println!(
            "epoch {:>2} loss {:.4} val {:?}",
            r.epoch,
            r.train_loss.total,
            r.val.values()
        );
    }
    println!("test {:?}", ck.model.evaluate(&test)?.values());
    let means = ck.model.signal_means(&train)?;
    for j in 0..task.n_classes() {
        let p: Vec<String> = (0..task.spec.n_concepts())
            .map(|s| format!("{:.2}/{:.2}", means.mean_polarity(j, s), means.mean_relevance(j, s)))
            .collect();
        println!("class {j} p/r {}", p.join(" "));
    }
    let planted = task.rendered_rules()?;
    for rule in ck.model.extract_rules(&train, Thresholds::default())? {
        println!("class {}: {}   (planted: {})", rule.class, rule.rendered, planted[rule.class]);
    }
    Ok(())
}
