//! Trains on a generated adding-problem set and prints per-epoch metrics.
//!
//! ```text
//! cargo run --release --example adding -- [lambda] [count] [epochs] [seed] [batch]
//! ```

use chordmixer::training::{load_task, prepare, DataSource, TrainConfig, Trainer};

fn main() -> chordmixer::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let config = TrainConfig {
        source: DataSource::Adding {
            lambda: arg(0, "32").parse().unwrap(),
            count: arg(1, "8000").parse().unwrap(),
        },
        track_size: 8,
        hidden: 64,
        lr: 1e-4,
        epochs: arg(2, "20").parse().unwrap(),
        seed: arg(3, "0").parse().unwrap(),
        batch_size: arg(4, "2").parse().unwrap(),
        ..TrainConfig::default()
    };
    let data = prepare(load_task(&config.source, config.seed)?, config.seed, None)?;
    println!("n_max = {}", data.max_len());
    let trainer = Trainer::new(config, data)?;
    let outcome = trainer.run(|r| {
        println!(
            "{:>3} {:<12} loss={:.6} acc={} t={:.1}s",
            r.epoch,
            r.split,
            r.loss,
            r.accuracy.map_or("-".into(), |a| format!("{a:.4}")),
            r.wall_time_s
        );
        Ok(())
    })?;
    println!("best epoch {}", outcome.best_epoch);
    Ok(())
}
