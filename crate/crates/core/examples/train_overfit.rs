//! Overfits 50 synthetic expressions and reports training-set accuracy.
//!
//! `cargo run --release --example train_overfit [n] [epochs] [seed]`

use std::time::Instant;

use san::data::{synth_dataset, SynthConfig};
use san::grammar::{render_latex, tree_equal, CommandSet};
use san::training::{predict_all, train, TrainConfig, TrainPair};
use san::{ModelConfig, San};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let n = args.first().copied().unwrap_or(50) as usize;
    let epochs = args.get(1).copied().unwrap_or(300) as usize;
    let seed = args.get(2).copied().unwrap_or(0);

    let commands = CommandSet::default();
    let synth = SynthConfig {
        seed,
        ..Default::default()
    };
    let pairs: Vec<TrainPair> = synth_dataset(n, &synth, &commands)?
        .into_iter()
        .map(|(tree, _, image)| TrainPair { image, tree })
        .collect();

    let mut model = San::new(ModelConfig::desk(), synth.symbol_table()?, seed)?;
    let config = TrainConfig {
        epochs,
        seed,
        eval_every: 10,
        ..Default::default()
    };
    let start = Instant::now();
    let history = train(&mut model, &pairs, &config, |m, _| {
        if let (Some(e), Some(s)) = (m.train_exprate, m.train_espr) {
            println!(
                "epoch {:>4}  loss {:.4}  exprate {e:.1}  espr {s:.1}  {:.0}s",
                m.epoch,
                m.loss.total,
                start.elapsed().as_secs_f64()
            );
        }
        Ok(())
    })?;
    let first = history.first().map(|m| m.loss.total).unwrap_or(f64::NAN);
    let last = history.last().map(|m| m.loss.total).unwrap_or(f64::NAN);
    println!(
        "loss {first:.4} -> {last:.4} in {:.1}s",
        start.elapsed().as_secs_f64()
    );

    let images: Vec<_> = pairs.iter().map(|p| &p.image).collect();
    let predicted = predict_all(&model, &images, config.budget)?;
    for (p, g) in predicted.iter().zip(&pairs) {
        if !tree_equal(p, &g.tree) {
            println!(
                "miss  {:<24} got {}",
                render_latex(&g.tree, &commands),
                render_latex(p, &commands)
            );
        }
    }
    Ok(())
}
