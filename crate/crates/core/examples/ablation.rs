//! Trains the same data under both attention modes and compares held-out
//! structure accuracy.
//!
//! `cargo run --release --example ablation [n] [epochs] [seed]`

use san::data::{synth_dataset, SynthConfig};
use san::grammar::CommandSet;
use san::training::{score, train, TrainConfig, TrainPair};
use san::{AttentionMode, ModelConfig, San};

fn pairs(n: usize, config: &SynthConfig) -> Result<Vec<TrainPair>, Box<dyn std::error::Error>> {
    Ok(synth_dataset(n, config, &CommandSet::default())?
        .into_iter()
        .map(|(tree, _, image)| TrainPair { image, tree })
        .collect())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let n = args.first().copied().unwrap_or(200) as usize;
    let epochs = args.get(1).copied().unwrap_or(150) as usize;
    let seed = args.get(2).copied().unwrap_or(0);

    let branching = SynthConfig {
        structure_prob: 0.5,
        script_prob: 0.5,
        seed: 100 + seed,
        ..Default::default()
    };
    let train_set = pairs(n, &branching)?;
    let held_out = pairs(
        n / 2,
        &SynthConfig {
            seed: 900 + seed,
            ..branching.clone()
        },
    )?;
    for mode in [AttentionMode::SyntaxAware, AttentionMode::Coverage] {
        let mut model = San::new(
            ModelConfig {
                attention: mode,
                ..ModelConfig::desk()
            },
            branching.symbol_table()?,
            seed,
        )?;
        let config = TrainConfig {
            epochs,
            seed,
            ..Default::default()
        };
        let history = train(&mut model, &train_set, &config, |_, _| Ok(()))?;
        let (te, ts) = score(&model, &train_set, config.budget)?;
        let (he, hs) = score(&model, &held_out, config.budget)?;
        println!(
            "{:<13} loss {:.4}  train ExpRate {te:.1} ESPR {ts:.1}  held-out ExpRate {he:.1} ESPR {hs:.1}",
            mode.to_string(),
            history.last().map_or(f64::NAN, |m| m.loss.total)
        );
    }
    Ok(())
}
