//! Greedy tree decoding with a budget, showing the per-step attention.
//!
//! `cargo run --release --example inference [max_nodes] [max_depth]`

use san::data::{synth_dataset, SynthConfig};
use san::decoder::{infer_tree, InferenceBudget};
use san::grammar::{render_latex, CommandSet};
use san::training::{train, TrainConfig, TrainPair};
use san::{ModelConfig, San};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let budget = InferenceBudget::new(
        args.first().copied().unwrap_or(32),
        args.get(1).copied().unwrap_or(4),
    )?;
    let commands = CommandSet::default();
    let synth = SynthConfig::default();
    let pairs: Vec<TrainPair> = synth_dataset(8, &synth, &commands)?
        .into_iter()
        .map(|(tree, _, image)| TrainPair { image, tree })
        .collect();

    let mut model = San::new(ModelConfig::desk(), synth.symbol_table()?, 0)?;
    let config = TrainConfig {
        epochs: 40,
        ..Default::default()
    };
    train(&mut model, &pairs, &config, |_, _| Ok(()))?;

    let pair = &pairs[0];
    let inf = infer_tree(
        &model.encoder,
        &model.decoder,
        &model.store,
        &model.symbols,
        model.config.attention,
        &pair.image,
        budget,
    )?;
    println!("truth      {}", render_latex(&pair.tree, &commands));
    println!("predicted  {}", render_latex(&inf.tree, &commands));
    println!("truncated  {}", inf.truncated);
    for (k, step) in inf.steps.iter().enumerate() {
        let class = match model.symbols.class_of(step.class) {
            Some(c) => format!("{c:?}"),
            None => step.class.to_string(),
        };
        let peak = step
            .attention
            .iter()
            .enumerate()
            .fold(
                (0, 0.0),
                |best, (i, &a)| if a > best.1 { (i, a) } else { best },
            );
        let mass: f64 = step.accumulator.iter().sum();
        println!(
            "step {k:>2}  {class:<24} peak cell {:>2} ({:.2})  path mass {mass:.2}",
            peak.0, peak.1
        );
    }
    Ok(())
}
