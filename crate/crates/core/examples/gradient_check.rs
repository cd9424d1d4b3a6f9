//! Compares tape gradients of the four loss terms with central differences.
//!
//! `cargo run --release --example gradient_check`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use san::data::SynthConfig;
use san::encoder::GrayImage;
use san::grammar::{parse_markup, CommandSet};
use san::numerics::{grad_check, GradCheckOptions, NumericsError};
use san::training::{tree_loss, tree_to_samples};
use san::{ModelConfig, San};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ModelConfig {
        channels: 16,
        stem_channels: 4,
        growth: 4,
        block_layers: 1,
        hidden: 32,
        embed: 16,
        attn_dim: 16,
        head_dim: 16,
        ..ModelConfig::desk()
    };
    let symbols = SynthConfig::default().symbol_table()?;
    let mut model = San::new(config, symbols.clone(), 5)?;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let image = GrayImage::new(32, 32, (0..1024).map(|_| rng.gen()).collect())?;
    let tree = parse_markup("\\frac{x^{2}}{y}+1", &symbols, &CommandSet::default())?;
    let samples = tree_to_samples(&tree)?;
    let handles = model.clone();

    for (part, name) in ["symbol", "relation", "reversed symbol", "regularizer"]
        .iter()
        .enumerate()
    {
        let report = grad_check(
            &mut model.store,
            |tape, store| {
                let loss = tree_loss(&handles, store, tape, &image, &samples)
                    .map_err(|e| NumericsError::ShapeMismatch(e.to_string()))?;
                Ok(loss.parts[part])
            },
            &GradCheckOptions {
                per_param: Some(3),
                kink_tolerance: Some(1e-4),
                ..Default::default()
            },
        )?;
        println!(
            "{name:<16} max rel err {:.2e} over {} entries ({} at kinks), worst {:?}",
            report.max_rel_error, report.checked, report.kinks, report.worst
        );
    }
    Ok(())
}
