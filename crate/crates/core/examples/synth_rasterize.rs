//! Draws synthetic expressions and prints them as ASCII art.
//!
//! `cargo run --example synth_rasterize [n] [seed]`

use san::data::{synth_dataset, SynthConfig};
use san::evaluation::structural_complexity;
use san::grammar::CommandSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<u64> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let n = args.first().copied().unwrap_or(3) as usize;
    let config = SynthConfig {
        seed: args.get(1).copied().unwrap_or(0),
        ..Default::default()
    };
    for (tree, markup, image) in synth_dataset(n, &config, &CommandSet::default())? {
        println!(
            "{markup}   ({} terminals, depth {})",
            tree.terminals().len(),
            structural_complexity(&tree)
        );
        for y in 0..image.height() {
            let row: String = (0..image.width())
                .map(|x| match image.get(y, x) {
                    v if v > 0.66 => '#',
                    v if v > 0.33 => '+',
                    v if v > 0.0 => '.',
                    _ => ' ',
                })
                .collect();
            println!("|{}|", row.trim_end());
        }
        println!();
    }
    Ok(())
}
