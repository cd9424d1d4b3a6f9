//! Recognition metrics on hand-made predictions.
//!
//! `cargo run --example evaluation`

use san::data::SynthConfig;
use san::evaluation::{difficulty, levenshtein, EvalReport};
use san::grammar::{parse_markup, render_tokens, CommandSet};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let commands = CommandSet::default();
    let table = SynthConfig::default().symbol_table()?;
    let pairs = [
        ("x^{2}+1", "x^{2}+1"),
        ("\\frac{a}{b}", "\\frac{a}{c}"),
        ("\\sqrt{x}+y", "\\sqrt{x}-2"),
        ("a_{1}^{2}", "a^{2}"),
        ("x+y=2", "x+y=2"),
    ];
    let mut predicted = Vec::new();
    let mut truth = Vec::new();
    for (t, p) in pairs {
        let (t, p) = (
            parse_markup(t, &table, &commands)?,
            parse_markup(p, &table, &commands)?,
        );
        let d = levenshtein(&render_tokens(&p, &commands), &render_tokens(&t, &commands));
        println!(
            "{:<14} vs {:<14} distance {d}  {}",
            pairs[truth.len()].0,
            pairs[truth.len()].1,
            difficulty(&t, &commands)?.name()
        );
        truth.push(t);
        predicted.push(p);
    }
    let report = EvalReport::compute(&predicted, &truth, &commands)?;
    println!();
    print!("{}", report.to_table());
    println!("laws hold: {}", report.laws_hold());
    Ok(())
}
