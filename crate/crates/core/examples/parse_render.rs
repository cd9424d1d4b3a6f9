//! Parses markup into canonical trees and renders them back.
//!
//! `cargo run --example parse_render [markup...]`

use std::sync::Arc;

use san::grammar::{parse_markup, render_latex, to_sexpr, tree_equal, CommandSet, SymbolTable};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let commands = CommandSet::default();
    let table = Arc::new(SymbolTable::new([
        "a", "b", "c", "x", "y", "n", "i", "0", "1", "2", "+", "-", "=", "\\frac", "\\sqrt",
        "\\sum",
    ])?);
    let mut inputs: Vec<String> = std::env::args().skip(1).collect();
    if inputs.is_empty() {
        inputs = [
            "x_1^2+y",
            "x^2_1 + y",
            "\\frac{a+b}{c}",
            "\\sqrt{x^{2}}",
            "\\sum\\limits_{i=0}^{n}i",
        ]
        .map(String::from)
        .to_vec();
    }
    let mut trees = Vec::new();
    for markup in &inputs {
        let tree = parse_markup(markup, &table, &commands)?;
        println!("{markup}");
        println!("  canonical  {}", render_latex(&tree, &commands));
        println!("  tree       {}", to_sexpr(&tree));
        trees.push(tree);
    }
    for i in 0..trees.len() {
        for j in i + 1..trees.len() {
            if tree_equal(&trees[i], &trees[j]) {
                println!("same tree: {:?} and {:?}", inputs[i], inputs[j]);
            }
        }
    }
    Ok(())
}
