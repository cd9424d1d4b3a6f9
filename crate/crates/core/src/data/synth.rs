//! Random expressions over a small alphabet.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::raster::rasterize;
use super::DataError;
use crate::encoder::GrayImage;
use crate::grammar::{parse_markup, render_latex, CommandKind, CommandSet, ParseTree, SymbolTable};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Alphabet; structure commands among them open nested arguments.
    pub symbols: Vec<String>,
    /// Maximum nesting of arguments and scripts.
    pub max_depth: usize,
    /// Maximum number of terminals.
    pub max_length: usize,
    pub min_length: usize,
    /// Glyph edge in pixels at full scale.
    pub glyph_size: usize,
    pub canvas_height: usize,
    pub canvas_width: usize,
    pub zeta: usize,
    pub seed: u64,
    /// Chance that a plain symbol receives scripts.
    pub script_prob: f64,
    /// Chance of drawing a structure command when one fits.
    pub structure_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            symbols: [
                "a", "b", "c", "x", "y", "1", "2", "+", "-", "=", "\\frac", "\\sqrt",
            ]
            .iter()
            .map(|s| s.to_string())
            .collect(),
            max_depth: 2,
            max_length: 8,
            min_length: 1,
            glyph_size: 6,
            canvas_height: 32,
            canvas_width: 64,
            zeta: 8,
            seed: 0,
            script_prob: 0.25,
            structure_prob: 0.2,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Synth(m.to_string()));
        if self.symbols.is_empty() {
            return bad("empty alphabet");
        }
        if self.max_length < 1 || self.min_length > self.max_length {
            return bad("need 1 <= max_length and min_length <= max_length");
        }
        if self.glyph_size < 3 {
            return bad("glyph size must be at least 3 pixels");
        }
        if self.zeta == 0
            || self.canvas_height == 0
            || self.canvas_width == 0
            || !self.canvas_height.is_multiple_of(self.zeta)
            || !self.canvas_width.is_multiple_of(self.zeta)
        {
            return bad("canvas dims must be positive multiples of zeta");
        }
        if !(0.0..=1.0).contains(&self.script_prob) || !(0.0..=1.0).contains(&self.structure_prob) {
            return bad("probabilities must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn symbol_table(&self) -> Result<Arc<SymbolTable>, DataError> {
        Ok(Arc::new(SymbolTable::new(
            self.symbols.iter().map(String::as_str),
        )?))
    }
}

struct Gen<'a, R> {
    rng: &'a mut R,
    config: &'a SynthConfig,
    plain: Vec<&'a str>,
    structures: Vec<(&'a str, usize)>,
}

impl<R: Rng> Gen<'_, R> {
    /// Markup with exactly `quota` terminals.
    fn seq(&mut self, mut depth: usize, mut quota: usize) -> String {
        let mut out = String::new();
        while quota > 0 {
            quota -= 1;
            let nested = depth < self.config.max_depth;
            let fitting: Vec<(&str, usize)> = self
                .structures
                .iter()
                .copied()
                .filter(|&(_, args)| nested && args <= quota)
                .collect();
            if !fitting.is_empty()
                && (self.plain.is_empty() || self.rng.gen_bool(self.config.structure_prob))
            {
                let (name, args) = fitting[self.rng.gen_range(0..fitting.len())];
                out.push_str(name);
                for a in 0..args {
                    let rest = args - a - 1;
                    let take = self.rng.gen_range(1..=(quota - rest).min(3));
                    quota -= take;
                    out.push('{');
                    out.push_str(&self.seq(depth + 1, take));
                    out.push('}');
                }
                // the rest of the sequence hangs off this node's E
                depth += 1;
                continue;
            }
            if self.plain.is_empty() {
                break;
            }
            let name = self.plain[self.rng.gen_range(0..self.plain.len())];
            out.push_str(name);
            if name.starts_with('\\') {
                out.push(' ');
            }
            if nested && quota > 0 && self.rng.gen_bool(self.config.script_prob) {
                let both = quota >= 2 && self.rng.gen_bool(0.3);
                let scripts: &[char] = if both {
                    &['^', '_']
                } else if self.rng.gen_bool(0.5) {
                    &['^']
                } else {
                    &['_']
                };
                for (i, s) in scripts.iter().enumerate() {
                    let rest = scripts.len() - i - 1;
                    let take = self.rng.gen_range(1..=(quota - rest).min(3));
                    quota -= take;
                    out.push(*s);
                    out.push('{');
                    out.push_str(&self.seq(depth + 1, take));
                    out.push('}');
                }
                depth += 1;
            }
        }
        out
    }
}

/// Draws a random canonical tree; the returned markup is its rendering.
pub fn synth_expression<R: Rng>(
    rng: &mut R,
    config: &SynthConfig,
    commands: &CommandSet,
) -> Result<(ParseTree, String), DataError> {
    config.validate()?;
    let table = config.symbol_table()?;
    let mut plain = Vec::new();
    let mut structures = Vec::new();
    for s in &config.symbols {
        match commands.kind_of(s) {
            CommandKind::Structure(args) => structures.push((s.as_str(), args.len())),
            CommandKind::Modifier => {}
            _ => plain.push(s.as_str()),
        }
    }
    let quota = rng.gen_range(config.min_length..=config.max_length);
    let mut g = Gen {
        rng,
        config,
        plain,
        structures,
    };
    let raw = g.seq(0, quota);
    let tree = parse_markup(&raw, &table, commands)?;
    let markup = render_latex(&tree, commands);
    Ok((tree, markup))
}

/// `n` expressions that fit the canvas, with their images, drawn from a
/// generator seeded with `config.seed`. Overflowing draws are rejected.
pub fn synth_dataset(
    n: usize,
    config: &SynthConfig,
    commands: &CommandSet,
) -> Result<Vec<(ParseTree, String, GrayImage)>, DataError> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut out = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 1000 * (n + 1) {
            return Err(DataError::Synth(format!(
                "only {} of {n} expressions fit the canvas after {attempts} draws",
                out.len()
            )));
        }
        let (tree, markup) = synth_expression(&mut rng, config, commands)?;
        match rasterize(&tree, commands, config) {
            Ok(img) => out.push((tree, markup, img)),
            Err(DataError::CanvasOverflow { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}
