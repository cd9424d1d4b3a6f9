//! Recognition metrics over aligned prediction and ground-truth trees.

use std::fmt::Write as _;

use thiserror::Error;

use crate::grammar::{
    render_tokens, structure_skeleton, tree_equal, CommandSet, NodeKind, ParseTree,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("{predictions} predictions for {ground_truth} references")]
    LengthMismatch {
        predictions: usize,
        ground_truth: usize,
    },
    #[error("expression has no tokens")]
    EmptyExpression,
}

/// Unit-cost insert/delete/substitute distance.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn check(p: &[ParseTree], g: &[ParseTree]) -> Result<(), EvalError> {
    if p.len() != g.len() {
        return Err(EvalError::LengthMismatch {
            predictions: p.len(),
            ground_truth: g.len(),
        });
    }
    Ok(())
}

fn percent(hits: usize, n: usize) -> f64 {
    if n == 0 {
        0.0
    } else {
        100.0 * hits as f64 / n as f64
    }
}

fn within(p: &ParseTree, g: &ParseTree, k: usize, commands: &CommandSet) -> bool {
    tree_equal(p, g)
        || (k > 0 && levenshtein(&render_tokens(p, commands), &render_tokens(g, commands)) <= k)
}

/// Percentage of exact matches (`k = 0`) or of predictions within `k`
/// token edits of the reference.
pub fn exprate(
    predictions: &[ParseTree],
    ground_truth: &[ParseTree],
    k: usize,
    commands: &CommandSet,
) -> Result<f64, EvalError> {
    check(predictions, ground_truth)?;
    let hits = predictions
        .iter()
        .zip(ground_truth)
        .filter(|(p, g)| within(p, g, k, commands))
        .count();
    Ok(percent(hits, predictions.len()))
}

/// Percentage of predictions whose structure matches, ignoring symbols.
pub fn espr(predictions: &[ParseTree], ground_truth: &[ParseTree]) -> Result<f64, EvalError> {
    check(predictions, ground_truth)?;
    let hits = predictions
        .iter()
        .zip(ground_truth)
        .filter(|(p, g)| tree_equal(&structure_skeleton(p), &structure_skeleton(g)))
        .count();
    Ok(percent(hits, predictions.len()))
}

/// Maximum nesting of `E` nodes on any root-to-leaf path.
pub fn structural_complexity(tree: &ParseTree) -> usize {
    tree.nodes()
        .iter()
        .map(|n| tree.e_depth(n.id) + usize::from(matches!(n.kind, NodeKind::E { .. })))
        .max()
        .unwrap_or(0)
}

/// Number of canonical markup tokens.
pub fn char_length(tree: &ParseTree, commands: &CommandSet) -> usize {
    render_tokens(tree, commands).len()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Difficulty {
    Easy,
    Moderate,
    Hard,
}

impl Difficulty {
    pub const ALL: [Difficulty; 3] = [Difficulty::Easy, Difficulty::Moderate, Difficulty::Hard];

    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Moderate => "moderate",
            Difficulty::Hard => "hard",
        }
    }
}

/// Easy: S.C. ≤ 1 and C.L. < 10. Moderate: S.C. ≤ 1 and C.L. < 20.
/// Hard otherwise.
pub fn difficulty(tree: &ParseTree, commands: &CommandSet) -> Result<Difficulty, EvalError> {
    let cl = char_length(tree, commands);
    if cl == 0 {
        return Err(EvalError::EmptyExpression);
    }
    Ok(match (structural_complexity(tree), cl) {
        (0..=1, 1..=9) => Difficulty::Easy,
        (0..=1, 10..=19) => Difficulty::Moderate,
        _ => Difficulty::Hard,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Rates {
    pub exprate: f64,
    pub exprate_le1: f64,
    pub exprate_le2: f64,
    pub espr: f64,
}

impl Rates {
    pub fn compute(
        p: &[ParseTree],
        g: &[ParseTree],
        commands: &CommandSet,
    ) -> Result<Rates, EvalError> {
        Ok(Rates {
            exprate: exprate(p, g, 0, commands)?,
            exprate_le1: exprate(p, g, 1, commands)?,
            exprate_le2: exprate(p, g, 2, commands)?,
            espr: espr(p, g)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n: usize,
    pub overall: Rates,
    /// Count and rates per band, in `Difficulty::ALL` order.
    pub subsets: Vec<(Difficulty, usize, Rates)>,
}

impl EvalReport {
    /// Empty references have no band of their own and are counted as easy.
    pub fn compute(
        predictions: &[ParseTree],
        ground_truth: &[ParseTree],
        commands: &CommandSet,
    ) -> Result<EvalReport, EvalError> {
        let overall = Rates::compute(predictions, ground_truth, commands)?;
        let bands: Vec<Difficulty> = ground_truth
            .iter()
            .map(|g| difficulty(g, commands).unwrap_or(Difficulty::Easy))
            .collect();
        let mut subsets = Vec::new();
        for d in Difficulty::ALL {
            let (p, g): (Vec<ParseTree>, Vec<ParseTree>) = predictions
                .iter()
                .zip(ground_truth)
                .zip(&bands)
                .filter(|(_, b)| **b == d)
                .map(|((p, g), _)| (p.clone(), g.clone()))
                .unzip();
            subsets.push((d, p.len(), Rates::compute(&p, &g, commands)?));
        }
        Ok(EvalReport {
            n: predictions.len(),
            overall,
            subsets,
        })
    }

    /// Rates are nested (exact within one edit within two, exact within
    /// structure) and the bands partition the set.
    pub fn laws_hold(&self) -> bool {
        let nested = |r: &Rates| {
            r.exprate <= r.exprate_le1 && r.exprate_le1 <= r.exprate_le2 && r.exprate <= r.espr
        };
        nested(&self.overall)
            && self.subsets.iter().all(|(_, _, r)| nested(r))
            && self.subsets.iter().map(|s| s.1).sum::<usize>() == self.n
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "S.C. = maximum nesting depth of E nodes; C.L. = canonical token count"
        );
        let _ = writeln!(
            out,
            "{:<10} {:>6} {:>8} {:>8} {:>8} {:>8}",
            "subset", "n", "ExpRate", "<=1", "<=2", "ESPR"
        );
        let mut row = |name: &str, n: usize, r: &Rates| {
            let _ = writeln!(
                out,
                "{:<10} {:>6} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
                name, n, r.exprate, r.exprate_le1, r.exprate_le2, r.espr
            );
        };
        row("all", self.n, &self.overall);
        for (d, n, r) in &self.subsets {
            row(d.name(), *n, r);
        }
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("subset\tn\texprate\texprate_le1\texprate_le2\tespr\n");
        let mut row = |name: &str, n: usize, r: &Rates| {
            let _ = writeln!(
                out,
                "{name}\t{n}\t{}\t{}\t{}\t{}",
                r.exprate, r.exprate_le1, r.exprate_le2, r.espr
            );
        };
        row("all", self.n, &self.overall);
        for (d, n, r) in &self.subsets {
            row(d.name(), *n, r);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::{parse_markup, SymbolTable};
    use std::sync::Arc;

    fn trees(markups: &[&str]) -> Vec<ParseTree> {
        let table = Arc::new(
            SymbolTable::new([
                "a", "b", "c", "x", "y", "+", "-", "1", "2", "\\frac", "\\sqrt",
            ])
            .unwrap(),
        );
        markups
            .iter()
            .map(|m| parse_markup(m, &table, &CommandSet::default()).unwrap())
            .collect()
    }

    #[test]
    fn levenshtein_oracle() {
        assert_eq!(levenshtein(b"kitten", b"sitting"), 3);
        assert_eq!(levenshtein::<u8>(b"", b"abc"), 3);
        assert_eq!(levenshtein(b"abc", b"abc"), 0);
    }

    #[test]
    fn one_substitution() {
        let c = CommandSet::default();
        let p = trees(&["a+b"]);
        let g = trees(&["a-b"]);
        assert_eq!(exprate(&p, &g, 0, &c).unwrap(), 0.0);
        assert_eq!(exprate(&p, &g, 1, &c).unwrap(), 100.0);
        assert_eq!(exprate(&g, &g, 0, &c).unwrap(), 100.0);
    }

    #[test]
    fn espr_ignores_symbols_but_not_relations() {
        assert_eq!(espr(&trees(&["a^{b}"]), &trees(&["x^{y}"])).unwrap(), 100.0);
        assert_eq!(espr(&trees(&["a^{b}"]), &trees(&["a_{b}"])).unwrap(), 0.0);
        assert_eq!(
            exprate(
                &trees(&["a^{b}"]),
                &trees(&["x^{y}"]),
                0,
                &CommandSet::default()
            )
            .unwrap(),
            0.0
        );
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            espr(&trees(&["a"]), &[]),
            Err(EvalError::LengthMismatch {
                predictions: 1,
                ground_truth: 0
            })
        ));
    }

    #[test]
    fn difficulty_bands() {
        let c = CommandSet::default();
        let t = trees(&["a+b", "a+b-c+1-2+x", "a^{b^{c}}", "", "\\frac{a}{b}"]);
        assert_eq!(structural_complexity(&t[0]), 0);
        assert_eq!(char_length(&t[0], &c), 3);
        assert_eq!(difficulty(&t[0], &c).unwrap(), Difficulty::Easy);
        assert_eq!(char_length(&t[1], &c), 11);
        assert_eq!(difficulty(&t[1], &c).unwrap(), Difficulty::Moderate);
        assert_eq!(structural_complexity(&t[2]), 2);
        assert_eq!(difficulty(&t[2], &c).unwrap(), Difficulty::Hard);
        assert_eq!(difficulty(&t[3], &c), Err(EvalError::EmptyExpression));
        assert_eq!(structural_complexity(&t[4]), 1);
    }

    #[test]
    fn report_partitions_and_orders() {
        let c = CommandSet::default();
        let g = trees(&["a+b", "a+b-c+1-2+x", "a^{b^{c}}", "x^{y}"]);
        let p = trees(&["a+b", "a+b-c+1-2+y", "a^{b}", "a^{b}"]);
        let r = EvalReport::compute(&p, &g, &c).unwrap();
        assert_eq!(r.subsets.iter().map(|s| s.1).sum::<usize>(), 4);
        let o = r.overall;
        assert!(o.exprate <= o.exprate_le1 && o.exprate_le1 <= o.exprate_le2);
        assert!(o.exprate <= o.espr);
        assert_eq!(o.exprate, 25.0);
        assert!(r.laws_hold());
        assert!(r.to_tsv().lines().count() == 5);
        assert!(r.to_table().contains("ESPR"));
    }
}
