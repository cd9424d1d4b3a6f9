use super::commands::{CommandKind, CommandSet};
use super::symbols::Relation;
use super::token::{tokens_to_markup, Token};
use super::tree::{NodeId, NodeKind, ParseTree};

/// Canonical token sequence of a tree, in preorder.
///
/// Scripts are always braced and emitted superscript first. Relations that
/// the base symbol's kind has no markup for (for example `Inside` on a
/// plain letter) fall back to the nearest script form; such trees do not
/// survive a parse round trip.
pub fn render_tokens(tree: &ParseTree, commands: &CommandSet) -> Vec<Token> {
    let mut out = Vec::new();
    render_s(tree, commands, 0, &mut out);
    out
}

/// Canonical markup of a tree.
pub fn render_latex(tree: &ParseTree, commands: &CommandSet) -> String {
    tokens_to_markup(&render_tokens(tree, commands))
}

fn symbol_token(name: &str) -> Token {
    let mut chars = name.chars();
    match (chars.next(), chars.next()) {
        (Some('\\'), Some(_)) => Token::Command(name.to_string()),
        (Some(c), None) => Token::Char(c),
        // Multi-character identifiers are emitted verbatim as one command-like token.
        _ => Token::Command(name.to_string()),
    }
}

fn render_s(tree: &ParseTree, commands: &CommandSet, mut id: NodeId, out: &mut Vec<Token>) {
    // Iterates along the right-chain; recursion only into branches.
    loop {
        match &tree.nodes()[id].kind {
            NodeKind::Eps => return,
            NodeKind::Sym { symbol, next } => {
                let name = if symbol.is_placeholder() {
                    "?"
                } else {
                    tree.symbols().name(*symbol).unwrap_or("?")
                };
                out.push(symbol_token(name));
                match &tree.nodes()[*next].kind {
                    NodeKind::Ext { ext } => {
                        let kind = commands.kind_of(name).clone();
                        match render_branches(tree, commands, *ext, &kind, out) {
                            Some(right) => id = right,
                            None => return,
                        }
                    }
                    _ => id = *next,
                }
            }
            NodeKind::Ext { ext } => {
                match render_branches(tree, commands, *ext, &CommandKind::Symbol, out) {
                    Some(right) => id = right,
                    None => return,
                }
            }
            NodeKind::E { .. } => unreachable!("S position holds an E node"),
        }
    }
}

/// Emits argument groups and scripts of an E node; returns the `Right`
/// child, which the caller continues with.
fn render_branches(
    tree: &ParseTree,
    commands: &CommandSet,
    e: NodeId,
    kind: &CommandKind,
    out: &mut Vec<Token>,
) -> Option<NodeId> {
    let NodeKind::E { branches } = &tree.nodes()[e].kind else {
        unreachable!("Ext points at a non-E node");
    };
    let find = |rel: Relation| branches.iter().find(|(r, _)| *r == rel).map(|&(_, c)| c);
    let mut used = Vec::new();

    if let CommandKind::Structure(args) = kind {
        for rel in args {
            out.push(Token::Open);
            if let Some(c) = find(*rel) {
                render_s(tree, commands, c, out);
            }
            out.push(Token::Close);
            used.push(*rel);
        }
    }

    let (sup, sub) = match kind {
        CommandKind::LargeOp => (Relation::Above, Relation::Below),
        _ => (Relation::UpperRight, Relation::LowRight),
    };
    let mut scripts: Vec<(Token, Relation)> = vec![(Token::Sup, sup), (Token::Sub, sub)];
    // Fallback forms for relations this kind cannot express.
    for &(rel, _) in branches {
        if rel == Relation::Right || used.contains(&rel) || rel == sup || rel == sub {
            continue;
        }
        let tok = match rel {
            Relation::Below | Relation::LowRight => Token::Sub,
            _ => Token::Sup,
        };
        scripts.push((tok, rel));
    }
    for (tok, rel) in scripts {
        if used.contains(&rel) {
            continue;
        }
        if let Some(c) = find(rel) {
            out.push(tok);
            out.push(Token::Open);
            render_s(tree, commands, c, out);
            out.push(Token::Close);
            used.push(rel);
        }
    }
    find(Relation::Right)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grammar::parse::parse_markup;
    use crate::grammar::symbols::SymbolTable;
    use crate::grammar::tree::{tree_equal, ParseTree};
    use std::sync::Arc;

    fn table() -> Arc<SymbolTable> {
        Arc::new(
            SymbolTable::new([
                "a", "b", "c", "n", "i", "x", "+", "1", "2", "\\sum", "\\frac", "\\sqrt", "\\alpha",
            ])
            .unwrap(),
        )
    }

    fn canon(s: &str) -> String {
        let c = CommandSet::default();
        render_latex(&parse_markup(s, &table(), &c).unwrap(), &c)
    }

    #[test]
    fn eps_renders_empty() {
        let t = ParseTree::eps(table());
        assert_eq!(render_latex(&t, &CommandSet::default()), "");
    }

    #[test]
    fn superscript_before_subscript() {
        assert_eq!(canon("a_{c}^{b}"), "a^{b}_{c}");
        assert_eq!(canon("a_c^b+1"), "a^{b}_{c}+1");
    }

    #[test]
    fn structures_and_operators() {
        assert_eq!(canon("\\sum\\limits_{i}^{n}a"), "\\sum^{n}_{i}a");
        assert_eq!(canon("\\frac12x"), "\\frac{1}{2}x");
        assert_eq!(canon("\\frac{}{2}"), "\\frac{}{2}");
        assert_eq!(canon("\\sqrt{x}^{2}"), "\\sqrt{x}^{2}");
        assert_eq!(canon("\\alpha b"), "\\alpha b");
    }

    #[test]
    fn render_is_a_fixed_point() {
        let c = CommandSet::default();
        for s in [
            "a_{c}^{b}",
            "\\frac{a^{2}}{\\sqrt{x}}+\\sum_{i}n",
            "{a}{b}c",
            "x_{i_{1}}",
        ] {
            let t = parse_markup(s, &table(), &c).unwrap();
            let r = render_latex(&t, &c);
            let t2 = parse_markup(&r, &table(), &c).unwrap();
            assert!(tree_equal(&t, &t2), "{s} -> {r}");
            assert_eq!(render_latex(&t2, &c), r);
        }
    }
}
