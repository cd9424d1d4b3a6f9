//! Single-line text form of parse trees:
//!
//! ```text
//! (S a (E (upper_right (S b (eps)))))
//! ```
//!
//! `(S sym next)` is `S -> σ S`, `(E (rel S) ...)` is `S -> E` with its
//! branches, `(eps)` is `S -> ε`. Symbols containing whitespace, parentheses
//! or quotes are written in double quotes with backslash escapes.

use std::sync::Arc;

use super::symbols::{Relation, SymbolId, SymbolTable};
use super::tree::{Expr, NodeId, NodeKind, ParseTree};
use super::GrammarError;

const PLACEHOLDER_NAME: &str = "<placeholder>";

pub fn to_sexpr(tree: &ParseTree) -> String {
    let mut out = String::new();
    write_node(tree, 0, &mut out);
    out
}

fn write_symbol(name: &str, out: &mut String) {
    let needs_quotes = name.is_empty()
        || name
            .chars()
            .any(|c| c.is_whitespace() || c == '(' || c == ')' || c == '"');
    if !needs_quotes {
        out.push_str(name);
        return;
    }
    out.push('"');
    for c in name.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
}

fn write_node(tree: &ParseTree, id: NodeId, out: &mut String) {
    match &tree.nodes()[id].kind {
        NodeKind::Eps => out.push_str("(eps)"),
        NodeKind::Sym { symbol, next } => {
            out.push_str("(S ");
            if symbol.is_placeholder() {
                out.push_str(PLACEHOLDER_NAME);
            } else {
                write_symbol(
                    tree.symbols().name(*symbol).unwrap_or(PLACEHOLDER_NAME),
                    out,
                );
            }
            out.push(' ');
            write_node(tree, *next, out);
            out.push(')');
        }
        NodeKind::Ext { ext } => write_node(tree, *ext, out),
        NodeKind::E { branches } => {
            out.push_str("(E");
            for &(rel, child) in branches {
                out.push_str(" (");
                out.push_str(rel.name());
                out.push(' ');
                write_node(tree, child, out);
                out.push(')');
            }
            out.push(')');
        }
    }
}

#[derive(Debug, PartialEq)]
enum Lex {
    Open,
    Close,
    Atom(String),
}

fn lex(text: &str) -> Result<Vec<(usize, Lex)>, GrammarError> {
    let err = |pos: usize, msg: &str| GrammarError::Serialization {
        pos,
        message: msg.to_string(),
    };
    let mut out = Vec::new();
    let mut it = text.char_indices().peekable();
    while let Some((pos, c)) = it.next() {
        match c {
            c if c.is_whitespace() => {}
            '(' => out.push((pos, Lex::Open)),
            ')' => out.push((pos, Lex::Close)),
            '"' => {
                let mut s = String::new();
                loop {
                    match it.next() {
                        Some((_, '"')) => break,
                        Some((_, '\\')) => match it.next() {
                            Some((_, e)) => s.push(e),
                            None => return Err(err(pos, "unterminated escape")),
                        },
                        Some((_, ch)) => s.push(ch),
                        None => return Err(err(pos, "unterminated string")),
                    }
                }
                out.push((pos, Lex::Atom(s)));
            }
            c => {
                let mut s = String::from(c);
                while let Some(&(_, n)) = it.peek() {
                    if n.is_whitespace() || n == '(' || n == ')' || n == '"' {
                        break;
                    }
                    s.push(n);
                    it.next();
                }
                out.push((pos, Lex::Atom(s)));
            }
        }
    }
    Ok(out)
}

struct Reader<'a> {
    toks: Vec<(usize, Lex)>,
    pos: usize,
    table: &'a SymbolTable,
    end: usize,
}

impl Reader<'_> {
    fn err(&self, msg: impl Into<String>) -> GrammarError {
        let pos = self.toks.get(self.pos).map(|t| t.0).unwrap_or(self.end);
        GrammarError::Serialization {
            pos,
            message: msg.into(),
        }
    }

    fn expect(&mut self, want: Lex) -> Result<(), GrammarError> {
        match self.toks.get(self.pos) {
            Some((_, l)) if *l == want => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(self.err(format!("expected {want:?}"))),
        }
    }

    fn atom(&mut self) -> Result<String, GrammarError> {
        match self.toks.get(self.pos) {
            Some((_, Lex::Atom(s))) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => Err(self.err("expected an atom")),
        }
    }

    fn s_node(&mut self) -> Result<Expr, GrammarError> {
        self.expect(Lex::Open)?;
        let head = self.atom()?;
        let expr = match head.as_str() {
            "eps" => Expr::Eps,
            "S" => {
                let name = self.atom()?;
                let symbol = match self.table.lookup(&name) {
                    Some(id) => id,
                    None if name == PLACEHOLDER_NAME => SymbolId::PLACEHOLDER,
                    None => return Err(GrammarError::SymbolNotInTable(name)),
                };
                Expr::sym(symbol, self.s_node()?)
            }
            "E" => {
                let mut branches = Vec::new();
                while matches!(self.toks.get(self.pos), Some((_, Lex::Open))) {
                    self.pos += 1;
                    let rel_name = self.atom()?;
                    let rel = Relation::from_name(&rel_name)
                        .ok_or_else(|| self.err(format!("unknown relation {rel_name}")))?;
                    let child = self.s_node()?;
                    self.expect(Lex::Close)?;
                    branches.push((rel, child));
                }
                Expr::Ext(branches)
            }
            other => return Err(self.err(format!("unknown node head {other}"))),
        };
        self.expect(Lex::Close)?;
        Ok(expr)
    }
}

/// Distinct terminal names of a serialized tree, in order of first use.
pub fn sexpr_symbols(text: &str) -> Result<Vec<String>, GrammarError> {
    let toks = lex(text)?;
    let mut out: Vec<String> = Vec::new();
    for w in toks.windows(3) {
        if let [(_, Lex::Open), (_, Lex::Atom(head)), (_, Lex::Atom(sym))] = w {
            if head == "S" && sym != PLACEHOLDER_NAME && !out.contains(sym) {
                out.push(sym.clone());
            }
        }
    }
    Ok(out)
}

pub fn from_sexpr(text: &str, table: &Arc<SymbolTable>) -> Result<ParseTree, GrammarError> {
    let mut r = Reader {
        toks: lex(text)?,
        pos: 0,
        table,
        end: text.len(),
    };
    let expr = r.s_node()?;
    if r.pos != r.toks.len() {
        return Err(r.err("trailing input"));
    }
    ParseTree::from_expr(&expr, table.clone())
}
