use std::sync::Arc;

use super::commands::{CommandKind, CommandSet};
use super::symbols::{Relation, SymbolId, SymbolTable};
use super::token::Token;
use super::tree::{Expr, ParseTree};
use super::GrammarError;

/// A terminal with the argument and script groups attached to it.
struct Atom {
    symbol: SymbolId,
    branches: Vec<(Relation, Vec<Atom>)>,
}

struct Parser<'a> {
    tokens: &'a [Token],
    pos: usize,
    table: &'a SymbolTable,
    commands: &'a CommandSet,
}

/// Parses a token list into its canonical tree.
///
/// Braced groups that are not arguments are spliced into the surrounding
/// sequence, scripts may appear in either order, empty arguments drop their
/// branch, and a symbol whose only remaining branch would be `Right` is
/// written as the plain `S -> σ S` chain. Together these make every markup
/// of the same layout produce the same tree.
pub fn parse_latex(
    tokens: &[Token],
    table: &Arc<SymbolTable>,
    commands: &CommandSet,
) -> Result<ParseTree, GrammarError> {
    let mut p = Parser {
        tokens,
        pos: 0,
        table,
        commands,
    };
    let atoms = p.sequence()?;
    if p.pos != tokens.len() {
        return Err(GrammarError::UnbalancedBraces);
    }
    ParseTree::from_expr(&build(&atoms), table.clone())
}

/// Tokenize and parse in one go.
pub fn parse_markup(
    markup: &str,
    table: &Arc<SymbolTable>,
    commands: &CommandSet,
) -> Result<ParseTree, GrammarError> {
    let tokens = super::token::tokenize_latex(markup, commands)?;
    parse_latex(&tokens, table, commands)
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn next(&mut self) -> Option<&Token> {
        let t = self.tokens.get(self.pos);
        self.pos += 1;
        t
    }

    /// Items up to a closing brace or the end of input.
    fn sequence(&mut self) -> Result<Vec<Atom>, GrammarError> {
        let mut atoms: Vec<Atom> = Vec::new();
        // Index in `atoms` that scripts may attach to.
        let mut base: Option<usize> = None;
        while let Some(tok) = self.peek().cloned() {
            match &tok {
                Token::Close => break,
                Token::Open => {
                    self.pos += 1;
                    let inner = self.group_tail()?;
                    let had = atoms.len();
                    atoms.extend(inner);
                    if atoms.len() > had {
                        base = Some(atoms.len() - 1);
                    } else {
                        base = None;
                    }
                }
                Token::Sup | Token::Sub => {
                    let superscript = tok == Token::Sup;
                    self.pos += 1;
                    let Some(b) = base else {
                        return Err(GrammarError::MalformedScript(
                            "script without a base".into(),
                        ));
                    };
                    let arg = self.argument()?;
                    let kind = self.kind_of(atoms[b].symbol);
                    let rel = CommandSet::script_relation(&kind, superscript);
                    if atoms[b].branches.iter().any(|(r, _)| *r == rel) {
                        return Err(GrammarError::MalformedScript(format!(
                            "duplicate {rel} script"
                        )));
                    }
                    atoms[b].branches.push((rel, arg));
                }
                Token::Command(name) if self.commands.get(name) == Some(&CommandKind::Modifier) => {
                    self.pos += 1;
                }
                _ => {
                    let atom = self.atom()?;
                    atoms.push(atom);
                    base = Some(atoms.len() - 1);
                }
            }
        }
        Ok(atoms)
    }

    /// Contents of a group whose `{` was already consumed.
    fn group_tail(&mut self) -> Result<Vec<Atom>, GrammarError> {
        let inner = self.sequence()?;
        match self.next() {
            Some(Token::Close) => Ok(inner),
            _ => Err(GrammarError::UnbalancedBraces),
        }
    }

    /// A script or command argument: a braced group or a single atom.
    fn argument(&mut self) -> Result<Vec<Atom>, GrammarError> {
        // Modifiers may sit between a large operator and its scripts.
        while matches!(self.peek(), Some(Token::Command(n))
            if self.commands.get(n) == Some(&CommandKind::Modifier))
        {
            self.pos += 1;
        }
        match self.peek() {
            None => Err(GrammarError::MalformedScript(
                "dangling script or argument".into(),
            )),
            Some(Token::Open) => {
                self.pos += 1;
                self.group_tail()
            }
            Some(Token::Close) => Err(GrammarError::MalformedScript(
                "missing argument before '}'".into(),
            )),
            Some(Token::Sup | Token::Sub) => Err(GrammarError::MalformedScript(
                "script with a script argument".into(),
            )),
            Some(_) => Ok(vec![self.atom()?]),
        }
    }

    fn atom(&mut self) -> Result<Atom, GrammarError> {
        let name = match self.next() {
            Some(Token::Char(c)) => c.to_string(),
            Some(Token::Command(c)) => c.clone(),
            _ => unreachable!("atom() called on a structural token"),
        };
        let symbol = self
            .table
            .lookup(&name)
            .ok_or(GrammarError::SymbolNotInTable(name.clone()))?;
        let mut branches = Vec::new();
        if let CommandKind::Structure(rels) = self.commands.kind_of(&name).clone() {
            for rel in rels {
                let arg = self.argument()?;
                branches.push((rel, arg));
            }
        }
        Ok(Atom { symbol, branches })
    }

    fn kind_of(&self, symbol: SymbolId) -> CommandKind {
        let name = self.table.name(symbol).unwrap_or("");
        self.commands.kind_of(name).clone()
    }
}

fn build(atoms: &[Atom]) -> Expr {
    // Built back to front so long sequences do not recurse per symbol.
    let mut expr = Expr::Eps;
    for atom in atoms.iter().rev() {
        let mut branches: Vec<(Relation, Expr)> = atom
            .branches
            .iter()
            .map(|(r, arg)| (*r, build(arg)))
            .filter(|(_, e)| *e != Expr::Eps)
            .collect();
        expr = if branches.is_empty() {
            Expr::sym(atom.symbol, expr)
        } else {
            if expr != Expr::Eps {
                branches.push((Relation::Right, expr));
            }
            branches.sort_by_key(|(r, _)| *r);
            Expr::sym(atom.symbol, Expr::Ext(branches))
        };
    }
    expr
}
