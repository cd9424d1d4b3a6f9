//! Markup grammar: terminal alphabet, relations, tokenizer, canonical parse
//! trees and their text forms.

mod commands;
mod parse;
mod render;
mod sexpr;
mod symbols;
mod token;
mod tree;

pub use commands::{CommandKind, CommandSet};
pub use parse::{parse_latex, parse_markup};
pub use render::{render_latex, render_tokens};
pub use sexpr::{from_sexpr, sexpr_symbols, to_sexpr};
pub use symbols::{Relation, SymbolClass, SymbolId, SymbolTable};
pub use token::{tokenize_latex, tokens_to_markup, Token};
pub use tree::{
    path_to, preorder, structure_skeleton, tree_equal, Expr, NodeId, NodeKind, ParseNode, ParseTree,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GrammarError {
    #[error("unknown command {0}")]
    UnknownCommand(String),
    #[error("unbalanced braces")]
    UnbalancedBraces,
    #[error("symbol {0:?} is not in the symbol table")]
    SymbolNotInTable(String),
    #[error("malformed script: {0}")]
    MalformedScript(String),
    #[error("node {0} not found")]
    NodeNotFound(NodeId),
    #[error("invalid tree: {0}")]
    InvalidTree(String),
    #[error("symbol table: {0}")]
    SymbolTable(String),
    #[error("command table line {line}: {message}")]
    CommandTable { line: usize, message: String },
    #[error("tree text at byte {pos}: {message}")]
    Serialization { pos: usize, message: String },
}
