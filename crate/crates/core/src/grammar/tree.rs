use std::sync::Arc;

use super::symbols::{Relation, SymbolId, SymbolTable};
use super::GrammarError;

pub type NodeId = usize;

/// Owned, recursive form of a parse tree. Convenient to build and match on;
/// [`ParseTree`] is the indexed form used everywhere else.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Expr {
    /// `S -> σ S`
    Sym(SymbolId, Box<Expr>),
    /// `S -> E`, with the E node's relation branches.
    Ext(Vec<(Relation, Expr)>),
    /// `S -> ε`
    Eps,
}

impl Expr {
    pub fn sym(symbol: SymbolId, next: Expr) -> Expr {
        Expr::Sym(symbol, Box::new(next))
    }

    /// Terminal chain `σ1 σ2 ... ε`.
    pub fn chain(symbols: &[SymbolId]) -> Expr {
        symbols
            .iter()
            .rev()
            .fold(Expr::Eps, |next, &s| Expr::sym(s, next))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Sym {
        symbol: SymbolId,
        next: NodeId,
    },
    Ext {
        ext: NodeId,
    },
    Eps,
    /// The `E` non-terminal. Branch relations are strictly increasing.
    E {
        branches: Vec<(Relation, NodeId)>,
    },
}

impl NodeKind {
    pub fn is_s(&self) -> bool {
        !matches!(self, NodeKind::E { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParseNode {
    pub id: NodeId,
    pub parent: Option<NodeId>,
    pub kind: NodeKind,
}

/// A parse tree stored as a preorder arena: node ids are `0..n` and the
/// root is node 0.
#[derive(Clone, Debug)]
pub struct ParseTree {
    nodes: Vec<ParseNode>,
    symbols: Arc<SymbolTable>,
}

impl ParseTree {
    /// Builds the indexed tree, checking branch order and symbol ids.
    pub fn from_expr(expr: &Expr, symbols: Arc<SymbolTable>) -> Result<ParseTree, GrammarError> {
        let mut nodes = Vec::new();
        push_expr(expr, None, &mut nodes, &symbols)?;
        Ok(ParseTree { nodes, symbols })
    }

    pub fn eps(symbols: Arc<SymbolTable>) -> ParseTree {
        ParseTree {
            nodes: vec![ParseNode {
                id: 0,
                parent: None,
                kind: NodeKind::Eps,
            }],
            symbols,
        }
    }

    pub fn to_expr(&self) -> Expr {
        self.expr_at(0)
    }

    fn expr_at(&self, id: NodeId) -> Expr {
        match &self.nodes[id].kind {
            NodeKind::Sym { symbol, next } => Expr::sym(*symbol, self.expr_at(*next)),
            NodeKind::Ext { ext } => self.expr_at(*ext),
            NodeKind::Eps => Expr::Eps,
            NodeKind::E { branches } => Expr::Ext(
                branches
                    .iter()
                    .map(|&(r, c)| (r, self.expr_at(c)))
                    .collect(),
            ),
        }
    }

    pub fn root(&self) -> &ParseNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> Option<&ParseNode> {
        self.nodes.get(id)
    }

    pub fn nodes(&self) -> &[ParseNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &Arc<SymbolTable> {
        &self.symbols
    }

    /// Children of a node in canonical order.
    pub fn children(&self, id: NodeId) -> Vec<NodeId> {
        match &self.nodes[id].kind {
            NodeKind::Sym { next, .. } => vec![*next],
            NodeKind::Ext { ext } => vec![*ext],
            NodeKind::Eps => vec![],
            NodeKind::E { branches } => branches.iter().map(|&(_, c)| c).collect(),
        }
    }

    /// Number of `E` nodes strictly above `id`.
    pub fn e_depth(&self, id: NodeId) -> usize {
        let mut depth = 0;
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            if matches!(self.nodes[p].kind, NodeKind::E { .. }) {
                depth += 1;
            }
            cur = self.nodes[p].parent;
        }
        depth
    }

    pub fn height(&self) -> usize {
        let mut height = vec![0usize; self.nodes.len()];
        for id in (0..self.nodes.len()).rev() {
            height[id] = self
                .children(id)
                .iter()
                .map(|&c| height[c] + 1)
                .max()
                .unwrap_or(0);
        }
        height[0]
    }

    /// Terminal symbols in preorder.
    pub fn terminals(&self) -> Vec<SymbolId> {
        self.nodes
            .iter()
            .filter_map(|n| match n.kind {
                NodeKind::Sym { symbol, .. } => Some(symbol),
                _ => None,
            })
            .collect()
    }
}

fn push_expr(
    expr: &Expr,
    parent: Option<NodeId>,
    nodes: &mut Vec<ParseNode>,
    symbols: &SymbolTable,
) -> Result<NodeId, GrammarError> {
    let id = nodes.len();
    nodes.push(ParseNode {
        id,
        parent,
        kind: NodeKind::Eps,
    });
    match expr {
        Expr::Eps => {}
        Expr::Sym(symbol, next) => {
            if !symbol.is_placeholder() && symbol.0 >= symbols.len() {
                return Err(GrammarError::InvalidTree(format!(
                    "symbol index {} outside table of {}",
                    symbol.0,
                    symbols.len()
                )));
            }
            let next = push_expr(next, Some(id), nodes, symbols)?;
            nodes[id].kind = NodeKind::Sym {
                symbol: *symbol,
                next,
            };
        }
        Expr::Ext(branches) => {
            if branches.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(GrammarError::InvalidTree(
                    "E branches must be strictly increasing in relation order".into(),
                ));
            }
            let e = nodes.len();
            nodes.push(ParseNode {
                id: e,
                parent: Some(id),
                kind: NodeKind::E { branches: vec![] },
            });
            let mut ids = Vec::with_capacity(branches.len());
            for (rel, child) in branches {
                ids.push((*rel, push_expr(child, Some(e), nodes, symbols)?));
            }
            nodes[e].kind = NodeKind::E { branches: ids };
            nodes[id].kind = NodeKind::Ext { ext: e };
        }
    }
    Ok(id)
}

/// Nodes in preorder (parent before descendants, branches in relation order).
pub fn preorder(tree: &ParseTree) -> Vec<&ParseNode> {
    let mut out = Vec::with_capacity(tree.len());
    let mut stack = vec![0];
    while let Some(id) = stack.pop() {
        out.push(&tree.nodes[id]);
        for c in tree.children(id).into_iter().rev() {
            stack.push(c);
        }
    }
    out
}

/// Same shape with every terminal replaced by [`SymbolId::PLACEHOLDER`].
pub fn structure_skeleton(tree: &ParseTree) -> ParseTree {
    let nodes = tree
        .nodes
        .iter()
        .map(|n| ParseNode {
            kind: match &n.kind {
                NodeKind::Sym { next, .. } => NodeKind::Sym {
                    symbol: SymbolId::PLACEHOLDER,
                    next: *next,
                },
                k => k.clone(),
            },
            ..n.clone()
        })
        .collect();
    ParseTree {
        nodes,
        symbols: tree.symbols.clone(),
    }
}

/// Structural equality over node kinds, symbols and relations. Node ids
/// are ignored.
pub fn tree_equal(a: &ParseTree, b: &ParseTree) -> bool {
    let mut stack = vec![(0usize, 0usize)];
    while let Some((x, y)) = stack.pop() {
        match (&a.nodes[x].kind, &b.nodes[y].kind) {
            (NodeKind::Eps, NodeKind::Eps) => {}
            (NodeKind::Sym { symbol: s, next: n }, NodeKind::Sym { symbol: t, next: m }) => {
                if s != t {
                    return false;
                }
                stack.push((*n, *m));
            }
            (NodeKind::Ext { ext: e }, NodeKind::Ext { ext: f }) => stack.push((*e, *f)),
            (NodeKind::E { branches: p }, NodeKind::E { branches: q }) => {
                if p.len() != q.len() {
                    return false;
                }
                for (&(r, c), &(s, d)) in p.iter().zip(q) {
                    if r != s {
                        return false;
                    }
                    stack.push((c, d));
                }
            }
            _ => return false,
        }
    }
    true
}

impl PartialEq for ParseTree {
    fn eq(&self, other: &Self) -> bool {
        tree_equal(self, other)
    }
}

/// Node ids from the root down to `target`, inclusive.
pub fn path_to(tree: &ParseTree, target: NodeId) -> Result<Vec<NodeId>, GrammarError> {
    let mut node = tree
        .node(target)
        .ok_or(GrammarError::NodeNotFound(target))?;
    let mut path = vec![node.id];
    while let Some(p) = node.parent {
        path.push(p);
        node = &tree.nodes[p];
    }
    path.reverse();
    Ok(path)
}
