use std::collections::HashMap;
use std::path::Path;

use super::symbols::Relation;
use super::GrammarError;

/// How a backslash command behaves in markup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum CommandKind {
    /// Plain terminal (`\alpha`, `\times`).
    Symbol,
    /// Terminal whose `^`/`_` scripts sit above/below it (`\sum`).
    LargeOp,
    /// Terminal taking one braced argument per listed relation (`\frac`).
    Structure(Vec<Relation>),
    /// Layout hint with no terminal of its own (`\limits`).
    Modifier,
}

/// Configured backslash commands. Commands outside the set are rejected by
/// the tokenizer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CommandSet {
    commands: HashMap<String, CommandKind>,
}

const DEFAULT_COMMANDS: &str = r"
# name        kind       argument relations
\frac         structure  above below
\sqrt         structure  inside
\sum          largeop
\prod         largeop
\int          largeop
\lim          largeop
\limits       modifier
\alpha        symbol
\beta         symbol
\gamma        symbol
\delta        symbol
\theta        symbol
\lambda       symbol
\mu           symbol
\pi           symbol
\sigma        symbol
\phi          symbol
\infty        symbol
\times        symbol
\div          symbol
\pm           symbol
\cdot         symbol
\cdots        symbol
\ldots        symbol
\leq          symbol
\geq          symbol
\neq          symbol
\to           symbol
\rightarrow   symbol
\in           symbol
\sin          symbol
\cos          symbol
\tan          symbol
\log          symbol
\exp          symbol
\{            symbol
\}            symbol
";

impl Default for CommandSet {
    fn default() -> Self {
        Self::from_text(DEFAULT_COMMANDS).expect("built-in command table is valid")
    }
}

impl CommandSet {
    /// Parses a command table: one command per line, `name kind [relations...]`,
    /// `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self, GrammarError> {
        let mut commands = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            // `\#` would be cut by the comment split; it is not supported.
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| GrammarError::CommandTable {
                line: lineno + 1,
                message: msg.to_string(),
            };
            let mut fields = line.split_whitespace();
            let name = fields.next().ok_or_else(|| bad("missing name"))?;
            if !name.starts_with('\\') || name.len() < 2 {
                return Err(bad("command names start with a backslash"));
            }
            let kind = match fields.next().ok_or_else(|| bad("missing kind"))? {
                "symbol" => CommandKind::Symbol,
                "largeop" => CommandKind::LargeOp,
                "modifier" => CommandKind::Modifier,
                "structure" => {
                    let mut rels = Vec::new();
                    for f in fields.by_ref() {
                        let r = Relation::from_name(f)
                            .ok_or_else(|| bad(&format!("unknown relation {f}")))?;
                        if r == Relation::Right || rels.contains(&r) {
                            return Err(bad(&format!("relation {f} cannot be an argument")));
                        }
                        rels.push(r);
                    }
                    if rels.is_empty() {
                        return Err(bad("structure commands need at least one argument"));
                    }
                    CommandKind::Structure(rels)
                }
                other => return Err(bad(&format!("unknown kind {other}"))),
            };
            if fields.next().is_some() {
                return Err(bad("trailing fields"));
            }
            commands.insert(name.to_string(), kind);
        }
        Ok(CommandSet { commands })
    }

    pub fn load(path: &Path) -> Result<Self, GrammarError> {
        let text = std::fs::read_to_string(path).map_err(|e| GrammarError::CommandTable {
            line: 0,
            message: format!("{}: {e}", path.display()),
        })?;
        Self::from_text(&text)
    }

    pub fn get(&self, name: &str) -> Option<&CommandKind> {
        self.commands.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.commands.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: CommandKind) {
        self.commands.insert(name.into(), kind);
    }

    /// Kind of a terminal name; anything not registered is an ordinary symbol.
    pub fn kind_of(&self, name: &str) -> &CommandKind {
        self.commands.get(name).unwrap_or(&CommandKind::Symbol)
    }

    /// Relation a script token maps to for a base of the given kind.
    pub fn script_relation(kind: &CommandKind, superscript: bool) -> Relation {
        match (kind, superscript) {
            (CommandKind::LargeOp, true) => Relation::Above,
            (CommandKind::LargeOp, false) => Relation::Below,
            (_, true) => Relation::UpperRight,
            (_, false) => Relation::LowRight,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_has_structures() {
        let c = CommandSet::default();
        assert_eq!(
            c.get("\\frac"),
            Some(&CommandKind::Structure(vec![
                Relation::Above,
                Relation::Below
            ]))
        );
        assert_eq!(c.get("\\sum"), Some(&CommandKind::LargeOp));
        assert_eq!(c.get("\\limits"), Some(&CommandKind::Modifier));
        assert!(!c.contains("\\nroot"));
    }

    #[test]
    fn table_errors_carry_line_numbers() {
        let err = CommandSet::from_text("\\a symbol\n\\b bogus\n").unwrap_err();
        assert!(matches!(err, GrammarError::CommandTable { line: 2, .. }));
        assert!(CommandSet::from_text("\\f structure right\n").is_err());
        assert!(CommandSet::from_text("\\f structure\n").is_err());
    }

    #[test]
    fn script_mapping() {
        use CommandKind::*;
        assert_eq!(
            CommandSet::script_relation(&Symbol, true),
            Relation::UpperRight
        );
        assert_eq!(
            CommandSet::script_relation(&Symbol, false),
            Relation::LowRight
        );
        assert_eq!(CommandSet::script_relation(&LargeOp, true), Relation::Above);
        assert_eq!(
            CommandSet::script_relation(&LargeOp, false),
            Relation::Below
        );
    }
}
