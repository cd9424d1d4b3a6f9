use std::collections::HashMap;
use std::fmt;
use std::path::Path;

use super::GrammarError;

/// Index of a terminal symbol inside a [`SymbolTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SymbolId(pub usize);

impl SymbolId {
    /// Reserved identifier used by structure skeletons; never a table entry.
    pub const PLACEHOLDER: SymbolId = SymbolId(usize::MAX);

    pub fn is_placeholder(self) -> bool {
        self == Self::PLACEHOLDER
    }
}

/// The seven spatial relations, in canonical order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Relation {
    Right,
    Above,
    Below,
    LowRight,
    UpperLeft,
    UpperRight,
    Inside,
}

impl Relation {
    pub const COUNT: usize = 7;

    pub const ALL: [Relation; 7] = [
        Relation::Right,
        Relation::Above,
        Relation::Below,
        Relation::LowRight,
        Relation::UpperLeft,
        Relation::UpperRight,
        Relation::Inside,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Relation> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::Right => "right",
            Relation::Above => "above",
            Relation::Below => "below",
            Relation::LowRight => "low_right",
            Relation::UpperLeft => "upper_left",
            Relation::UpperRight => "upper_right",
            Relation::Inside => "inside",
        }
    }

    pub fn from_name(name: &str) -> Option<Relation> {
        Self::ALL.iter().copied().find(|r| r.name() == name)
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Output class of the symbol head: a terminal, the extendable
/// non-terminal `E`, or the empty string.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SymbolClass {
    Terminal(SymbolId),
    Ext,
    Eps,
}

/// The terminal alphabet. Class indices `0..len()` are terminals, `len()` is
/// `E` and `len() + 1` is the empty string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SymbolTable {
    entries: Vec<String>,
    index: HashMap<String, SymbolId>,
}

impl SymbolTable {
    pub fn new<I, S>(entries: I) -> Result<Self, GrammarError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut table = SymbolTable {
            entries: Vec::new(),
            index: HashMap::new(),
        };
        for entry in entries {
            let entry = entry.into();
            if entry.is_empty() {
                return Err(GrammarError::SymbolTable("empty identifier".into()));
            }
            if entry.chars().any(char::is_whitespace) {
                return Err(GrammarError::SymbolTable(format!(
                    "identifier {entry:?} contains whitespace"
                )));
            }
            if table.index.contains_key(&entry) {
                return Err(GrammarError::SymbolTable(format!(
                    "duplicate identifier {entry:?}"
                )));
            }
            table
                .index
                .insert(entry.clone(), SymbolId(table.entries.len()));
            table.entries.push(entry);
        }
        Ok(table)
    }

    /// One identifier per line; blank lines are skipped.
    pub fn from_text(text: &str) -> Result<Self, GrammarError> {
        Self::new(text.lines().map(str::trim).filter(|l| !l.is_empty()))
    }

    pub fn load(path: &Path) -> Result<Self, GrammarError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GrammarError::SymbolTable(format!("{}: {e}", path.display())))?;
        Self::from_text(&text)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e);
            out.push('\n');
        }
        out
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `|Σ| + 2`.
    pub fn class_count(&self) -> usize {
        self.entries.len() + 2
    }

    pub fn ext_class(&self) -> usize {
        self.entries.len()
    }

    pub fn eps_class(&self) -> usize {
        self.entries.len() + 1
    }

    pub fn lookup(&self, name: &str) -> Option<SymbolId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: SymbolId) -> Option<&str> {
        self.entries.get(id.0).map(String::as_str)
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    pub fn class_index(&self, class: SymbolClass) -> usize {
        match class {
            SymbolClass::Terminal(id) => id.0,
            SymbolClass::Ext => self.ext_class(),
            SymbolClass::Eps => self.eps_class(),
        }
    }

    pub fn class_of(&self, index: usize) -> Option<SymbolClass> {
        match index {
            i if i < self.entries.len() => Some(SymbolClass::Terminal(SymbolId(i))),
            i if i == self.ext_class() => Some(SymbolClass::Ext),
            i if i == self.eps_class() => Some(SymbolClass::Eps),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_classes_follow_terminals() {
        let t = SymbolTable::new(["a", "b", "\\frac"]).unwrap();
        assert_eq!(t.class_count(), 5);
        assert_eq!(t.ext_class(), 3);
        assert_eq!(t.eps_class(), 4);
        assert_eq!(t.class_of(3), Some(SymbolClass::Ext));
        assert_eq!(t.class_of(4), Some(SymbolClass::Eps));
        assert_eq!(t.class_of(5), None);
        assert_eq!(t.class_of(2), Some(SymbolClass::Terminal(SymbolId(2))));
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(SymbolTable::new(["a", "a"]).is_err());
        assert!(SymbolTable::new(["a", ""]).is_err());
        assert!(SymbolTable::new(["a b"]).is_err());
    }

    #[test]
    fn text_round_trip_keeps_order() {
        let t = SymbolTable::from_text("x\n\\sum\n\n+\n").unwrap();
        assert_eq!(t.entries(), ["x", "\\sum", "+"]);
        assert_eq!(SymbolTable::from_text(&t.to_text()).unwrap(), t);
    }

    #[test]
    fn relation_order_is_fixed() {
        for (i, r) in Relation::ALL.iter().enumerate() {
            assert_eq!(r.index(), i);
            assert_eq!(Relation::from_name(r.name()), Some(*r));
        }
        assert!(Relation::Right < Relation::Inside);
    }
}
