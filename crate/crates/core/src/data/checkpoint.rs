//! Checkpoint files: the run configuration, the symbol table and every
//! parameter, each section prefixed by its line count.
//!
//! ```text
//! san-checkpoint 1
//! config <n>
//! <n lines of key = value>
//! symbols <m>
//! <m identifiers>
//! params <k>
//! <name rows cols, then one line of values, per parameter>
//! ```

use std::path::Path;
use std::sync::Arc;

use super::config::RunConfig;
use super::{io_err, DataError};
use crate::grammar::SymbolTable;
use crate::model::San;
use crate::numerics::ParamStore;
use crate::training::TrainConfig;

const MAGIC: &str = "san-checkpoint 1";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub symbols: Arc<SymbolTable>,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn into_model(self) -> Result<San, DataError> {
        Ok(San::from_store(
            self.config.model,
            self.symbols,
            self.store,
        )?)
    }

    /// Fails unless `table` lists the same identifiers in the same order.
    pub fn check_symbols(&self, table: &SymbolTable) -> Result<(), DataError> {
        if self.symbols.entries() != table.entries() {
            return Err(DataError::Checkpoint(format!(
                "symbol table mismatch: checkpoint has {} entries, configuration {}",
                self.symbols.len(),
                table.len()
            )));
        }
        Ok(())
    }
}

pub fn save_checkpoint(path: &Path, model: &San, train: &TrainConfig) -> Result<(), DataError> {
    let config = RunConfig {
        model: model.config.clone(),
        train: train.clone(),
        ..RunConfig::default()
    };
    let config_text = config.to_text();
    let symbols_text = model.symbols.to_text();
    let mut out = format!(
        "{MAGIC}\nconfig {}\n{config_text}",
        config_text.lines().count()
    );
    out.push_str(&format!("symbols {}\n{symbols_text}", model.symbols.len()));
    model.store.write_text(&mut out);
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, out).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

fn section<'a>(
    lines: &mut impl Iterator<Item = &'a str>,
    name: &str,
) -> Result<Vec<&'a str>, DataError> {
    let bad = |m: String| DataError::Checkpoint(m);
    let head = lines
        .next()
        .ok_or_else(|| bad(format!("missing {name} section")))?;
    let n: usize = head
        .strip_prefix(name)
        .and_then(|r| r.trim().parse().ok())
        .ok_or_else(|| bad(format!("expected `{name} <count>`, found {head:?}")))?;
    let body: Vec<&str> = lines.take(n).collect();
    if body.len() != n {
        return Err(bad(format!("{name} section truncated")));
    }
    Ok(body)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut lines = text.lines();
    if lines.next() != Some(MAGIC) {
        return Err(DataError::Checkpoint(format!(
            "{} is not a checkpoint",
            path.display()
        )));
    }
    let config_lines = section(&mut lines, "config")?;
    let config = RunConfig::parse(&config_lines.join("\n"), Path::new(""))?;
    let symbol_lines = section(&mut lines, "symbols")?;
    let symbols = Arc::new(SymbolTable::new(symbol_lines.iter().copied())?);
    let store = ParamStore::read_text(&mut lines)?;
    Ok(Checkpoint {
        config,
        symbols,
        store,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn save_and_load_are_exact() {
        let symbols = Arc::new(SymbolTable::new(["a", "b", "\\frac"]).unwrap());
        let config = ModelConfig {
            channels: 8,
            hidden: 8,
            embed: 4,
            attn_dim: 4,
            head_dim: 4,
            ..ModelConfig::desk()
        };
        let model = San::new(config.clone(), symbols.clone(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.txt");
        let train = TrainConfig {
            seed: 5,
            ..Default::default()
        };
        save_checkpoint(&path, &model, &train).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.config.model, config);
        assert_eq!(ck.config.train.seed, 5);
        ck.check_symbols(&symbols).unwrap();
        assert!(ck
            .check_symbols(&SymbolTable::new(["a", "b"]).unwrap())
            .is_err());
        let back = ck.into_model().unwrap();
        for (x, y) in model.store.iter().zip(back.store.iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value, y.value);
        }
    }
}
