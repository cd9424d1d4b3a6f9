//! Tab-separated manifests: `path<TAB>markup<TAB>split`, one record per
//! line, paths relative to the manifest's directory.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::pgm::read_image;
use super::{io_err, DataError};
use crate::encoder::GrayImage;
use crate::grammar::{parse_markup, CommandSet, ParseTree, SymbolTable};
use crate::training::TrainPair;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug)]
pub struct ManifestRecord {
    pub path: PathBuf,
    pub markup: String,
    pub split: Split,
    pub image: GrayImage,
    pub tree: ParseTree,
}

#[derive(Clone, Debug, Default)]
pub struct Dataset {
    pub records: Vec<ManifestRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn pairs(&self, split: Split) -> Vec<TrainPair> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| TrainPair {
                image: r.image.clone(),
                tree: r.tree.clone(),
            })
            .collect()
    }
}

/// Loads every record, zero-padding images to multiples of `zeta`. The
/// first bad record aborts the load with its line number.
pub fn load_dataset(
    manifest: &Path,
    symbols: &Arc<SymbolTable>,
    commands: &CommandSet,
    zeta: usize,
) -> Result<Dataset, DataError> {
    let text = std::fs::read_to_string(manifest).map_err(io_err(manifest))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| DataError::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.split('\t').collect();
        let [path, markup, split] = fields[..] else {
            return Err(bad(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        };
        let split = match split.trim() {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(bad(format!("unknown split {other:?}"))),
        };
        let tree = parse_markup(markup, symbols, commands).map_err(|e| bad(e.to_string()))?;
        let path = base.join(path);
        let image = read_image(&path)?.pad_to_multiple(zeta);
        records.push(ManifestRecord {
            path,
            markup: markup.to_string(),
            split,
            image,
            tree,
        });
    }
    Ok(Dataset { records })
}

/// Manifest text for `(relative path, markup, split)` rows.
pub fn write_manifest<'a, I>(rows: I) -> String
where
    I: IntoIterator<Item = (&'a str, &'a str, Split)>,
{
    let mut out = String::new();
    for (p, m, s) in rows {
        let _ = writeln!(out, "{p}\t{m}\t{s}");
    }
    out
}
