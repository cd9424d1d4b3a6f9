//! `key = value` run configuration. `#` starts a comment. Relative paths
//! resolve against the config file's directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{io_err, DataError};
use crate::decoder::InferenceBudget;
use crate::model::{AttentionMode, ModelConfig};
use crate::training::TrainConfig;

/// Environment variable naming a config file, used when no path is given
/// on the command line.
pub const CONFIG_ENV: &str = "SAN_CONFIG";

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub symbols: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::desk(),
            train: TrainConfig::default(),
            symbols: None,
            manifest: None,
            checkpoint: PathBuf::from("checkpoint.txt"),
            metrics: PathBuf::from("metrics.tsv"),
        }
    }
}

fn parse_field<T: FromStr>(line: usize, key: &str, value: &str) -> Result<T, DataError> {
    value.parse().map_err(|_| DataError::Config {
        line,
        message: format!("bad value {value:?} for {key}"),
    })
}

impl RunConfig {
    pub fn parse(text: &str, base: &Path) -> Result<RunConfig, DataError> {
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(DataError::Config {
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            entries.push((i + 1, k.trim().to_string(), v.trim().to_string()));
        }
        let mut cfg = RunConfig::default();
        // The preset applies first regardless of where it appears.
        if let Some((line, _, v)) = entries.iter().find(|(_, k, _)| k == "preset") {
            cfg.model = match v.as_str() {
                "desk" => ModelConfig::desk(),
                "paper" => ModelConfig::paper(),
                other => {
                    return Err(DataError::Config {
                        line: *line,
                        message: format!("unknown preset {other:?}"),
                    })
                }
            };
        }
        let path = |v: &str| base.join(v);
        cfg.checkpoint = base.join(&cfg.checkpoint);
        cfg.metrics = base.join(&cfg.metrics);
        for (line, key, value) in &entries {
            let (line, v) = (*line, value.as_str());
            let m = &mut cfg.model;
            let t = &mut cfg.train;
            match key.as_str() {
                "preset" => {}
                "zeta" => m.zeta = parse_field(line, key, v)?,
                "channels" => m.channels = parse_field(line, key, v)?,
                "stem_channels" => m.stem_channels = parse_field(line, key, v)?,
                "growth" => m.growth = parse_field(line, key, v)?,
                "block_layers" => m.block_layers = parse_field(line, key, v)?,
                "hidden" => m.hidden = parse_field(line, key, v)?,
                "embed" => m.embed = parse_field(line, key, v)?,
                "attn_dim" => m.attn_dim = parse_field(line, key, v)?,
                "head_dim" => m.head_dim = parse_field(line, key, v)?,
                "attention" => {
                    m.attention = v
                        .parse::<AttentionMode>()
                        .map_err(|message| DataError::Config { line, message })?
                }
                "epochs" => t.epochs = parse_field(line, key, v)?,
                "seed" => t.seed = parse_field(line, key, v)?,
                "batch" => t.batch = parse_field(line, key, v)?,
                "rho" => t.rho = parse_field(line, key, v)?,
                "eps" => t.eps = parse_field(line, key, v)?,
                "eval_every" => t.eval_every = parse_field(line, key, v)?,
                "max_nodes" => t.budget.max_nodes = parse_field(line, key, v)?,
                "max_depth" => t.budget.max_depth = parse_field(line, key, v)?,
                "symbols" => cfg.symbols = Some(path(v)),
                "manifest" => cfg.manifest = Some(path(v)),
                "checkpoint" => cfg.checkpoint = path(v),
                "metrics" => cfg.metrics = path(v),
                other => {
                    return Err(DataError::Config {
                        line,
                        message: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        cfg.model.validate()?;
        InferenceBudget::new(cfg.train.budget.max_nodes, cfg.train.budget.max_depth)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, DataError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// An explicit path wins; otherwise the path named by [`CONFIG_ENV`].
    pub fn locate(explicit: Option<&Path>) -> Option<PathBuf> {
        explicit
            .map(Path::to_path_buf)
            .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from))
    }

    /// Model and optimizer keys; paths are left out.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut out = String::new();
        for (k, v) in [
            ("zeta", m.zeta.to_string()),
            ("channels", m.channels.to_string()),
            ("stem_channels", m.stem_channels.to_string()),
            ("growth", m.growth.to_string()),
            ("block_layers", m.block_layers.to_string()),
            ("hidden", m.hidden.to_string()),
            ("embed", m.embed.to_string()),
            ("attn_dim", m.attn_dim.to_string()),
            ("head_dim", m.head_dim.to_string()),
            ("attention", m.attention.to_string()),
            ("epochs", t.epochs.to_string()),
            ("seed", t.seed.to_string()),
            ("batch", t.batch.to_string()),
            ("rho", format!("{:?}", t.rho)),
            ("eps", format!("{:?}", t.eps)),
            ("eval_every", t.eval_every.to_string()),
            ("max_nodes", t.budget.max_nodes.to_string()),
            ("max_depth", t.budget.max_depth.to_string()),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_then_overrides() {
        let text =
            "channels = 48 # wider\nattention = coverage\npreset = paper\nmanifest = data/m.tsv\n";
        let c = RunConfig::parse(text, Path::new("/runs")).unwrap();
        assert_eq!(c.model.zeta, 16);
        assert_eq!(c.model.channels, 48);
        assert_eq!(c.model.attention, AttentionMode::Coverage);
        assert_eq!(c.manifest, Some(PathBuf::from("/runs/data/m.tsv")));
        assert_eq!(c.checkpoint, PathBuf::from("/runs/checkpoint.txt"));
        let r = RunConfig::parse("checkpoint = ck.txt", Path::new("runs")).unwrap();
        assert_eq!(r.checkpoint, PathBuf::from("runs/ck.txt"));
        assert_eq!(r.metrics, PathBuf::from("runs/metrics.tsv"));
    }

    #[test]
    fn round_trip() {
        let mut c = RunConfig::default();
        c.train.rho = 0.9;
        c.train.seed = 17;
        let back = RunConfig::parse(&c.to_text(), Path::new("")).unwrap();
        assert_eq!(back.model, c.model);
        assert_eq!(back.train, c.train);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, line) in [
            ("zeta = 8\nnope = 1", 2),
            ("hidden", 1),
            ("epochs = -3", 1),
            ("attention = both", 1),
        ] {
            match RunConfig::parse(text, Path::new("")) {
                Err(DataError::Config { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
        assert!(RunConfig::parse("zeta = 6", Path::new("")).is_err());
    }
}
