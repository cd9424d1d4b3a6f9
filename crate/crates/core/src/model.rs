//! Model hyperparameters and the combined encoder/decoder parameter set.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::decoder::Decoder;
use crate::encoder::Encoder;
use crate::grammar::SymbolTable;
use crate::numerics::{NumericsError, ParamStore};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("image {height}x{width} is not divisible by the down-sampling factor {zeta}")]
    IndivisibleDimensions {
        height: usize,
        width: usize,
        zeta: usize,
    },
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// How the attention coverage term is accumulated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// Sum of attention weights along the root-to-node path.
    #[default]
    SyntaxAware,
    /// Sum of all past attention weights in decoding order.
    Coverage,
}

impl FromStr for AttentionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "syntax_aware" => Ok(AttentionMode::SyntaxAware),
            "coverage" => Ok(AttentionMode::Coverage),
            other => Err(format!("unknown attention mode {other:?}")),
        }
    }
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::SyntaxAware => "syntax_aware",
            AttentionMode::Coverage => "coverage",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Down-sampling factor; a power of two.
    pub zeta: usize,
    /// Annotation width `C`.
    pub channels: usize,
    pub stem_channels: usize,
    pub growth: usize,
    pub block_layers: usize,
    /// GRU hidden width.
    pub hidden: usize,
    /// Symbol and relation embedding width.
    pub embed: usize,
    pub attn_dim: usize,
    /// Width of the shared inner projection feeding both heads.
    pub head_dim: usize,
    pub attention: AttentionMode,
}

impl ModelConfig {
    /// Published sizes: ζ = 16, C = 684, GRU and embedding widths 256.
    pub fn paper() -> Self {
        ModelConfig {
            zeta: 16,
            channels: 684,
            stem_channels: 16,
            growth: 12,
            block_layers: 3,
            hidden: 256,
            embed: 256,
            attn_dim: 256,
            head_dim: 256,
            attention: AttentionMode::SyntaxAware,
        }
    }

    /// Small configuration for CPU experiments.
    pub fn desk() -> Self {
        ModelConfig {
            zeta: 8,
            channels: 32,
            stem_channels: 8,
            growth: 8,
            block_layers: 2,
            hidden: 64,
            embed: 32,
            attn_dim: 32,
            head_dim: 64,
            attention: AttentionMode::SyntaxAware,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidConfig(m.to_string()));
        if self.zeta == 0 || !self.zeta.is_power_of_two() {
            return bad("zeta must be a power of two");
        }
        for (name, v) in [
            ("channels", self.channels),
            ("stem_channels", self.stem_channels),
            ("growth", self.growth),
            ("block_layers", self.block_layers),
            ("hidden", self.hidden),
            ("embed", self.embed),
            ("attn_dim", self.attn_dim),
            ("head_dim", self.head_dim),
        ] {
            if v == 0 {
                return bad(&format!("{name} must be positive"));
            }
        }
        Ok(())
    }
}

/// Encoder, forward decoder and reversed decoder sharing one parameter store.
#[derive(Clone, Debug)]
pub struct San {
    pub config: ModelConfig,
    pub symbols: Arc<SymbolTable>,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub decoder: Decoder,
    pub reversed: Decoder,
}

impl San {
    pub fn new(
        config: ModelConfig,
        symbols: Arc<SymbolTable>,
        seed: u64,
    ) -> Result<San, ModelError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let encoder = Encoder::init(&mut store, &config, &mut rng)?;
        let decoder = Decoder::init(&mut store, "fwd", &config, symbols.len(), &mut rng)?;
        let reversed = Decoder::init(&mut store, "rev", &config, symbols.len(), &mut rng)?;
        Ok(San {
            config,
            symbols,
            store,
            encoder,
            decoder,
            reversed,
        })
    }

    /// Rebinds handles to an existing store (e.g. one read from a checkpoint).
    pub fn from_store(
        config: ModelConfig,
        symbols: Arc<SymbolTable>,
        store: ParamStore,
    ) -> Result<San, ModelError> {
        config.validate()?;
        let encoder = Encoder::lookup(&store, &config)?;
        let decoder = Decoder::lookup(&store, "fwd", &config, symbols.len())?;
        let reversed = Decoder::lookup(&store, "rev", &config, symbols.len())?;
        Ok(San {
            config,
            symbols,
            store,
            encoder,
            decoder,
            reversed,
        })
    }
}
