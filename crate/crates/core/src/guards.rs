//! Resource guards shared by every pipeline.
//!
//! The group order grows like `q^3` and word counts grow exponentially in
//! the word length, so both are capped. The caps can be raised through the
//! environment (`SL2LAB_MAX_MODULUS`, `SL2LAB_MAX_WORDS`) or per run config.

use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_MODULUS: u32 = 32;
pub const DEFAULT_MAX_WORDS: u64 = 5_000_000;

pub const MAX_MODULUS_ENV: &str = "SL2LAB_MAX_MODULUS";
pub const MAX_WORDS_ENV: &str = "SL2LAB_MAX_WORDS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Guards {
    #[serde(default = "default_max_modulus")]
    pub max_modulus: u32,
    #[serde(default = "default_max_words")]
    pub max_words: u64,
}

fn default_max_modulus() -> u32 {
    env_or(MAX_MODULUS_ENV, DEFAULT_MAX_MODULUS)
}

fn default_max_words() -> u64 {
    env_or(MAX_WORDS_ENV, DEFAULT_MAX_WORDS)
}

fn env_or<T: std::str::FromStr>(key: &str, fallback: T) -> T {
    std::env::var(key)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(fallback)
}

impl Default for Guards {
    fn default() -> Self {
        Self {
            max_modulus: default_max_modulus(),
            max_words: default_max_words(),
        }
    }
}

impl Guards {
    pub fn unlimited() -> Self {
        Self {
            max_modulus: u32::MAX,
            max_words: u64::MAX,
        }
    }
}
