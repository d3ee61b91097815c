use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::decoder::{FfnKind, ModelConfig, Variant};
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/registry.toml");

/// Default vision sequence length (SigLIP so400m/14 at 384px).
pub const DEFAULT_N_VISION: usize = 728;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub layers: usize,
    pub d_model: usize,
    pub d_ffn: usize,
    pub heads: usize,
    pub kv_heads: usize,
    pub vocab: usize,
    pub d_vision: usize,
    #[serde(default = "gated")]
    pub ffn: FfnKind,
    #[serde(default)]
    pub tied_embeddings: bool,
    #[serde(default = "yes")]
    pub grid: bool,
}

fn gated() -> FfnKind {
    FfnKind::Gated
}

fn yes() -> bool {
    true
}

impl RegistryEntry {
    pub fn to_config(&self, variant: Variant) -> ModelConfig {
        let mut cfg = ModelConfig::toy(
            variant,
            self.layers,
            self.d_model,
            self.d_vision,
            self.vocab,
        );
        cfg.n_heads = self.heads;
        cfg.n_kv_heads = self.kv_heads;
        cfg.d_ffn = self.d_ffn;
        cfg.ffn = self.ffn;
        cfg.tied_embeddings = self.tied_embeddings;
        cfg
    }
}

#[derive(Debug, Deserialize)]
struct RegistryFile {
    model: Vec<RegistryEntry>,
}

/// Named architectures. Lookups ignore case and `-`, `.`, `_`.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedConfigRegistry {
    entries: Vec<RegistryEntry>,
}

fn normalize(name: &str) -> String {
    name.chars()
        .filter(|c| !matches!(c, '-' | '.' | '_' | ' '))
        .flat_map(char::to_lowercase)
        .collect()
}

impl NamedConfigRegistry {
    pub fn bundled() -> Self {
        Self::from_toml(BUNDLED).expect("bundled registry parses")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: RegistryFile = toml::from_str(text)?;
        for e in &file.model {
            e.to_config(Variant::Vanilla)
                .validate()
                .map_err(|err| Error::InvalidConfig(format!("registry entry {}: {err}", e.name)))?;
        }
        Ok(Self {
            entries: file.model,
        })
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn entries(&self) -> &[RegistryEntry] {
        &self.entries
    }

    /// Entries that make up the default efficiency grid.
    pub fn grid(&self) -> impl Iterator<Item = &RegistryEntry> {
        self.entries.iter().filter(|e| e.grid)
    }

    pub fn get(&self, name: &str) -> Result<&RegistryEntry> {
        let key = normalize(name);
        self.entries
            .iter()
            .find(|e| normalize(&e.name) == key)
            .ok_or_else(|| Error::UnknownModel {
                name: name.to_string(),
                known: self
                    .entries
                    .iter()
                    .map(|e| e.name.as_str())
                    .collect::<Vec<_>>()
                    .join(", "),
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_is_forgiving() {
        let reg = NamedConfigRegistry::bundled();
        assert_eq!(reg.get("llama3.2-1b").unwrap().name, "Llama-3.2-1B");
        assert_eq!(reg.get("QWEN2_0.5B").unwrap().layers, 24);
        let err = reg.get("gpt-2").unwrap_err().to_string();
        assert!(
            err.contains("TinyLlama-1.1B") && err.contains("Vicuna-7B"),
            "{err}"
        );
    }

    #[test]
    fn bundled_grid_has_four_models() {
        let reg = NamedConfigRegistry::bundled();
        assert_eq!(reg.entries().len(), 5);
        assert_eq!(reg.grid().count(), 4);
        assert!(reg
            .entries()
            .iter()
            .all(|e| e.ffn == FfnKind::Gated && e.d_vision == 1152));
    }

    #[test]
    fn invalid_entry_rejected() {
        let text = r#"
            [[model]]
            name = "broken"
            layers = 2
            d_model = 10
            d_ffn = 40
            heads = 3
            kv_heads = 1
            vocab = 10
            d_vision = 4
        "#;
        assert!(NamedConfigRegistry::from_toml(text).is_err());
    }
}
