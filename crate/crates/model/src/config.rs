use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use skexcraft_nn::TransformerConfig;

use crate::ModelError;

/// Architecture of both branches and the code selectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub heads: usize,
    pub ff: usize,
    pub blocks: usize,
    pub dropout: f64,
    pub topology_codes: usize,
    pub geometry_codes: usize,
    pub extrude_codes: usize,
    pub topology_book: usize,
    pub geometry_book: usize,
    pub extrude_book: usize,
    pub max_topology_len: usize,
    pub max_sketch_len: usize,
    pub max_extrude_len: usize,
    pub coord_embed: bool,
    pub beta: f64,
    pub ema_decay: f64,
}

impl ModelConfig {
    /// Full-size settings.
    pub fn paper() -> Self {
        Self {
            d_model: 256,
            heads: 8,
            ff: 512,
            blocks: 4,
            dropout: 0.1,
            topology_codes: 4,
            geometry_codes: 2,
            extrude_codes: 4,
            topology_book: 500,
            geometry_book: 1000,
            extrude_book: 1000,
            max_topology_len: 200,
            max_sketch_len: 200,
            max_extrude_len: 100,
            coord_embed: true,
            beta: 0.25,
            ema_decay: 0.99,
        }
    }

    /// Desk-scale settings used by the acceptance runs.
    pub fn toy() -> Self {
        Self {
            d_model: 64,
            heads: 4,
            ff: 128,
            blocks: 2,
            dropout: 0.0,
            topology_book: 32,
            geometry_book: 64,
            extrude_book: 64,
            max_topology_len: 64,
            max_sketch_len: 64,
            max_extrude_len: 40,
            ..Self::paper()
        }
    }

    pub fn transformer(&self) -> TransformerConfig {
        TransformerConfig { d_model: self.d_model, heads: self.heads, ff: self.ff, blocks: self.blocks, dropout: self.dropout }
    }

    pub fn check(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if self.heads == 0 || !self.d_model.is_multiple_of(self.heads) {
            return bad("d_model must be divisible by heads");
        }
        if self.topology_codes == 0 || self.geometry_codes == 0 || self.extrude_codes == 0 {
            return bad("every branch needs at least one code token");
        }
        if self.topology_book == 0 || self.geometry_book == 0 || self.extrude_book == 0 {
            return bad("codebooks must be non-empty");
        }
        if self.max_extrude_len < skexcraft_core::seq::EXTRUDE_BLOCK_LEN + 1 || self.max_sketch_len < 9 {
            return bad("maximum lengths too small for one step");
        }
        if !(0.0..1.0).contains(&self.dropout) || !(0.0..1.0).contains(&self.ema_decay) {
            return bad("dropout and ema_decay must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn total_codes(&self) -> usize {
        self.topology_codes + self.geometry_codes + self.extrude_codes
    }
}

/// Optimization settings shared by branch and selector training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup_steps: u64,
    pub clip: f64,
    /// Epochs during which decoders read unquantized encoder outputs.
    pub quantize_after: usize,
    /// Coordinate-noise probabilities for the sketch branch; 0 disables.
    pub noise: f64,
    pub selector_epochs: usize,
    pub seed: u64,
}

impl TrainConfig {
    pub fn paper() -> Self {
        Self {
            epochs: 300,
            batch: 128,
            lr: 1e-3,
            warmup_steps: 2000,
            clip: 1.0,
            quantize_after: 25,
            noise: 0.15,
            selector_epochs: 300,
            seed: 0,
        }
    }

    pub fn toy() -> Self {
        Self {
            epochs: 400,
            batch: 8,
            warmup_steps: 100,
            quantize_after: 20,
            noise: 0.0,
            selector_epochs: 150,
            ..Self::paper()
        }
    }
}

/// Writes a struct as `key = value` lines with JSON scalars.
pub fn to_flat<T: Serialize>(value: &T) -> String {
    let Value::Object(map) = serde_json::to_value(value).expect("config serializes") else {
        panic!("flat configs are structs");
    };
    map.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Reads `key = value` lines; blank lines and `#` comments are skipped.
pub fn from_flat<T: DeserializeOwned>(text: &str) -> Result<T, ModelError> {
    let mut map = Map::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ModelError::Config(format!("line {}: expected key = value", n + 1)))?;
        let v = v.trim();
        let parsed = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        map.insert(k.trim().to_string(), parsed);
    }
    serde_json::from_value(Value::Object(map)).map_err(|e| ModelError::Config(e.to_string()))
}
