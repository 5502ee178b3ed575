//! Parameter layering: default < $LIDU_SEED < `--config` file < flags.
//!
//! Command-specific flags are applied by the caller after [`resolve`].

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

pub const SEED_ENV: &str = "LIDU_SEED";

pub struct Layered {
    pub seed_flag: Option<u64>,
    pub env_seed: Option<u64>,
    pub file: Option<Value>,
}

impl Layered {
    pub fn new(seed_flag: Option<u64>, config: Option<&Path>) -> Result<Self> {
        let env_seed = match std::env::var(SEED_ENV) {
            Ok(s) if !s.trim().is_empty() => {
                Some(s.trim().parse().with_context(|| format!("{SEED_ENV}=`{s}` is not an unsigned integer"))?)
            }
            _ => None,
        };
        let file = match config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let v: Value =
                    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                if !v.is_object() {
                    bail!("{} must hold a JSON object", path.display());
                }
                Some(v)
            }
            None => None,
        };
        Ok(Self { seed_flag, env_seed, file })
    }
}

/// Overlays `patch` onto `base`. Keys missing from `base` are rejected so
/// that misspelt parameters fail loudly.
fn merge(base: &mut Value, patch: &Value, at: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let path = if at.is_empty() { k.clone() } else { format!("{at}.{k}") };
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v, &path)?,
                    None => bail!("unknown config key `{path}`"),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}

/// Defaults, then the environment seed via `apply_seed`, then the config
/// file. Flags are left to the caller.
pub fn resolve<T>(layers: &Layered, apply_seed: impl FnOnce(u64, &mut T)) -> Result<T>
where
    T: Default + Serialize + DeserializeOwned,
{
    let mut value = T::default();
    if let Some(seed) = layers.env_seed {
        apply_seed(seed, &mut value);
    }
    let Some(file) = &layers.file else { return Ok(value) };
    let mut tree = serde_json::to_value(&value)?;
    merge(&mut tree, file, "")?;
    serde_json::from_value(tree).context("config file has values of the wrong type")
}
