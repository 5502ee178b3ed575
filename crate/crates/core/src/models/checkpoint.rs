//! Versioned JSON checkpoints. Floats are written in shortest round-trip
//! form, so save → load reproduces every weight bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MfModel;
use crate::error::{LiduError, Result};

pub const FORMAT: &str = "lidu-mf";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<M> {
    format: String,
    version: u32,
    model: M,
}

pub fn to_writer<W: Write>(model: &MfModel, out: W) -> Result<()> {
    let env = Envelope { format: FORMAT.into(), version: VERSION, model };
    serde_json::to_writer(out, &env)?;
    Ok(())
}

pub fn from_slice(bytes: &[u8]) -> Result<MfModel> {
    let env: Envelope<MfModel> = serde_json::from_slice(bytes)?;
    check(&env.format, env.version)?;
    Ok(env.model)
}

fn check(format: &str, version: u32) -> Result<()> {
    if format != FORMAT {
        return Err(LiduError::InvalidConfig(format!("not a model checkpoint: format `{format}`")));
    }
    if version != VERSION {
        return Err(LiduError::CheckpointVersion(version));
    }
    Ok(())
}

pub fn save(model: &MfModel, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    to_writer(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<MfModel> {
    let env: Envelope<MfModel> = serde_json::from_reader(BufReader::new(File::open(path)?))?;
    check(&env.format, env.version)?;
    Ok(env.model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{IdMap, ModelShape};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), std in 1e-6f64..1e3, with_var in any::<bool>()) {
            let shape = ModelShape { users: IdMap::sequential(3), items: IdMap::sequential(4), dim: 5 };
            let mut m = MfModel::random(&shape, std, seed);
            if with_var {
                m = m.with_variance_tower(std, seed ^ 1);
            }
            let mut buf = Vec::new();
            to_writer(&m, &mut buf).unwrap();
            let back = from_slice(&buf).unwrap();
            let bits = |m: &MfModel| m.user_emb.as_slice().iter().chain(m.item_emb.as_slice()).map(|x| x.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&m));
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn rejects_other_versions() {
        let shape = ModelShape { users: IdMap::sequential(1), items: IdMap::sequential(1), dim: 1 };
        let m = MfModel::random(&shape, 0.1, 0);
        let mut buf = Vec::new();
        to_writer(&m, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"version\":1", "\"version\":9");
        assert!(matches!(from_slice(text.as_bytes()), Err(LiduError::CheckpointVersion(9))));
    }

    #[test]
    fn file_round_trip_keeps_ids() {
        let mut users = IdMap::default();
        users.intern("alice");
        users.intern("bob");
        let shape = ModelShape { users, items: IdMap::sequential(2), dim: 2 };
        let m = MfModel::random(&shape, 0.2, 4);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        save(&m, &p).unwrap();
        let back = load(&p).unwrap();
        assert_eq!(back.user_index("bob").unwrap(), 1);
        assert_eq!(back, m);
    }
}
