//! Binary checkpoint: magic, version, length-prefixed `key=value` config
//! block, little-endian f32 tensors in declaration order, CRC-32 trailer.

use std::fs;
use std::path::Path;

use super::config::{EstimatorConfig, KEYS};
use super::params::Params;
use super::{EstimatorModel, TrainingMeta};
use crate::error::{Error, Result};
use crate::kv;

pub const MODEL_MAGIC: [u8; 8] = *b"HRMOD1\0\0";
pub const MODEL_VERSION: u16 = 1;

const META_EPOCHS: &str = "meta.epochs_run";
const META_BEST: &str = "meta.best_validation_loss";

pub fn model_to_bytes(model: &EstimatorModel) -> Vec<u8> {
    let mut pairs = model.config.pairs();
    pairs.push((META_EPOCHS, model.meta.epochs_run.to_string()));
    pairs.push((META_BEST, model.meta.best_validation_loss.to_string()));
    let text = kv::render(pairs);

    let mut out = Vec::with_capacity(18 + text.len() + model.params.len() * 4 + 4);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    for v in model.params.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<EstimatorModel> {
    if bytes.len() < MODEL_MAGIC.len() || bytes[..8] != MODEL_MAGIC {
        return Err(Error::format("not a model checkpoint (bad magic)"));
    }
    if bytes.len() < 8 + 2 + 4 + 4 {
        return Err(Error::format("checkpoint is truncated"));
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != MODEL_VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version} (expected {MODEL_VERSION})"
        )));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    if crc32fast::hash(body) != stored {
        return Err(Error::format("checkpoint checksum mismatch (truncated or corrupt)"));
    }

    let text_len = u32::from_le_bytes(body[10..14].try_into().expect("4 bytes")) as usize;
    let text_end = 14usize
        .checked_add(text_len)
        .filter(|&e| e <= body.len())
        .ok_or_else(|| Error::format("config block overruns the checkpoint"))?;
    let text = std::str::from_utf8(&body[14..text_end]).map_err(|_| Error::format("config block is not UTF-8"))?;
    let map = kv::parse(text)?;

    let mut config = EstimatorConfig::default();
    for key in KEYS {
        let v = map
            .get(*key)
            .ok_or_else(|| Error::format(format!("config block missing {key}")))?;
        config.set(key, v)?;
    }
    let get = |k: &str| {
        map.get(k)
            .ok_or_else(|| Error::format(format!("config block missing {k}")))
    };
    let meta = TrainingMeta {
        epochs_run: kv::parse_value(META_EPOCHS, get(META_EPOCHS)?)?,
        best_validation_loss: kv::parse_value(META_BEST, get(META_BEST)?)?,
    };
    if map.len() != KEYS.len() + 2 {
        return Err(Error::format("config block has unknown keys"));
    }
    config
        .validate()
        .map_err(|e| Error::format(format!("checkpoint config invalid: {e}")))?;

    let mut params = Params::<f32>::zeros(&config);
    let weights = &body[text_end..];
    if weights.len() != params.len() * 4 {
        return Err(Error::format(format!(
            "shape inconsistency: config needs {} weights, file holds {} bytes",
            params.len(),
            weights.len()
        )));
    }
    for (v, chunk) in params.iter_mut().zip(weights.chunks_exact(4)) {
        *v = f32::from_le_bytes(chunk.try_into().expect("4 bytes"));
    }
    if !params.all_finite() {
        return Err(Error::format("checkpoint contains non-finite weights"));
    }
    Ok(EstimatorModel { config, params, meta })
}

pub fn save_model(model: &EstimatorModel, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<EstimatorModel> {
    model_from_bytes(&fs::read(path)?)
}
