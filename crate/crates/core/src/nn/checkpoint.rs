//! Model checkpoints.
//!
//! Layout: magic `SPK1`, `u32` LE header length, UTF-8 JSON header, then
//! every parameter as `f32` LE in the fixed order `w_in` (E×D row-major),
//! `b_in`, `w_out` (D×2 row-major), `b_out`.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{LatentModel, TopKSelection};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SPK1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub dim_e: usize,
    pub dim_d: usize,
    pub k: usize,
    pub selection: TopKSelection,
    pub seed: u64,
    pub epoch: usize,
}

pub fn save_checkpoint(model: &LatentModel, seed: u64, epoch: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let header = CheckpointHeader {
        dim_e: model.dim_e(),
        dim_d: model.dim_d(),
        k: model.sparsity_k,
        selection: model.selection,
        seed,
        epoch,
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(8 + json.len() + 4 * model.n_params());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in model
        .w_in
        .iter()
        .chain(&model.b_in)
        .chain(&model.w_out)
        .chain(&model.b_out)
    {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(LatentModel, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 8 || bytes[..4] != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_owned(),
            expected: CHECKPOINT_MAGIC,
            found: bytes[..bytes.len().min(4)].to_vec(),
        });
    }
    let len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let json = bytes
        .get(8..8 + len)
        .ok_or_else(|| Error::malformed(path, "truncated header"))?;
    let header: CheckpointHeader = serde_json::from_slice(json)?;
    let (e, d) = (header.dim_e, header.dim_d);
    let n_params = e * d + d + 2 * d + 2;
    let payload = &bytes[8 + len..];
    if payload.len() != 4 * n_params {
        return Err(Error::DimensionMismatch(format!(
            "checkpoint header implies {n_params} parameters, payload holds {} bytes",
            payload.len()
        )));
    }
    let mut values = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let shape_err = |err: ndarray::ShapeError| Error::DimensionMismatch(err.to_string());
    let w_in = Array2::from_shape_vec((e, d), take(e * d)).map_err(shape_err)?;
    let b_in = Array1::from(take(d));
    let w_out = Array2::from_shape_vec((d, 2), take(2 * d)).map_err(shape_err)?;
    let b_out = Array1::from(take(2));
    let model = LatentModel::new(w_in, b_in, w_out, b_out, header.k)?.with_selection(header.selection);
    Ok((model, header))
}
