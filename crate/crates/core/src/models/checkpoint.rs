//! Self-describing checkpoint container: a magic tag, a JSON header with
//! the model config and tensor shapes, then raw little-endian tensor data
//! (weights, plus Adam moments when training state is saved). Round-trips
//! are bit-identical; writes go through a temp file and rename.

use std::fs;
use std::path::Path;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::nn::Adam;
use crate::num::Scalar;

use super::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"EFCKPT01";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    dtype: String,
    config: ModelConfig,
    param_names: Vec<String>,
    param_shapes: Vec<Vec<usize>>,
    adam: Option<AdamMeta>,
    #[serde(default)]
    extra: Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct AdamMeta {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
}

pub struct CheckpointBundle<F: Scalar> {
    pub model: Model<F>,
    pub adam: Option<Adam<F>>,
    pub extra: Value,
}

pub fn save_checkpoint<F: Scalar>(
    path: &Path,
    model: &Model<F>,
    adam: Option<&Adam<F>>,
    extra: &Value,
) -> Result<()> {
    let graph = model.graph();
    let header = Header {
        version: 1,
        dtype: F::DTYPE.to_string(),
        config: model.config().clone(),
        param_names: graph.params.iter().map(|p| p.name.clone()).collect(),
        param_shapes: graph
            .params
            .iter()
            .map(|p| p.value.shape().to_vec())
            .collect(),
        adam: adam.map(|a| AdamMeta {
            lr: a.lr,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            t: a.t,
        }),
        extra: extra.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Checkpoint(format!("header serialization: {e}")))?;

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_json);
    for p in &graph.params {
        let flat: Vec<F> = p.value.iter().copied().collect();
        F::write_le(&flat, &mut out);
    }
    if let Some(a) = adam {
        for series in [&a.m, &a.v] {
            for t in series {
                let flat: Vec<F> = t.iter().copied().collect();
                F::write_le(&flat, &mut out);
            }
        }
    }
    crate::cohort::write_atomic(path, &out)
}

pub fn load_checkpoint<F: Scalar>(path: &Path) -> Result<CheckpointBundle<F>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "`{}` is not a checkpoint file",
            path.display()
        )));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let header_end = 16 + header_len;
    if bytes.len() < header_end {
        return Err(Error::Checkpoint("truncated checkpoint header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| Error::Checkpoint(format!("bad checkpoint header: {e}")))?;
    if header.dtype != F::DTYPE {
        return Err(Error::Checkpoint(format!(
            "checkpoint dtype {} does not match requested {}",
            header.dtype,
            F::DTYPE
        )));
    }

    let mut offset = header_end;
    let mut read_tensor = |shape: &[usize]| -> Result<ArrayD<F>> {
        let count: usize = shape.iter().product();
        let nbytes = count * F::WIDTH;
        if bytes.len() < offset + nbytes {
            return Err(Error::Checkpoint("truncated checkpoint payload".into()));
        }
        let values = F::read_le(&bytes[offset..offset + nbytes])
            .ok_or_else(|| Error::Checkpoint("misaligned tensor data".into()))?;
        offset += nbytes;
        ArrayD::from_shape_vec(ndarray::IxDyn(shape), values)
            .map_err(|e| Error::Checkpoint(format!("tensor shape: {e}")))
    };

    let mut params = Vec::with_capacity(header.param_shapes.len());
    for shape in &header.param_shapes {
        params.push(read_tensor(shape)?);
    }
    let adam = if let Some(meta) = &header.adam {
        let mut m = Vec::with_capacity(header.param_shapes.len());
        for shape in &header.param_shapes {
            m.push(read_tensor(shape)?);
        }
        let mut v = Vec::with_capacity(header.param_shapes.len());
        for shape in &header.param_shapes {
            v.push(read_tensor(shape)?);
        }
        Some((meta, m, v))
    } else {
        None
    };

    let model = Model::from_parts(header.config.clone(), params)?;
    let adam = adam.map(|(meta, m, v)| {
        let mut a = Adam::new(&model.graph().params, meta.lr);
        a.beta1 = meta.beta1;
        a.beta2 = meta.beta2;
        a.eps = meta.eps;
        a.t = meta.t;
        a.m = m;
        a.v = v;
        a
    });
    Ok(CheckpointBundle {
        model,
        adam,
        extra: header.extra,
    })
}
