//! `.mpnn` model files.
//!
//! Little-endian layout:
//!
//! ```text
//! "MPNN" | u32 version | u32 L | u32 C | u32 n_layers
//! per layer:
//!   u8 tag | u32 n_dims, u32 dims.. | u32 n_hyper, f64 hyper.. | u32 n_blobs, (u32 len, f32 values..)..
//! u32 meta_len | meta (UTF-8)
//! ```

use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};

use super::layers::{Activation, BatchNorm1d, Conv1d, Dense, Dropout, GlobalMaxPool, MaxPool1d, Relu};
use super::model::{Layer, Model};
use super::NnError;
use crate::exec::Execution;

pub const MAGIC: &[u8; 4] = b"MPNN";
pub const VERSION: u32 = 1;

const TAG_CONV: u8 = 1;
const TAG_RELU: u8 = 2;
const TAG_BN: u8 = 3;
const TAG_POOL: u8 = 4;
const TAG_DROPOUT: u8 = 5;
const TAG_GMP: u8 = 6;
const TAG_DENSE: u8 = 7;

fn fmt_err(msg: impl Into<String>) -> NnError {
    NnError::Format(msg.into())
}

struct Parts<'a> {
    tag: u8,
    dims: Vec<u32>,
    hyper: Vec<f64>,
    blobs: Vec<&'a [f64]>,
}

fn parts(layer: &Layer) -> Parts<'_> {
    let p = |tag, dims: Vec<usize>, hyper, blobs| Parts {
        tag,
        dims: dims.into_iter().map(|d| d as u32).collect(),
        hyper,
        blobs,
    };
    match layer {
        Layer::Conv1d(c) => p(
            TAG_CONV,
            vec![c.filters, c.kernel, c.stride, c.in_channels],
            vec![],
            vec![&c.weight.value[..], &c.bias.value[..]],
        ),
        Layer::Relu(_) => p(TAG_RELU, vec![], vec![], vec![]),
        Layer::BatchNorm(b) => p(
            TAG_BN,
            vec![b.channels],
            vec![b.eps, b.momentum],
            vec![&b.gamma.value[..], &b.beta.value[..], &b.running_mean[..], &b.running_var[..]],
        ),
        Layer::MaxPool(m) => p(TAG_POOL, vec![m.size, m.stride], vec![], vec![]),
        Layer::Dropout(d) => p(TAG_DROPOUT, vec![], vec![d.rate], vec![]),
        Layer::GlobalMaxPool(_) => p(TAG_GMP, vec![], vec![], vec![]),
        Layer::Dense(d) => p(
            TAG_DENSE,
            vec![d.inputs, d.units],
            vec![if d.activation == Activation::Relu { 1.0 } else { 0.0 }],
            vec![&d.weight.value[..], &d.bias.value[..]],
        ),
    }
}

/// Serialises `model` with a free-form text trailer.
pub fn encode_model(model: &Model, meta: &str) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let w = &mut out;
    w.write_u32::<LE>(VERSION).unwrap();
    w.write_u32::<LE>(model.input_len as u32).unwrap();
    w.write_u32::<LE>(model.input_channels as u32).unwrap();
    w.write_u32::<LE>(model.layers.len() as u32).unwrap();
    for layer in &model.layers {
        let p = parts(layer);
        w.write_u8(p.tag).unwrap();
        w.write_u32::<LE>(p.dims.len() as u32).unwrap();
        for d in p.dims {
            w.write_u32::<LE>(d).unwrap();
        }
        w.write_u32::<LE>(p.hyper.len() as u32).unwrap();
        for h in p.hyper {
            w.write_f64::<LE>(h).unwrap();
        }
        w.write_u32::<LE>(p.blobs.len() as u32).unwrap();
        for blob in p.blobs {
            w.write_u32::<LE>(blob.len() as u32).unwrap();
            for &v in blob {
                w.write_f32::<LE>(v as f32).unwrap();
            }
        }
    }
    w.write_u32::<LE>(meta.len() as u32).unwrap();
    w.extend_from_slice(meta.as_bytes());
    out
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Result<u32, NnError> {
    r.read_u32::<LE>().map_err(|_| fmt_err("unexpected end of model file"))
}

fn read_len(r: &mut Cursor<&[u8]>, elem: usize) -> Result<usize, NnError> {
    let n = read_u32(r)? as usize;
    let remaining = r.get_ref().len() - r.position() as usize;
    if n.saturating_mul(elem) > remaining {
        return Err(fmt_err("length field exceeds file size"));
    }
    Ok(n)
}

fn expect_len(what: &str, got: &[Vec<f64>], want: &[usize]) -> Result<(), NnError> {
    let lens: Vec<usize> = got.iter().map(Vec::len).collect();
    if lens != want {
        return Err(fmt_err(format!("{what}: blob sizes {lens:?}, expected {want:?}")));
    }
    Ok(())
}

fn dims_exact<const N: usize>(what: &str, dims: &[usize]) -> Result<[usize; N], NnError> {
    let arr: [usize; N] = dims
        .try_into()
        .map_err(|_| fmt_err(format!("{what}: expected {N} dims, got {}", dims.len())))?;
    if arr.contains(&0) {
        return Err(fmt_err(format!("{what}: zero dimension")));
    }
    Ok(arr)
}

fn hyper_exact<const N: usize>(what: &str, hyper: &[f64]) -> Result<[f64; N], NnError> {
    hyper
        .try_into()
        .map_err(|_| fmt_err(format!("{what}: expected {N} hyper-parameters, got {}", hyper.len())))
}

fn build_layer(tag: u8, dims: &[usize], hyper: &[f64], mut blobs: Vec<Vec<f64>>) -> Result<Layer, NnError> {
    Ok(match tag {
        TAG_CONV => {
            let [f, k, s, c] = dims_exact::<4>("conv1d", dims)?;
            expect_len("conv1d", &blobs, &[f * k * c, f])?;
            let b = blobs.pop().unwrap();
            let w = blobs.pop().unwrap();
            Layer::Conv1d(Conv1d::new(f, k, s, c, w, b))
        }
        TAG_RELU => Layer::Relu(Relu::default()),
        TAG_BN => {
            let [c] = dims_exact::<1>("batchnorm", dims)?;
            let [eps, momentum] = hyper_exact::<2>("batchnorm", hyper)?;
            expect_len("batchnorm", &blobs, &[c; 4])?;
            let mut bn = BatchNorm1d::new(c, eps, momentum);
            bn.running_var = blobs.pop().unwrap();
            bn.running_mean = blobs.pop().unwrap();
            bn.beta.value = blobs.pop().unwrap();
            bn.gamma.value = blobs.pop().unwrap();
            Layer::BatchNorm(bn)
        }
        TAG_POOL => {
            let [size, stride] = dims_exact::<2>("maxpool", dims)?;
            Layer::MaxPool(MaxPool1d::new(size, stride))
        }
        TAG_DROPOUT => {
            let [rate] = hyper_exact::<1>("dropout", hyper)?;
            Layer::Dropout(Dropout::new(rate)?)
        }
        TAG_GMP => Layer::GlobalMaxPool(GlobalMaxPool::default()),
        TAG_DENSE => {
            let [i, u] = dims_exact::<2>("dense", dims)?;
            let [act] = hyper_exact::<1>("dense", hyper)?;
            expect_len("dense", &blobs, &[i * u, u])?;
            let act = if act != 0.0 { Activation::Relu } else { Activation::None };
            let b = blobs.pop().unwrap();
            let w = blobs.pop().unwrap();
            Layer::Dense(Dense::new(i, u, act, w, b))
        }
        other => return Err(fmt_err(format!("unknown layer tag {other}"))),
    })
}

/// Parses a model file, returning the model and its text trailer.
pub fn decode_model(bytes: &[u8]) -> Result<(Model, String), NnError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(fmt_err("bad magic, not a model file"));
    }
    let mut r = Cursor::new(bytes);
    r.set_position(4);
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported model version {version}")));
    }
    let input_len = read_u32(&mut r)? as usize;
    let input_channels = read_u32(&mut r)? as usize;
    let n_layers = read_len(&mut r, 1)?;
    let mut layers = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let tag = r.read_u8().map_err(|_| fmt_err("unexpected end of model file"))?;
        let nd = read_len(&mut r, 4)?;
        let dims = (0..nd)
            .map(|_| read_u32(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let nh = read_len(&mut r, 8)?;
        let hyper = (0..nh)
            .map(|_| r.read_f64::<LE>().map_err(|_| fmt_err("truncated hyper-parameters")))
            .collect::<Result<Vec<_>, _>>()?;
        let nb = read_len(&mut r, 4)?;
        let mut blobs = Vec::with_capacity(nb);
        for _ in 0..nb {
            let n = read_len(&mut r, 4)?;
            let blob = (0..n)
                .map(|_| r.read_f32::<LE>().map(f64::from).map_err(|_| fmt_err("truncated blob")))
                .collect::<Result<Vec<_>, _>>()?;
            blobs.push(blob);
        }
        layers.push(build_layer(tag, &dims, &hyper, blobs)?);
    }
    let meta_len = read_len(&mut r, 1)?;
    let mut meta = vec![0u8; meta_len];
    r.read_exact(&mut meta).map_err(|_| fmt_err("truncated metadata"))?;
    if (r.position() as usize) != bytes.len() {
        return Err(fmt_err("trailing bytes after metadata"));
    }
    let meta = String::from_utf8(meta).map_err(|_| fmt_err("metadata is not UTF-8"))?;
    let model = Model {
        input_len,
        input_channels,
        layers,
        exec: Execution::default(),
    };
    model.shape_chain()?;
    Ok((model, meta))
}

pub fn save_model(path: &Path, model: &Model, meta: &str) -> Result<(), NnError> {
    std::fs::write(path, encode_model(model, meta)).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<(Model, String), NnError> {
    let bytes = std::fs::read(path).map_err(|source| NnError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode_model(&bytes)
}
