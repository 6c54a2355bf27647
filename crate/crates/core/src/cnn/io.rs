//! Model file layout (all integers little-endian):
//!
//! ```text
//! "EKMN" | u16 version
//! u32 len | UTF-8 "key=value\n" config block (architecture, adam step, metadata)
//! u32 count | count x (u32 len | UTF-8 class name)
//! u32 count | count x (u16 len | name | u8 rank | rank x u32 dim | f32 data)
//! ```
//!
//! Tensors are stored as the six parameters, then the six Adam first
//! moments (`m.` prefix), then the six second moments (`v.` prefix).

use std::path::Path;

use super::{AdamState, CnnError, Model, ModelConfig, Params, TENSOR_NAMES};

pub const MODEL_MAGIC: &[u8; 4] = b"EKMN";
pub const MODEL_VERSION: u16 = 1;
const META_PREFIX: &str = "meta.";

fn config_text(model: &Model<f32>) -> String {
    let c = &model.config;
    let mut s = String::new();
    let mut kv = |k: &str, v: String| {
        s.push_str(k);
        s.push('=');
        s.push_str(&v);
        s.push('\n');
    };
    kv("input_h", c.input_h.to_string());
    kv("input_w", c.input_w.to_string());
    kv("channels", c.channels.to_string());
    kv("crop", format!("{},{},{},{}", c.crop.0, c.crop.1, c.crop.2, c.crop.3));
    kv("filters", c.filters.to_string());
    kv("kernel", c.kernel.to_string());
    kv("pool", c.pool.to_string());
    kv("dropout", c.dropout.to_string());
    kv("hidden", c.hidden.to_string());
    kv("classes", c.classes.to_string());
    kv("adam_step", model.adam.step.to_string());
    for (k, v) in &model.metadata {
        kv(&format!("{META_PREFIX}{k}"), v.replace('\n', " "));
    }
    s
}

pub fn model_to_bytes(model: &Model<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * 3 * model.params.len() + 4096);
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let cfg = config_text(model);
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(cfg.as_bytes());
    out.extend_from_slice(&(model.vocab.len() as u32).to_le_bytes());
    for name in &model.vocab {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
    }
    let shapes = model.config.tensor_shapes();
    let groups = [("", &model.params), ("m.", &model.adam.m), ("v.", &model.adam.v)];
    out.extend_from_slice(&((groups.len() * TENSOR_NAMES.len()) as u32).to_le_bytes());
    for (prefix, params) in groups {
        for ((name, shape), data) in TENSOR_NAMES.iter().zip(&shapes).zip(params.tensors()) {
            let full = format!("{prefix}{name}");
            out.extend_from_slice(&(full.len() as u16).to_le_bytes());
            out.extend_from_slice(full.as_bytes());
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in data.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CnnError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| CnnError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, CnnError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, CnnError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, CnnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize) -> Result<String, CnnError> {
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CnnError::Format("invalid UTF-8".into()))
    }
}

fn parse_config(text: &str) -> Result<(ModelConfig, u64, Vec<(String, String)>), CnnError> {
    let mut cfg = ModelConfig::new(2);
    let mut step = 0;
    let mut meta = Vec::new();
    let bad = |k: &str, v: &str| CnnError::Format(format!("bad config value {k}={v}"));
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CnnError::Format(format!("bad config line {line:?}")))?;
        let num = || v.parse::<usize>().map_err(|_| bad(k, v));
        match k {
            "input_h" => cfg.input_h = num()?,
            "input_w" => cfg.input_w = num()?,
            "channels" => cfg.channels = num()?,
            "crop" => {
                let p: Vec<usize> = v.split(',').map(|s| s.parse().map_err(|_| bad(k, v))).collect::<Result<_, _>>()?;
                if p.len() != 4 {
                    return Err(bad(k, v));
                }
                cfg.crop = (p[0], p[1], p[2], p[3]);
            }
            "filters" => cfg.filters = num()?,
            "kernel" => cfg.kernel = num()?,
            "pool" => cfg.pool = num()?,
            "dropout" => cfg.dropout = v.parse().map_err(|_| bad(k, v))?,
            "hidden" => cfg.hidden = num()?,
            "classes" => cfg.classes = num()?,
            "adam_step" => step = v.parse().map_err(|_| bad(k, v))?,
            _ => match k.strip_prefix(META_PREFIX) {
                Some(key) => meta.push((key.to_string(), v.to_string())),
                None => return Err(CnnError::Format(format!("unknown config key {k}"))),
            },
        }
    }
    cfg.validate().map_err(|e| CnnError::Format(e.to_string()))?;
    Ok((cfg, step, meta))
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model<f32>, CnnError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MODEL_MAGIC {
        return Err(CnnError::Format("not an EKMN model file".into()));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(CnnError::Format(format!("unsupported version {version}")));
    }
    let n = r.u32()? as usize;
    let text = r.str(n)?;
    let (config, step, metadata) = parse_config(&text)?;

    let n_vocab = r.u32()? as usize;
    if n_vocab != config.classes {
        return Err(CnnError::Format(format!("{n_vocab} class names for {} classes", config.classes)));
    }
    let mut vocab = Vec::with_capacity(n_vocab);
    for _ in 0..n_vocab {
        let n = r.u32()? as usize;
        vocab.push(r.str(n)?);
    }

    let shapes = config.tensor_shapes();
    let n_tensors = r.u32()? as usize;
    if n_tensors != 3 * TENSOR_NAMES.len() {
        return Err(CnnError::Format(format!("expected 18 tensors, found {n_tensors}")));
    }
    let mut groups = [Params::zeros(&config), Params::zeros(&config), Params::zeros(&config)];
    for (params, prefix) in groups.iter_mut().zip(["", "m.", "v."]) {
        for ((name, shape), slot) in TENSOR_NAMES.iter().zip(&shapes).zip(params.tensors_mut()) {
            let len = r.u16()? as usize;
            let got = r.str(len)?;
            let want = format!("{prefix}{name}");
            if got != want {
                return Err(CnnError::Format(format!("expected tensor {want}, found {got}")));
            }
            let rank = r.u8()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            if &dims != shape {
                return Err(CnnError::Format(format!("tensor {want} has shape {dims:?}, expected {shape:?}")));
            }
            let raw = r.take(slot.len() * 4)?;
            for (v, b) in slot.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
        }
    }
    if r.pos != bytes.len() {
        return Err(CnnError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let [params, m, v] = groups;
    let model = Model {
        config,
        params,
        adam: AdamState { m, v, step },
        vocab,
        metadata,
    };
    if !model.params.all_finite() {
        return Err(CnnError::Format("non-finite weights".into()));
    }
    Ok(model)
}

pub fn save_model(model: &Model<f32>, path: &Path) -> Result<(), CnnError> {
    std::fs::write(path, model_to_bytes(model)).map_err(|source| CnnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_model(path: &Path) -> Result<Model<f32>, CnnError> {
    let bytes = std::fs::read(path).map_err(|source| CnnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    model_from_bytes(&bytes)
}
