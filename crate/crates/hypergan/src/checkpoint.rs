//! "HGCK" checkpoint container: a metadata text block plus named typed
//! arrays, little-endian payloads, whole-file SHA-256 trailer. Model and
//! optimizer state round-trip bitwise.
//!
//! Layout:
//!   magic "HGCK" | version u32 | meta_len u32 | meta (key=value lines) |
//!   array_count u32 | per array: name_len u16, name, dtype u8, rank u8,
//!   dims u32 x rank, payload | sha256 (32 bytes)

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::model::{HyperGanConfig, HyperGanModel, ParamGroup};
use crate::nets::ArchSpec;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"HGCK";
pub const VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_U32: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("format: {0}")]
    Format(String),
    #[error("checksum mismatch: file is corrupt")]
    Checksum,
    #[error("missing entry: {0}")]
    Missing(String),
}

pub type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F32(Vec<usize>, Vec<f32>),
    U32(Vec<usize>, Vec<u32>),
}

/// Ordered named arrays plus a free-form metadata map.
#[derive(Debug, Default, Clone)]
pub struct ArrayStore {
    pub meta: BTreeMap<String, String>,
    arrays: Vec<(String, ArrayData)>,
}

impl ArrayStore {
    pub fn new() -> Self {
        ArrayStore::default()
    }

    pub fn push_f32(&mut self, name: &str, shape: &[usize], data: Vec<f32>) {
        self.arrays
            .push((name.to_string(), ArrayData::F32(shape.to_vec(), data)));
    }

    pub fn push_u32(&mut self, name: &str, data: Vec<u32>) {
        let shape = vec![data.len()];
        self.arrays
            .push((name.to_string(), ArrayData::U32(shape, data)));
    }

    pub fn push_tensor(&mut self, name: &str, t: &Tensor) {
        self.push_f32(name, t.shape(), t.data().to_vec());
    }

    pub fn get(&self, name: &str) -> Option<&ArrayData> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, d)| d)
    }

    pub fn tensor(&self, name: &str) -> Result<Tensor> {
        match self.get(name) {
            Some(ArrayData::F32(shape, data)) => {
                Tensor::from_vec(shape, data.clone()).map_err(|e| CheckpointError::Format(e.to_string()))
            }
            Some(ArrayData::U32(..)) => Err(CheckpointError::Format(format!(
                "array '{name}' is u32, expected f32"
            ))),
            None => Err(CheckpointError::Missing(name.to_string())),
        }
    }

    pub fn u32s(&self, name: &str) -> Result<&[u32]> {
        match self.get(name) {
            Some(ArrayData::U32(_, data)) => Ok(data),
            Some(ArrayData::F32(..)) => Err(CheckpointError::Format(format!(
                "array '{name}' is f32, expected u32"
            ))),
            None => Err(CheckpointError::Missing(name.to_string())),
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.arrays.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.arrays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arrays.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let meta: String = self
            .meta
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        buf.extend_from_slice(meta.as_bytes());
        buf.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, data) in &self.arrays {
            buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
            buf.extend_from_slice(name.as_bytes());
            match data {
                ArrayData::F32(shape, values) => {
                    buf.push(DTYPE_F32);
                    buf.push(shape.len() as u8);
                    for &d in shape {
                        buf.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for v in values {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
                ArrayData::U32(shape, values) => {
                    buf.push(DTYPE_U32);
                    buf.push(shape.len() as u8);
                    for &d in shape {
                        buf.extend_from_slice(&(d as u32).to_le_bytes());
                    }
                    for v in values {
                        buf.extend_from_slice(&v.to_le_bytes());
                    }
                }
            }
        }
        let mut hasher = Sha256::new();
        hasher.update(&buf);
        buf.extend_from_slice(&hasher.finalize());
        buf
    }

    pub fn from_bytes(raw: &[u8]) -> Result<Self> {
        if raw.len() < 4 + 4 + 4 + 32 {
            return Err(CheckpointError::Format("file too short".into()));
        }
        let (body, trailer) = raw.split_at(raw.len() - 32);
        let mut hasher = Sha256::new();
        hasher.update(body);
        if hasher.finalize().as_slice() != trailer {
            return Err(CheckpointError::Checksum);
        }
        let mut pos = 0usize;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let s = body
                .get(*pos..*pos + n)
                .ok_or_else(|| CheckpointError::Format(format!("truncated at byte {pos}")))?;
            *pos += n;
            Ok(s)
        };
        if take(&mut pos, 4)? != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        if version != VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let meta_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let meta_raw = String::from_utf8(take(&mut pos, meta_len)?.to_vec())
            .map_err(|_| CheckpointError::Format("metadata is not utf-8".into()))?;
        let mut meta = BTreeMap::new();
        for line in meta_raw.lines() {
            if let Some((k, v)) = line.split_once('=') {
                meta.insert(k.to_string(), v.to_string());
            }
        }
        let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
            let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
                .map_err(|_| CheckpointError::Format("array name is not utf-8".into()))?;
            let dtype = take(&mut pos, 1)?[0];
            let rank = take(&mut pos, 1)?[0] as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize);
            }
            let n: usize = shape.iter().product();
            match dtype {
                DTYPE_F32 => {
                    let raw = take(&mut pos, 4 * n)?;
                    let values = raw
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect();
                    arrays.push((name, ArrayData::F32(shape, values)));
                }
                DTYPE_U32 => {
                    let raw = take(&mut pos, 4 * n)?;
                    let values = raw
                        .chunks_exact(4)
                        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
                        .collect();
                    arrays.push((name, ArrayData::U32(shape, values)));
                }
                other => {
                    return Err(CheckpointError::Format(format!("unknown dtype {other}")))
                }
            }
        }
        if pos != body.len() {
            return Err(CheckpointError::Format(format!(
                "{} trailing bytes",
                body.len() - pos
            )));
        }
        Ok(ArrayStore { meta, arrays })
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        ArrayStore::from_bytes(&raw)
    }
}

pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let io = |source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    };
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

// ── model persistence ────────────────────────────────────────────────

fn config_meta(store: &mut ArrayStore, model: &HyperGanModel) {
    let c = &model.config;
    let m = &mut store.meta;
    m.insert("arch".into(), model.arch.name.clone());
    m.insert("hypergan.noise_dim".into(), c.noise_dim.to_string());
    m.insert("hypergan.code_dim".into(), c.code_dim.to_string());
    m.insert("hypergan.mixer_hidden".into(), join(&c.mixer_hidden));
    m.insert("hypergan.generator_hidden".into(), join(&c.generator_hidden));
    m.insert(
        "hypergan.discriminator_hidden".into(),
        join(&c.discriminator_hidden),
    );
    m.insert("hypergan.beta".into(), format!("{}", c.beta));
    m.insert("hypergan.prior_std".into(), format!("{}", c.prior_std));
    m.insert("hypergan.use_mixer".into(), c.use_mixer.to_string());
}

fn join(v: &[usize]) -> String {
    v.iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn split_list(s: &str) -> Result<Vec<usize>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CheckpointError::Format(format!("bad list entry '{p}'")))
        })
        .collect()
}

/// Serialize the model (config + arch name in metadata, every parameter
/// as a named array).
pub fn model_to_store(model: &HyperGanModel) -> ArrayStore {
    let mut store = ArrayStore::new();
    config_meta(&mut store, model);
    model.visit_params(ParamGroup::All, &mut |name, t| {
        store.push_tensor(&name, t);
    });
    store
}

fn meta_get<'a>(store: &'a ArrayStore, key: &str) -> Result<&'a str> {
    store
        .meta
        .get(key)
        .map(|s| s.as_str())
        .ok_or_else(|| CheckpointError::Missing(format!("meta '{key}'")))
}

/// Rebuild a model from a store written by [`model_to_store`].
pub fn model_from_store(store: &ArrayStore) -> Result<HyperGanModel> {
    let arch_name = meta_get(store, "arch")?;
    let arch = ArchSpec::by_name(arch_name)
        .ok_or_else(|| CheckpointError::Format(format!("unknown arch '{arch_name}'")))?;
    let parse = |key: &str| -> Result<usize> {
        meta_get(store, key)?
            .parse()
            .map_err(|_| CheckpointError::Format(format!("bad meta '{key}'")))
    };
    let parse_f = |key: &str| -> Result<f32> {
        meta_get(store, key)?
            .parse()
            .map_err(|_| CheckpointError::Format(format!("bad meta '{key}'")))
    };
    let config = HyperGanConfig {
        noise_dim: parse("hypergan.noise_dim")?,
        code_dim: parse("hypergan.code_dim")?,
        mixer_hidden: split_list(meta_get(store, "hypergan.mixer_hidden")?)?,
        generator_hidden: split_list(meta_get(store, "hypergan.generator_hidden")?)?,
        discriminator_hidden: split_list(meta_get(store, "hypergan.discriminator_hidden")?)?,
        beta: parse_f("hypergan.beta")?,
        prior_std: parse_f("hypergan.prior_std")?,
        use_mixer: meta_get(store, "hypergan.use_mixer")? == "true",
    };
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(0);
    use rand::SeedableRng;
    let mut model = HyperGanModel::init(config, &arch, &mut rng)
        .map_err(|e| CheckpointError::Format(e.to_string()))?;
    let mut missing = Vec::new();
    model.visit_params_mut(ParamGroup::All, &mut |name, t| {
        match store.tensor(&name) {
            Ok(loaded) if loaded.shape() == t.shape() => *t = loaded,
            Ok(loaded) => missing.push(format!(
                "{name}: shape {:?} vs {:?}",
                loaded.shape(),
                t.shape()
            )),
            Err(_) => missing.push(name),
        }
    });
    if !missing.is_empty() {
        return Err(CheckpointError::Format(format!(
            "parameter mismatch: {missing:?}"
        )));
    }
    Ok(model)
}

pub fn save_model(model: &HyperGanModel, path: &Path) -> Result<()> {
    model_to_store(model).save(path)
}

pub fn load_model(path: &Path) -> Result<HyperGanModel> {
    model_from_store(&ArrayStore::load(path)?)
}

// ── optimizer/rng state persistence ──────────────────────────────────

fn push_adam(store: &mut ArrayStore, prefix: &str, adam: &crate::optim::Adam) {
    let (t, m, v) = adam.state();
    store.push_u32(
        &format!("{prefix}.t"),
        vec![(t >> 32) as u32, (t & 0xffff_ffff) as u32],
    );
    for (i, slot) in m.iter().enumerate() {
        store.push_f32(&format!("{prefix}.m{i}"), &[slot.len()], slot.clone());
    }
    for (i, slot) in v.iter().enumerate() {
        store.push_f32(&format!("{prefix}.v{i}"), &[slot.len()], slot.clone());
    }
    store
        .meta
        .insert(format!("{prefix}.slots"), m.len().to_string());
}

fn pull_adam(store: &ArrayStore, prefix: &str, adam: &mut crate::optim::Adam) -> Result<()> {
    let slots: usize = meta_get(store, &format!("{prefix}.slots"))?
        .parse()
        .map_err(|_| CheckpointError::Format("bad slot count".into()))?;
    let t_raw = store.u32s(&format!("{prefix}.t"))?;
    let t = ((t_raw[0] as u64) << 32) | t_raw[1] as u64;
    let mut m = Vec::with_capacity(slots);
    let mut v = Vec::with_capacity(slots);
    for i in 0..slots {
        m.push(store.tensor(&format!("{prefix}.m{i}"))?.data().to_vec());
        v.push(store.tensor(&format!("{prefix}.v{i}"))?.data().to_vec());
    }
    adam.restore(t, m, v);
    Ok(())
}

/// Serialize a [`crate::train::TrainState`]: step counter, both Adam
/// states, and the exact rng position.
pub fn state_to_store(state: &crate::train::TrainState) -> ArrayStore {
    let mut store = ArrayStore::new();
    store
        .meta
        .insert("state.step".into(), state.step.to_string());
    let seed = state.rng.get_seed();
    let seed_words: Vec<u32> = seed
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    store.push_u32("state.rng_seed", seed_words);
    let pos = state.rng.get_word_pos();
    store.push_u32(
        "state.rng_pos",
        vec![
            (pos >> 96) as u32,
            (pos >> 64) as u32,
            (pos >> 32) as u32,
            pos as u32,
        ],
    );
    push_adam(&mut store, "adam_g", &state.adam_generator);
    push_adam(&mut store, "adam_d", &state.adam_discriminator);
    store
}

/// Restore a train state saved by [`state_to_store`]. `cfg` supplies the
/// optimizer hyperparameters (they are not stored).
pub fn state_from_store(
    store: &ArrayStore,
    cfg: &crate::train::TrainConfig,
) -> Result<crate::train::TrainState> {
    let mut state = crate::train::TrainState::new(cfg);
    state.step = meta_get(store, "state.step")?
        .parse()
        .map_err(|_| CheckpointError::Format("bad step".into()))?;
    let seed_words = store.u32s("state.rng_seed")?;
    if seed_words.len() != 8 {
        return Err(CheckpointError::Format("bad rng seed length".into()));
    }
    let mut seed = [0u8; 32];
    for (i, w) in seed_words.iter().enumerate() {
        seed[4 * i..4 * i + 4].copy_from_slice(&w.to_le_bytes());
    }
    use rand_chacha::rand_core::SeedableRng as _;
    let mut rng = rand_chacha::ChaCha20Rng::from_seed(seed);
    let pos_raw = store.u32s("state.rng_pos")?;
    let pos: u128 = ((pos_raw[0] as u128) << 96)
        | ((pos_raw[1] as u128) << 64)
        | ((pos_raw[2] as u128) << 32)
        | pos_raw[3] as u128;
    rng.set_word_pos(pos);
    state.rng = rng;
    pull_adam(store, "adam_g", &mut state.adam_generator)?;
    pull_adam(store, "adam_d", &mut state.adam_discriminator)?;
    Ok(state)
}

/// Store a population of target-network parameter sets (standard
/// ensembles, attack artifacts).
pub fn paramsets_to_store(arch: &ArchSpec, members: &[crate::nets::ParamSet]) -> ArrayStore {
    let mut store = ArrayStore::new();
    store.meta.insert("arch".into(), arch.name.clone());
    store
        .meta
        .insert("members".into(), members.len().to_string());
    for (i, m) in members.iter().enumerate() {
        for (l, layer) in m.layers.iter().enumerate() {
            store.push_tensor(&format!("member{i}.layer{l}.weight"), &layer.weight);
            store.push_tensor(&format!("member{i}.layer{l}.bias"), &layer.bias);
        }
    }
    store
}

pub fn paramsets_from_store(store: &ArrayStore) -> Result<(ArchSpec, Vec<crate::nets::ParamSet>)> {
    let arch_name = meta_get(store, "arch")?;
    let arch = ArchSpec::by_name(arch_name)
        .ok_or_else(|| CheckpointError::Format(format!("unknown arch '{arch_name}'")))?;
    let count: usize = meta_get(store, "members")?
        .parse()
        .map_err(|_| CheckpointError::Format("bad member count".into()))?;
    let mut members = Vec::with_capacity(count);
    for i in 0..count {
        let mut layers = Vec::with_capacity(arch.layer_count());
        for l in 0..arch.layer_count() {
            layers.push(crate::nets::LayerParams {
                weight: store.tensor(&format!("member{i}.layer{l}.weight"))?,
                bias: store.tensor(&format!("member{i}.layer{l}.bias"))?,
            });
        }
        members.push(crate::nets::ParamSet {
            arch_name: arch.name.clone(),
            layers,
        });
    }
    Ok((arch, members))
}
