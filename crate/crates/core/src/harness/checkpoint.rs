//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "ICFTCKPT" | u32 version | str scalar tag | u64 len + JSON header
//! u32 n | n × (str name | u8 ndim | ndim × u64 dim | data)
//! stm items | ltm items | u32 n | n × (u8 present [| u64 t | m | v])
//! u32 CRC-32 of everything above
//! ```
//!
//! Strings are a u32 byte length followed by UTF-8. Scalars use the width of the file's tag.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{RngState, SeededRng, Tensor};
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::memory::{DualMemory, LongTermMemory, MemoryItem, MemoryProjections, MemoryStore, ShortTermMemory};
use crate::model::{AdaptedModel, Vocab};
use crate::scalar::Scalar;
use crate::train::{Adam, AdamConfig, Cursor, Example, IcftModel, Moments, Trainer};

pub const MAGIC: &[u8; 8] = b"ICFTCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// A full snapshot: enough to evaluate, inspect memory, or resume training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<S> {
    pub config: RunConfig,
    pub vocab: Vocab,
    pub state: IcftModel<S>,
    pub adam: Adam<S>,
    pub rng: RngState,
    pub cursor: Cursor,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: RunConfig,
    vocab: Vocab,
    step: u64,
    cursor_stage: usize,
    cursor_epoch: usize,
    cursor_pos: usize,
    cursor_order: Vec<usize>,
    use_memory: bool,
    merged: Vec<bool>,
    adam: AdamConfig,
    adam_steps: u64,
    rng_seed: u64,
    /// u128 as a decimal string; JSON numbers cannot hold it portably.
    rng_word_pos: String,
    stm_capacity: usize,
    stm_clock: u64,
    ltm_threshold: u64,
    ltm_capacity: usize,
    ltm_clock: u64,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn from_trainer(config: RunConfig, vocab: Vocab, t: &Trainer<S>) -> Self {
        Self {
            config,
            vocab,
            state: t.state.clone(),
            adam: t.adam.clone(),
            rng: t.rng.state(),
            cursor: t.cursor.clone(),
            step: t.step,
        }
    }

    /// A checkpoint of an untrained run.
    pub fn fresh(config: RunConfig, vocab: Vocab) -> Result<Self> {
        let mcfg = config.model_config(vocab.len())?;
        let state = IcftModel {
            model: AdaptedModel::init(&mcfg)?,
            proj: MemoryProjections::identity(mcfg.d_model),
            memory: DualMemory::new(&config.memory)?,
            use_memory: !config.ablation.no_memory,
        };
        let n = state.named_params().len();
        Ok(Self {
            adam: Adam::new(config.train.adam, n),
            rng: SeededRng::new(config.seed).state(),
            cursor: Cursor::default(),
            step: 0,
            config,
            vocab,
            state,
        })
    }

    pub fn into_trainer(self, examples: Vec<Example>) -> Result<Trainer<S>> {
        Trainer::resume(
            self.config.plan(),
            self.state,
            examples,
            self.adam,
            SeededRng::from_state(self.rng),
            self.cursor,
            self.step,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.buf.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.str(S::NAME);
        let header = Header {
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            step: self.step,
            cursor_stage: self.cursor.stage,
            cursor_epoch: self.cursor.epoch,
            cursor_pos: self.cursor.pos,
            cursor_order: self.cursor.order.clone(),
            use_memory: self.state.use_memory,
            merged: self.state.model.patches.iter().map(|p| p.merged).collect(),
            adam: self.adam.cfg,
            adam_steps: self.adam.steps,
            rng_seed: self.rng.seed,
            rng_word_pos: self.rng.word_pos.to_string(),
            stm_capacity: self.state.memory.stm.capacity(),
            stm_clock: self.state.memory.stm.clock(),
            ltm_threshold: self.state.memory.ltm.threshold(),
            ltm_capacity: self.state.memory.ltm.capacity(),
            ltm_clock: self.state.memory.ltm.clock(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        w.u64(json.len() as u64);
        w.buf.extend_from_slice(&json);

        let params = self.state.named_params();
        w.u32(params.len() as u32);
        for (name, _, t) in &params {
            w.str(name);
            w.buf.push(t.shape().len() as u8);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.scalars(t.data());
        }
        for items in [self.state.memory.stm.items(), self.state.memory.ltm.items()] {
            w.u32(items.len() as u32);
            for it in items {
                w.str(&it.id);
                w.str(&it.text);
                w.u64(it.access_count);
                w.u64(it.insert_time);
                w.u32(it.key.len() as u32);
                w.scalars(&it.key);
                w.scalars(&it.value);
            }
        }
        w.u32(self.adam.moments.len() as u32);
        for m in &self.adam.moments {
            match m {
                None => w.buf.push(0),
                Some(m) => {
                    w.buf.push(1);
                    w.u64(m.t);
                    w.u32(m.m.len() as u32);
                    w.scalars(&m.m);
                    w.scalars(&m.v);
                }
            }
        }
        let crc = crc32fast::hash(&w.buf);
        w.u32(crc);
        w.buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 8 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(Error::Integrity { stored, computed });
        }
        let mut r = Reader {
            buf: payload,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, this build reads {FORMAT_VERSION}"
            )));
        }
        let tag = r.str()?;
        if tag != S::NAME {
            return Err(Error::Checkpoint(format!("checkpoint stores {tag}, expected {}", S::NAME)));
        }
        let hlen = r.u64()? as usize;
        let header: Header = serde_json::from_slice(r.take(hlen)?)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;

        let mcfg = header.config.model_config(header.vocab.len())?;
        let mut state = IcftModel {
            model: AdaptedModel::<S>::init(&mcfg)?,
            proj: MemoryProjections::identity(mcfg.d_model),
            memory: DualMemory::new(&header.config.memory)?,
            use_memory: header.use_memory,
        };
        let expected: Vec<(String, Vec<usize>)> = state
            .named_params()
            .iter()
            .map(|(n, _, t)| (n.clone(), t.shape().to_vec()))
            .collect();
        let n = r.u32()? as usize;
        if n != expected.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {n} buffers, the config implies {}",
                expected.len()
            )));
        }
        if header.merged.len() != state.model.patches.len() {
            return Err(Error::Checkpoint("patch count does not match the config".into()));
        }
        for (p, &m) in state.model.patches.iter_mut().zip(&header.merged) {
            p.merged = m;
        }
        let mut buffers = Vec::with_capacity(n);
        for (want_name, want_shape) in &expected {
            let name = r.str()?;
            let ndim = r.u8()? as usize;
            let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            if name != *want_name || shape != *want_shape {
                return Err(Error::Checkpoint(format!(
                    "buffer {name} {shape:?} where {want_name} {want_shape:?} was expected"
                )));
            }
            let numel = shape.iter().product();
            buffers.push(Tensor::new(shape, r.scalars::<S>(numel)?)?);
        }
        for (slot, t) in state.params_mut().into_iter().zip(buffers) {
            *slot = t;
        }

        let mut stores = Vec::new();
        for _ in 0..2 {
            let count = r.u32()? as usize;
            let mut items = Vec::with_capacity(count);
            for _ in 0..count {
                let id = r.str()?;
                let text = r.str()?;
                let access_count = r.u64()?;
                let insert_time = r.u64()?;
                let width = r.u32()? as usize;
                let key = r.scalars::<S>(width)?;
                let value = r.scalars::<S>(width)?;
                items.push(MemoryItem {
                    id,
                    text,
                    key,
                    value,
                    access_count,
                    insert_time,
                });
            }
            stores.push(items);
        }
        let ltm_items = stores.pop().expect("two stores");
        let stm_items = stores.pop().expect("two stores");
        state.memory = DualMemory {
            stm: ShortTermMemory::from_parts(header.stm_capacity, stm_items, header.stm_clock)?,
            ltm: LongTermMemory::from_parts(header.ltm_threshold, header.ltm_capacity, ltm_items, header.ltm_clock)?,
        };

        let nm = r.u32()? as usize;
        if nm != expected.len() {
            return Err(Error::Checkpoint("optimizer state does not match the parameter list".into()));
        }
        let mut moments = Vec::with_capacity(nm);
        for _ in 0..nm {
            moments.push(match r.u8()? {
                0 => None,
                1 => {
                    let t = r.u64()?;
                    let len = r.u32()? as usize;
                    let m = r.scalars::<S>(len)?;
                    let v = r.scalars::<S>(len)?;
                    Some(Moments { m, v, t })
                }
                b => return Err(Error::Checkpoint(format!("bad moment flag {b}"))),
            });
        }
        if r.pos != payload.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", payload.len() - r.pos)));
        }
        let word_pos = header
            .rng_word_pos
            .parse::<u128>()
            .map_err(|e| Error::Checkpoint(format!("bad rng position: {e}")))?;
        Ok(Self {
            config: header.config,
            vocab: header.vocab,
            state,
            adam: Adam {
                cfg: header.adam,
                moments,
                steps: header.adam_steps,
            },
            rng: RngState {
                seed: header.rng_seed,
                word_pos,
            },
            cursor: Cursor {
                stage: header.cursor_stage,
                epoch: header.cursor_epoch,
                pos: header.cursor_pos,
                order: header.cursor_order,
            },
            step: header.step,
        })
    }
}

/// Writes through a temporary file in the same directory, then renames it into place.
pub fn save_checkpoint<S: Scalar>(path: &Path, ckpt: &Checkpoint<S>) -> Result<()> {
    let bytes = ckpt.to_bytes();
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(format!("creating {}", dir.display()), e))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(format!("writing checkpoint {}", path.display()), e)
    })
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<Checkpoint<S>> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading checkpoint {}", path.display()), e))?;
    Checkpoint::from_bytes(&bytes)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn scalars<S: Scalar>(&mut self, xs: &[S]) {
        for &x in xs {
            x.write_le(&mut self.buf);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
    fn scalars<S: Scalar>(&mut self, n: usize) -> Result<Vec<S>> {
        let bytes = self.take(n.checked_mul(S::BYTES).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(S::BYTES).map(S::read_le).collect())
    }
}
