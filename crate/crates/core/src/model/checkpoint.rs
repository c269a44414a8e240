//! Versioned binary checkpoints.
//!
//! ```text
//! "LDPC" | version u8 | config | u32 n | n x record | u8 has_state | [state]
//! config : u32 bands, ratio, feb_channels, feb_kernel, dedb_layers,
//!          dedb_growth, gb_hidden_channels, gb_fc_hidden, rb_kernel_size,
//!          f64 rb_init_sigma, u8 gb_normalize, u64 init_seed
//! record : u32 name_len | name | u32 rank | rank x u32 dim | f32 payload
//! state  : u64 optimizer_step | u64 train_step | u32 n | n x record (m/..)
//!          | u32 n | n x record (v/..)
//! ```
//! All integers and floats are little-endian.

use std::collections::BTreeMap;
use std::path::Path;

use super::{GbNormalize, LdpNet, ModelConfig, ParamStore};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"LDPC";
pub const CHECKPOINT_VERSION: u8 = 1;

/// Optimizer and loop position saved next to the parameters so that a
/// resumed run continues exactly where it stopped.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub optimizer_step: u64,
    pub train_step: u64,
    pub first_moments: BTreeMap<String, Tensor<f32>>,
    pub second_moments: BTreeMap<String, Tensor<f32>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: LdpNet<f32>,
    pub state: Option<TrainState>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn records<'a>(&mut self, items: impl ExactSizeIterator<Item = (&'a String, &'a Tensor<f32>)>) {
        self.u32(items.len());
        for (name, t) in items {
            self.u32(name.len());
            self.0.extend_from_slice(name.as_bytes());
            self.u32(t.shape().len());
            for &d in t.shape() {
                self.u32(d);
            }
            for v in t.data() {
                self.0.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint(format!("unexpected end of file at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn records(&mut self) -> Result<BTreeMap<String, Tensor<f32>>> {
        let n = self.u32()?;
        let mut out = BTreeMap::new();
        for _ in 0..n {
            let len = self.u32()?;
            let name = std::str::from_utf8(self.take(len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = self.u32()?;
            let shape = (0..rank).map(|_| self.u32()).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let bytes = self.take(count.checked_mul(4).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            out.insert(name, Tensor::new(shape, data)?);
        }
        Ok(out)
    }
}

fn write_config(w: &mut Writer, c: &ModelConfig) {
    for v in [
        c.bands,
        c.ratio,
        c.feb_channels,
        c.feb_kernel,
        c.dedb_layers,
        c.dedb_growth,
        c.gb_hidden_channels,
        c.gb_fc_hidden,
        c.rb_kernel_size,
    ] {
        w.u32(v);
    }
    w.f64(c.rb_init_sigma);
    w.u8(c.gb_normalize.code());
    w.u64(c.init_seed);
}

fn read_config(r: &mut Reader) -> Result<ModelConfig> {
    let mut v = [0usize; 9];
    for slot in v.iter_mut() {
        *slot = r.u32()?;
    }
    let rb_init_sigma = r.f64()?;
    let gb = r.u8()?;
    let gb_normalize = GbNormalize::from_code(gb).ok_or_else(|| Error::Checkpoint(format!("bad gb_normalize code {gb}")))?;
    let init_seed = r.u64()?;
    let cfg = ModelConfig {
        bands: v[0],
        ratio: v[1],
        feb_channels: v[2],
        feb_kernel: v[3],
        dedb_layers: v[4],
        dedb_growth: v[5],
        gb_hidden_channels: v[6],
        gb_fc_hidden: v[7],
        rb_kernel_size: v[8],
        rb_init_sigma,
        gb_normalize,
        init_seed,
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn encode_checkpoint(net: &LdpNet<f32>, state: Option<&TrainState>) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(CHECKPOINT_MAGIC);
    w.u8(CHECKPOINT_VERSION);
    write_config(&mut w, &net.config);
    let params: Vec<_> = net.params.iter().collect();
    w.records(params.into_iter());
    match state {
        None => w.u8(0),
        Some(s) => {
            w.u8(1);
            w.u64(s.optimizer_step);
            w.u64(s.train_step);
            w.records(s.first_moments.iter());
            w.records(s.second_moments.iter());
        }
    }
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u8()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let config = read_config(&mut r)?;
    let records = r.records()?;
    // The stored tensors must match the architecture exactly.
    let reference = ParamStore::<f32>::init(&config)?;
    let mut params = ParamStore::default();
    for (name, t) in reference.iter() {
        let stored = records
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if stored.shape() != t.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                stored.shape(),
                t.shape()
            )));
        }
        params.insert(name.clone(), stored.clone());
    }
    if records.len() != reference.len() {
        return Err(Error::Checkpoint("checkpoint holds unknown parameters".into()));
    }
    if !params.all_finite() {
        return Err(Error::NonFinite("checkpoint parameters".into()));
    }
    let state = match r.u8()? {
        0 => None,
        1 => Some(TrainState {
            optimizer_step: r.u64()?,
            train_step: r.u64()?,
            first_moments: r.records()?,
            second_moments: r.records()?,
        }),
        other => return Err(Error::Checkpoint(format!("bad state flag {other}"))),
    };
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(Checkpoint {
        net: LdpNet { config, params },
        state,
    })
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save_checkpoint(path: &Path, net: &LdpNet<f32>, state: Option<&TrainState>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    crate::raster::write_atomic(path, &encode_checkpoint(net, state))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
