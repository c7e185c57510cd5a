//! Checkpoint and encoder-export files.
//!
//! Layout: magic `OMAE`, a 1-byte version, a 1-byte kind (full checkpoint
//! or encoder-only), the layer schedule, little-endian 64-bit float
//! tensors in declaration order (encoder first), then optimizer and
//! training-cursor state for full checkpoints, and a trailing CRC-32 over
//! everything before it. Writes are atomic (temp file + rename), so a
//! half-written checkpoint can never shadow a good one.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelParams, ModelSchedule};
use crate::nn::{LayerKind, LayerSpec, ParamTensor};
use crate::optim::AdamState;

pub const MAGIC: &[u8; 4] = b"OMAE";
pub const FORMAT_VERSION: u8 = 1;

const KIND_CHECKPOINT: u8 = 0;
const KIND_ENCODER: u8 = 1;

/// Full training state: weights, optimizer moments, and the cursor needed
/// to resume mid-run deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub schedule: ModelSchedule,
    pub params: ModelParams,
    pub opt_state: AdamState,
    pub root_seed: u64,
    /// Completed epochs.
    pub epoch: u32,
    /// Global optimizer steps taken.
    pub step: u64,
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Writer { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64_slice(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos as u64,
                msg: format!("unexpected end of file (wanted {n} more bytes)"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64_vec(&mut self) -> Result<Vec<f64>> {
        let n = self.u64()? as usize;
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn write_layer(w: &mut Writer, spec: &LayerSpec) {
    w.u8(match spec.kind {
        LayerKind::SparseConv => 0,
        LayerKind::TransposedConv => 1,
    });
    for a in 0..3 {
        w.u8(spec.filter[a] as u8);
        w.u8(spec.stride[a] as u8);
        w.u8(spec.padding[a] as u8);
    }
    w.u8(spec.submanifold as u8);
    w.u32(spec.in_channels as u32);
    w.u32(spec.out_channels as u32);
}

fn read_layer(r: &mut Reader) -> Result<LayerSpec> {
    let kind = match r.u8()? {
        0 => LayerKind::SparseConv,
        1 => LayerKind::TransposedConv,
        k => {
            return Err(Error::Format { offset: r.pos as u64, msg: format!("unknown layer kind {k}") })
        }
    };
    let mut filter = [0usize; 3];
    let mut stride = [0usize; 3];
    let mut padding = [0usize; 3];
    for a in 0..3 {
        filter[a] = r.u8()? as usize;
        stride[a] = r.u8()? as usize;
        padding[a] = r.u8()? as usize;
    }
    let submanifold = r.u8()? != 0;
    let in_channels = r.u32()? as usize;
    let out_channels = r.u32()? as usize;
    Ok(LayerSpec { kind, filter, stride, padding, in_channels, out_channels, submanifold })
}

fn write_schedule(w: &mut Writer, s: &ModelSchedule) {
    for a in 0..3 {
        w.u32(s.grid_dims[a] as u32);
    }
    w.u32(s.input_channels as u32);
    w.u8(s.positional as u8);
    w.u8(s.encoder.len() as u8);
    w.u8(s.decoder.len() as u8);
    for l in &s.encoder {
        write_layer(w, l);
    }
    for l in &s.decoder {
        write_layer(w, l);
    }
}

fn read_schedule(r: &mut Reader) -> Result<ModelSchedule> {
    let mut grid_dims = [0usize; 3];
    for d in grid_dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let input_channels = r.u32()? as usize;
    let positional = r.u8()? != 0;
    let n_enc = r.u8()? as usize;
    let n_dec = r.u8()? as usize;
    let mut encoder = Vec::with_capacity(n_enc);
    for _ in 0..n_enc {
        encoder.push(read_layer(r)?);
    }
    let mut decoder = Vec::with_capacity(n_dec);
    for _ in 0..n_dec {
        decoder.push(read_layer(r)?);
    }
    Ok(ModelSchedule { grid_dims, input_channels, positional, encoder, decoder })
}

fn write_tensor(w: &mut Writer, t: &ParamTensor) {
    w.f64_slice(&t.weights);
    w.f64_slice(&t.bias);
}

fn read_tensor(r: &mut Reader) -> Result<ParamTensor> {
    Ok(ParamTensor { weights: r.f64_vec()?, bias: r.f64_vec()? })
}

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn finish(mut w: Writer) -> Vec<u8> {
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

fn open_payload(bytes: &[u8], expect_kind: u8) -> Result<Reader<'_>> {
    if bytes.len() < 9 {
        return Err(Error::Format { offset: 0, msg: "file too short".to_string() });
    }
    let (payload, crc_bytes) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(crc_bytes.try_into().unwrap());
    let computed = crc32fast::hash(payload);
    if stored != computed {
        return Err(Error::Format {
            offset: (bytes.len() - 4) as u64,
            msg: format!("CRC mismatch: stored {stored:#010x}, computed {computed:#010x}"),
        });
    }
    let mut r = Reader::new(payload);
    if r.take(4)? != MAGIC {
        return Err(Error::Format { offset: 0, msg: "bad magic, not an OMAE file".to_string() });
    }
    let version = r.u8()?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let kind = r.u8()?;
    if kind != expect_kind {
        return Err(Error::Data(if kind == KIND_ENCODER {
            "file is an encoder-only export (decoder absent); a full training checkpoint is required"
                .to_string()
        } else {
            "file is a full training checkpoint, not an encoder export".to_string()
        }));
    }
    Ok(r)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.buf.extend_from_slice(MAGIC);
        w.u8(FORMAT_VERSION);
        w.u8(KIND_CHECKPOINT);
        write_schedule(&mut w, &self.schedule);
        for t in self.params.tensors() {
            write_tensor(&mut w, t);
        }
        w.u64(self.opt_state.step);
        w.u64(self.opt_state.m.len() as u64);
        for slot in &self.opt_state.m {
            w.f64_slice(slot);
        }
        for slot in &self.opt_state.v {
            w.f64_slice(slot);
        }
        w.u64(self.root_seed);
        w.u32(self.epoch);
        w.u64(self.step);
        finish(w)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = open_payload(bytes, KIND_CHECKPOINT)?;
        let schedule = read_schedule(&mut r)?;
        let n_enc = schedule.encoder.len();
        let n_dec = schedule.decoder.len();
        let mut tensors = Vec::with_capacity(n_enc + n_dec);
        for _ in 0..n_enc + n_dec {
            tensors.push(read_tensor(&mut r)?);
        }
        let decoder_t = tensors.split_off(n_enc);
        let params = ModelParams { encoder: tensors, decoder: decoder_t };
        params.validate(&schedule)?;

        let opt_step = r.u64()?;
        let n_slots = r.u64()? as usize;
        let mut m = Vec::with_capacity(n_slots);
        for _ in 0..n_slots {
            m.push(r.f64_vec()?);
        }
        let mut v = Vec::with_capacity(n_slots);
        for _ in 0..n_slots {
            v.push(r.f64_vec()?);
        }
        let root_seed = r.u64()?;
        let epoch = r.u32()?;
        let step = r.u64()?;
        Ok(Checkpoint {
            schedule,
            params,
            opt_state: AdamState { step: opt_step, m, v },
            root_seed,
            epoch,
            step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), &self.to_bytes())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Encoder-only export: the schedule's encoder block plus its tensors.
pub fn export_encoder(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u8(FORMAT_VERSION);
    w.u8(KIND_ENCODER);
    for a in 0..3 {
        w.u32(ckpt.schedule.grid_dims[a] as u32);
    }
    w.u32(ckpt.schedule.input_channels as u32);
    w.u8(ckpt.schedule.positional as u8);
    w.u8(ckpt.schedule.encoder.len() as u8);
    for l in &ckpt.schedule.encoder {
        write_layer(&mut w, l);
    }
    for t in &ckpt.params.encoder {
        write_tensor(&mut w, t);
    }
    atomic_write(path.as_ref(), &finish(w))
}

/// Encoder weights plus the layer specs they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderExport {
    pub grid_dims: [usize; 3],
    pub input_channels: usize,
    pub positional: bool,
    pub layers: Vec<LayerSpec>,
    pub tensors: Vec<ParamTensor>,
}

pub fn import_encoder(path: impl AsRef<Path>) -> Result<EncoderExport> {
    let bytes = fs::read(path)?;
    let mut r = open_payload(&bytes, KIND_ENCODER)?;
    let mut grid_dims = [0usize; 3];
    for d in grid_dims.iter_mut() {
        *d = r.u32()? as usize;
    }
    let input_channels = r.u32()? as usize;
    let positional = r.u8()? != 0;
    let n = r.u8()? as usize;
    let mut layers = Vec::with_capacity(n);
    for _ in 0..n {
        layers.push(read_layer(&mut r)?);
    }
    let mut tensors = Vec::with_capacity(n);
    for (i, l) in layers.iter().enumerate() {
        let t = read_tensor(&mut r)?;
        t.validate(l).map_err(|e| Error::data(format!("encoder layer {i}: {e}")))?;
        tensors.push(t);
    }
    Ok(EncoderExport { grid_dims, input_channels, positional, layers, tensors })
}

/// Load an encoder export into a model whose schedule must match layer
/// for layer; the error names the first divergent layer.
pub fn apply_encoder(export: &EncoderExport, schedule: &ModelSchedule, params: &mut ModelParams) -> Result<()> {
    if export.layers.len() != schedule.encoder.len() {
        return Err(Error::data(format!(
            "encoder export has {} layers, schedule expects {}",
            export.layers.len(),
            schedule.encoder.len()
        )));
    }
    for (i, (a, b)) in export.layers.iter().zip(&schedule.encoder).enumerate() {
        if a != b {
            return Err(Error::data(format!(
                "encoder layer {i} diverges: export {a:?} vs schedule {b:?}"
            )));
        }
    }
    params.encoder = export.tensors.clone();
    Ok(())
}
