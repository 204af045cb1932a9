//! Flat binary container for a processed domain.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! header   magic "SKDANDS\0" | version u32 | flags u32 (bit0 labeled, bit1 normalized)
//!          n_samples u64 | segment_len u32 | n_channels u32
//! stats    (only if normalized) per channel: min f64 | max f64 | constant u8
//! meta     soc_start f64 | soc_end f64 | temperature_C f64 | discharge_rate_C f64
//!          name_len u32 | name utf-8
//! samples  per sample: battery_id u32 | cycle_index i64 | soc_start f64 | soc_end f64
//!          has_label u8 | label f64 | v, dv, dq, ic (segment_len f64 each)
//! ```

use std::path::Path;

use super::{ChargeSegment, DomainDataset, DomainMeta, NormStats, N_CHANNELS};
use crate::error::{Result, SkdanError};

pub const DATASET_MAGIC: &[u8; 8] = b"SKDANDS\0";
pub const DATASET_VERSION: u32 = 1;

pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn i64(&mut self, v: i64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64s(&mut self, v: &[f64]) {
        for &x in v {
            self.f64(x);
        }
    }
    pub fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len() as u32);
        self.0.extend_from_slice(b);
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], path: &'a Path) -> Self {
        Self { buf, pos: 0, path }
    }

    pub fn err(&self, detail: impl Into<String>) -> SkdanError {
        SkdanError::Format {
            path: self.path.to_path_buf(),
            detail: format!("{} (at byte {})", detail.into(), self.pos),
        }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    pub fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| self.err("invalid utf-8"))
    }
    pub fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err("trailing bytes"));
        }
        Ok(())
    }
}

pub fn encode_dataset(d: &DomainDataset) -> Vec<u8> {
    let seg_len = d.samples.first().map_or(0, |s| s.v.len());
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.u32(u32::from(d.labeled) | (u32::from(d.stats.is_some()) << 1));
    w.u64(d.samples.len() as u64);
    w.u32(seg_len as u32);
    w.u32(N_CHANNELS as u32);
    if let Some(st) = &d.stats {
        for c in 0..N_CHANNELS {
            w.f64(st.min[c]);
            w.f64(st.max[c]);
            w.u8(u8::from(st.constant[c]));
        }
    }
    w.f64(d.meta.soc_range.0);
    w.f64(d.meta.soc_range.1);
    w.f64(d.meta.temperature_c);
    w.f64(d.meta.discharge_rate_c);
    w.bytes(d.meta.dataset_name.as_bytes());
    for s in &d.samples {
        w.u32(s.battery_id);
        w.i64(s.cycle_index);
        w.f64(s.soc_window.0);
        w.f64(s.soc_window.1);
        w.u8(u8::from(s.soh_label.is_some()));
        w.f64(s.soh_label.unwrap_or(0.0));
        for c in 0..N_CHANNELS {
            w.f64s(s.channel(c));
        }
    }
    w.0
}

pub fn decode_dataset(buf: &[u8], path: &Path) -> Result<DomainDataset> {
    let mut r = Reader::new(buf, path);
    if r.take(8)? != DATASET_MAGIC {
        return Err(r.err("not a dataset file (bad magic)"));
    }
    let version = r.u32()?;
    if version != DATASET_VERSION {
        return Err(r.err(format!("unsupported dataset version {version}")));
    }
    let flags = r.u32()?;
    let n = r.u64()? as usize;
    let seg_len = r.u32()? as usize;
    if r.u32()? as usize != N_CHANNELS {
        return Err(r.err("unexpected channel count"));
    }
    let stats = if flags & 2 != 0 {
        let mut st = NormStats {
            min: [0.0; N_CHANNELS],
            max: [0.0; N_CHANNELS],
            constant: [false; N_CHANNELS],
        };
        for c in 0..N_CHANNELS {
            st.min[c] = r.f64()?;
            st.max[c] = r.f64()?;
            st.constant[c] = r.u8()? != 0;
        }
        Some(st)
    } else {
        None
    };
    let meta = DomainMeta {
        soc_range: (r.f64()?, r.f64()?),
        temperature_c: r.f64()?,
        discharge_rate_c: r.f64()?,
        dataset_name: r.string()?,
    };
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let battery_id = r.u32()?;
        let cycle_index = r.i64()?;
        let soc_window = (r.f64()?, r.f64()?);
        let has_label = r.u8()? != 0;
        let label = r.f64()?;
        samples.push(ChargeSegment {
            v: r.f64s(seg_len)?,
            dv: r.f64s(seg_len)?,
            dq: r.f64s(seg_len)?,
            ic: r.f64s(seg_len)?,
            soc_window,
            cycle_index,
            battery_id,
            soh_label: has_label.then_some(label),
        });
    }
    r.finish()?;
    let mut d = DomainDataset::new(samples, flags & 1 != 0, meta)?;
    d.stats = stats;
    Ok(d)
}

pub fn write_dataset(path: impl AsRef<Path>, d: &DomainDataset) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_dataset(d)).map_err(|e| SkdanError::io(path, e))
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<DomainDataset> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| SkdanError::io(path, e))?;
    decode_dataset(&buf, path)
}
