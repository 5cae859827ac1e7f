//! Binary checkpoint format.
//!
//! ```text
//! "PSWM" | version: u32
//! repeated until EOF:
//!   name_len: u32 | name: utf-8 | dtype: u8 | ndim: u32 | dims: u64 * ndim | values (little-endian)
//! ```
//! Optimizer moments are stored as `<name>.m` / `<name>.v`; the step counter
//! is a 0-d f64 record named `__step__`.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};

use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};

pub const MAGIC: &[u8; 4] = b"PSWM";
pub const VERSION: u32 = 1;
const STEP_RECORD: &str = "__step__";

fn write_record<W: Write, T: Scalar>(w: &mut W, name: &str, value: &ArrayD<T>) -> Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[T::DTYPE as u8])?;
    w.write_all(&(value.ndim() as u32).to_le_bytes())?;
    for &d in value.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(value.len() * T::DTYPE.size_of());
    for &v in value.iter() {
        buf.extend_from_slice(&v.to_le_bytes_vec());
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Serializes parameters, moments and the step counter.
pub fn write_checkpoint<W: Write, T: Scalar>(mut w: W, store: &ParamStore<T>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (_, p) in store.iter() {
        write_record(&mut w, &p.name, &p.value)?;
        write_record(&mut w, &format!("{}.m", p.name), &p.m)?;
        write_record(&mut w, &format!("{}.v", p.name), &p.v)?;
    }
    let step = ArrayD::from_elem(IxDyn(&[]), store.step as f64);
    write_record(&mut w, STEP_RECORD, &step)?;
    Ok(())
}

pub fn save<T: Scalar>(path: &Path, store: &ParamStore<T>) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_checkpoint(&mut w, store)?;
    w.flush()?;
    Ok(())
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<bool> {
    let mut read = 0;
    while read < buf.len() {
        let n = r.read(&mut buf[read..])?;
        if n == 0 {
            if read == 0 {
                return Ok(false);
            }
            return Err(Error::Checkpoint("truncated record".into()));
        }
        read += n;
    }
    Ok(true)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Checkpoint("truncated record".into()))?;
    Ok(u32::from_le_bytes(b))
}

/// A decoded record, values widened to f64.
#[derive(Debug, Clone)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

pub fn read_records<R: Read>(mut r: R) -> Result<Vec<Record>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("missing magic".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let mut out = Vec::new();
    loop {
        let mut len = [0u8; 4];
        if !read_exact_or_eof(&mut r, &mut len)? {
            break;
        }
        let mut name = vec![0u8; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut name)
            .map_err(|_| Error::Checkpoint("truncated name".into()))?;
        let name = String::from_utf8(name).map_err(|_| Error::Checkpoint("name is not utf-8".into()))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)
            .map_err(|_| Error::Checkpoint("truncated dtype".into()))?;
        let dtype = DType::from_tag(tag[0])
            .ok_or_else(|| Error::Checkpoint(format!("unknown dtype {}", tag[0])))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut d = [0u8; 8];
            r.read_exact(&mut d)
                .map_err(|_| Error::Checkpoint("truncated dims".into()))?;
            shape.push(u64::from_le_bytes(d) as usize);
        }
        let count: usize = shape.iter().product();
        let mut raw = vec![0u8; count * dtype.size_of()];
        r.read_exact(&mut raw)
            .map_err(|_| Error::Checkpoint(format!("truncated values for `{name}`")))?;
        let values = match dtype {
            DType::F32 => raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            DType::F64 => raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            DType::Complex64 => {
                return Err(Error::Checkpoint(format!(
                    "complex record `{name}` cannot be loaded into a real store"
                )))
            }
        };
        out.push(Record {
            name,
            dtype,
            shape,
            values,
        });
    }
    Ok(out)
}

/// Loads values, moments and step into an already-constructed store.
/// Every stored parameter must be present in the checkpoint with a matching shape.
pub fn read_into<R: Read, T: Scalar>(r: R, store: &mut ParamStore<T>) -> Result<()> {
    let records = read_records(r)?;
    let mut seen = vec![false; store.len()];
    for rec in records {
        if rec.name == STEP_RECORD {
            store.step = rec.values.first().copied().unwrap_or(0.0) as u64;
            continue;
        }
        let (id, slot) = if let Some(id) = store.id(&rec.name) {
            (id, Slot::Value)
        } else if let Some(id) = rec.name.strip_suffix(".m").and_then(|b| store.id(b)) {
            (id, Slot::First)
        } else if let Some(id) = rec.name.strip_suffix(".v").and_then(|b| store.id(b)) {
            (id, Slot::Second)
        } else {
            return Err(Error::Checkpoint(format!("unknown record `{}`", rec.name)));
        };
        let p = store.get_mut(id);
        if p.value.shape() != rec.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "shape mismatch for `{}`: stored {:?}, expected {:?}",
                rec.name,
                rec.shape,
                p.value.shape()
            )));
        }
        let arr = ArrayD::from_shape_vec(IxDyn(&rec.shape), rec.values.iter().map(|&v| T::from_f64(v).unwrap()).collect())
            .expect("shape checked");
        match slot {
            Slot::Value => {
                p.value = std::sync::Arc::new(arr);
                seen[id.index()] = true;
            }
            Slot::First => p.m = arr,
            Slot::Second => p.v = arr,
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let id = store.ids().nth(i).expect("index in range");
        return Err(Error::Checkpoint(format!(
            "checkpoint lacks parameter `{}`",
            store.name(id)
        )));
    }
    Ok(())
}

enum Slot {
    Value,
    First,
    Second,
}

pub fn load<T: Scalar>(path: &Path, store: &mut ParamStore<T>) -> Result<()> {
    let f = std::fs::File::open(path)?;
    read_into(std::io::BufReader::new(f), store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;

    fn sample_store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("enc/w", Array::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f32 * 0.5).into_dyn());
        s.add_no_decay("enc/b", Array::from_elem(3, -1.25f32).into_dyn());
        s.get_mut(crate::ParamId(0)).m.fill(0.125);
        s.step = 42;
        s
    }

    #[test]
    fn roundtrip_restores_values_moments_and_step() {
        let s = sample_store();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        assert_eq!(&buf[..4], b"PSWM");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        let mut t = ParamStore::<f32>::new();
        t.add("enc/w", ArrayD::zeros(IxDyn(&[2, 3])));
        t.add_no_decay("enc/b", ArrayD::zeros(IxDyn(&[3])));
        read_into(buf.as_slice(), &mut t).unwrap();
        assert_eq!(t.step, 42);
        assert_eq!(**t.get(crate::ParamId(0)).value.clone(), **s.get(crate::ParamId(0)).value.clone());
        assert_eq!(t.get(crate::ParamId(0)).m, s.get(crate::ParamId(0)).m);
    }

    #[test]
    fn first_record_layout() {
        let s = sample_store();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &s).unwrap();
        let name_len = u32::from_le_bytes(buf[8..12].try_into().unwrap()) as usize;
        assert_eq!(&buf[12..12 + name_len], b"enc/w");
        let o = 12 + name_len;
        assert_eq!(buf[o], DType::F32 as u8);
        assert_eq!(u32::from_le_bytes(buf[o + 1..o + 5].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[o + 5..o + 13].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(buf[o + 13..o + 21].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(buf[o + 25..o + 29].try_into().unwrap()), 0.5);
    }

    #[test]
    fn rejects_bad_magic_and_shape() {
        let mut t = ParamStore::<f32>::new();
        t.add("enc/w", ArrayD::zeros(IxDyn(&[3, 3])));
        assert!(read_into(&b"XXXX\x01\0\0\0"[..], &mut t).is_err());
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample_store()).unwrap();
        let err = read_into(buf.as_slice(), &mut t).unwrap_err().to_string();
        assert!(err.contains("shape mismatch"), "{err}");
    }
}
