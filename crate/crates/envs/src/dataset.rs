//! The "PSWM-DS" episode file: a header with an offset table, then one record
//! per episode. Little-endian throughout; frames raw or zlib-compressed.
//!
//! ```text
//! magic "PSWM-DS" | version u32 | kind u8 | param u32 | flags u8
//! frame h u32 | frame w u32 | steps u32 | context u32
//! train u32 | val u32 | test u32 | seed u64 | count u32 | offsets u64 * count
//! record: seed u64 | context u32 | steps u32 | actions u8 * T | rewards f32 * T
//!         | payload length u64 | payload
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;

use crate::episode::{generate_episode, phase_lengths, Episode};
use crate::grid::EnvKind;
use crate::EnvError;

pub const MAGIC: &[u8; 7] = b"PSWM-DS";
pub const VERSION: u32 = 1;
const FLAG_ZLIB: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(EnvError::InvalidParam(format!("unknown split {other:?}"))),
        }
    }
}

/// What to generate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetSpec {
    pub kind: EnvKind,
    pub frame_size: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    pub compress: bool,
}

impl DatasetSpec {
    /// 2000 / 200 / 200 Distracting Memory episodes at width 10, 32x32 frames.
    pub fn desk(seed: u64) -> Self {
        Self {
            kind: EnvKind::DistractingMemory { width: 10 },
            frame_size: 32,
            train: 2000,
            val: 200,
            test: 200,
            seed,
            compress: false,
        }
    }

    pub fn total(&self) -> usize {
        self.train + self.val + self.test
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetHeader {
    pub version: u32,
    pub kind: EnvKind,
    pub compressed: bool,
    pub frame_height: usize,
    pub frame_width: usize,
    pub steps: usize,
    pub context_len: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
    pub offsets: Vec<u64>,
}

impl DatasetHeader {
    pub fn count(&self) -> usize {
        self.train + self.val + self.test
    }

    /// Episode indices of a split; splits are contiguous seed ranges.
    pub fn range(&self, split: Split) -> std::ops::Range<usize> {
        match split {
            Split::Train => 0..self.train,
            Split::Val => self.train..self.train + self.val,
            Split::Test => self.train + self.val..self.count(),
        }
    }

    fn byte_len(count: usize) -> u64 {
        (7 + 4 + 1 + 4 + 1 + 4 * 4 + 4 * 3 + 8 + 4 + 8 * count) as u64
    }
}

fn io_err(episode: Option<usize>, e: std::io::Error) -> EnvError {
    EnvError::Io { episode, source: e }
}

fn kind_code(kind: EnvKind) -> (u8, u32) {
    match kind {
        EnvKind::DistractingMemory { width } => (0, width as u32),
        EnvKind::MultiDoorsKeys { n_keys } => (1, n_keys as u32),
    }
}

fn write_header<W: Write>(w: &mut W, h: &DatasetHeader) -> std::io::Result<()> {
    let (code, param) = kind_code(h.kind);
    w.write_all(MAGIC)?;
    w.write_all(&h.version.to_le_bytes())?;
    w.write_all(&[code])?;
    w.write_all(&param.to_le_bytes())?;
    w.write_all(&[if h.compressed { FLAG_ZLIB } else { 0 }])?;
    for v in [h.frame_height, h.frame_width, h.steps, h.context_len, h.train, h.val, h.test] {
        w.write_all(&(v as u32).to_le_bytes())?;
    }
    w.write_all(&h.seed.to_le_bytes())?;
    w.write_all(&(h.offsets.len() as u32).to_le_bytes())?;
    for o in &h.offsets {
        w.write_all(&o.to_le_bytes())?;
    }
    Ok(())
}

fn write_episode<W: Write>(w: &mut W, ep: &Episode, compress: bool) -> std::io::Result<u64> {
    let payload = if compress {
        let mut enc = ZlibEncoder::new(Vec::new(), Compression::new(6));
        enc.write_all(&ep.frames)?;
        enc.finish()?
    } else {
        ep.frames.clone()
    };
    w.write_all(&ep.seed.to_le_bytes())?;
    w.write_all(&(ep.context_len as u32).to_le_bytes())?;
    w.write_all(&(ep.steps() as u32).to_le_bytes())?;
    w.write_all(&ep.actions)?;
    for r in &ep.rewards {
        w.write_all(&r.to_le_bytes())?;
    }
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(&payload)?;
    Ok((8 + 4 + 4 + ep.actions.len() + 4 * ep.rewards.len() + 8 + payload.len()) as u64)
}

/// Generates every episode of `spec` and streams it to `path`.
pub fn build_dataset(spec: &DatasetSpec, path: &Path) -> Result<DatasetHeader, EnvError> {
    let (context_len, query_len) = phase_lengths(spec.kind)?;
    let count = spec.total();
    let mut header = DatasetHeader {
        version: VERSION,
        kind: spec.kind,
        compressed: spec.compress,
        frame_height: spec.frame_size,
        frame_width: spec.frame_size,
        steps: context_len + query_len,
        context_len,
        train: spec.train,
        val: spec.val,
        test: spec.test,
        seed: spec.seed,
        offsets: vec![0; count],
    };
    let file = File::create(path).map_err(|e| io_err(None, e))?;
    let mut w = BufWriter::new(file);
    write_header(&mut w, &header).map_err(|e| io_err(None, e))?;
    let mut offset = DatasetHeader::byte_len(count);
    for i in 0..count {
        let ep = generate_episode(spec.kind, spec.seed.wrapping_add(i as u64), spec.frame_size)?;
        if ep.steps() != header.steps || ep.context_len != context_len {
            return Err(EnvError::Invalid(format!("episode {i} has {} steps, expected {}", ep.steps(), header.steps)));
        }
        header.offsets[i] = offset;
        offset += write_episode(&mut w, &ep, spec.compress).map_err(|e| io_err(Some(i), e))?;
    }
    w.seek(SeekFrom::Start(0)).map_err(|e| io_err(None, e))?;
    write_header(&mut w, &header).map_err(|e| io_err(None, e))?;
    w.flush().map_err(|e| io_err(None, e))?;
    Ok(header)
}

fn read_u8<R: Read>(r: &mut R) -> std::io::Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_header<R: Read>(r: &mut R) -> Result<DatasetHeader, EnvError> {
    let io = |e| io_err(None, e);
    let mut magic = [0u8; 7];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(EnvError::Format("not a PSWM-DS file".into()));
    }
    let version = read_u32(r).map_err(io)?;
    if version != VERSION {
        return Err(EnvError::Format(format!("unsupported dataset version {version}")));
    }
    let code = read_u8(r).map_err(io)?;
    let param = read_u32(r).map_err(io)? as usize;
    let kind = match code {
        0 => EnvKind::DistractingMemory { width: param },
        1 => EnvKind::MultiDoorsKeys { n_keys: param },
        other => return Err(EnvError::Format(format!("unknown environment code {other}"))),
    };
    let flags = read_u8(r).map_err(io)?;
    let mut v = [0usize; 7];
    for x in v.iter_mut() {
        *x = read_u32(r).map_err(io)? as usize;
    }
    let seed = read_u64(r).map_err(io)?;
    let count = read_u32(r).map_err(io)? as usize;
    if count != v[4] + v[5] + v[6] {
        return Err(EnvError::Format(format!("index has {count} entries, splits sum to {}", v[4] + v[5] + v[6])));
    }
    let offsets = (0..count).map(|_| read_u64(r)).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
    if offsets.windows(2).any(|w| w[1] <= w[0]) {
        return Err(EnvError::Format("episode offsets must be strictly increasing".into()));
    }
    Ok(DatasetHeader {
        version,
        kind,
        compressed: flags & FLAG_ZLIB != 0,
        frame_height: v[0],
        frame_width: v[1],
        steps: v[2],
        context_len: v[3],
        train: v[4],
        val: v[5],
        test: v[6],
        seed,
        offsets,
    })
}

/// Read access to a dataset file.
#[derive(Debug)]
pub struct Dataset {
    pub header: DatasetHeader,
    path: PathBuf,
    reader: BufReader<File>,
}

impl Dataset {
    pub fn open(path: &Path) -> Result<Self, EnvError> {
        let file = File::open(path).map_err(|e| io_err(None, e))?;
        let mut reader = BufReader::new(file);
        let header = read_header(&mut reader)?;
        Ok(Self { header, path: path.to_path_buf(), reader })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.header.count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn read_episode(&mut self, i: usize) -> Result<Episode, EnvError> {
        let h = &self.header;
        let offset = *h.offsets.get(i).ok_or_else(|| EnvError::InvalidParam(format!("episode {i} out of range")))?;
        let io = |e| io_err(Some(i), e);
        let r = &mut self.reader;
        r.seek(SeekFrom::Start(offset)).map_err(io)?;
        let seed = read_u64(r).map_err(io)?;
        let context_len = read_u32(r).map_err(io)? as usize;
        let steps = read_u32(r).map_err(io)? as usize;
        if steps != h.steps {
            return Err(EnvError::Format(format!("episode {i} has {steps} steps, header says {}", h.steps)));
        }
        let mut actions = vec![0u8; steps];
        r.read_exact(&mut actions).map_err(io)?;
        let mut raw = vec![0u8; 4 * steps];
        r.read_exact(&mut raw).map_err(io)?;
        let rewards = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        let len = read_u64(r).map_err(io)? as usize;
        let mut payload = vec![0u8; len];
        r.read_exact(&mut payload).map_err(io)?;
        let frames = if h.compressed {
            let mut out = Vec::with_capacity((steps + 1) * h.frame_height * h.frame_width * 3);
            ZlibDecoder::new(&payload[..]).read_to_end(&mut out).map_err(io)?;
            out
        } else {
            payload
        };
        let want = (steps + 1) * h.frame_height * h.frame_width * 3;
        if frames.len() != want {
            return Err(EnvError::Format(format!("episode {i}: {} frame bytes, expected {want}", frames.len())));
        }
        Ok(Episode { kind: h.kind, seed, context_len, frame_size: h.frame_height, frames, actions, rewards })
    }

    pub fn load(&mut self, split: Split) -> Result<Vec<Episode>, EnvError> {
        self.header.range(split).map(|i| self.read_episode(i)).collect()
    }
}
