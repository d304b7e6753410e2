//! `LNW1` weight container.
//!
//! ```text
//! "LNW1"                      4 bytes
//! record count                u32 LE
//! per record:
//!   name length               u32 LE
//!   name                      UTF-8
//!   dtype                     u8 (0 = int32, 1 = float32)
//!   rank                      u8
//!   dims                      rank x u32 LE
//!   payload                   prod(dims) x 4 bytes, LE
//! ```

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::DataError;

pub const MAGIC: [u8; 4] = *b"LNW1";

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    Int32(Vec<i32>),
    Float32(Vec<f32>),
}

impl TensorData {
    pub fn dtype_tag(&self) -> u8 {
        match self {
            TensorData::Int32(_) => 0,
            TensorData::Float32(_) => 1,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::Int32(v) => v.len(),
            TensorData::Float32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightRecord {
    pub name: String,
    pub shape: Vec<u32>,
    pub data: TensorData,
}

impl WeightRecord {
    pub fn int32(name: impl Into<String>, shape: &[usize], data: Vec<i32>) -> Self {
        Self {
            name: name.into(),
            shape: shape.iter().map(|&d| d as u32).collect(),
            data: TensorData::Int32(data),
        }
    }

    pub fn float32(name: impl Into<String>, shape: &[usize], data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape: shape.iter().map(|&d| d as u32).collect(),
            data: TensorData::Float32(data),
        }
    }

    pub fn shape_usize(&self) -> Vec<usize> {
        self.shape.iter().map(|&d| d as usize).collect()
    }

    fn element_count(&self) -> usize {
        self.shape.iter().map(|&d| d as usize).product()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightContainer {
    records: Vec<WeightRecord>,
}

impl WeightContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn records(&self) -> &[WeightRecord] {
        &self.records
    }

    pub fn push(&mut self, record: WeightRecord) -> Result<(), DataError> {
        if self.get(&record.name).is_some() {
            return Err(DataError::DuplicateName(record.name));
        }
        if record.shape.len() > u8::MAX as usize {
            return Err(DataError::BadRecord {
                name: record.name,
                reason: "rank exceeds 255".into(),
            });
        }
        if record.element_count() != record.data.len() {
            return Err(DataError::LengthMismatch {
                what: record.name.clone(),
                expected: record.element_count() * 4,
                found: record.data.len() * 4,
            });
        }
        self.records.push(record);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&WeightRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&WeightRecord, DataError> {
        self.get(name)
            .ok_or_else(|| DataError::MissingRecord(name.to_string()))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend_from_slice(&(self.records.len() as u32).to_le_bytes());
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.push(r.data.dtype_tag());
            out.push(r.shape.len() as u8);
            for d in &r.shape {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &r.data {
                TensorData::Int32(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::Float32(v) => v
                    .iter()
                    .for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        let mut cur = Cursor { buf: bytes, pos: 0 };
        let magic: [u8; 4] = cur.take(4, "magic")?.try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(DataError::BadContainerMagic(magic));
        }
        let count = cur.u32("record count")?;
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name_len = cur.u32("name length")? as usize;
            let name = std::str::from_utf8(cur.take(name_len, "name")?)
                .map_err(|_| DataError::BadName)?
                .to_string();
            let dtype = cur.u8("dtype")?;
            if dtype > 1 {
                return Err(DataError::UnknownDtype(dtype));
            }
            let rank = cur.u8("rank")?;
            let shape = (0..rank)
                .map(|_| cur.u32("dims"))
                .collect::<Result<Vec<u32>, _>>()?;
            let elements: usize = shape.iter().map(|&d| d as usize).product();
            let payload_len = elements
                .checked_mul(4)
                .filter(|&n| n <= cur.remaining())
                .ok_or_else(|| DataError::LengthMismatch {
                    what: format!("payload of {name:?}"),
                    expected: elements.saturating_mul(4),
                    found: cur.remaining(),
                })?;
            let payload = cur.take(payload_len, "payload")?;
            let words = payload
                .chunks_exact(4)
                .map(|c| c.try_into().expect("4 bytes"));
            let data = match dtype {
                0 => TensorData::Int32(words.map(i32::from_le_bytes).collect()),
                _ => TensorData::Float32(words.map(f32::from_le_bytes).collect()),
            };
            if !seen.insert(name.clone()) {
                return Err(DataError::DuplicateName(name));
            }
            records.push(WeightRecord { name, shape, data });
        }
        if cur.remaining() != 0 {
            return Err(DataError::LengthMismatch {
                what: "container".into(),
                expected: cur.pos,
                found: bytes.len(),
            });
        }
        Ok(Self { records })
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        let mut f = fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DataError> {
        if n > self.remaining() {
            return Err(DataError::Truncated {
                what,
                needed: self.pos + n,
                available: self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, DataError> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}
