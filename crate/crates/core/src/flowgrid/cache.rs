//! Flow cache files.
//!
//! Layout, all integers and floats little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `EGFL`                            |
//! | 4      | 2    | version (u16, currently 1)              |
//! | 6      | 4    | N, number of flow fields (u32)          |
//! | 10     | 2    | m_y (u16)                               |
//! | 12     | 2    | m_x (u16)                               |
//! | 14     | 4    | fps numerator (u32)                     |
//! | 18     | 4    | fps denominator (u32)                   |
//! | 22     | 2    | reserved, zero                          |
//! | 24     | 4·N·2·m_y·m_x | f32 flow, `[N][2][m_y][m_x]`, u then v |
//! | ...    | ceil(N·m_y·m_x / 8) | validity bits, `[N][m_y][m_x]`, LSB first |

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::flowgrid::FlowField;
use crate::ingest::Fps;

pub const FLOW_MAGIC: &[u8; 4] = b"EGFL";
pub const FLOW_VERSION: u16 = 1;
const HEADER_LEN: usize = 24;

/// A whole sequence of grid flow, as stored in a cache file.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSequence {
    pub fps: Fps,
    pub m_x: usize,
    pub m_y: usize,
    pub fields: Vec<FlowField>,
}

impl FlowSequence {
    pub fn to_bytes(&self) -> Vec<u8> {
        let cells = self.m_x * self.m_y;
        let n = self.fields.len();
        let mut out = Vec::with_capacity(HEADER_LEN + n * cells * 8 + (n * cells).div_ceil(8));
        out.extend_from_slice(FLOW_MAGIC);
        out.extend_from_slice(&FLOW_VERSION.to_le_bytes());
        out.extend_from_slice(&(n as u32).to_le_bytes());
        out.extend_from_slice(&(self.m_y as u16).to_le_bytes());
        out.extend_from_slice(&(self.m_x as u16).to_le_bytes());
        out.extend_from_slice(&self.fps.num.to_le_bytes());
        out.extend_from_slice(&self.fps.den.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        for f in &self.fields {
            for x in f.u.iter().chain(&f.v) {
                out.extend_from_slice(&(*x as f32).to_le_bytes());
            }
        }
        let mut bits = vec![0u8; (n * cells).div_ceil(8)];
        for (k, ok) in self.fields.iter().flat_map(|f| f.valid.iter()).enumerate() {
            if *ok {
                bits[k / 8] |= 1 << (k % 8);
            }
        }
        out.extend_from_slice(&bits);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN || &bytes[..4] != FLOW_MAGIC {
            return Err(Error::Format("not a flow cache (bad magic)".into()));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let version = u16_at(4);
        if version != FLOW_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FLOW_VERSION,
            });
        }
        let n = u32_at(6) as usize;
        let m_y = u16_at(10) as usize;
        let m_x = u16_at(12) as usize;
        let fps = Fps::new(u32_at(14), u32_at(18))?;
        let cells = m_x * m_y;
        let floats_len = n * 2 * cells * 4;
        let expected = HEADER_LEN + floats_len + (n * cells).div_ceil(8);
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "flow cache is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let mut floats = bytes[HEADER_LEN..HEADER_LEN + floats_len]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        let bits = &bytes[HEADER_LEN + floats_len..];
        let mut fields = Vec::with_capacity(n);
        for i in 0..n {
            let u: Vec<f64> = floats.by_ref().take(cells).collect();
            let v: Vec<f64> = floats.by_ref().take(cells).collect();
            let valid = (0..cells)
                .map(|c| {
                    let k = i * cells + c;
                    bits[k / 8] & (1 << (k % 8)) != 0
                })
                .collect();
            fields.push(FlowField {
                m_x,
                m_y,
                u,
                v,
                valid,
            });
        }
        Ok(Self {
            fps,
            m_x,
            m_y,
            fields,
        })
    }
}

/// Writes atomically: temp file in the same directory, then rename.
pub fn write_flow_cache(path: &Path, seq: &FlowSequence) -> Result<()> {
    crate::write_atomic(path, &seq.to_bytes())
}

pub fn read_flow_cache(path: &Path) -> Result<FlowSequence> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FlowSequence::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}
