//! Versioned binary model checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "PCCK" | version u32 | kind str | variant str
//! k u32 | local widths 4×u32 | global u32 | head 2×u32 | output u32
//! entry count u32
//! per entry: name (u16 len + utf8) | ndim u32 | dims ×u32 | values ×f64
//! ```
//!
//! Values are written as raw f64 bit patterns, so a save/load round trip is
//! bit-exact.

use crate::autodiff::Data;
use crate::error::{Error, Result};
use crate::network::{GraphConvVariant, ModelConfig, ModelKind, ModelParams};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::Arc;

const MAGIC: &[u8; 4] = b"PCCK";
const VERSION: u32 = 1;

/// A trained (or freshly initialized) model with its configuration.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub config: ModelConfig,
    pub params: ModelParams,
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    write_str(&mut w, ckpt.kind.tag())?;
    write_str(&mut w, ckpt.config.variant.id())?;
    let cfg = &ckpt.config;
    w.write_u32::<LittleEndian>(cfg.k as u32)?;
    for &lw in &cfg.local_widths {
        w.write_u32::<LittleEndian>(lw as u32)?;
    }
    w.write_u32::<LittleEndian>(cfg.global_width as u32)?;
    for &hw in &cfg.head_widths {
        w.write_u32::<LittleEndian>(hw as u32)?;
    }
    w.write_u32::<LittleEndian>(cfg.output_dim as u32)?;
    w.write_u32::<LittleEndian>(ckpt.params.len() as u32)?;
    for (name, data) in ckpt.params.entries() {
        let bytes = name.as_bytes();
        w.write_u16::<LittleEndian>(bytes.len() as u16)?;
        w.write_all(bytes)?;
        w.write_u32::<LittleEndian>(data.shape().len() as u32)?;
        for &d in data.shape() {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &v in data.vals() {
            w.write_u64::<LittleEndian>(v.to_bits())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: not a checkpoint file (bad magic)",
            path.display()
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let kind = ModelKind::parse(&read_str(&mut r)?)?;
    let variant = GraphConvVariant::parse(&read_str(&mut r)?)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    let k = r.read_u32::<LittleEndian>()? as usize;
    let mut local_widths = [0usize; 4];
    for lw in &mut local_widths {
        *lw = r.read_u32::<LittleEndian>()? as usize;
    }
    let global_width = r.read_u32::<LittleEndian>()? as usize;
    let mut head_widths = [0usize; 2];
    for hw in &mut head_widths {
        *hw = r.read_u32::<LittleEndian>()? as usize;
    }
    let output_dim = r.read_u32::<LittleEndian>()? as usize;
    let config = ModelConfig {
        k,
        variant,
        local_widths,
        global_width,
        head_widths,
        output_dim,
    };

    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name = {
            let len = r.read_u16::<LittleEndian>()? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            String::from_utf8(buf)
                .map_err(|_| Error::Checkpoint("non-utf8 parameter name".into()))?
        };
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut vals = Vec::with_capacity(numel);
        for _ in 0..numel {
            vals.push(f64::from_bits(r.read_u64::<LittleEndian>()?));
        }
        let data = Data::new(shape, vals).map_err(|e| Error::Checkpoint(e.to_string()))?;
        entries.push((name, Arc::new(data)));
    }
    let params = ModelParams::from_entries(entries)?;
    params
        .check_layout(&config)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    Ok(Checkpoint {
        kind,
        config,
        params,
    })
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u8(s.len() as u8)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u8()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("non-utf8 tag".into()))
}
