//! Binary parameter checkpoints.
//!
//! Layout (all little-endian): magic `SVPNCKPT`, `u32` version, the
//! architecture (`input_dim`, `width`, `depth` as `u64`, one flag byte), the
//! feature descriptor, a shape table (`u64` count, then `(rows, cols)` pairs)
//! and finally a `u64` length followed by the row-major `f64` payload.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Architecture, FeatureKind, FeatureMap, Network, NetworkParams};
use crate::basis::EigenIndex;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"SVPNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(detail: impl Into<String>) -> Error {
    Error::Format {
        what: "checkpoint",
        detail: detail.into(),
    }
}

fn put_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64<W: Write>(w: &mut W, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_usize<R: Read>(r: &mut R, limit: u64, what: &str) -> Result<usize> {
    let v = get_u64(r)?;
    if v > limit {
        return Err(bad(format!("{what} = {v} exceeds {limit}")));
    }
    Ok(v as usize)
}

fn get_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

pub fn write_checkpoint<W: Write>(net: &Network, mut w: W) -> Result<()> {
    let arch = net.params.architecture();
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    put_u64(&mut w, arch.input_dim as u64)?;
    put_u64(&mut w, arch.width as u64)?;
    put_u64(&mut w, arch.depth as u64)?;
    let flags = u8::from(arch.hard_boundary) | (u8::from(arch.train_encoder_bias) << 1);
    w.write_all(&[flags])?;

    let d = net.fmap.dim();
    match net.fmap.kind() {
        FeatureKind::Daff(indices) => {
            w.write_all(&[0])?;
            put_u64(&mut w, d as u64)?;
            put_u64(&mut w, indices.len() as u64)?;
            for k in indices {
                for &c in k.components() {
                    put_u64(&mut w, c as u64)?;
                }
            }
        }
        FeatureKind::Fourier { matrix, sigma, seed } => {
            w.write_all(&[1])?;
            put_u64(&mut w, d as u64)?;
            put_u64(&mut w, (matrix.len() / d) as u64)?;
            put_f64(&mut w, *sigma)?;
            put_u64(&mut w, *seed)?;
            for &a in matrix {
                put_f64(&mut w, a)?;
            }
        }
        FeatureKind::Identity => {
            w.write_all(&[2])?;
            put_u64(&mut w, d as u64)?;
        }
    }

    let shapes = arch.shapes();
    put_u64(&mut w, shapes.len() as u64)?;
    for (r, c) in shapes {
        put_u64(&mut w, r as u64)?;
        put_u64(&mut w, c as u64)?;
    }
    let values = net.params.values();
    put_u64(&mut w, values.len() as u64)?;
    for &v in values {
        put_f64(&mut w, v)?;
    }
    w.flush()?;
    Ok(())
}

const LIMIT: u64 = 1 << 32;

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Network> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)?;
    let version = u32::from_le_bytes(ver);
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let input_dim = get_usize(&mut r, LIMIT, "input_dim")?;
    let width = get_usize(&mut r, LIMIT, "width")?;
    let depth = get_usize(&mut r, 1 << 16, "depth")?;
    let mut flags = [0u8; 1];
    r.read_exact(&mut flags)?;
    if flags[0] > 3 {
        return Err(bad("unknown flag bits"));
    }
    let arch = Architecture {
        input_dim,
        width,
        depth,
        hard_boundary: flags[0] & 1 != 0,
        train_encoder_bias: flags[0] & 2 != 0,
    };

    let mut kind = [0u8; 1];
    r.read_exact(&mut kind)?;
    let d = get_usize(&mut r, 3, "d")?;
    let fmap = match kind[0] {
        0 => {
            let count = get_usize(&mut r, LIMIT, "feature count")?;
            let mut indices = Vec::with_capacity(count.min(1 << 16));
            for _ in 0..count {
                let mut comps = Vec::with_capacity(d);
                for _ in 0..d {
                    comps.push(get_usize(&mut r, LIMIT, "mode component")?);
                }
                indices.push(EigenIndex::from_components(comps)?);
            }
            FeatureMap::daff_with(d, indices)?
        }
        1 => {
            let rows = get_usize(&mut r, LIMIT, "fourier rows")?;
            let sigma = get_f64(&mut r)?;
            let seed = get_u64(&mut r)?;
            let mut matrix = Vec::with_capacity((rows * d).min(1 << 20));
            for _ in 0..rows * d {
                matrix.push(get_f64(&mut r)?);
            }
            FeatureMap::fourier_with(d, matrix, sigma, seed)?
        }
        2 => FeatureMap::identity(d)?,
        other => return Err(bad(format!("unknown feature kind {other}"))),
    };

    let count = get_usize(&mut r, 1 << 20, "shape count")?;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let rows = get_usize(&mut r, LIMIT, "rows")?;
        let cols = get_usize(&mut r, LIMIT, "cols")?;
        shapes.push((rows, cols));
    }
    if shapes != arch.shapes() {
        return Err(bad("shape table does not match the architecture"));
    }
    let len = get_usize(&mut r, LIMIT, "payload length")?;
    if len != arch.param_count() {
        return Err(bad(format!(
            "payload has {len} values, expected {}",
            arch.param_count()
        )));
    }
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(get_f64(&mut r)?);
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes"));
    }
    Network::new(fmap, NetworkParams::from_values(arch, values)?)
}

pub fn save_checkpoint(net: &Network, path: &Path) -> Result<()> {
    write_checkpoint(net, BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint(path: &Path) -> Result<Network> {
    read_checkpoint(BufReader::new(File::open(path)?))
}
