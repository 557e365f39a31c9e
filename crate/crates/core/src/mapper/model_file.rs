//! MAP1 model files.
//!
//! Layout (little-endian): magic `b"MAP1"`, version `u32` = 1,
//! layer_count `u32`, then `(fan_in u32, fan_out u32)` per layer, then per
//! layer the `fan_out × fan_in` weights row-major followed by the `fan_out`
//! biases, all as `f32`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Layer, MapperConfig, MapperNetwork};
use crate::embedding::read_up_to;
use crate::{Error, Result};

pub const MAP1_MAGIC: &[u8; 4] = b"MAP1";
pub const MAP1_VERSION: u32 = 1;

pub fn write_model<W: Write>(net: &MapperNetwork, mut w: W) -> Result<()> {
    w.write_all(MAP1_MAGIC)?;
    w.write_all(&MAP1_VERSION.to_le_bytes())?;
    w.write_all(&(net.layers().len() as u32).to_le_bytes())?;
    for l in net.layers() {
        w.write_all(&(l.fan_in as u32).to_le_bytes())?;
        w.write_all(&(l.fan_out as u32).to_le_bytes())?;
    }
    for l in net.layers() {
        for v in l.weights.iter().chain(&l.bias) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R, what: &'static str) -> Result<u32> {
    let mut buf = [0u8; 4];
    let got = read_up_to(r, &mut buf)?;
    if got < 4 {
        return Err(Error::Truncated {
            what,
            expected: 4,
            found: got as u64,
        });
    }
    Ok(u32::from_le_bytes(buf))
}

/// Parses a MAP1 stream. A payload longer than the header's shapes imply is
/// a shape error, not silently ignored.
pub fn read_model<R: Read>(mut r: R) -> Result<MapperNetwork> {
    let mut magic = [0u8; 4];
    let got = read_up_to(&mut r, &mut magic)?;
    if got < 4 || &magic != MAP1_MAGIC {
        return Err(Error::BadMagic {
            expected: "MAP1",
            found: String::from_utf8_lossy(&magic[..got]).into_owned(),
        });
    }
    let version = read_u32(&mut r, "MAP1 header")?;
    if version != MAP1_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "MAP1",
            expected: MAP1_VERSION,
            found: version,
        });
    }
    let layer_count = read_u32(&mut r, "MAP1 header")? as usize;
    if layer_count == 0 {
        return Err(Error::Shape("MAP1 declares zero layers".into()));
    }
    let mut shapes = Vec::with_capacity(layer_count.min(1024));
    for _ in 0..layer_count {
        let fan_in = read_u32(&mut r, "MAP1 layer table")? as usize;
        let fan_out = read_u32(&mut r, "MAP1 layer table")? as usize;
        shapes.push((fan_in, fan_out));
    }
    for (i, w) in shapes.windows(2).enumerate() {
        if w[0].1 != w[1].0 {
            return Err(Error::Shape(format!(
                "layer {} outputs {} but layer {} expects {}",
                i,
                w[0].1,
                i + 1,
                w[1].0
            )));
        }
    }
    let values: u64 = shapes
        .iter()
        .map(|&(i, o)| (i as u64) * (o as u64) + o as u64)
        .sum();
    let expected = values * 4;
    let mut bytes = Vec::new();
    (&mut r).take(expected).read_to_end(&mut bytes)?;
    if (bytes.len() as u64) < expected {
        return Err(Error::Truncated {
            what: "MAP1 payload",
            expected,
            found: bytes.len() as u64,
        });
    }
    let mut extra = Vec::new();
    r.read_to_end(&mut extra)?;
    if !extra.is_empty() {
        return Err(Error::Shape(format!(
            "MAP1 payload has {} bytes beyond the {expected} its header declares",
            extra.len()
        )));
    }

    let mut floats = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()));
    let layers = shapes
        .into_iter()
        .map(|(fan_in, fan_out)| Layer {
            fan_in,
            fan_out,
            weights: floats.by_ref().take(fan_in * fan_out).collect(),
            bias: floats.by_ref().take(fan_out).collect(),
        })
        .collect();
    MapperNetwork::from_layers(layers)
}

pub fn save_model(net: &MapperNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io_at(path, e))?;
    let mut w = BufWriter::new(file);
    write_model(net, &mut w)?;
    w.flush().map_err(|e| Error::io_at(path, e))?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(MapperNetwork, MapperConfig)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io_at(path, e))?;
    let net = read_model(BufReader::new(file))?;
    let cfg = net.config();
    Ok((net, cfg))
}
