//! Versioned binary parameter checkpoints.
//!
//! Layout: magic `IPNN`, u32 format version, u32 module count, then one
//! record per parameter tensor: u32 name length, name bytes, u32 rank,
//! u32 dims, then 32-bit little-endian values. Round-trips are bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"IPNN";
const VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

impl Network<f32> {
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
        file.write_all(MAGIC)?;
        write_u32(&mut file, VERSION)?;
        write_u32(&mut file, self.module_count() as u32)?;
        for (name, tensor) in self.named_params() {
            write_u32(&mut file, name.len() as u32)?;
            file.write_all(name.as_bytes())?;
            write_u32(&mut file, tensor.shape().len() as u32)?;
            for &d in tensor.shape() {
                write_u32(&mut file, d as u32)?;
            }
            for v in tensor.data() {
                file.write_all(&v.to_le_bytes())?;
            }
        }
        file.flush()?;
        Ok(())
    }

    /// Loads parameters by name into this network. Every stored tensor must
    /// match an existing parameter of identical shape.
    pub fn load_checkpoint(&mut self, path: &Path) -> Result<()> {
        let bytes = std::fs::read(path)?;
        let records = parse_checkpoint(&bytes)?;
        let mut params = self.named_params_mut();
        for (name, shape, values) in records {
            let slot = params
                .iter_mut()
                .find(|(n, _)| *n == name)
                .ok_or_else(|| Error::Format(format!("checkpoint names unknown parameter '{name}'")))?;
            if slot.1.shape() != shape.as_slice() {
                return Err(Error::Format(format!(
                    "parameter '{name}' has shape {:?} in checkpoint but {:?} in network",
                    shape,
                    slot.1.shape()
                )));
            }
            *slot.1 = Tensor::new(shape, values)?;
        }
        Ok(())
    }
}

type Record = (String, Vec<usize>, Vec<f32>);

fn parse_checkpoint(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut cursor = std::io::Cursor::new(bytes);
    let mut magic = [0u8; 4];
    cursor
        .read_exact(&mut magic)
        .map_err(|_| Error::Format("checkpoint shorter than magic header".into()))?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut cursor)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let _module_count = read_u32(&mut cursor)?;
    let mut records = Vec::new();
    while (cursor.position() as usize) < bytes.len() {
        let name_len = read_u32(&mut cursor)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        cursor.read_exact(&mut name_bytes).map_err(|_| {
            Error::Format(format!(
                "truncated parameter name at byte offset {}",
                cursor.position()
            ))
        })?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Format("parameter name is not valid utf8".into()))?;
        let rank = read_u32(&mut cursor)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut cursor)? as usize);
        }
        let count: usize = shape.iter().product();
        let mut values = Vec::with_capacity(count);
        for _ in 0..count {
            let mut buf = [0u8; 4];
            cursor.read_exact(&mut buf).map_err(|_| {
                Error::Format(format!(
                    "truncated values for '{name}' at byte offset {}",
                    cursor.position()
                ))
            })?;
            values.push(f32::from_le_bytes(buf));
        }
        records.push((name, shape, values));
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AuxHeadSpec, LayerKind, LayerSpec, ModuleSpec};

    fn build_net(seed: u64) -> Network<f32> {
        let specs = vec![ModuleSpec::new(
            vec![
                LayerSpec::new(LayerKind::Dense { input: 4, output: 3 }, seed),
                LayerSpec::new(LayerKind::ReLU, 0),
            ],
            AuxHeadSpec::Linear { out: 2 },
            seed + 1,
        )];
        Network::build(&specs, &[4]).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ipnn");
        let src = build_net(5);
        src.save_checkpoint(&path).unwrap();

        let mut dst = build_net(99); // different init, same shapes
        dst.load_checkpoint(&path).unwrap();

        for ((_, a), (_, b)) in src.named_params().iter().zip(dst.named_params().iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ipnn");
        std::fs::write(&path, b"NOPE0000").unwrap();
        let mut net = build_net(1);
        assert!(matches!(net.load_checkpoint(&path), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cut.ipnn");
        let net = build_net(2);
        net.save_checkpoint(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        let mut other = build_net(3);
        let err = other.load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("byte offset"));
    }
}
