//! Versioned binary network checkpoints.
//!
//! Layout (integers and floats little-endian):
//! magic `PTNN`, u32 version, u32 layer count, then per layer
//! u32 out, u32 in, u8 has_bias, u8 activation tag (0 = ReLU, 1 = Identity),
//! row-major f64 weights, f64 biases when present.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::network::{Activation, Layer, LayeredNet};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"PTNN";
const VERSION: u32 = 1;

fn activation_tag(a: Activation) -> u8 {
    match a {
        Activation::Relu => 0,
        Activation::Identity => 1,
    }
}

fn activation_from_tag(tag: u8, path: &Path) -> Result<Activation> {
    match tag {
        0 => Ok(Activation::Relu),
        1 => Ok(Activation::Identity),
        other => Err(Error::Format {
            path: path.to_path_buf(),
            msg: format!("unknown activation tag {other}"),
        }),
    }
}

pub fn save(net: &LayeredNet, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(net.depth() as u32).to_le_bytes())?;
    for layer in net.layers() {
        out.write_all(&(layer.out_dim() as u32).to_le_bytes())?;
        out.write_all(&(layer.in_dim() as u32).to_le_bytes())?;
        out.write_all(&[layer.bias().is_some() as u8])?;
        out.write_all(&[activation_tag(layer.activation())])?;
        for v in layer.weight().data() {
            out.write_all(&v.to_le_bytes())?;
        }
        if let Some(b) = layer.bias() {
            for v in b.data() {
                out.write_all(&v.to_le_bytes())?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::Format {
            path: self.path.to_path_buf(),
            msg: format!("truncated at byte {}", self.pos),
        })?;
        self.pos += n;
        Ok(slice)
    }

    fn u32_le(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64_le(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load(path: &Path) -> Result<LayeredNet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let format_err = |msg: String| Error::Format {
        path: path.to_path_buf(),
        msg,
    };
    let mut cur = Cursor {
        bytes: &bytes,
        pos: 0,
        path,
    };

    if cur.take(4)? != MAGIC {
        return Err(format_err("bad magic, expected PTNN".into()));
    }
    let version = cur.u32_le()?;
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let layer_count = cur.u32_le()? as usize;
    let mut layers = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        let out_dim = cur.u32_le()? as usize;
        let in_dim = cur.u32_le()? as usize;
        let has_bias = cur.take(1)?[0] != 0;
        let activation = activation_from_tag(cur.take(1)?[0], path)?;
        let mut w = Vec::with_capacity(out_dim * in_dim);
        for _ in 0..out_dim * in_dim {
            w.push(cur.f64_le()?);
        }
        let weight = Tensor::matrix(out_dim, in_dim, w)?;
        let bias = if has_bias {
            let mut b = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                b.push(cur.f64_le()?);
            }
            Some(Tensor::vector(&b)?)
        } else {
            None
        };
        layers.push(Layer::new(weight, bias, activation)?);
    }
    if cur.pos != bytes.len() {
        return Err(format_err(format!(
            "{} trailing bytes after last layer",
            bytes.len() - cur.pos
        )));
    }
    LayeredNet::from_layers(layers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ptnn");
        let mut rng = SplitMix64::new(42);
        let net = LayeredNet::init(&[5, 8, 3], true, &mut rng).unwrap();
        save(&net, &path).unwrap();
        let back = load(&path).unwrap();
        assert_eq!(back, net);
    }

    #[test]
    fn round_trip_without_bias() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ptnn");
        let mut rng = SplitMix64::new(43);
        let net = LayeredNet::init(&[4, 6, 2], false, &mut rng).unwrap();
        save(&net, &path).unwrap();
        assert_eq!(load(&path).unwrap(), net);
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ptnn");
        std::fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        assert!(matches!(load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ptnn");
        let mut rng = SplitMix64::new(44);
        let net = LayeredNet::init(&[3, 3, 2], true, &mut rng).unwrap();
        save(&net, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(load(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ptnn");
        let mut rng = SplitMix64::new(45);
        let net = LayeredNet::init(&[3, 3, 2], true, &mut rng).unwrap();
        save(&net, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load(&path), Err(Error::Format { .. })));
    }
}
