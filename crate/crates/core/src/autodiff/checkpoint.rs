//! Binary checkpoint container.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic     8 bytes  "MGANCKPT"
//! version   u32      currently 1
//! meta      u32 length + UTF-8 bytes (free-form, typically the resolved run config)
//! opt       u64 step, f64 lr, f64 alpha, f64 eps
//! params    tensor section
//! opt_state tensor section (squared-gradient averages)
//!
//! tensor section: u32 count, then per entry
//!     u32 name length, name bytes, u8 trainable, u32 ndim, u64 dims[ndim],
//!     f64 values[product(dims)]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::array::RealArray;
use crate::autodiff::optim::RmsProp;
use crate::autodiff::params::ParameterTree;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MGANCKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub params: ParameterTree,
    pub optimizer: RmsProp,
}

impl Checkpoint {
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        write_str(&mut w, &self.meta)?;
        w.write_u64::<LittleEndian>(self.optimizer.step_count())?;
        w.write_f64::<LittleEndian>(self.optimizer.lr)?;
        w.write_f64::<LittleEndian>(self.optimizer.alpha)?;
        w.write_f64::<LittleEndian>(self.optimizer.eps)?;
        write_tree(&mut w, &self.params)?;
        write_tree(&mut w, self.optimizer.accumulators())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta = read_str(&mut r)?;
        let step = r.read_u64::<LittleEndian>()?;
        let lr = r.read_f64::<LittleEndian>()?;
        let alpha = r.read_f64::<LittleEndian>()?;
        let eps = r.read_f64::<LittleEndian>()?;
        let params = read_tree(&mut r)?;
        let acc = read_tree(&mut r)?;
        Ok(Self {
            meta,
            params,
            optimizer: RmsProp::from_parts(lr, alpha, eps, step, acc),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}

fn write_tree<W: Write>(w: &mut W, tree: &ParameterTree) -> Result<()> {
    w.write_u32::<LittleEndian>(tree.len() as u32)?;
    for (name, entry) in tree.iter() {
        write_str(w, name)?;
        w.write_u8(entry.trainable as u8)?;
        let shape = entry.value.shape();
        w.write_u32::<LittleEndian>(shape.len() as u32)?;
        for &d in shape {
            w.write_u64::<LittleEndian>(d as u64)?;
        }
        for &v in entry.value.data() {
            w.write_f64::<LittleEndian>(v)?;
        }
    }
    Ok(())
}

fn read_tree<R: Read>(r: &mut R) -> Result<ParameterTree> {
    let count = r.read_u32::<LittleEndian>()?;
    let mut tree = ParameterTree::new();
    for _ in 0..count {
        let name = read_str(r)?;
        let trainable = r.read_u8()? != 0;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        let shape = (0..ndim)
            .map(|_| r.read_u64::<LittleEndian>().map(|d| d as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0; numel];
        r.read_f64_into::<LittleEndian>(&mut data)?;
        tree.insert(name, RealArray::new(shape, data)?, trainable)?;
    }
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn round_trip_preserves_everything() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ParameterTree::new();
        params.insert_linear("a.fc", 3, 2, &mut rng).unwrap();
        params
            .insert("frozen", RealArray::vector(vec![1.5, -2.0]), false)
            .unwrap();
        let opt = RmsProp::new(&params, 5e-4, 0.99, 1e-5);
        let ckpt = Checkpoint {
            meta: "algorithm = \"mgan\"".into(),
            params,
            optimizer: opt,
        };
        let mut buf = Vec::new();
        ckpt.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..8], MAGIC);
        let back = Checkpoint::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, ckpt);
    }

    #[test]
    fn bad_magic_is_rejected() {
        let buf = b"NOTACKPT\x01\x00\x00\x00".to_vec();
        assert!(matches!(
            Checkpoint::read_from(buf.as_slice()),
            Err(Error::Checkpoint(_))
        ));
    }
}
