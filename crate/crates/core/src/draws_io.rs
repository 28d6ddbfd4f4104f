//! `draws.bin`: a columnar container of named f64 arrays.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      4 bytes  "XSD1"
//! count      u32      number of arrays
//! per array (header):
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 × ndim, row-major)
//! per array (payload, same order): product(dims) × f64 LE
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"XSD1";

#[derive(Clone, Debug, PartialEq)]
pub struct DrawsArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl DrawsArray {
    /// Row-major 2-d view.
    pub fn rows(&self) -> Result<Vec<&[f64]>> {
        match self.dims.as_slice() {
            [_, cols] if *cols > 0 => Ok(self.data.chunks(*cols).collect()),
            [_, 0] => Ok(vec![&[][..]; self.dims[0]]),
            _ => Err(Error::DrawsFormat(format!("array `{}` is not 2-dimensional", self.name))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DrawsFile {
    pub arrays: Vec<DrawsArray>,
}

impl DrawsFile {
    pub fn push(&mut self, name: &str, dims: Vec<usize>, data: Vec<f64>) -> Result<()> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::DrawsFormat(format!("array `{name}`: dims {dims:?} do not match {} values", data.len())));
        }
        if self.get(name).is_some() {
            return Err(Error::DrawsFormat(format!("duplicate array `{name}`")));
        }
        self.arrays.push(DrawsArray { name: name.to_string(), dims, data });
        Ok(())
    }

    /// Store `rows[i][j]` as an `[rows, cols]` array.
    pub fn push_matrix(&mut self, name: &str, rows: &[Vec<f64>]) -> Result<()> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::DrawsFormat(format!("array `{name}`: ragged rows")));
        }
        self.push(name, vec![rows.len(), cols], rows.concat())
    }

    pub fn get(&self, name: &str) -> Option<&DrawsArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&DrawsArray> {
        self.get(name).ok_or_else(|| Error::DrawsFormat(format!("missing array `{name}`")))
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&(self.arrays.len() as u32).to_le_bytes())?;
        for a in &self.arrays {
            w.write_all(&(a.name.len() as u32).to_le_bytes())?;
            w.write_all(a.name.as_bytes())?;
            w.write_all(&(a.dims.len() as u32).to_le_bytes())?;
            for d in &a.dims {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
        }
        for a in &self.arrays {
            for v in &a.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| Error::DrawsFormat("file too short for the magic bytes".into()))?;
        if &magic != MAGIC {
            return Err(Error::DrawsFormat(format!("bad magic {magic:?}, expected \"XSD1\"")));
        }
        let count = read_u32(&mut r)? as usize;
        let mut headers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let len = read_u32(&mut r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name).map_err(truncated)?;
            let name = String::from_utf8(name).map_err(|_| Error::DrawsFormat("array name is not UTF-8".into()))?;
            let ndim = read_u32(&mut r)? as usize;
            let dims = (0..ndim).map(|_| read_u64(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            headers.push((name, dims));
        }
        let mut out = DrawsFile::default();
        for (name, dims) in headers {
            let n = dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d))
                .ok_or_else(|| Error::DrawsFormat(format!("array `{name}` is too large")))?;
            let mut bytes = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::DrawsFormat("array too large".into()))?];
            r.read_exact(&mut bytes).map_err(truncated)?;
            let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
            out.push(&name, dims, data)?;
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::DrawsFormat("trailing bytes after the last array".into()));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    /// Long-format CSV: `array,index,value` with a `;`-joined multi-index.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["array", "index", "value"])?;
        for a in &self.arrays {
            for (flat, v) in a.data.iter().enumerate() {
                out.write_record([a.name.as_str(), &multi_index(flat, &a.dims), &v.to_string()])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

fn multi_index(mut flat: usize, dims: &[usize]) -> String {
    let mut idx = vec![0; dims.len()];
    for (i, d) in dims.iter().enumerate().rev() {
        idx[i] = flat % d;
        flat /= d;
    }
    idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(";")
}

fn truncated(_: std::io::Error) -> Error {
    Error::DrawsFormat("file truncated".into())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> DrawsFile {
        let mut f = DrawsFile::default();
        f.push_matrix("deaths", &[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.5]]).unwrap();
        f.push("sigma", vec![2], vec![0.1, f64::MIN_POSITIVE]).unwrap();
        f
    }

    #[test]
    fn round_trip_and_layout() {
        let f = sample();
        let mut buf = Vec::new();
        f.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"XSD1");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 2);
        assert_eq!(DrawsFile::read(&buf[..]).unwrap(), f);
        assert_eq!(f.require("deaths").unwrap().rows().unwrap()[1], &[4.0, 5.0, 6.5]);
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let mut buf = Vec::new();
        sample().write(&mut buf).unwrap();
        assert!(matches!(DrawsFile::read(&buf[..buf.len() - 3]), Err(Error::DrawsFormat(_))));
        let mut bad = buf.clone();
        bad[0] = b'Y';
        assert!(matches!(DrawsFile::read(&bad[..]), Err(Error::DrawsFormat(_))));
        buf.push(0);
        assert!(matches!(DrawsFile::read(&buf[..]), Err(Error::DrawsFormat(_))));
        assert!(DrawsFile::default().push("x", vec![2, 2], vec![1.0]).is_err());
    }

    #[test]
    fn csv_export_uses_multi_indices() {
        let mut out = Vec::new();
        sample().write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("array,index,value\ndeaths,0;0,1\n"));
        assert!(text.contains("deaths,1;2,6.5\n"));
        assert!(text.contains("sigma,1,"));
    }

    proptest! {
        #[test]
        fn arbitrary_arrays_round_trip(rows in 0usize..5, cols in 0usize..5, seed in any::<u64>()) {
            let data: Vec<f64> = (0..rows * cols).map(|i| (seed.wrapping_add(i as u64) as f64).sin()).collect();
            let mut f = DrawsFile::default();
            f.push("a", vec![rows, cols], data).unwrap();
            let mut buf = Vec::new();
            f.write(&mut buf).unwrap();
            prop_assert_eq!(DrawsFile::read(&buf[..]).unwrap(), f);
        }
    }
}
