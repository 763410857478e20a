//! Checkpoint container: magic `PMCKPT01`, then a count of entries, each a
//! named payload (f32 tensor with shape, or raw bytes). Model parameters,
//! EMA shadows, optimizer state and the run config travel in one file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::Mat;

pub const CKPT_MAGIC: &[u8; 8] = b"PMCKPT01";

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    /// Row-major f32 tensor with its shape.
    Tensor { rows: u32, cols: u32, data: Vec<f32> },
    /// Opaque bytes (the embedded config text).
    Bytes(Vec<u8>),
}

impl Payload {
    pub fn from_mat(m: &Mat) -> Payload {
        Payload::Tensor {
            rows: m.rows as u32,
            cols: m.cols as u32,
            data: m.data.iter().map(|v| *v as f32).collect(),
        }
    }

    pub fn to_mat(&self) -> Result<Mat> {
        match self {
            Payload::Tensor { rows, cols, data } => Ok(Mat::from_vec(
                *rows as usize,
                *cols as usize,
                data.iter().map(|v| *v as f64).collect(),
            )),
            Payload::Bytes(_) => Err(Error::Data("expected a tensor, found bytes".into())),
        }
    }
}

pub fn write_checkpoint(path: &Path, entries: &[(String, Payload)]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(CKPT_MAGIC)?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for (name, payload) in entries {
        let bytes = name.as_bytes();
        w.write_all(&(bytes.len() as u16).to_le_bytes())?;
        w.write_all(bytes)?;
        match payload {
            Payload::Tensor { rows, cols, data } => {
                w.write_all(&[0u8])?;
                w.write_all(&rows.to_le_bytes())?;
                w.write_all(&cols.to_le_bytes())?;
                for v in data {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
            Payload::Bytes(data) => {
                w.write_all(&[1u8])?;
                w.write_all(&(data.len() as u64).to_le_bytes())?;
                w.write_all(data)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Payload)>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CKPT_MAGIC {
        return Err(Error::Data(format!("{}: not a checkpoint file", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let count = u32::from_le_bytes(b4);
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let mut b2 = [0u8; 2];
        r.read_exact(&mut b2)?;
        let name_len = u16::from_le_bytes(b2) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| Error::Data("checkpoint entry name is not UTF-8".into()))?;
        let mut dtype = [0u8; 1];
        r.read_exact(&mut dtype)?;
        let payload = match dtype[0] {
            0 => {
                r.read_exact(&mut b4)?;
                let rows = u32::from_le_bytes(b4);
                r.read_exact(&mut b4)?;
                let cols = u32::from_le_bytes(b4);
                let n = rows as usize * cols as usize;
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    r.read_exact(&mut b4)?;
                    data.push(f32::from_le_bytes(b4));
                }
                Payload::Tensor { rows, cols, data }
            }
            1 => {
                let mut b8 = [0u8; 8];
                r.read_exact(&mut b8)?;
                let len = u64::from_le_bytes(b8) as usize;
                let mut data = vec![0u8; len];
                r.read_exact(&mut data)?;
                Payload::Bytes(data)
            }
            other => {
                return Err(Error::Data(format!("unknown payload dtype {other} in {name}")));
            }
        };
        entries.push((name, payload));
    }
    Ok(entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_tensors_and_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pmckpt");
        let entries = vec![
            ("model.w".to_string(), Payload::from_mat(&Mat::from_vec(2, 2, vec![1.0, -0.5, 0.25, 3.0]))),
            ("config".to_string(), Payload::Bytes(b"train.lr = 0.001\n".to_vec())),
        ];
        write_checkpoint(&path, &entries).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, entries);
        let mat = back[0].1.to_mat().unwrap();
        assert_eq!(mat.data, vec![1.0, -0.5, 0.25, 3.0]);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let bad = dir.path().join("bad.pmckpt");
        std::fs::write(&bad, b"WRONGMAG\x01\x00\x00\x00").unwrap();
        assert!(read_checkpoint(&bad).is_err());

        let path = dir.path().join("trunc.pmckpt");
        let entries = vec![(
            "w".to_string(),
            Payload::from_mat(&Mat::from_vec(4, 4, vec![0.5; 16])),
        )];
        write_checkpoint(&path, &entries).unwrap();
        let full = std::fs::read(&path).unwrap();
        std::fs::write(&path, &full[..full.len() - 9]).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}
