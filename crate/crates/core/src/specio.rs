//! Binary spectrogram dumps: 16-byte header (magic `PMSPEC01`, u32 n_mels,
//! u32 n_frames, little-endian) followed by row-major f32 values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::dsp::Spectrogram;
use crate::error::{Error, Result};

pub const SPEC_MAGIC: &[u8; 8] = b"PMSPEC01";

pub fn write_spectrogram(path: &Path, spec: &Spectrogram) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SPEC_MAGIC)?;
    w.write_all(&(spec.n_mels as u32).to_le_bytes())?;
    w.write_all(&(spec.n_frames as u32).to_le_bytes())?;
    for v in &spec.values {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_spectrogram(path: &Path) -> Result<Spectrogram> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SPEC_MAGIC {
        return Err(Error::Data(format!(
            "{}: bad magic, not a spectrogram dump",
            path.display()
        )));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let n_mels = u32::from_le_bytes(b4) as usize;
    r.read_exact(&mut b4)?;
    let n_frames = u32::from_le_bytes(b4) as usize;
    let mut values = Vec::with_capacity(n_mels * n_frames);
    for _ in 0..n_mels * n_frames {
        r.read_exact(&mut b4)?;
        values.push(f32::from_le_bytes(b4) as f64);
    }
    Ok(Spectrogram::new(values, n_mels, n_frames))
}
