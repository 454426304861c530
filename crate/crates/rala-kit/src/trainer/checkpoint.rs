//! Binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!   magic "RAVLT001" (8 bytes)
//!   u32 length + model config JSON
//!   u32 weight count, then per weight:
//!     u32 name length + name bytes, u32 rows, u32 cols, rows*cols f32 values
//!   u32 length + metrics JSON

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::backbone::{ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::trainer::EpochMetrics;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"RAVLT001";

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    weights: &ModelWeights,
    metrics: &[EpochMetrics],
) -> Result<()> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| io_err(path, e))?);
    let write = |w: &mut BufWriter<File>, bytes: &[u8]| -> Result<()> {
        w.write_all(bytes).map_err(|e| io_err(path, e))
    };
    write(&mut w, CHECKPOINT_MAGIC)?;

    let config_json = serde_json::to_vec(config).expect("config serializes");
    write(&mut w, &(config_json.len() as u32).to_le_bytes())?;
    write(&mut w, &config_json)?;

    write(&mut w, &(weights.len() as u32).to_le_bytes())?;
    for (name, m) in weights.iter() {
        write(&mut w, &(name.len() as u32).to_le_bytes())?;
        write(&mut w, name.as_bytes())?;
        write(&mut w, &(m.rows() as u32).to_le_bytes())?;
        write(&mut w, &(m.cols() as u32).to_le_bytes())?;
        for &x in m.data() {
            write(&mut w, &(x as f32).to_le_bytes())?;
        }
    }

    let metrics_json = serde_json::to_vec(metrics).expect("metrics serialize");
    write(&mut w, &(metrics_json.len() as u32).to_le_bytes())?;
    write(&mut w, &metrics_json)?;
    w.flush().map_err(|e| io_err(path, e))
}

struct Reader<'a> {
    r: BufReader<File>,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn bytes(&mut self, n: usize, what: &str) -> Result<Vec<u8>> {
        let mut buf = vec![0u8; n];
        self.r.read_exact(&mut buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format(format!(
                    "truncated checkpoint {}: unexpected end of file reading {what}",
                    self.path.display()
                ))
            } else {
                io_err(self.path, e)
            }
        })?;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.bytes(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn json_block<T: serde::de::DeserializeOwned>(&mut self, what: &str) -> Result<T> {
        let len = self.u32(what)? as usize;
        let bytes = self.bytes(len, what)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("bad {what} JSON in checkpoint: {e}")))
    }
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelWeights, Vec<EpochMetrics>)> {
    let mut r = Reader {
        r: BufReader::new(File::open(path).map_err(|e| io_err(path, e))?),
        path,
    };
    let magic = r.bytes(8, "magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:?}, expected {:?}",
            String::from_utf8_lossy(&magic),
            String::from_utf8_lossy(CHECKPOINT_MAGIC),
        )));
    }
    let config: ModelConfig = r.json_block("config")?;

    let count = r.u32("weight count")? as usize;
    let mut weights = ModelWeights::new();
    for _ in 0..count {
        let name_len = r.u32("weight name length")? as usize;
        let name = String::from_utf8(r.bytes(name_len, "weight name")?)
            .map_err(|e| Error::Format(format!("non-UTF-8 weight name: {e}")))?;
        let rows = r.u32("weight rows")? as usize;
        let cols = r.u32("weight cols")? as usize;
        let raw = r.bytes(rows * cols * 4, "weight values")?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        weights.push(
            name,
            Matrix::from_vec(rows, cols, data).expect("sized by construction"),
        );
    }

    let metrics: Vec<EpochMetrics> = r.json_block("metrics")?;
    Ok((config, weights, metrics))
}
