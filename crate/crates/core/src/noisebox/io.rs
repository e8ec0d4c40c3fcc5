//! Dataset container.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes  "NOISEBOX"
//! version    u32
//! rng        u8 length + ASCII name of the generator
//! n          u64
//! h, w, c    u32 x 3
//! noise_ub   f64
//! seed       u64
//! std flag   u8, then mean f64 and std f64 when set
//! labels     n bytes, 0 or 1
//! pixels     n*h*w*c f64, row-major
//! ```

use std::io::Write;
use std::path::Path;

use crate::error::{Result, SorError};
use crate::noisebox::{Dataset, DatasetMeta, Standardizer};
use crate::rng::RNG_NAME;
use crate::tensor::Tensor;

pub const DATASET_MAGIC: &[u8; 8] = b"NOISEBOX";
pub const DATASET_VERSION: u32 = 1;

pub fn encode(ds: &Dataset) -> Vec<u8> {
    let [h, w, c] = ds.image_shape();
    let mut out = Vec::with_capacity(64 + ds.len() * (1 + 8 * h * w * c));
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.push(RNG_NAME.len() as u8);
    out.extend_from_slice(RNG_NAME.as_bytes());
    out.extend_from_slice(&(ds.len() as u64).to_le_bytes());
    for d in [h, w, c] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out.extend_from_slice(&ds.meta.noise_ub.to_le_bytes());
    out.extend_from_slice(&ds.meta.seed.to_le_bytes());
    match ds.meta.standardized {
        Some(s) => {
            out.push(1);
            out.extend_from_slice(&s.mean.to_le_bytes());
            out.extend_from_slice(&s.std.to_le_bytes());
        }
        None => out.push(0),
    }
    out.extend(ds.labels().iter().map(|&y| y as u8));
    for v in ds.images().data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(SorError::Parse {
                offset: self.pos as u64,
                message: format!("unexpected end of file reading {what}"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn err(&self, message: impl Into<String>) -> SorError {
        SorError::Parse {
            offset: self.pos as u64,
            message: message.into(),
        }
    }
}

pub fn decode(buf: &[u8]) -> Result<Dataset> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(8, "magic")? != DATASET_MAGIC {
        return Err(SorError::Parse {
            offset: 0,
            message: "not a dataset file (bad magic)".into(),
        });
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(SorError::Version {
            found: version,
            expected: DATASET_VERSION,
        });
    }
    let name_len = r.u8("rng name length")? as usize;
    let name = r.take(name_len, "rng name")?;
    if name != RNG_NAME.as_bytes() {
        return Err(r.err(format!("unknown generator {:?}", String::from_utf8_lossy(name))));
    }
    let n = r.u64("image count")? as usize;
    let h = r.u32("height")? as usize;
    let w = r.u32("width")? as usize;
    let c = r.u32("channels")? as usize;
    let noise_ub = r.f64("noise bound")?;
    let seed = r.u64("seed")?;
    let standardized = match r.u8("standardization flag")? {
        0 => None,
        1 => Some(Standardizer {
            mean: r.f64("mean")?,
            std: r.f64("std")?,
        }),
        f => return Err(r.err(format!("bad standardization flag {f}"))),
    };
    let label_start = r.pos;
    let labels = r
        .take(n, "labels")?
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(0.0),
            1 => Ok(1.0),
            _ => Err(SorError::Parse {
                offset: (label_start + i) as u64,
                message: format!("label byte {b} is not 0 or 1"),
            }),
        })
        .collect::<Result<Vec<_>>>()?;
    let count = n
        .checked_mul(h * w * c)
        .ok_or_else(|| r.err("image dimensions overflow"))?;
    let bytes = r.take(count.checked_mul(8).ok_or_else(|| r.err("size overflow"))?, "pixels")?;
    let pixels = bytes
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
        .collect();
    if r.pos != buf.len() {
        return Err(r.err(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    let images = Tensor::new(vec![n, h, w, c], pixels)?;
    Dataset::new(
        images,
        labels,
        DatasetMeta {
            noise_ub,
            seed,
            standardized,
        },
    )
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(ds)).map_err(|e| SorError::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let buf = std::fs::read(path).map_err(|e| SorError::io(path, e))?;
    decode(&buf)
}

/// One row per image: the label followed by every pixel.
pub fn export_csv(ds: &Dataset, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["label".to_string()];
    header.extend((0..ds.pixels(0).len()).map(|i| format!("p{i}")));
    w.write_record(&header)?;
    for i in 0..ds.len() {
        let mut row = vec![format!("{}", ds.labels()[i] as u8)];
        row.extend(ds.pixels(i).iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| SorError::io("dataset csv", e))?;
    Ok(())
}
