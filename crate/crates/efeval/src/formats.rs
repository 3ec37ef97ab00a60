//! Binary artifact formats: checkpoints, gradient-sum caches, dataset caches.
//!
//! Every format starts with an eight-byte magic string and a `u32` version;
//! all integers and floats are little-endian. Loaders validate the declared
//! sizes against the actual file length before building anything, so a
//! corrupted length field fails cleanly instead of over-allocating.

use std::fs;
use std::path::Path;

use efeval_core::estimator::PathTag;
use efeval_core::{Dataset, GradSumRecord, LabeledExample, MlpNetwork, ParamVector};

use crate::error::{AppError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"EFCKPT01";
pub const GRADSUM_MAGIC: &[u8; 8] = b"EFGSUM01";
pub const DATASET_MAGIC: &[u8; 8] = b"EFDSET01";
pub const FORMAT_VERSION: u32 = 1;

/// Sequential little-endian reader over a loaded file.
struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn new(path: &'a Path, bytes: &'a [u8]) -> Self {
        Reader { path, bytes, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .at
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                AppError::format(
                    self.path,
                    format!(
                        "truncated: needed {n} bytes at offset {}, file has {}",
                        self.at,
                        self.bytes.len()
                    ),
                )
            })?;
        let slice = &self.bytes[self.at..end];
        self.at = end;
        Ok(slice)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != expected {
            return Err(AppError::format(
                self.path,
                format!(
                    "bad magic: expected {:?}, got {:?}",
                    String::from_utf8_lossy(expected),
                    String::from_utf8_lossy(got)
                ),
            ));
        }
        Ok(())
    }

    fn version(&mut self) -> Result<()> {
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(AppError::format(
                self.path,
                format!("unsupported version {v}, expected {FORMAT_VERSION}"),
            ));
        }
        Ok(())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    /// Checks that exactly `count` trailing floats remain, then reads them.
    fn f64_tail(&mut self, count: usize) -> Result<Vec<f64>> {
        let remaining = self.bytes.len() - self.at;
        let expected = count.checked_mul(8).ok_or_else(|| {
            AppError::format(self.path, format!("declared count {count} overflows"))
        })?;
        if remaining != expected {
            return Err(AppError::format(
                self.path,
                format!("expected {expected} bytes of floats, found {remaining}"),
            ));
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            out.push(self.f64()?);
        }
        Ok(out)
    }

    fn done(&self) -> Result<()> {
        if self.at != self.bytes.len() {
            return Err(AppError::format(
                self.path,
                format!("{} unexpected trailing bytes", self.bytes.len() - self.at),
            ));
        }
        Ok(())
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| AppError::io(path, e))
}

/// Writes bytes atomically: to a temporary sibling first, then renamed over
/// the target.
fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = Path::new(&tmp);
    fs::write(tmp, bytes).map_err(|e| AppError::io(tmp, e))?;
    fs::rename(tmp, path).map_err(|e| AppError::io(path, e))
}

/// Parameter count implied by a dims header read from disk. Checked
/// arithmetic, since corrupt headers can otherwise overflow.
fn checked_param_count(path: &Path, dims: &[usize]) -> Result<usize> {
    let mut total = 0usize;
    for w in dims.windows(2) {
        let layer = w[0]
            .checked_add(1)
            .and_then(|rows| rows.checked_mul(w[1]));
        total = layer
            .and_then(|n| total.checked_add(n))
            .ok_or_else(|| {
                AppError::format(path, "layer dims overflow parameter count")
            })?;
    }
    Ok(total)
}

/// Serializes a network: magic, version, layer count, layer dims, then the
/// parameters in canonical layout.
pub fn save_checkpoint(path: &Path, net: &MlpNetwork) -> Result<()> {
    let dims = net.layer_dims();
    let params = net.flatten_params();
    let mut bytes =
        Vec::with_capacity(8 + 4 + 4 + 4 * dims.len() + 8 * params.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in params.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<MlpNetwork> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let layer_count = r.u32()? as usize;
    if layer_count < 2 {
        return Err(AppError::format(
            path,
            format!("layer count {layer_count} below minimum of 2"),
        ));
    }
    let mut dims = Vec::with_capacity(layer_count);
    for _ in 0..layer_count {
        dims.push(r.u32()? as usize);
    }
    let param_count = checked_param_count(path, &dims)?;
    let params = r.f64_tail(param_count)?;
    r.done()?;
    MlpNetwork::from_params(&dims, &ParamVector::from_vec(params)).map_err(AppError::Core)
}

/// Serializes a parameter delta against its layer geometry, reusing the
/// checkpoint layout.
pub fn save_delta(path: &Path, layer_dims: &[usize], delta: &ParamVector) -> Result<()> {
    let expected: usize = layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
    if delta.len() != expected {
        return Err(AppError::Core(efeval_core::Error::LayoutMismatch {
            a: expected,
            b: delta.len(),
        }));
    }
    let mut bytes = Vec::with_capacity(8 + 4 + 4 + 4 * layer_dims.len() + 8 * delta.len());
    bytes.extend_from_slice(CHECKPOINT_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(layer_dims.len() as u32).to_le_bytes());
    for &d in layer_dims {
        bytes.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for &v in delta.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

/// Reads a delta file back as a flat vector, checking the geometry header.
pub fn load_delta(path: &Path, layer_dims: &[usize]) -> Result<ParamVector> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version()?;
    let layer_count = r.u32()? as usize;
    if layer_count != layer_dims.len() {
        return Err(AppError::format(
            path,
            format!(
                "layer count {layer_count} does not match expected {}",
                layer_dims.len()
            ),
        ));
    }
    for &want in layer_dims {
        let got = r.u32()? as usize;
        if got != want {
            return Err(AppError::format(
                path,
                format!("layer dim {got} does not match expected {want}"),
            ));
        }
    }
    let param_count: usize = layer_dims.windows(2).map(|w| (w[0] + 1) * w[1]).sum();
    let values = r.f64_tail(param_count)?;
    r.done()?;
    Ok(ParamVector::from_vec(values))
}

/// Serializes a gradient-sum cache record.
pub fn save_gradsum(path: &Path, rec: &GradSumRecord) -> Result<()> {
    rec.validate().map_err(AppError::Core)?;
    let mut bytes = Vec::with_capacity(8 + 4 * 7 + 1 + 8 + 8 * rec.vector.len());
    bytes.extend_from_slice(GRADSUM_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(rec.round as u32).to_le_bytes());
    bytes.extend_from_slice(&(rec.class as u32).to_le_bytes());
    bytes.push(rec.path.as_u8());
    bytes.extend_from_slice(&(rec.batch_size as u32).to_le_bytes());
    bytes.extend_from_slice(&(rec.sample_count as u32).to_le_bytes());
    bytes.extend_from_slice(&(rec.failed_count as u32).to_le_bytes());
    bytes.extend_from_slice(&(rec.succeeded_count as u32).to_le_bytes());
    bytes.extend_from_slice(&(rec.vector.len() as u64).to_le_bytes());
    for &v in rec.vector.as_slice() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &bytes)
}

pub fn load_gradsum(path: &Path) -> Result<GradSumRecord> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(GRADSUM_MAGIC)?;
    r.version()?;
    let round = r.u32()? as usize;
    let class = r.u32()? as usize;
    let tag = PathTag::from_u8(r.u8()?).map_err(AppError::Core)?;
    let batch_size = r.u32()? as usize;
    let sample_count = r.u32()? as usize;
    let failed_count = r.u32()? as usize;
    let succeeded_count = r.u32()? as usize;
    let len = r.u64()? as usize;
    let values = r.f64_tail(len)?;
    r.done()?;
    let rec = GradSumRecord {
        round,
        class,
        path: tag,
        batch_size,
        sample_count,
        failed_count,
        succeeded_count,
        vector: ParamVector::from_vec(values),
    };
    rec.validate().map_err(AppError::Core)?;
    Ok(rec)
}

/// Serializes a dataset cache: header, then per sample id, label, features.
pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let d = data.feature_dim();
    let mut bytes = Vec::with_capacity(8 + 4 + 8 + 4 + 4 + data.len() * (8 + 4 + 8 * d));
    bytes.extend_from_slice(DATASET_MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(data.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&(d as u32).to_le_bytes());
    bytes.extend_from_slice(&(data.class_count() as u32).to_le_bytes());
    for ex in data.examples() {
        bytes.extend_from_slice(&ex.id.to_le_bytes());
        bytes.extend_from_slice(&(ex.label as u32).to_le_bytes());
        for &v in &ex.features {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_file(path, &bytes)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let bytes = read_file(path)?;
    let mut r = Reader::new(path, &bytes);
    r.magic(DATASET_MAGIC)?;
    r.version()?;
    let count = r.u64()? as usize;
    let dim = r.u32()? as usize;
    let class_count = r.u32()? as usize;
    let per_sample = 8usize + 4 + 8 * dim;
    let expected = count.checked_mul(per_sample).ok_or_else(|| {
        AppError::format(path, format!("declared sample count {count} overflows"))
    })?;
    let remaining = bytes.len() - r.at;
    if remaining != expected {
        return Err(AppError::format(
            path,
            format!("expected {expected} bytes of samples, found {remaining}"),
        ));
    }
    let mut examples = Vec::with_capacity(count);
    for _ in 0..count {
        let id = r.u64()?;
        let label = r.u32()? as usize;
        let mut features = Vec::with_capacity(dim);
        for _ in 0..dim {
            features.push(r.f64()?);
        }
        examples.push(LabeledExample {
            id,
            features,
            label,
        });
    }
    r.done()?;
    Dataset::new(examples, class_count).map_err(AppError::Core)
}
