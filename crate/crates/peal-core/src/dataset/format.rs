//! Binary dataset formats.
//!
//! Both formats are little-endian with a 4-byte magic and a u32 version.
//!
//! `PEMB` (precomputed embeddings): magic, version, u64 record count, u32
//! feature dim, u32 class count, then all labels as u32, then all features
//! as f32 row-major.
//!
//! `PTOK` (token grids): magic, version, u64 record count, u32 tokens, u32
//! token dim, u32 class count, then all labels as u32, then all grids as f32
//! in (record, token, dim) order.
//!
//! Features are stored as f32 and widened to f64 in memory, so a
//! write-read-write cycle is byte-identical.

use std::io::Write;
use std::path::Path;

use crate::dataset::Dataset;
use crate::error::DataError;
use crate::index::ClassIndex;
use crate::tensor::Tensor;

pub const PEMB_MAGIC: [u8; 4] = *b"PEMB";
pub const PTOK_MAGIC: [u8; 4] = *b"PTOK";
const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], DataError> {
        if self.pos + n > self.buf.len() {
            return Err(DataError::Truncated { what, needed: self.pos + n - self.buf.len() });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, DataError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, DataError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f32(&mut self, what: &'static str) -> Result<f32, DataError> {
        Ok(f32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

fn check_finite_on_write(values: &[f64]) -> Result<(), DataError> {
    if let Some(record) = values.iter().position(|v| !v.is_finite()) {
        return Err(DataError::NaNFeature { record });
    }
    Ok(())
}

/// Write an embedding dataset. `inputs` must be rank-2 `(n, features)`.
pub fn write_pemb(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let sp = dataset.inputs.shape();
    assert_eq!(sp.len(), 2, "PEMB stores (n, features) embeddings");
    check_finite_on_write(dataset.inputs.data())?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&PEMB_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(sp[0] as u64).to_le_bytes());
    buf.extend_from_slice(&(sp[1] as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.num_classes as u32).to_le_bytes());
    for &l in &dataset.labels {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for &v in dataset.inputs.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Write a token dataset. `inputs` must be rank-3 `(n, tokens, dim)`.
pub fn write_ptok(dataset: &Dataset, path: &Path) -> Result<(), DataError> {
    let sp = dataset.inputs.shape();
    assert_eq!(sp.len(), 3, "PTOK stores (n, tokens, dim) grids");
    check_finite_on_write(dataset.inputs.data())?;
    let mut buf = Vec::new();
    buf.extend_from_slice(&PTOK_MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(sp[0] as u64).to_le_bytes());
    buf.extend_from_slice(&(sp[1] as u32).to_le_bytes());
    buf.extend_from_slice(&(sp[2] as u32).to_le_bytes());
    buf.extend_from_slice(&(dataset.num_classes as u32).to_le_bytes());
    for &l in &dataset.labels {
        buf.extend_from_slice(&(l as u32).to_le_bytes());
    }
    for &v in dataset.inputs.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

/// Load either format, detected by magic.
pub fn load(path: &Path) -> Result<Dataset, DataError> {
    let buf = std::fs::read(path)?;
    let mut r = Reader { buf: &buf, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("4 bytes");
    match magic {
        PEMB_MAGIC => read_pemb_body(r),
        PTOK_MAGIC => read_ptok_body(r),
        got => Err(DataError::BadMagic { expected: PEMB_MAGIC, got }),
    }
}

fn read_labels(
    r: &mut Reader,
    n: usize,
    num_classes: u32,
) -> Result<Vec<usize>, DataError> {
    let mut labels = Vec::with_capacity(n);
    for record in 0..n {
        let label = r.u32("label")?;
        if label >= num_classes {
            return Err(DataError::LabelOutOfRange { record, label, num_classes });
        }
        labels.push(label as usize);
    }
    Ok(labels)
}

fn read_features(r: &mut Reader, n: usize, per_record: usize) -> Result<Vec<f64>, DataError> {
    let mut data = Vec::with_capacity(n * per_record);
    for record in 0..n {
        for _ in 0..per_record {
            let v = r.f32("feature")?;
            if !v.is_finite() {
                return Err(DataError::NaNFeature { record });
            }
            data.push(f64::from(v));
        }
    }
    Ok(data)
}

fn check_consumed(r: &Reader) -> Result<(), DataError> {
    if r.pos != r.buf.len() {
        // Extra bytes mean the header lied about the record count.
        return Err(DataError::Truncated { what: "end of file", needed: 0 });
    }
    Ok(())
}

fn read_pemb_body(mut r: Reader) -> Result<Dataset, DataError> {
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(DataError::BadVersion(version));
    }
    let n = r.u64("record count")? as usize;
    let f = r.u32("feature dim")? as usize;
    let k = r.u32("class count")?;
    let labels = read_labels(&mut r, n, k)?;
    let data = read_features(&mut r, n, f)?;
    check_consumed(&r)?;
    Ok(Dataset {
        inputs: Tensor::from_vec(vec![n, f], data).expect("validated dims"),
        labels,
        num_classes: k as usize,
    })
}

fn read_ptok_body(mut r: Reader) -> Result<Dataset, DataError> {
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(DataError::BadVersion(version));
    }
    let n = r.u64("record count")? as usize;
    let t = r.u32("tokens")? as usize;
    let d = r.u32("token dim")? as usize;
    let k = r.u32("class count")?;
    let labels = read_labels(&mut r, n, k)?;
    let data = read_features(&mut r, n, t * d)?;
    check_consumed(&r)?;
    Ok(Dataset {
        inputs: Tensor::from_vec(vec![n, t, d], data).expect("validated dims"),
        labels,
        num_classes: k as usize,
    })
}

/// Dump an index's per-class dictionaries as a PEMB file for inspection;
/// entries appear class-major in insertion order, labeled by class.
pub fn dump_index(index: &ClassIndex, path: &Path) -> Result<(), DataError> {
    let entries = index.entries();
    let mut labels = Vec::with_capacity(entries.len());
    let mut data = Vec::with_capacity(entries.len() * index.dim());
    for (_, class, feat) in &entries {
        labels.push(*class);
        data.extend_from_slice(feat);
    }
    let dataset = Dataset {
        inputs: Tensor::from_vec(vec![labels.len(), index.dim()], data).expect("flat rows"),
        labels,
        num_classes: index.num_classes(),
    };
    write_pemb(&dataset, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_pemb(n: usize, f: usize, k: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Values pass through f32 so the round trip is exact.
        let data: Vec<f64> =
            (0..n * f).map(|_| f64::from(rng.gen::<f32>() * 4.0 - 2.0)).collect();
        let labels: Vec<usize> = (0..n).map(|i| i % k).collect();
        Dataset { inputs: Tensor::from_vec(vec![n, f], data).unwrap(), labels, num_classes: k }
    }

    #[test]
    fn pemb_write_read_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.pemb");
        let p2 = dir.path().join("b.pemb");
        let ds = sample_pemb(17, 5, 3, 1);
        write_pemb(&ds, &p1).unwrap();
        let loaded = load(&p1).unwrap();
        assert_eq!(loaded.labels, ds.labels);
        assert_eq!(loaded.num_classes, 3);
        write_pemb(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn ptok_write_read_write_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ptok");
        let p2 = dir.path().join("b.ptok");
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (n, t, d, k) = (9, 3, 4, 2);
        let data: Vec<f64> = (0..n * t * d).map(|_| f64::from(rng.gen::<f32>())).collect();
        let ds = Dataset {
            inputs: Tensor::from_vec(vec![n, t, d], data).unwrap(),
            labels: (0..n).map(|i| i % k).collect(),
            num_classes: k,
        };
        write_ptok(&ds, &p1).unwrap();
        let loaded = load(&p1).unwrap();
        assert_eq!(loaded.inputs.shape(), &[n, t, d]);
        write_ptok(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn malformed_files_give_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.pemb");
        let ds = sample_pemb(6, 3, 2, 3);
        write_pemb(&ds, &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        // Bad magic.
        let mut bad = good.clone();
        bad[0] = b'Q';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(DataError::BadMagic { .. })));

        // Bad version.
        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(DataError::BadVersion(9))));

        // Truncated payload.
        std::fs::write(&path, &good[..good.len() - 3]).unwrap();
        assert!(matches!(load(&path), Err(DataError::Truncated { .. })));

        // Label out of range: first label lives right after the 24-byte
        // header (magic 4, version 4, count 8, dim 4, classes 4).
        let mut bad = good.clone();
        bad[24..28].copy_from_slice(&7u32.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            load(&path),
            Err(DataError::LabelOutOfRange { record: 0, label: 7, num_classes: 2 })
        ));

        // NaN feature: features start after header + 6 labels.
        let mut bad = good.clone();
        let feat0 = 24 + 6 * 4;
        bad[feat0..feat0 + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(load(&path), Err(DataError::NaNFeature { record: 0 })));
    }

    #[test]
    fn index_dump_round_trips_through_pemb() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dict.pemb");
        let mut index = ClassIndex::new(2, 3);
        index.insert(10, 2, &[1.0, 2.0]).unwrap();
        index.insert(11, 0, &[3.0, 4.0]).unwrap();
        index.insert(12, 2, &[5.0, 6.0]).unwrap();
        dump_index(&index, &path).unwrap();
        let ds = load(&path).unwrap();
        assert_eq!(ds.labels, vec![0, 2, 2]); // class-major
        assert_eq!(ds.inputs.data(), &[3.0, 4.0, 1.0, 2.0, 5.0, 6.0]);
    }
}
