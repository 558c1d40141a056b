//! On-disk dataset layout.
//!
//! A dataset directory holds, for each split `train` and `test`:
//!
//! * `<split>.cmeb`: teacher embeddings (`CMEB` format).
//! * `<split>.cmwd`: IMU windows (`CMWD` format).
//! * `<split>.manifest.jsonl`: one `{"id", "label", "offset"}` record per
//!   sample, where `offset` is the byte offset of the sample's record in the
//!   window file.
//!
//! plus `dataset.json` with the shared shape metadata.
//!
//! All binary integers and floats are little-endian.
//!
//! ```text
//! CMEB: "CMEB" | version u32 | count u64 | dim u32 | count × (id u64, dim × f64)
//! CMWD: "CMWD" | version u32 | count u64 | channels u32 | len u32 | rate f64
//!       | count × (id u64, channels × len × f64, channel-major)
//! ```

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, PairedSample};
use crate::binio::{self, Reader};
use crate::encoder::ImuWindow;
use crate::error::{Error, Result};
use crate::queue::ENQUEUE_NORM_TOL;
use crate::tensor::{RealVec, UnitVec};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"CMEB";
pub const EMBEDDING_VERSION: u32 = 1;
pub const WINDOW_MAGIC: [u8; 4] = *b"CMWD";
pub const WINDOW_VERSION: u32 = 1;

const EMBEDDING_HEADER: usize = 4 + 4 + 8 + 4;
const WINDOW_HEADER: usize = 4 + 4 + 8 + 4 + 4 + 8;

pub fn write_embeddings(path: &Path, embeddings: &[UnitVec], ids: &[u64]) -> Result<()> {
    binio::write_file(path, &encode_embeddings(embeddings, ids)?)
}

fn encode_embeddings(embeddings: &[UnitVec], ids: &[u64]) -> Result<Vec<u8>> {
    if embeddings.len() != ids.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} embeddings but {} ids",
            embeddings.len(),
            ids.len()
        )));
    }
    let dim = embeddings.first().map_or(0, UnitVec::dim);
    let mut out = Vec::with_capacity(EMBEDDING_HEADER + embeddings.len() * (8 + 8 * dim));
    out.extend_from_slice(&EMBEDDING_MAGIC);
    out.extend_from_slice(&EMBEDDING_VERSION.to_le_bytes());
    out.extend_from_slice(&(embeddings.len() as u64).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    for (e, id) in embeddings.iter().zip(ids) {
        if e.dim() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                found: e.dim(),
            });
        }
        let norm = e.norm();
        if (norm - 1.0).abs() > ENQUEUE_NORM_TOL {
            return Err(Error::NotNormalized { norm });
        }
        out.extend_from_slice(&id.to_le_bytes());
        binio::write_f64s(&mut out, e.as_slice()).expect("Vec write");
    }
    Ok(out)
}

fn decode_embeddings(bytes: &[u8]) -> Result<(Vec<u64>, Vec<Vec<f64>>)> {
    let mut r = Reader::new(bytes);
    r.magic(EMBEDDING_MAGIC)?;
    r.version(EMBEDDING_VERSION)?;
    let count = r.u64()? as usize;
    let dim = r.u32()? as usize;
    // Reject impossible counts before allocating.
    if count.saturating_mul(8 + 8 * dim) > bytes.len() - r.position() {
        return Err(Error::TruncatedFile);
    }
    let mut ids = Vec::with_capacity(count);
    let mut vecs = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(r.u64()?);
        vecs.push(r.f64s(dim)?);
    }
    r.finish()?;
    Ok((ids, vecs))
}

/// Reads a `CMEB` file, rejecting any vector whose norm is off by more than `1e-6`.
pub fn read_embeddings(path: &Path) -> Result<(Vec<u64>, Vec<UnitVec>)> {
    let (ids, vecs) = decode_embeddings(&binio::read_file(path)?)?;
    let units = vecs
        .into_iter()
        .map(|v| UnitVec::new(v, ENQUEUE_NORM_TOL))
        .collect::<Result<_>>()?;
    Ok((ids, units))
}

/// Reads a `CMEB` file without the norm check, e.g. before a
/// [`RandomProjection`](super::RandomProjection).
pub fn read_embeddings_raw(path: &Path) -> Result<(Vec<u64>, Vec<RealVec>)> {
    let (ids, vecs) = decode_embeddings(&binio::read_file(path)?)?;
    let reals = vecs.into_iter().map(RealVec::new).collect::<Result<_>>()?;
    Ok((ids, reals))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: u64,
    pub label: Option<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub channels: usize,
    pub window_len: usize,
    pub embed_dim: usize,
    pub sample_rate_hz: f64,
    pub train_count: usize,
    pub test_count: usize,
}

fn encode_windows(samples: &[PairedSample]) -> (Vec<u8>, Vec<u64>) {
    let (c, t, rate) = samples
        .first()
        .map_or((0, 0, 0.0), |s| (s.window.channels(), s.window.len(), s.window.sample_rate_hz()));
    let mut out = Vec::with_capacity(WINDOW_HEADER + samples.len() * (8 + 8 * c * t));
    out.extend_from_slice(&WINDOW_MAGIC);
    out.extend_from_slice(&WINDOW_VERSION.to_le_bytes());
    out.extend_from_slice(&(samples.len() as u64).to_le_bytes());
    out.extend_from_slice(&(c as u32).to_le_bytes());
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&rate.to_le_bytes());
    let mut offsets = Vec::with_capacity(samples.len());
    for s in samples {
        offsets.push(out.len() as u64);
        out.extend_from_slice(&s.id.to_le_bytes());
        binio::write_f64s(&mut out, s.window.samples()).expect("Vec write");
    }
    (out, offsets)
}

fn decode_window_at(bytes: &[u8], offset: u64, channels: usize, len: usize, rate: f64) -> Result<(u64, ImuWindow)> {
    let offset = usize::try_from(offset).map_err(|_| Error::TruncatedFile)?;
    if offset > bytes.len() {
        return Err(Error::TruncatedFile);
    }
    let mut r = Reader::new(&bytes[offset..]);
    let id = r.u64()?;
    let samples = r.f64s(channels * len)?;
    Ok((id, ImuWindow::new(channels, len, samples, rate)?))
}

fn split_paths(dir: &Path, split: &str) -> [std::path::PathBuf; 3] {
    [
        dir.join(format!("{split}.cmeb")),
        dir.join(format!("{split}.cmwd")),
        dir.join(format!("{split}.manifest.jsonl")),
    ]
}

fn write_split(dir: &Path, split: &str, data: &Dataset) -> Result<()> {
    let [emb_path, win_path, manifest_path] = split_paths(dir, split);
    let ids: Vec<u64> = data.samples.iter().map(|s| s.id).collect();
    let teachers: Vec<UnitVec> = data.samples.iter().map(|s| s.teacher.clone()).collect();
    write_embeddings(&emb_path, &teachers, &ids)?;
    let (window_bytes, offsets) = encode_windows(&data.samples);
    binio::write_file(&win_path, &window_bytes)?;
    let mut manifest = Vec::new();
    for (s, offset) in data.samples.iter().zip(offsets) {
        let rec = ManifestRecord {
            id: s.id,
            label: s.label,
            offset,
        };
        serde_json::to_writer(&mut manifest, &rec).expect("manifest record serializes");
        manifest.push(b'\n');
    }
    binio::write_file(&manifest_path, &manifest)
}

fn read_split(dir: &Path, split: &str, meta: &DatasetMeta) -> Result<Dataset> {
    let [emb_path, win_path, manifest_path] = split_paths(dir, split);
    let (emb_ids, teachers) = read_embeddings(&emb_path)?;
    let window_bytes = binio::read_file(&win_path)?;
    let mut r = Reader::new(&window_bytes);
    r.magic(WINDOW_MAGIC)?;
    r.version(WINDOW_VERSION)?;
    let count = r.u64()? as usize;
    let channels = r.u32()? as usize;
    let len = r.u32()? as usize;
    let rate = r.f64()?;
    if count != emb_ids.len() || (count > 0 && (channels, len) != (meta.channels, meta.window_len)) {
        return Err(Error::Malformed(format!(
            "{split}: window file ({count} × {channels}×{len}) disagrees with embeddings/metadata"
        )));
    }

    let file = fs::File::open(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut samples = Vec::with_capacity(count);
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&manifest_path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line).map_err(|e| {
            Error::Malformed(format!("{}:{}: {e}", manifest_path.display(), line_no + 1))
        })?;
        let index = samples.len();
        if index >= count || emb_ids[index] != rec.id {
            return Err(Error::Malformed(format!(
                "{split}: manifest record {} (id {}) does not line up with the embedding file",
                line_no + 1,
                rec.id
            )));
        }
        let (window_id, window) = decode_window_at(&window_bytes, rec.offset, channels, len, rate)?;
        if window_id != rec.id {
            return Err(Error::Malformed(format!(
                "{split}: offset {} holds window {window_id}, manifest says {}",
                rec.offset, rec.id
            )));
        }
        samples.push(PairedSample {
            id: rec.id,
            window,
            teacher: teachers[index].clone(),
            label: rec.label,
        });
    }
    if samples.len() != count {
        return Err(Error::Malformed(format!(
            "{split}: manifest has {} records, files hold {count}",
            samples.len()
        )));
    }
    Dataset::new(meta.num_classes, samples)
}

/// Writes both splits and `dataset.json` into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, train: &Dataset, test: &Dataset) -> Result<DatasetMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (channels, window_len, embed_dim) = train
        .shape()
        .or_else(|| test.shape())
        .ok_or(Error::EmptyInput)?;
    let sample_rate_hz = train
        .samples
        .first()
        .or(test.samples.first())
        .map(|s| s.window.sample_rate_hz())
        .unwrap_or_default();
    let meta = DatasetMeta {
        num_classes: train.num_classes,
        channels,
        window_len,
        embed_dim,
        sample_rate_hz,
        train_count: train.len(),
        test_count: test.len(),
    };
    write_split(dir, "train", train)?;
    write_split(dir, "test", test)?;
    let meta_path = dir.join("dataset.json");
    let mut f = fs::File::create(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    serde_json::to_writer_pretty(&mut f, &meta).expect("metadata serializes");
    f.write_all(b"\n").map_err(|e| Error::io(&meta_path, e))?;
    Ok(meta)
}

/// Reads `(meta, train, test)` from a dataset directory.
pub fn read_dataset(dir: &Path) -> Result<(DatasetMeta, Dataset, Dataset)> {
    let meta_path = dir.join("dataset.json");
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: DatasetMeta = serde_json::from_str(&text)
        .map_err(|e| Error::Malformed(format!("{}: {e}", meta_path.display())))?;
    let train = read_split(dir, "train", &meta)?;
    let test = read_split(dir, "test", &meta)?;
    Ok((meta, train, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SyntheticConfig};
    use crate::tensor::normalize_slice;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_units(n: usize, d: usize, seed: u64) -> Vec<UnitVec> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                normalize_slice(&v).unwrap()
            })
            .collect()
    }

    #[test]
    fn embeddings_round_trip_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cmeb");
        let units = random_units(1000, 24, 1);
        let ids: Vec<u64> = (0..1000).map(|i| i * 7 + 3).collect();
        write_embeddings(&path, &units, &ids).unwrap();
        let (rids, runits) = read_embeddings(&path).unwrap();
        assert_eq!(rids, ids);
        for (a, b) in units.iter().zip(&runits) {
            let abits: Vec<u64> = a.as_slice().iter().map(|v| v.to_bits()).collect();
            let bbits: Vec<u64> = b.as_slice().iter().map(|v| v.to_bits()).collect();
            assert_eq!(abits, bbits);
        }
        let bytes = fs::read(&path).unwrap();
        assert_eq!(&bytes[..4], b"CMEB");
        assert_eq!(bytes.len(), EMBEDDING_HEADER + 1000 * (8 + 24 * 8));
    }

    #[test]
    fn truncated_embedding_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cmeb");
        write_embeddings(&path, &random_units(10, 4, 2), &(0..10).collect::<Vec<_>>()).unwrap();
        let bytes = fs::read(&path).unwrap();
        for cut in [3, 10, EMBEDDING_HEADER, bytes.len() - 1] {
            fs::write(&path, &bytes[..cut]).unwrap();
            assert!(matches!(read_embeddings(&path), Err(Error::TruncatedFile)), "cut {cut}");
        }
    }

    #[test]
    fn header_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cmeb");
        let mut bytes = encode_embeddings(&random_units(2, 3, 3), &[0, 1]).unwrap();
        bytes[0] = b'Z';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_embeddings(&path), Err(Error::BadMagic { .. })));
        bytes[0] = b'C';
        bytes[4] = 2;
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_embeddings(&path),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }

    #[test]
    fn strict_read_rejects_unnormalized() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.cmeb");
        // Hand-build a file whose single vector has norm 0.5.
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CMEB");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&1u64.to_le_bytes());
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.extend_from_slice(&5u64.to_le_bytes());
        bytes.extend_from_slice(&0.3f64.to_le_bytes());
        bytes.extend_from_slice(&0.4f64.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_embeddings(&path), Err(Error::NotNormalized { .. })));
        let (ids, raw) = read_embeddings_raw(&path).unwrap();
        assert_eq!(ids, vec![5]);
        assert_eq!(raw[0].as_slice(), &[0.3, 0.4]);
    }

    #[test]
    fn write_rejects_bad_inputs() {
        let units = random_units(2, 3, 4);
        assert!(encode_embeddings(&units, &[1]).is_err());
        let mixed = vec![units[0].clone(), UnitVec::basis(2, 0)];
        assert!(matches!(
            encode_embeddings(&mixed, &[0, 1]),
            Err(Error::DimMismatch { .. })
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let cfg = SyntheticConfig {
            train_per_class: 4,
            test_per_class: 2,
            window_len: 16,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = write_dataset(dir.path(), &data.train, &data.test).unwrap();
        assert_eq!(meta.train_count, 20);
        let (meta2, train, test) = read_dataset(dir.path()).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(train, data.train);
        assert_eq!(test, data.test);

        let manifest = fs::read_to_string(dir.path().join("train.manifest.jsonl")).unwrap();
        let first: ManifestRecord = serde_json::from_str(manifest.lines().next().unwrap()).unwrap();
        assert_eq!(first.offset, WINDOW_HEADER as u64);
    }

    #[test]
    fn dataset_detects_inconsistent_manifest() {
        let cfg = SyntheticConfig {
            train_per_class: 2,
            test_per_class: 1,
            window_len: 8,
            ..SyntheticConfig::default()
        };
        let data = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(dir.path(), &data.train, &data.test).unwrap();
        let path = dir.path().join("test.manifest.jsonl");
        let text = fs::read_to_string(&path).unwrap();
        let truncated: String = text.lines().skip(1).map(|l| format!("{l}\n")).collect();
        fs::write(&path, truncated).unwrap();
        assert!(matches!(read_dataset(dir.path()), Err(Error::Malformed(_))));
    }
}
