//! On-disk series format.
//!
//! A series directory holds `manifest.json` plus one or more raw payload
//! chunks. Each chunk is little-endian `f32` in `[T, V, H, W]` order and
//! covers up to [`CHUNK_STEPS`] consecutive snapshots (one 365-day year of
//! 6-hourly data). The manifest records the catalog, grid, time axis and a
//! SHA-256 digest per chunk.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DatasetError, Series, StateTensor, VariableCatalog, STEP_HOURS};
use crate::grids::LatLonGrid;

pub const FORMAT_NAME: &str = "stepcast-series";
pub const FORMAT_VERSION: u32 = 1;
pub const CHUNK_STEPS: usize = 1460;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub file: String,
    pub start: usize,
    pub len: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub dtype: String,
    pub layout: String,
    pub catalog: VariableCatalog,
    pub channel_labels: Vec<String>,
    pub n_channels: usize,
    pub grid: LatLonGrid,
    pub start_hours: i64,
    pub step_hours: i64,
    pub n_times: usize,
    pub normalized: bool,
    pub chunks: Vec<ChunkEntry>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_series(dir: &Path, series: &Series) -> Result<(), DatasetError> {
    fs::create_dir_all(dir)?;
    let mut chunks = Vec::new();
    for (n, block) in series.states.chunks(CHUNK_STEPS).enumerate() {
        let mut bytes = Vec::with_capacity(block.len() * block[0].values().len() * 4);
        for state in block {
            for v in state.values() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        let file = format!("chunk_{n:04}.bin");
        fs::write(dir.join(&file), &bytes)?;
        chunks.push(ChunkEntry {
            file,
            start: n * CHUNK_STEPS,
            len: block.len(),
            sha256: sha256_hex(&bytes),
        });
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        dtype: "f32le".into(),
        layout: "TVHW".into(),
        catalog: series.catalog.clone(),
        channel_labels: series.catalog.labels(),
        n_channels: series.catalog.n_channels(),
        grid: series.grid.clone(),
        start_hours: series.states.first().map_or(0, |s| s.valid_time),
        step_hours: STEP_HOURS,
        n_times: series.len(),
        normalized: series.normalized(),
        chunks,
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DatasetError> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    if manifest.format != FORMAT_NAME {
        return Err(DatasetError::Format(format!("unknown format '{}'", manifest.format)));
    }
    if manifest.version != FORMAT_VERSION {
        return Err(DatasetError::Version {
            found: manifest.version,
            expected: FORMAT_VERSION,
        });
    }
    if manifest.dtype != "f32le" || manifest.layout != "TVHW" {
        return Err(DatasetError::Format(format!(
            "unsupported dtype/layout {}/{}",
            manifest.dtype, manifest.layout
        )));
    }
    if manifest.step_hours != STEP_HOURS {
        return Err(DatasetError::Format(format!("step of {}h is not supported", manifest.step_hours)));
    }
    if manifest.n_channels != manifest.catalog.n_channels() {
        return Err(DatasetError::Format(format!(
            "manifest declares {} channels but its catalog has {}",
            manifest.n_channels,
            manifest.catalog.n_channels()
        )));
    }
    Ok(manifest)
}

pub fn read_series(dir: &Path) -> Result<Series, DatasetError> {
    let m = read_manifest(dir)?;
    let shape = [m.n_channels, m.grid.n_lat(), m.grid.n_lon()];
    let per_state = shape.iter().product::<usize>();
    let mut states = Vec::with_capacity(m.n_times);
    let mut expected_start = 0;
    for chunk in &m.chunks {
        if chunk.start != expected_start {
            return Err(DatasetError::Format(format!("chunk {} is out of order", chunk.file)));
        }
        let bytes = fs::read(dir.join(&chunk.file))?;
        let want = chunk.len * per_state * 4;
        if bytes.len() < want {
            return Err(DatasetError::Truncated {
                file: chunk.file.clone(),
                expected: want,
                found: bytes.len(),
            });
        }
        if bytes.len() != want {
            return Err(DatasetError::Format(format!(
                "{} holds {} bytes, manifest implies {want}",
                chunk.file,
                bytes.len()
            )));
        }
        if sha256_hex(&bytes) != chunk.sha256 {
            return Err(DatasetError::Checksum(chunk.file.clone()));
        }
        for (k, raw) in bytes.chunks_exact(per_state * 4).enumerate() {
            let values = raw
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            let t = chunk.start + k;
            let valid_time = m.start_hours + STEP_HOURS * t as i64;
            states.push(StateTensor::new(values, shape, valid_time, m.normalized)?);
        }
        expected_start += chunk.len;
    }
    if states.len() != m.n_times {
        return Err(DatasetError::Format(format!(
            "manifest declares {} times, payload holds {}",
            m.n_times,
            states.len()
        )));
    }
    Series::new(m.catalog, m.grid, states)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_atmosphere, SynthConfig};

    fn sample() -> Series {
        synth_atmosphere(&SynthConfig::toy(11, 5)).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let s = sample();
        write_series(dir.path(), &s).unwrap();
        let back = read_series(dir.path()).unwrap();
        assert_eq!(back, s);
        for (a, b) in s.states.iter().zip(&back.states) {
            let bits_a: Vec<u32> = a.values().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u32> = b.values().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn corrupted_byte_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), &sample()).unwrap();
        let path = dir.path().join("chunk_0000.bin");
        let mut bytes = fs::read(&path).unwrap();
        bytes[100] ^= 0x01;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_series(dir.path()), Err(DatasetError::Checksum(_))));
    }

    #[test]
    fn truncated_payload_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), &sample()).unwrap();
        let path = dir.path().join("chunk_0000.bin");
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_series(dir.path()), Err(DatasetError::Truncated { .. })));
    }

    #[test]
    fn channel_count_mismatch_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), &sample()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m.n_channels = 7;
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(read_series(dir.path()), Err(DatasetError::Format(_))));
    }

    #[test]
    fn version_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), &sample()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let mut m: Manifest = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        m.version = 99;
        fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert!(matches!(
            read_series(dir.path()),
            Err(DatasetError::Version { found: 99, expected: 1 })
        ));
    }

    #[test]
    fn multi_chunk_series() {
        let s = synth_atmosphere(&SynthConfig {
            n_lat: 4,
            n_lon: 8,
            max_wavenumber: 2,
            ..SynthConfig::toy(2, CHUNK_STEPS + 3)
        })
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_series(dir.path(), &s).unwrap();
        let m = read_manifest(dir.path()).unwrap();
        assert_eq!(m.chunks.len(), 2);
        assert_eq!(m.chunks[1].len, 3);
        assert_eq!(read_series(dir.path()).unwrap(), s);
    }
}
