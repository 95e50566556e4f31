use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GridGeometry, VolumeGrid};
use crate::error::{Error, Result};
use crate::io::{read_json, write_json};

const VALUE_TYPE: &str = "f32le";

#[derive(Serialize, Deserialize)]
struct VolumeHeader {
    dims: [usize; 3],
    spacing: f64,
    origin: [f64; 3],
    value_type: String,
    /// Stored for voxels that never received a value.
    empty_value: f32,
}

/// A reconstructed scalar field as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    pub geometry: GridGeometry,
    pub values: Vec<f32>,
}

impl Volume {
    pub fn from_grid(grid: &VolumeGrid) -> Self {
        Volume {
            geometry: grid.geometry,
            values: grid.value.iter().map(|&v| if v.is_nan() { 0.0 } else { v as f32 }).collect(),
        }
    }

    pub fn mask_above(&self, threshold: f32) -> Vec<bool> {
        self.values.iter().map(|&v| v > threshold).collect()
    }
}

/// Writes `volume.json` and `volume.raw` (x fastest) into `dir`.
pub fn write_volume(dir: &Path, volume: &Volume) -> Result<()> {
    let g = volume.geometry;
    write_json(
        &dir.join("volume.json"),
        &VolumeHeader {
            dims: g.dims,
            spacing: g.spacing,
            origin: g.origin,
            value_type: VALUE_TYPE.into(),
            empty_value: 0.0,
        },
    )?;
    let mut w = BufWriter::new(File::create(dir.join("volume.raw"))?);
    for v in &volume.values {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_volume(dir: &Path) -> Result<Volume> {
    let header_path = dir.join("volume.json");
    let h: VolumeHeader = read_json(&header_path)?;
    if h.value_type != VALUE_TYPE {
        return Err(Error::parse(&header_path, 1, format!("unsupported value_type {:?}", h.value_type)));
    }
    let geometry = GridGeometry::new(h.dims, h.spacing, h.origin)?;
    let raw_path = dir.join("volume.raw");
    let mut bytes = Vec::new();
    File::open(&raw_path)?.read_to_end(&mut bytes)?;
    if bytes.len() != 4 * geometry.len() {
        return Err(Error::parse(
            &raw_path,
            0,
            format!("expected {} bytes, found {}", 4 * geometry.len(), bytes.len()),
        ));
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
    Ok(Volume { geometry, values })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let geometry = GridGeometry::new([3, 2, 2], 0.5, [1.0, -2.0, 3.5]).unwrap();
        let mut grid = VolumeGrid::new(geometry);
        grid.value[0] = 12.5;
        grid.value[7] = 255.0;
        let vol = Volume::from_grid(&grid);
        let dir = tempfile::tempdir().unwrap();
        write_volume(dir.path(), &vol).unwrap();
        assert_eq!(read_volume(dir.path()).unwrap(), vol);
        let raw = dir.path().join("volume.raw");
        let len = std::fs::metadata(&raw).unwrap().len();
        assert_eq!(len, 48);
        std::fs::OpenOptions::new().write(true).open(&raw).unwrap().set_len(len - 4).unwrap();
        assert!(matches!(read_volume(dir.path()), Err(Error::Parse { .. })));
    }
}
