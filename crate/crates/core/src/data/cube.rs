use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub const CUBE_MAGIC: &str = "HSICUBE1";
pub const CUBE_DTYPE: &str = "f32le";

/// Hyperspectral raster with per-pixel ground truth.
///
/// Reflectance is stored band-interleaved-by-pixel: the spectrum of pixel
/// `(r, c)` occupies `[(r * width + c) * bands, .. + bands)`. Label 0 marks
/// an unlabeled pixel; classes are `1..=class_names.len()`.
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    reflectance: Vec<f32>,
    labels: Vec<u16>,
    class_names: Vec<String>,
}

impl HsiCube {
    pub fn new(
        height: usize,
        width: usize,
        bands: usize,
        reflectance: Vec<f32>,
        labels: Vec<u16>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(invalid!("cube extents must be positive, got {height}x{width}x{bands}"));
        }
        if reflectance.len() != height * width * bands {
            return Err(invalid!(
                "reflectance has {} values, {height}x{width}x{bands} needs {}",
                reflectance.len(),
                height * width * bands
            ));
        }
        if labels.len() != height * width {
            return Err(invalid!("label raster has {} values, expected {}", labels.len(), height * width));
        }
        let k = class_names.len();
        if let Some(bad) = labels.iter().find(|&&l| l as usize > k) {
            return Err(invalid!("label value {bad} exceeds the {k} named classes"));
        }
        Ok(HsiCube { height, width, bands, reflectance, labels, class_names })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn reflectance(&self) -> &[f32] {
        &self.reflectance
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.width + col) * self.bands;
        &self.reflectance[start..start + self.bands]
    }

    /// Pixel count per class, index 0 holding the unlabeled count.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes() + 1];
        for &l in &self.labels {
            counts[l as usize] += 1;
        }
        counts
    }

    /// Writes the JSON header at `header_path` and the two raw rasters next
    /// to it.
    pub fn save(&self, header_path: &Path) -> Result<()> {
        let stem = header_path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| invalid!("header path {} has no file stem", header_path.display()))?;
        let dir = header_path.parent().unwrap_or_else(|| Path::new(""));
        let header = CubeHeader {
            magic: CUBE_MAGIC.to_string(),
            m: self.height,
            n: self.width,
            b: self.bands,
            dtype: CUBE_DTYPE.to_string(),
            data_file: format!("{stem}.data.bin"),
            label_file: format!("{stem}.labels.bin"),
            class_names: self.class_names.clone(),
        };

        let data: Vec<u8> = self.reflectance.iter().flat_map(|v| v.to_le_bytes()).collect();
        let labels: Vec<u8> = self.labels.iter().flat_map(|v| v.to_le_bytes()).collect();
        let data_path = dir.join(&header.data_file);
        let label_path = dir.join(&header.label_file);
        fs::write(&data_path, data).map_err(|e| Error::io(&data_path, e))?;
        fs::write(&label_path, labels).map_err(|e| Error::io(&label_path, e))?;
        let mut text = serde_json::to_string_pretty(&header).map_err(|e| Error::json(header_path, e))?;
        text.push('\n');
        fs::write(header_path, text).map_err(|e| Error::io(header_path, e))
    }

    pub fn load(header_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(header_path).map_err(|e| Error::io(header_path, e))?;
        let header: CubeHeader = serde_json::from_str(&text).map_err(|e| Error::json(header_path, e))?;
        if header.magic != CUBE_MAGIC {
            return Err(Error::format(header_path, format!("bad magic {:?}", header.magic)));
        }
        if header.dtype != CUBE_DTYPE {
            return Err(Error::format(header_path, format!("unsupported dtype {:?}", header.dtype)));
        }
        let dir = header_path.parent().unwrap_or_else(|| Path::new(""));
        let (m, n, b) = (header.m, header.n, header.b);

        let data_path: PathBuf = dir.join(&header.data_file);
        let raw = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        let expected = m * n * b * 4;
        if raw.len() != expected {
            return Err(Error::format(
                &data_path,
                format!("expected {expected} bytes for {m}x{n}x{b} f32 raster, found {}", raw.len()),
            ));
        }
        let reflectance = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();

        let label_path: PathBuf = dir.join(&header.label_file);
        let raw = fs::read(&label_path).map_err(|e| Error::io(&label_path, e))?;
        let expected = m * n * 2;
        if raw.len() != expected {
            return Err(Error::format(
                &label_path,
                format!("expected {expected} bytes for {m}x{n} u16 labels, found {}", raw.len()),
            ));
        }
        let labels = raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect();

        HsiCube::new(m, n, b, reflectance, labels, header.class_names)
            .map_err(|e| Error::format(header_path, e.to_string()))
    }
}

#[derive(Serialize, Deserialize)]
struct CubeHeader {
    magic: String,
    #[serde(rename = "M")]
    m: usize,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "B")]
    b: usize,
    dtype: String,
    data_file: String,
    label_file: String,
    class_names: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> HsiCube {
        let refl = (0..12).map(|i| i as f32 * 0.25 - 1.0).collect();
        HsiCube::new(2, 2, 3, refl, vec![0, 1, 2, 1], vec!["a".into(), "b".into()]).unwrap()
    }

    #[test]
    fn rejects_label_beyond_classes() {
        let err = HsiCube::new(1, 2, 1, vec![0.0; 2], vec![1, 3], vec!["a".into(), "b".into()]);
        assert!(err.is_err());
    }

    #[test]
    fn raw_file_is_48_bytes_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        let cube = tiny();
        cube.save(&path).unwrap();
        assert_eq!(fs::metadata(dir.path().join("scene.data.bin")).unwrap().len(), 48);
        assert_eq!(HsiCube::load(&path).unwrap(), cube);
    }

    #[test]
    fn short_raw_file_names_byte_counts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        tiny().save(&path).unwrap();
        let data = dir.path().join("scene.data.bin");
        let mut raw = fs::read(&data).unwrap();
        raw.pop();
        fs::write(&data, raw).unwrap();
        let msg = HsiCube::load(&path).unwrap_err().to_string();
        assert!(msg.contains("48") && msg.contains("47"), "{msg}");
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(HsiCube::load(&dir.path().join("nope.json")).is_err());
    }
}
