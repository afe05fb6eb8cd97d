use std::fs;
use std::path::Path;

use super::trainer::predict_class;
use crate::data::{extract_patches, HsiCube, PcaModel};
use crate::error::{invalid, Error, Result};
use crate::model::{PyFormerConfig, PyFormerParams};

/// Fixed class colors; class k uses entry (k - 1) mod 16.
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 212],
    [0, 128, 128],
    [220, 190, 255],
    [170, 110, 40],
    [255, 250, 200],
    [128, 0, 0],
    [170, 255, 195],
];

pub fn class_color(class: u16) -> [u8; 3] {
    if class == 0 {
        [0, 0, 0]
    } else {
        PALETTE[(class as usize - 1) % PALETTE.len()]
    }
}

/// 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    /// Binary portable pixmap (P6) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(invalid!("truncated PPM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P6" {
            return Err(invalid!("not a binary PPM: magic {:?}", fields[0]));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| invalid!("bad PPM header field {s:?}"));
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(invalid!("PPM maxval {maxval}, expected 255"));
        }
        // exactly one whitespace byte separates the header from the raster
        let body = &bytes[pos + 1..];
        if body.len() != width * height * 3 {
            return Err(invalid!("PPM raster has {} bytes, expected {}", body.len(), width * height * 3));
        }
        Ok(RgbImage { width, height, pixels: body.to_vec() })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

/// Per-pixel predictions (0 where no prediction is made) and their rendering.
#[derive(Clone, Debug)]
pub struct ClassMap {
    pub predictions: Vec<u16>,
    pub image: RgbImage,
}

/// Predicts every labeled pixel that has a full window; everything else is
/// drawn black.
pub fn render_map(params: &PyFormerParams, cfg: &PyFormerConfig, cube: &HsiCube, pca: &PcaModel) -> Result<ClassMap> {
    let patches = extract_patches(cube, pca, cfg.patch_size)?;
    let (h, w) = (cube.height(), cube.width());
    let mut predictions = vec![0u16; h * w];
    for (&(r, c), patch) in patches.centers.iter().zip(&patches.patches) {
        predictions[r * w + c] = predict_class(params, cfg, patch)?;
    }
    let pixels = predictions.iter().flat_map(|&p| class_color(p)).collect();
    Ok(ClassMap { predictions, image: RgbImage { width: w, height: h, pixels } })
}
