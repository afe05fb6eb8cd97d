use super::{HsiCube, PcaModel};
use crate::error::{invalid, Result};
use crate::tensor::Tensor;

/// Row/column of a patch center.
pub type Center = (usize, usize);

/// Offset of the center pixel inside a window of side `s`. For odd sides this
/// is the usual `(s - 1) / 2`; even sides put the center just past the middle.
pub fn center_offset(s: usize) -> usize {
    s / 2
}

/// Top-left corner of the window centered at `center`.
pub fn window_origin(center: Center, s: usize) -> (usize, usize) {
    let h = center_offset(s);
    (center.0 - h, center.1 - h)
}

fn check_side(height: usize, width: usize, s: usize) -> Result<()> {
    if s == 0 {
        return Err(invalid!("patch side must be positive"));
    }
    if s > height || s > width {
        return Err(invalid!("patch side {s} exceeds the {height}x{width} scene"));
    }
    Ok(())
}

/// Count of window positions, `(M - S + 1)(N - S + 1)`.
pub fn total_positions(height: usize, width: usize, s: usize) -> Result<usize> {
    check_side(height, width, s)?;
    Ok((height - s + 1) * (width - s + 1))
}

/// Labeled centers of full windows, in row-major order, with their labels.
pub fn valid_centers(cube: &HsiCube, s: usize) -> Result<Vec<(Center, u16)>> {
    check_side(cube.height(), cube.width(), s)?;
    let h = center_offset(s);
    let mut out = Vec::new();
    for r in h..=cube.height() - s + h {
        for c in h..=cube.width() - s + h {
            let l = cube.label(r, c);
            if l != 0 {
                out.push(((r, c), l));
            }
        }
    }
    Ok(out)
}

/// Band-reduced windows around every labeled valid center.
#[derive(Clone, Debug)]
pub struct PatchSet {
    pub patch_size: usize,
    pub b_star: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub centers: Vec<Center>,
    /// One `[S, S, B*]` tensor per center.
    pub patches: Vec<Tensor>,
    pub center_labels: Vec<u16>,
    pub total_positions: usize,
}

impl PatchSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn index_of(&self, center: Center) -> Option<usize> {
        self.centers.binary_search(&center).ok()
    }
}

pub fn extract_patches(cube: &HsiCube, pca: &PcaModel, s: usize) -> Result<PatchSet> {
    let total = total_positions(cube.height(), cube.width(), s)?;
    let reduced = pca.project_cube(cube)?;
    Ok(cut_patches(cube, &reduced, pca.b_star(), s, total)?)
}

/// Windows of an already-projected raster (`height * width * b_star`, BIP).
pub fn cut_patches(cube: &HsiCube, reduced: &[f64], b_star: usize, s: usize, total: usize) -> Result<PatchSet> {
    let width = cube.width();
    if reduced.len() != cube.height() * width * b_star {
        return Err(invalid!("projected raster has {} values, expected {}", reduced.len(), cube.height() * width * b_star));
    }
    let labeled = valid_centers(cube, s)?;
    let mut centers = Vec::with_capacity(labeled.len());
    let mut patches = Vec::with_capacity(labeled.len());
    let mut center_labels = Vec::with_capacity(labeled.len());
    for (center, label) in labeled {
        let (r0, c0) = window_origin(center, s);
        let mut data = Vec::with_capacity(s * s * b_star);
        for r in r0..r0 + s {
            let start = (r * width + c0) * b_star;
            data.extend_from_slice(&reduced[start..start + s * b_star]);
        }
        patches.push(Tensor::new(vec![s, s, b_star], data)?);
        centers.push(center);
        center_labels.push(label);
    }
    Ok(PatchSet {
        patch_size: s,
        b_star,
        height: cube.height(),
        width,
        num_classes: cube.num_classes(),
        centers,
        patches,
        center_labels,
        total_positions: total,
    })
}
