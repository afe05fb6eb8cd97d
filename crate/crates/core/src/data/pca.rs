use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::HsiCube;
use crate::error::{invalid, Result};

/// Standardized PCA band reduction fitted over every pixel of a cube.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `b_star` rows of length `bands`, orthonormal, by descending eigenvalue.
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the kept components.
    pub eigenvalues: Vec<f64>,
    pub explained_fraction: f64,
}

impl PcaModel {
    pub fn bands(&self) -> usize {
        self.mean.len()
    }

    pub fn b_star(&self) -> usize {
        self.components.len()
    }

    pub fn standardize(&self, spectrum: &[f32]) -> Vec<f64> {
        spectrum
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(&x, (m, s))| (x as f64 - m) / s)
            .collect()
    }

    pub fn project(&self, spectrum: &[f32]) -> Vec<f64> {
        let z = self.standardize(spectrum);
        self.components.iter().map(|row| row.iter().zip(&z).map(|(a, b)| a * b).sum()).collect()
    }

    /// Maps reduced coordinates back into standardized band space.
    pub fn reconstruct(&self, reduced: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.bands()];
        for (row, &y) in self.components.iter().zip(reduced) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += a * y;
            }
        }
        out
    }

    /// Projects every pixel; result is `height * width * b_star` values in
    /// band-interleaved-by-pixel order.
    pub fn project_cube(&self, cube: &HsiCube) -> Result<Vec<f64>> {
        if cube.bands() != self.bands() {
            return Err(invalid!("PCA fitted on {} bands, cube has {}", self.bands(), cube.bands()));
        }
        let mut out = Vec::with_capacity(cube.height() * cube.width() * self.b_star());
        for px in cube.reflectance().chunks_exact(cube.bands()) {
            out.extend(self.project(px));
        }
        Ok(out)
    }
}

pub fn fit_pca(cube: &HsiCube, b_star: usize) -> Result<PcaModel> {
    let bands = cube.bands();
    if b_star == 0 || b_star > bands {
        return Err(invalid!("reduced band count {b_star} must lie in 1..={bands}"));
    }
    let pixels = cube.height() * cube.width();
    if pixels < bands {
        return Err(invalid!("PCA needs at least {bands} pixels, cube has {pixels}"));
    }
    let n = pixels as f64;
    let mut mean = vec![0.0; bands];
    for px in cube.reflectance().chunks_exact(bands) {
        for (m, &x) in mean.iter_mut().zip(px) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; bands];
    for px in cube.reflectance().chunks_exact(bands) {
        for ((v, &x), m) in var.iter_mut().zip(px).zip(&mean) {
            *v += (x as f64 - m).powi(2);
        }
    }
    let scale: Vec<f64> = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();

    let mut cov = DMatrix::<f64>::zeros(bands, bands);
    let mut z = vec![0.0; bands];
    for px in cube.reflectance().chunks_exact(bands) {
        for b in 0..bands {
            z[b] = (px[b] as f64 - mean[b]) / scale[b];
        }
        for i in 0..bands {
            for j in i..bands {
                cov[(i, j)] += z[i] * z[j];
            }
        }
    }
    for i in 0..bands {
        for j in i..bands {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }

    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..bands).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let mut components = Vec::with_capacity(b_star);
    let mut eigenvalues = Vec::with_capacity(b_star);
    for &idx in order.iter().take(b_star) {
        let mut row: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let lead = row
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
            .map(|(i, _)| i)
            .unwrap_or(0);
        if row[lead] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(row);
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    let kept: f64 = eigenvalues.iter().sum();
    let explained_fraction = if total > 0.0 { (kept / total).min(1.0) } else { 1.0 };
    Ok(PcaModel { mean, scale, components, eigenvalues, explained_fraction })
}
