use ndarray::Array2;

use crate::error::{Error, Result};

/// `ln(max(e, floor))` elementwise.
pub fn log_energies(energies: &[f64], floor: f64) -> Vec<f64> {
    energies.iter().map(|&e| e.max(floor).ln()).collect()
}

/// Orthonormal DCT-II basis of a fixed length.
#[derive(Debug, Clone)]
pub struct Dct2 {
    len: usize,
    // basis[k * len + n]
    basis: Vec<f64>,
}

impl Dct2 {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(Error::param("DCT length must be positive"));
        }
        let m = len as f64;
        let mut basis = Vec::with_capacity(len * len);
        for k in 0..len {
            let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
            for n in 0..len {
                let arg = std::f64::consts::PI * k as f64 * (2 * n + 1) as f64 / (2.0 * m);
                basis.push(scale * arg.cos());
            }
        }
        Ok(Dct2 { len, basis })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Leading `keep` coefficients of the transform of `v`.
    pub fn forward(&self, v: &[f64], keep: usize) -> Result<Vec<f64>> {
        if v.len() != self.len {
            return Err(Error::shape(format!(
                "DCT of length {} given {} values",
                self.len,
                v.len()
            )));
        }
        if keep == 0 || keep > self.len {
            return Err(Error::param(format!("keep must be in 1..={}, got {keep}", self.len)));
        }
        Ok((0..keep)
            .map(|k| {
                let row = &self.basis[k * self.len..(k + 1) * self.len];
                row.iter().zip(v).map(|(b, x)| b * x).sum()
            })
            .collect())
    }

    /// Inverse transform (DCT-III). Missing trailing coefficients are taken as zero.
    pub fn inverse(&self, coeffs: &[f64]) -> Result<Vec<f64>> {
        if coeffs.len() > self.len {
            return Err(Error::shape(format!(
                "{} coefficients for a DCT of length {}",
                coeffs.len(),
                self.len
            )));
        }
        Ok((0..self.len)
            .map(|n| {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * self.basis[k * self.len + n])
                    .sum()
            })
            .collect())
    }
}

pub fn dct2_orthonormal(v: &[f64], keep: usize) -> Result<Vec<f64>> {
    Dct2::new(v.len())?.forward(v, keep)
}

/// Regression deltas along the time axis (columns), replicating edge columns.
pub fn delta_features(features: &Array2<f64>, half_width: usize) -> Result<Array2<f64>> {
    let (rows, cols) = features.dim();
    if half_width == 0 {
        return Err(Error::param("delta half-width must be at least 1"));
    }
    if cols <= 2 * half_width {
        return Err(Error::SignalTooShort {
            len: cols,
            needed: 2 * half_width + 1,
        });
    }
    let denom = 2.0 * (1..=half_width).map(|k| (k * k) as f64).sum::<f64>();
    let last = cols as isize - 1;
    let at = |t: isize| t.clamp(0, last) as usize;
    let mut out = Array2::zeros((rows, cols));
    for r in 0..rows {
        for t in 0..cols as isize {
            let num: f64 = (1..=half_width as isize)
                .map(|k| k as f64 * (features[[r, at(t + k)]] - features[[r, at(t - k)]]))
                .sum();
            out[[r, t as usize]] = num / denom;
        }
    }
    Ok(out)
}
