//! Post-processing of saliency maps: per-feature importance, spectra and
//! plain-text PGM heatmaps.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over time and over all masks, per feature column.
pub fn mean_saliency_per_feature(masks: &[&Tensor]) -> Result<Vec<f64>> {
    let first = masks
        .first()
        .ok_or_else(|| Error::Invalid("no saliency maps".into()))?;
    if first.rank() != 2 {
        return Err(Error::shape("mean_saliency", format!("mask shape {:?}", first.shape())));
    }
    let (w, d) = first.dims2();
    let mut out = vec![0.0; d];
    for m in masks {
        if m.shape() != first.shape() {
            return Err(Error::shape(
                "mean_saliency",
                format!("{:?} vs {:?}", m.shape(), first.shape()),
            ));
        }
        for t in 0..w {
            for (o, v) in out.iter_mut().zip(m.row(t)) {
                *o += v;
            }
        }
    }
    let n = (w * masks.len()) as f64;
    Ok(out.into_iter().map(|v| v / n).collect())
}

/// One-sided magnitude spectrum; bin `k` has frequency `k / w` cycles per
/// step.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    pub magnitudes: Vec<f64>,
    /// Length of the transformed column.
    pub len: usize,
}

impl Spectrum {
    pub fn frequencies(&self) -> Vec<f64> {
        (0..self.magnitudes.len())
            .map(|k| k as f64 / self.len as f64)
            .collect()
    }
}

/// Direct DFT magnitudes `|X_k|`, `k = 0..=⌊w/2⌋`, of the mean-removed
/// column.
pub fn fft_magnitude(column: &[f64]) -> Result<Spectrum> {
    let n = column.len();
    if n < 2 {
        return Err(Error::Invalid(format!("spectrum needs at least 2 values, got {n}")));
    }
    let mean = column.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = column.iter().map(|v| v - mean).collect();
    let magnitudes = (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, x) in centered.iter().enumerate() {
                let angle = 2.0 * PI * ((k * t) % n) as f64 / n as f64;
                re += x * angle.cos();
                im -= x * angle.sin();
            }
            re.hypot(im)
        })
        .collect();
    Ok(Spectrum { magnitudes, len: n })
}

/// Energy of the whole two-sided spectrum reconstructed from one side,
/// `Σ_{k=0}^{w-1} |X_k|²`; by Parseval equal to `w · Σ x²` of the
/// mean-removed column.
pub fn spectral_energy(spec: &Spectrum) -> f64 {
    let n = spec.len;
    spec.magnitudes
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let mirrored = k != 0 && !(n.is_multiple_of(2) && k == n / 2);
            m * m * if mirrored { 2.0 } else { 1.0 }
        })
        .sum()
}

/// Share of non-DC energy held by the strongest non-DC bin; 0 for a flat
/// (all-zero) spectrum.
pub fn periodicity_score(spec: &Spectrum) -> f64 {
    let energies: Vec<f64> = spec.magnitudes.iter().skip(1).map(|m| m * m).collect();
    let total: f64 = energies.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    energies.iter().cloned().fold(0.0, f64::max) / total
}

/// `floor(m·255 + 0.5)` clamped to `0..=255`.
pub fn quantize(m: f64) -> u8 {
    (m * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Plain PGM (`P2`): width `D`, height `w`, maxval 255.
pub fn heatmap_pgm(mask: &Tensor) -> Result<String> {
    if mask.rank() != 2 {
        return Err(Error::shape("heatmap", format!("mask shape {:?}", mask.shape())));
    }
    if let Some(v) = mask.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Invalid(format!("mask value {v} outside [0, 1]")));
    }
    let (w, d) = mask.dims2();
    let mut out = format!("P2\n{d} {w}\n255\n");
    for t in 0..w {
        let row: Vec<String> = mask.row(t).iter().map(|&m| quantize(m).to_string()).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
    Ok(out)
}

pub fn export_heatmap_pgm(mask: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, heatmap_pgm(mask)?).map_err(|e| Error::io(path, e))
}

/// Parses a plain PGM back into `(width, height, pixels row-major)`.
pub fn parse_pgm(text: &str) -> Result<(usize, usize, Vec<u8>)> {
    let bad = |msg: &str| Error::Parse {
        row: 0,
        msg: format!("PGM: {msg}"),
    };
    let mut tokens = text
        .lines()
        .map(|l| l.split('#').next().unwrap_or(""))
        .flat_map(str::split_whitespace);
    if tokens.next() != Some("P2") {
        return Err(bad("missing P2 magic"));
    }
    let mut number = |what: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad(&format!("bad {what}")))
    };
    let (width, height, maxval) = (number("width")?, number("height")?, number("maxval")?);
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    let pixels = (0..width * height)
        .map(|_| {
            number("pixel").and_then(|p| u8::try_from(p).map_err(|_| bad("pixel above 255")))
        })
        .collect::<Result<Vec<u8>>>()?;
    Ok((width, height, pixels))
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(1.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(0.0), 0);
    }

    #[test]
    fn constant_column_has_flat_spectrum() {
        let s = fft_magnitude(&[3.0; 16]).unwrap();
        assert_eq!(s.magnitudes.len(), 9);
        assert!(s.magnitudes.iter().all(|m| m.abs() < 1e-12));
        assert_eq!(periodicity_score(&s), 0.0);
    }

    #[test]
    fn odd_length_parseval() {
        let x = [0.3, -1.2, 2.5, 0.7, -0.4];
        let s = fft_magnitude(&x).unwrap();
        let mean = x.iter().sum::<f64>() / 5.0;
        let energy: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
        assert!((spectral_energy(&s) - 5.0 * energy).abs() < 1e-9);
    }

    #[test]
    fn pgm_rejects_out_of_range() {
        let m = Tensor::new(&[1, 1], vec![1.5]).unwrap();
        assert!(heatmap_pgm(&m).is_err());
    }
}
