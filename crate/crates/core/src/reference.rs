//! Reference series images: the "deleted" values a mask blends in.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::stream_rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReferenceMode {
    /// Every cell replaced by its feature's training-split mean.
    Constant,
    /// `x + ε`, `ε ~ N(0, σ1²)`.
    Noise,
    /// Per-feature temporal Gaussian blur with std `σ2` time steps.
    Blur,
    /// The image itself.
    Identity,
}

impl FromStr for ReferenceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(ReferenceMode::Constant),
            "noise" => Ok(ReferenceMode::Noise),
            "blur" => Ok(ReferenceMode::Blur),
            "identity" => Ok(ReferenceMode::Identity),
            other => Err(Error::Config(format!(
                "unknown reference mode {other:?} (constant, noise, blur, identity)"
            ))),
        }
    }
}

impl fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceMode::Constant => "constant",
            ReferenceMode::Noise => "noise",
            ReferenceMode::Blur => "blur",
            ReferenceMode::Identity => "identity",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSpec {
    pub mode: ReferenceMode,
    pub sigma1: f64,
    pub sigma2: f64,
    pub seed: u64,
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec {
            mode: ReferenceMode::Noise,
            sigma1: 0.5,
            sigma2: 2.0,
            seed: 0,
        }
    }
}

impl ReferenceSpec {
    pub fn validate(&self) -> Result<()> {
        if self.mode == ReferenceMode::Noise && !(self.sigma1 > 0.0 && self.sigma1.is_finite()) {
            return Err(Error::Config(format!(
                "reference.sigma1 must be > 0 for noise mode, got {}",
                self.sigma1
            )));
        }
        if self.mode == ReferenceMode::Blur && !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!(
                "reference.sigma2 must be > 0 for blur mode, got {}",
                self.sigma2
            )));
        }
        Ok(())
    }
}

/// Normalized Gaussian taps for offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|j| (-((j * j) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Half-sample symmetric reflection of an arbitrary index into `[0, n)`.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Convolves `column` with a truncated normalized Gaussian, reflecting at
/// both boundaries (`... c b a | a b c ...`). Output is a convex combination
/// of inputs, and the column mean is preserved.
pub fn gaussian_blur_1d(column: &[f64], sigma: f64) -> Vec<f64> {
    let n = column.len();
    if n <= 1 {
        return column.to_vec();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;
    (0..n as i64)
        .map(|t| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| k * column[reflect(t + j as i64 - radius, n)])
                .sum()
        })
        .collect()
}

/// Builds the reference for a `[w, D]` image or a `[B, w, D]` batch, drawing
/// noise from `rng`. `baseline` holds per-feature means for constant mode.
pub fn reference_with_rng<R: Rng>(
    images: &Tensor,
    spec: &ReferenceSpec,
    baseline: &[f64],
    rng: &mut R,
) -> Result<Tensor> {
    spec.validate()?;
    let shape = images.shape();
    if !(2..=3).contains(&shape.len()) || images.numel() == 0 {
        return Err(Error::shape("make_reference", format!("image shape {shape:?}")));
    }
    let (w, d) = (shape[shape.len() - 2], shape[shape.len() - 1]);
    match spec.mode {
        ReferenceMode::Identity => Ok(images.clone()),
        ReferenceMode::Constant => {
            if baseline.len() != d {
                return Err(Error::shape(
                    "make_reference",
                    format!("{} baseline means for {d} features", baseline.len()),
                ));
            }
            let mut out = images.clone();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v = baseline[i % d];
            }
            Ok(out)
        }
        ReferenceMode::Noise => {
            let normal = Normal::new(0.0, spec.sigma1)
                .map_err(|e| Error::Config(format!("reference.sigma1: {e}")))?;
            let mut out = images.clone();
            for v in out.data_mut() {
                *v += normal.sample(rng);
            }
            Ok(out)
        }
        ReferenceMode::Blur => {
            let mut out = images.clone();
            let per_image = w * d;
            for img in out.data_mut().chunks_mut(per_image) {
                for c in 0..d {
                    let col: Vec<f64> = (0..w).map(|t| img[t * d + c]).collect();
                    for (t, v) in gaussian_blur_1d(&col, spec.sigma2).into_iter().enumerate() {
                        img[t * d + c] = v;
                    }
                }
            }
            Ok(out)
        }
    }
}

/// Deterministic reference for one image: noise is drawn from a stream
/// derived from `(spec.seed, stream)`.
pub fn make_reference(
    image: &Tensor,
    spec: &ReferenceSpec,
    baseline: &[f64],
    stream: u64,
) -> Result<Tensor> {
    let mut rng = stream_rng(spec.seed, stream);
    reference_with_rng(image, spec, baseline, &mut rng)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn spec(mode: ReferenceMode) -> ReferenceSpec {
        ReferenceSpec {
            mode,
            ..ReferenceSpec::default()
        }
    }

    fn image() -> Tensor {
        Tensor::from_rows(&[
            vec![0.1, 0.9],
            vec![0.4, 0.2],
            vec![0.8, 0.5],
            vec![0.3, 0.7],
        ])
        .unwrap()
    }

    #[test]
    fn vanishing_noise_returns_the_image() {
        let s = ReferenceSpec {
            sigma1: 1e-15,
            ..spec(ReferenceMode::Noise)
        };
        let r = make_reference(&image(), &s, &[], 3).unwrap();
        for (a, b) in r.data().iter().zip(image().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn noise_is_deterministic_per_stream() {
        let s = spec(ReferenceMode::Noise);
        let a = make_reference(&image(), &s, &[], 5).unwrap();
        assert_eq!(a, make_reference(&image(), &s, &[], 5).unwrap());
        assert_ne!(a, make_reference(&image(), &s, &[], 6).unwrap());
    }

    #[test]
    fn constant_mode_uses_baseline() {
        let r = make_reference(&image(), &spec(ReferenceMode::Constant), &[0.25, 0.75], 0).unwrap();
        assert_eq!(r.column(0), vec![0.25; 4]);
        assert_eq!(r.column(1), vec![0.75; 4]);
        assert!(make_reference(&image(), &spec(ReferenceMode::Constant), &[0.1], 0).is_err());
    }

    #[test]
    fn identity_and_invalid_specs() {
        assert_eq!(make_reference(&image(), &spec(ReferenceMode::Identity), &[], 0).unwrap(), image());
        let bad = ReferenceSpec {
            sigma2: 0.0,
            ..spec(ReferenceMode::Blur)
        };
        assert!(make_reference(&image(), &bad, &[], 0).is_err());
        let bad = ReferenceSpec {
            sigma1: -1.0,
            ..spec(ReferenceMode::Noise)
        };
        assert!(bad.validate().is_err());
        assert!("smudge".parse::<ReferenceMode>().is_err());
    }

    #[test]
    fn blur_of_constant_column_is_unchanged() {
        let out = gaussian_blur_1d(&[3.5; 9], 2.0);
        assert!(out.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn blur_impulse_response_is_the_kernel() {
        let sigma = 2.0f64;
        // Independent evaluation of the normalized kernel for |k| <= 6.
        let raw: Vec<f64> = (-6i32..=6).map(|k| (-(k * k) as f64 / (2.0 * sigma * sigma)).exp()).collect();
        let total: f64 = raw.iter().sum();
        let oracle: Vec<f64> = raw.iter().map(|v| v / total).collect();
        assert!((oracle.iter().sum::<f64>() - 1.0).abs() < 1e-12);

        let mut column = vec![0.0; 11];
        column[5] = 1.0;
        let out = gaussian_blur_1d(&column, sigma);
        // Positions 1..=9 see no reflected tail.
        for t in 1..=9 {
            assert!((out[t] - oracle[t + 1]).abs() < 1e-15, "t={t}");
        }
        // Edge cells pick up the reflected tap at offset 6.
        assert!((out[0] - (oracle[1] + oracle[0])).abs() < 1e-15);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for k in 1..=5 {
            assert_eq!(out[5 - k], out[5 + k]);
        }
    }

    #[test]
    fn blur_keeps_ramp_interior_and_single_sample() {
        let ramp: Vec<f64> = (0..30).map(|i| 0.1 * i as f64).collect();
        let out = gaussian_blur_1d(&ramp, 1.5);
        for t in 5..25 {
            assert!((out[t] - ramp[t]).abs() < 1e-9);
        }
        assert_eq!(gaussian_blur_1d(&[4.2], 3.0), vec![4.2]);
    }

    #[test]
    fn blur_handles_radius_longer_than_column() {
        let out = gaussian_blur_1d(&[1.0, 0.0, 2.0], 5.0);
        assert!((out.iter().sum::<f64>() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn batched_blur_matches_per_image() {
        let s = spec(ReferenceMode::Blur);
        let single = make_reference(&image(), &s, &[], 0).unwrap();
        let mut data = image().into_data();
        data.extend(image().into_data());
        let batch = Tensor::new(&[2, 4, 2], data).unwrap();
        let out = make_reference(&batch, &s, &[], 0).unwrap();
        assert_eq!(&out.data()[..8], single.data());
        assert_eq!(&out.data()[8..], single.data());
    }

    proptest! {
        #[test]
        fn blur_stays_within_range_and_keeps_mean(
            col in proptest::collection::vec(-10f64..10.0, 1..40),
            sigma in 0.3f64..4.0,
        ) {
            let out = gaussian_blur_1d(&col, sigma);
            let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(out.iter().all(|&v| v >= lo - 1e-12 && v <= hi + 1e-12));
            let mean_in = col.iter().sum::<f64>() / col.len() as f64;
            let mean_out = out.iter().sum::<f64>() / out.len() as f64;
            prop_assert!((mean_in - mean_out).abs() < 1e-9);
        }

        #[test]
        fn blur_of_symmetric_impulse_is_symmetric(half in 1usize..12, sigma in 0.5f64..3.0) {
            let n = 2 * half + 1;
            let mut col = vec![0.0; n];
            col[half] = 1.0;
            let out = gaussian_blur_1d(&col, sigma);
            for k in 0..=half {
                prop_assert!((out[half - k] - out[half + k]).abs() < 1e-15);
            }
        }
    }
}
