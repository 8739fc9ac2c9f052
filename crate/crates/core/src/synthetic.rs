//! Synthetic series with known structure, for tests, benchmarks and the
//! bundled fixture.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::SeriesFrame;
use crate::rng::stream_rng;
use crate::tensor::Tensor;

const BURN_IN: usize = 200;

fn normal(std: f64) -> Normal<f64> {
    Normal::new(0.0, std).expect("finite non-negative std")
}

/// `features` independent AR processes
/// `x_t = Σ_i coeffs[i]·x_{t−1−i} + ε_t`, `ε ~ N(0, noise_std²)`, after a
/// burn-in. Returns `[len, features]`.
pub fn ar_process(coeffs: &[f64], len: usize, features: usize, noise_std: f64, seed: u64) -> Tensor {
    let p = coeffs.len();
    let mut rng = stream_rng(seed, 0);
    let eps = normal(noise_std);
    let total = len + BURN_IN + p;
    let mut cols = vec![vec![0.0; total]; features];
    for col in &mut cols {
        for t in p..total {
            let mut v = eps.sample(&mut rng);
            for (i, c) in coeffs.iter().enumerate() {
                v += c * col[t - 1 - i];
            }
            col[t] = v;
        }
    }
    let mut data = Vec::with_capacity(len * features);
    for t in total - len..total {
        data.extend(cols.iter().map(|c| c[t]));
    }
    Tensor::new(&[len, features], data).expect("len x features")
}

/// A series whose last column repeats column `source` with a delay.
#[derive(Clone, Debug)]
pub struct Planted {
    pub frame: SeriesFrame,
    /// Column to forecast.
    pub target_col: usize,
    pub source: usize,
    /// Steps between the causal value and the window's last row.
    pub lag: usize,
}

impl Planted {
    /// `(row, column)` of the causal cell inside a window of length `w`.
    pub fn causal_cell(&self, window: usize) -> (usize, usize) {
        (window - 1 - self.lag, self.source)
    }
}

/// `features − 1` white-noise inputs plus a target column with
/// `target[s] = x_source[s − horizon − lag] + N(0, noise_std²)`, so the
/// forecast `horizon` steps after a window depends on the single cell
/// `lag` rows before the window's end in column `source`.
pub fn planted_lag(
    len: usize,
    features: usize,
    source: usize,
    lag: usize,
    horizon: usize,
    noise_std: f64,
    seed: u64,
) -> Planted {
    assert!(features >= 2 && source < features - 1, "source must be an input column");
    let mut rng = stream_rng(seed, 0);
    let unit = normal(1.0);
    let eps = normal(noise_std);
    let delay = horizon + lag;
    let inputs: Vec<Vec<f64>> = (0..features - 1)
        .map(|_| (0..len + delay).map(|_| unit.sample(&mut rng)).collect())
        .collect();
    let mut data = Vec::with_capacity(len * features);
    for s in 0..len {
        let t = s + delay;
        data.extend(inputs.iter().map(|c| c[t]));
        data.push(inputs[source][t - delay] + eps.sample(&mut rng));
    }
    let mut names: Vec<String> = (0..features - 1).map(|i| format!("x{i}")).collect();
    names.push("target".into());
    Planted {
        frame: SeriesFrame::new(Tensor::new(&[len, features], data).expect("shape"), names)
            .expect("finite values"),
        target_col: features - 1,
        source,
        lag,
    }
}

/// Three columns: a noisy sinusoid with the given period, an AR(1) noise
/// channel with similar spread, and a target tracking the sinusoid column
/// `horizon` steps later.
pub fn periodic_vs_noise(len: usize, period: f64, horizon: usize, seed: u64) -> SeriesFrame {
    let mut rng = stream_rng(seed, 0);
    let phase = rng.random_range(0.0..2.0 * PI);
    let small = normal(0.1);
    let step = normal(0.3);
    let total = len + horizon;
    let periodic: Vec<f64> = (0..total)
        .map(|t| (2.0 * PI * t as f64 / period + phase).sin() + small.sample(&mut rng))
        .collect();
    let mut noise = vec![0.0; total];
    for t in 1..total {
        noise[t] = 0.8 * noise[t - 1] + step.sample(&mut rng);
    }
    let mut data = Vec::with_capacity(len * 3);
    for s in 0..len {
        let t = s + horizon;
        data.extend([periodic[t], noise[t], periodic[t - horizon] + small.sample(&mut rng)]);
    }
    SeriesFrame::new(
        Tensor::new(&[len, 3], data).expect("shape"),
        vec!["periodic".into(), "noise".into(), "target".into()],
    )
    .expect("finite values")
}

/// The bundled demo series: an hourly load with a daily cycle, a slowly
/// drifting temperature, a noise channel and a load forecast signal that
/// leads the load.
pub fn fixture(rows: usize, seed: u64) -> SeriesFrame {
    let mut rng = stream_rng(seed, 0);
    let small = normal(0.05);
    let drift = normal(0.2);
    let mut temp = 15.0;
    let mut data = Vec::with_capacity(rows * 4);
    for t in 0..rows {
        let hour = (t % 24) as f64;
        temp += drift.sample(&mut rng) - 0.02 * (temp - 15.0);
        let daily = (2.0 * PI * hour / 24.0).sin();
        let load = 10.0 + 3.0 * daily + 0.1 * (temp - 15.0) + small.sample(&mut rng);
        let lead = 10.0 + 3.0 * (2.0 * PI * (hour + 3.0) / 24.0).sin() + small.sample(&mut rng);
        let noise: f64 = rng.random_range(0.0..1.0);
        data.extend([load, temp, lead, noise]);
    }
    SeriesFrame::new(
        Tensor::new(&[rows, 4], data).expect("shape"),
        vec!["load".into(), "temperature".into(), "lead".into(), "noise".into()],
    )
    .expect("finite values")
}
