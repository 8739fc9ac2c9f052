use rand_chacha::ChaCha8Rng;

use super::{init_uniform, Binder, ParamMut, ParamRef};
use crate::autodiff::{Graph, NodeId};
use crate::data::SeriesImage;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-feature autoregression: each output dimension regresses on its own
/// last `order + 1` values.
#[derive(Clone, Debug, PartialEq)]
pub struct ArModel {
    /// `[D, order + 1]`; column `k` multiplies the value `k` steps before
    /// the window's last row.
    pub weights: Tensor,
    pub bias: Tensor,
    pub order: usize,
}

impl ArModel {
    pub fn new(features: usize, order: usize, rng: &mut ChaCha8Rng) -> Self {
        let lags = order + 1;
        ArModel {
            weights: init_uniform(&[features, lags], lags, rng),
            bias: init_uniform(&[features], lags, rng),
            order,
        }
    }

    pub fn from_parts(weights: Tensor, bias: Vec<f64>) -> Result<Self> {
        let (d, lags) = weights.dims2();
        if lags == 0 || bias.len() != d {
            return Err(Error::shape(
                "ar_model",
                format!("weights {:?} with {} biases", weights.shape(), bias.len()),
            ));
        }
        Ok(ArModel {
            weights,
            bias: Tensor::vector(bias),
            order: lags - 1,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: NodeId, binder: &mut Binder) -> Result<NodeId> {
        let batch = g.value(x).shape()[0];
        let w = binder.bind(g, "ar.weights", &self.weights, true);
        let b = binder.bind(g, "ar.bias", &self.bias, false);
        let y = g.lag_linear(x, w)?;
        let bt = g.tile(b, batch)?;
        g.add(y, bt)
    }

    pub fn params(&self) -> Vec<ParamRef<'_>> {
        vec![
            ParamRef {
                name: "ar.weights".into(),
                tensor: &self.weights,
                decay: true,
            },
            ParamRef {
                name: "ar.bias".into(),
                tensor: &self.bias,
                decay: false,
            },
        ]
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_>> {
        vec![
            ParamMut {
                name: "ar.weights".into(),
                tensor: &mut self.weights,
            },
            ParamMut {
                name: "ar.bias".into(),
                tensor: &mut self.bias,
            },
        ]
    }
}

/// `y_d = Σ_k w[d,k] · x[w-1-k, d] + b_d` for one image.
pub fn ar_forecast(model: &ArModel, image: &SeriesImage) -> Result<Vec<f64>> {
    let (w, d) = (image.window(), image.features());
    let (wd, lags) = model.weights.dims2();
    if lags > w {
        return Err(Error::Invalid(format!(
            "window {w} shorter than AR order + 1 = {lags}"
        )));
    }
    if wd != d {
        return Err(Error::shape("ar_forecast", format!("{wd} weight rows for {d} features")));
    }
    Ok((0..d)
        .map(|f| {
            (0..lags)
                .map(|k| model.weights.get2(f, k) * image.values.get2(w - 1 - k, f))
                .sum::<f64>()
                + model.bias.data()[f]
        })
        .collect())
}
