use super::layers::Linear;
use super::Forward;
use crate::error::{validation, Error, Result};
use crate::preproc::WindowedDataset;
use crate::tensor::{Graph, Tensor, Var};
use nalgebra::{DMatrix, DVector};

/// Ridge strength of [`DspModel::fit`], applied to the feature covariance.
pub const DSP_RIDGE: f64 = 1e-6;

/// Linear regression on block-averaged current and voltage.
#[derive(Debug, Clone, PartialEq)]
pub struct DspModel {
    pub input_len: usize,
    pub decimation: usize,
    pub readout: Linear,
}

impl DspModel {
    pub fn zeros(input_len: usize, decimation: usize) -> Result<Self> {
        if decimation == 0 || input_len == 0 || input_len % decimation != 0 {
            return Err(Error::Config(format!("decimation {decimation} must divide the window length {input_len}")));
        }
        let f = 2 * input_len / decimation;
        Ok(Self {
            input_len,
            decimation,
            readout: Linear {
                weight: Tensor::zeros(&[1, f]),
                bias: Tensor::zeros(&[1]),
            },
        })
    }

    pub fn features(&self) -> usize {
        2 * self.input_len / self.decimation
    }

    /// Block averages of one `[2, n]` window: current taps, then voltage.
    pub fn window_features(&self, window: &[f64]) -> Vec<f64> {
        window
            .chunks(self.decimation)
            .map(|c| c.iter().sum::<f64>() / self.decimation as f64)
            .collect()
    }

    /// Closed-form ridge fit on centered features, so the bias is not
    /// shrunk: `(Σ + λI) w = cov(f, y)`, `b = ȳ − w·f̄`.
    pub fn fit(ds: &WindowedDataset, decimation: usize) -> Result<Self> {
        if ds.is_empty() {
            return Err(Error::EmptyDataset("cannot fit the DSP baseline on no data".into()));
        }
        let mut model = Self::zeros(ds.n(), decimation)?;
        let f = model.features();
        let count = ds.len() as f64;
        let feats: Vec<Vec<f64>> = (0..ds.len()).map(|k| model.window_features(ds.input(k))).collect();
        let mut mean = DVector::<f64>::zeros(f);
        for row in &feats {
            mean += DVector::from_column_slice(row);
        }
        mean /= count;
        let y_mean = ds.labels().iter().sum::<f64>() / count;
        let mut cov = DMatrix::<f64>::zeros(f, f);
        let mut cxy = DVector::<f64>::zeros(f);
        for (row, &y) in feats.iter().zip(ds.labels()) {
            let d = DVector::from_column_slice(row) - &mean;
            cov.ger(1.0, &d, &d, 1.0);
            cxy.axpy(y - y_mean, &d, 1.0);
        }
        cov /= count;
        cxy /= count;
        for j in 0..f {
            cov[(j, j)] += DSP_RIDGE;
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| validation("DSP normal matrix is not positive definite (non-finite inputs?)"))?;
        let w = chol.solve(&cxy);
        model.readout.weight.data_mut().copy_from_slice(w.as_slice());
        model.readout.bias.data_mut()[0] = y_mean - w.dot(&mean);
        Ok(model)
    }

    /// Prediction for one window, mm.
    pub fn predict_window(&self, window: &[f64]) -> f64 {
        let feats = self.window_features(window);
        feats.iter().zip(self.readout.weight.data()).map(|(a, b)| a * b).sum::<f64>() + self.readout.bias.data()[0]
    }

    pub fn params(&self) -> Vec<(String, &Tensor)> {
        vec![
            ("readout.weight".into(), &self.readout.weight),
            ("readout.bias".into(), &self.readout.bias),
        ]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![&mut self.readout.weight, &mut self.readout.bias]
    }

    pub fn forward(&self, g: &mut Graph, p: &[Var], x: Var) -> Result<Forward> {
        let pooled = g.avgpool1d(x, self.decimation)?;
        let b = g.shape(pooled)[0];
        let flat = g.reshape(pooled, &[b, self.features()])?;
        let output = g.linear(flat, p[0], Some(p[1]))?;
        Ok(Forward {
            output,
            bn_inputs: Vec::new(),
            batch_stats: Vec::new(),
        })
    }
}
