//! Continuous-target head.
//!
//! Each time segment representation `z_j` is rebuilt as a weighted sum of
//! the time prototypes, weighted by a softmax over prototypes of `Sim_{i,j}`.
//! The rebuilt representations are mean-pooled over segments and passed
//! through a linear head with non-negative weights.

use crate::data::MultiModalSample;
use crate::encoder::config::RegressionLoss;
use crate::encoder::model::EncoderModel;
use crate::error::{Error, Result};
use crate::numerics::{pairwise_sq_dist, softmax_unchecked, Tensor};

/// Mean over segments of the prototype reconstructions of `Z_time`.
pub fn pooled_reconstruction(model: &EncoderModel, z_time: &Tensor) -> Vec<f64> {
    let protos = &model.params.time_prototypes;
    let d = pairwise_sq_dist(protos, z_time);
    let (m, s, h) = (protos.rows(), z_time.cols(), protos.cols());
    let mut pooled = vec![0.0; h];
    for j in 0..s {
        let sims: Vec<f64> = (0..m).map(|i| (-d.at(i, j)).exp()).collect();
        let a = softmax_unchecked(&sims);
        for (i, ai) in a.iter().enumerate() {
            for (acc, p) in pooled.iter_mut().zip(protos.row(i)) {
                *acc += ai * p;
            }
        }
    }
    pooled.iter_mut().for_each(|v| *v /= s as f64);
    pooled
}

/// Head output for precomputed `Z_time`.
pub fn regression_output(model: &EncoderModel, z_time: &Tensor) -> Result<f64> {
    let (Some(weight), Some(bias)) = (&model.params.head_weight, &model.params.head_bias) else {
        return Err(Error::Contract("regression head is disabled".into()));
    };
    let pooled = pooled_reconstruction(model, z_time);
    Ok(weight.data().iter().zip(&pooled).map(|(w, p)| w * p).sum::<f64>() + bias.item())
}

const REFIT_SWEEPS: usize = 2000;

/// Refits the head to the training targets by least squares with
/// non-negative weights and a free bias, keeping every other parameter
/// fixed. Used after projection, which moves the prototypes the head was
/// trained against.
pub fn refit_head(model: &EncoderModel, train: &[MultiModalSample]) -> Result<EncoderModel> {
    if model.params.head_weight.is_none() {
        return Err(Error::Contract("regression head is disabled".into()));
    }
    let mut rows = Vec::with_capacity(train.len());
    let mut targets = Vec::with_capacity(train.len());
    for s in train {
        let z = model.encode_time(&s.series_tensor()?)?;
        rows.push(pooled_reconstruction(model, &z));
        targets.push(s.label.value().ok_or_else(|| {
            Error::Contract(format!("sample `{}` has no continuous target", s.id))
        })?);
    }
    let (n, h) = (rows.len() as f64, model.config.time_features);
    let x_mean: Vec<f64> = (0..h).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let y_mean = targets.iter().sum::<f64>() / n;
    let cols: Vec<Vec<f64>> = (0..h)
        .map(|k| rows.iter().map(|r| r[k] - x_mean[k]).collect())
        .collect();
    let norms: Vec<f64> = cols.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();
    let mut w = model.params.head_weight.as_ref().expect("checked").data().to_vec();
    let mut resid: Vec<f64> = targets
        .iter()
        .enumerate()
        .map(|(i, y)| y - y_mean - (0..h).map(|k| w[k] * cols[k][i]).sum::<f64>())
        .collect();
    for _ in 0..REFIT_SWEEPS {
        let mut moved = 0.0f64;
        for k in 0..h {
            if norms[k] < 1e-12 {
                continue;
            }
            let step = cols[k].iter().zip(&resid).map(|(c, r)| c * r).sum::<f64>() / norms[k];
            let new = (w[k] + step).max(0.0);
            let delta = new - w[k];
            if delta != 0.0 {
                for (r, c) in resid.iter_mut().zip(&cols[k]) {
                    *r -= delta * c;
                }
                w[k] = new;
                moved = moved.max(delta.abs());
            }
        }
        if moved < 1e-12 {
            break;
        }
    }
    let bias = y_mean - w.iter().zip(&x_mean).map(|(a, b)| a * b).sum::<f64>();
    let mut out = model.clone();
    out.params.head_weight = Some(Tensor::vector(w));
    out.params.head_bias = Some(Tensor::scalar(bias));
    Ok(out)
}

pub fn regression_forward(model: &EncoderModel, sample: &MultiModalSample) -> Result<f64> {
    let z = model.encode_time(&sample.series_tensor()?)?;
    regression_output(model, &z)
}

/// Mean squared (or absolute) error of the head over a batch.
pub fn regression_loss(batch: &[MultiModalSample], model: &EncoderModel) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Contract("regression loss over an empty batch".into()));
    }
    let kind = model
        .config
        .regression
        .as_ref()
        .map_or(RegressionLoss::Mse, |r| r.loss);
    let mut total = 0.0;
    for s in batch {
        let target = s.label.value().ok_or_else(|| {
            Error::Contract(format!("sample `{}` has no continuous target", s.id))
        })?;
        let err = regression_forward(model, s)? - target;
        total += match kind {
            RegressionLoss::Mse => err * err,
            RegressionLoss::Mae => err.abs(),
        };
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::config::{EncoderConfig, RegressionConfig};
    use crate::encoder::model::Params;

    fn model(protos: Vec<Vec<f64>>, weight: Vec<f64>, bias: f64) -> EncoderModel {
        let h = protos[0].len();
        let m = protos.len();
        let config = EncoderConfig {
            classes: 1,
            time_prototypes: m,
            text_prototypes: 1,
            time_features: h,
            regression: Some(RegressionConfig { loss: RegressionLoss::Mse }),
            ..Default::default()
        };
        EncoderModel {
            params: Params {
                time_kernels: Tensor::zeros(&[h, 1, config.time_kernel]),
                time_bias: Tensor::zeros(&[h]),
                text_kernels: Tensor::zeros(&[8, 64, 1]),
                text_bias: Tensor::zeros(&[8]),
                time_prototypes: Tensor::from_rows(&protos).unwrap(),
                text_prototypes: Tensor::zeros(&[1, 8]),
                fusion: Tensor::filled(&[1, m + 1], 1.0),
                head_weight: Some(Tensor::vector(weight)),
                head_bias: Some(Tensor::scalar(bias)),
            },
            config,
            provenance: None,
        }
    }

    #[test]
    fn single_prototype_reconstructs_itself() {
        let m = model(vec![vec![1.0, 2.0]], vec![0.5, 0.25], 0.1);
        let z = Tensor::from_rows(&[vec![9.0, 3.0, 0.0], vec![1.0, 1.0, 7.0]]).unwrap();
        let out = regression_output(&m, &z).unwrap();
        assert!((out - (0.5 + 0.5 + 0.1)).abs() < 1e-12);
    }

    #[test]
    fn zero_head_gives_zero() {
        let m = model(vec![vec![1.0, 2.0], vec![0.0, 3.0]], vec![0.0, 0.0], 0.0);
        let z = Tensor::from_rows(&[vec![0.3], vec![0.4]]).unwrap();
        assert_eq!(regression_output(&m, &z).unwrap(), 0.0);
    }

    #[test]
    fn output_grows_with_any_head_weight() {
        let z = Tensor::from_rows(&[vec![0.3, 1.0], vec![0.4, 0.2]]).unwrap();
        let protos = vec![vec![1.0, 2.0], vec![0.5, 3.0]];
        let lo = regression_output(&model(protos.clone(), vec![0.2, 0.2], 0.0), &z).unwrap();
        let hi = regression_output(&model(protos, vec![0.2, 0.7], 0.0), &z).unwrap();
        assert!(hi >= lo);
    }

    #[test]
    fn disabled_head_is_a_contract_error() {
        let mut m = model(vec![vec![1.0]], vec![1.0], 0.0);
        m.params.head_weight = None;
        let z = Tensor::from_rows(&[vec![0.3]]).unwrap();
        assert!(matches!(regression_output(&m, &z), Err(Error::Contract(_))));
    }
}
