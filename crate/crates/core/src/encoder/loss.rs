use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::data::MultiModalSample;
use crate::encoder::config::RegressionLoss;
use crate::encoder::model::{group_of, EncoderModel};
use crate::encoder::regression::regression_output;
use crate::error::{Error, Result};
use crate::numerics::{pairwise_sq_dist, NodeId, Tape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub clustering: f64,
    pub evidencing: f64,
    pub diversity: f64,
    pub regression: Option<f64>,
}

impl LossBreakdown {
    fn assemble(model: &EncoderModel, ce: f64, lc: f64, le: f64, ld: f64, reg: Option<f64>) -> Self {
        let cfg = &model.config;
        let total = ce
            + cfg.lambda_clustering * lc
            + cfg.lambda_evidencing * le
            + cfg.lambda_diversity * ld
            + reg.unwrap_or(0.0);
        Self {
            total,
            ce,
            clustering: lc,
            evidencing: le,
            diversity: ld,
            regression: reg,
        }
    }

    /// Name of the first non-finite term, if any.
    pub fn non_finite_term(&self) -> Option<&'static str> {
        [
            ("ce", self.ce),
            ("clustering", self.clustering),
            ("evidencing", self.evidencing),
            ("diversity", self.diversity),
            ("regression", self.regression.unwrap_or(0.0)),
            ("total", self.total),
        ]
        .into_iter()
        .find(|(_, v)| !v.is_finite())
        .map(|(n, _)| n)
    }
}

fn require_batch<S>(batch: &[S]) -> Result<()> {
    if batch.is_empty() {
        Err(Error::Contract("loss over an empty batch".into()))
    } else {
        Ok(())
    }
}

fn regression_target(sample: &MultiModalSample) -> Result<f64> {
    sample.label.value().ok_or_else(|| {
        Error::Contract(format!("sample `{}` has no continuous target", sample.id))
    })
}

/// `Σ_{i≠j} max(0, d_min − ‖p_i − p_j‖²)` over the rows of `protos`.
pub fn diversity_penalty(protos: &Tensor, d_min: f64) -> f64 {
    diversity_hinge(&pairwise_sq_dist(protos, &transpose(protos)), d_min)
}

/// The diversity hinge over a square matrix of squared distances.
fn diversity_hinge(d: &Tensor, d_min: f64) -> f64 {
    let m = d.rows();
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if i != j {
                total += (d_min - d.at(i, j)).max(0.0);
            }
        }
    }
    total
}

fn transpose(t: &Tensor) -> Tensor {
    let (r, c) = (t.rows(), t.cols());
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = t.at(i, j);
        }
    }
    Tensor::new(vec![c, r], out).expect("finite input")
}

fn check_input_shapes(model: &EncoderModel, series: &Tensor, embeddings: &Tensor) -> Result<()> {
    let cfg = &model.config;
    if series.shape() != [cfg.channels, cfg.time_steps] {
        return Err(Error::Shape(format!("series shape {:?}", series.shape())));
    }
    if embeddings.shape().len() != 2 || embeddings.rows() != cfg.embedding_dim {
        return Err(Error::Shape(format!("embedding shape {:?}", embeddings.shape())));
    }
    if embeddings.cols() < cfg.text_kernel {
        return Err(Error::InvalidInput(format!(
            "text has {} segments, fewer than the text kernel width {}",
            embeddings.cols(),
            cfg.text_kernel
        )));
    }
    Ok(())
}

/// Full objective on a batch, evaluated directly (no tape).
///
/// CE, `L_c` and the regression error are sums over the batch; `L_e` takes,
/// per prototype, the minimum over every segment representation in the
/// batch.
pub fn loss_total<S: Borrow<MultiModalSample>>(batch: &[S], model: &EncoderModel) -> Result<LossBreakdown> {
    require_batch(batch)?;
    let cfg = &model.config;
    let p = &model.params;
    let (mt, ms) = (p.time_prototypes.rows(), p.text_prototypes.rows());
    let mut ce = 0.0;
    let mut lc = 0.0;
    let mut nearest_time = vec![f64::INFINITY; mt];
    let mut nearest_text = vec![f64::INFINITY; ms];
    let mut reg = 0.0;
    for s in batch.iter().map(Borrow::borrow) {
        let trace = model.forward(s)?;
        if cfg.regression.is_none() {
            let target = group_of(s, cfg)?;
            let m = trace.logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + trace.logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
            ce += lse - trace.logits[target];
        }
        for (z, protos, nearest) in [
            (&trace.z_time, &p.time_prototypes, &mut nearest_time),
            (&trace.z_text, &p.text_prototypes, &mut nearest_text),
        ] {
            let d = pairwise_sq_dist(protos, z);
            for j in 0..d.cols() {
                lc += (0..d.rows()).map(|i| d.at(i, j)).fold(f64::INFINITY, f64::min);
            }
            for (i, best) in nearest.iter_mut().enumerate() {
                *best = d.row(i).iter().cloned().fold(*best, f64::min);
            }
        }
        if let Some(rc) = &cfg.regression {
            let out = regression_output(model, &trace.z_time)?;
            let err = out - regression_target(s)?;
            reg += match rc.loss {
                RegressionLoss::Mse => err * err,
                RegressionLoss::Mae => err.abs(),
            };
        }
    }
    let le = nearest_time.iter().sum::<f64>() + nearest_text.iter().sum::<f64>();
    let ld = diversity_penalty(&p.time_prototypes, cfg.d_min_time)
        + diversity_penalty(&p.text_prototypes, cfg.d_min_text);
    let reg = cfg.regression.as_ref().map(|_| reg);
    Ok(LossBreakdown::assemble(model, ce, lc, le, ld, reg))
}

/// Objective and its gradient for every parameter group, in
/// [`Params::groups`](crate::encoder::Params::groups) order.
pub fn loss_and_gradients<S: Borrow<MultiModalSample>>(
    batch: &[S],
    model: &EncoderModel,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    require_batch(batch)?;
    let cfg = &model.config;
    let mut tape = Tape::new();
    let params: Vec<NodeId> = model
        .params
        .groups()
        .into_iter()
        .map(|(_, t)| tape.param(t.clone()))
        .collect();
    let (tk, tb, sk, sb, pt, ps, fusion) = (
        params[0], params[1], params[2], params[3], params[4], params[5], params[6],
    );
    let head = (params.len() == 9).then(|| (params[7], params[8]));

    let mut ce_terms = Vec::with_capacity(batch.len());
    let mut lc_terms = Vec::with_capacity(2 * batch.len());
    let mut dist_time = Vec::with_capacity(batch.len());
    let mut dist_text = Vec::with_capacity(batch.len());
    let mut reg_terms = Vec::new();
    for s in batch.iter().map(Borrow::borrow) {
        let x = tape.constant(s.series_tensor()?);
        let e = tape.constant(s.embeddings()?.clone());
        check_input_shapes(model, tape.value(x), tape.value(e))?;
        let zt = tape.conv1d_relu(x, tk, tb)?;
        let zs = tape.conv1d_relu(e, sk, sb)?;
        let dt = tape.pairwise_sq_dist(pt, zt)?;
        let ds = tape.pairwise_sq_dist(ps, zs)?;
        let st = tape.neg_exp(dt)?;
        let ss = tape.neg_exp(ds)?;
        if cfg.regression.is_none() {
            let mt = tape.row_max(st)?;
            let ms = tape.row_max(ss)?;
            let sims = tape.concat(&[mt, ms])?;
            let logits = tape.mat_vec(fusion, sims)?;
            ce_terms.push((tape.softmax_cross_entropy(logits, group_of(s, cfg)?)?, 1.0));
        }
        for d in [dt, ds] {
            let mins = tape.col_min(d)?;
            lc_terms.push((tape.sum(mins)?, 1.0));
        }
        dist_time.push(dt);
        dist_text.push(ds);
        if let (Some(rc), Some((hw, hb))) = (&cfg.regression, head) {
            let attn = tape.softmax_cols(st)?;
            let recon = tape.matmul_tn(pt, attn)?;
            let pooled = tape.mean_cols(recon)?;
            let out = tape.linear(hw, hb, pooled)?;
            let target = regression_target(s)?;
            let err = match rc.loss {
                RegressionLoss::Mse => tape.squared_error(out, target)?,
                RegressionLoss::Mae => tape.abs_error(out, target)?,
            };
            reg_terms.push((err, 1.0));
        }
    }
    let zero = tape.constant(Tensor::scalar(0.0));
    let ce = if ce_terms.is_empty() {
        zero
    } else {
        tape.weighted_sum(&ce_terms)?
    };
    let lc = tape.weighted_sum(&lc_terms)?;
    let mut le_terms = Vec::with_capacity(2);
    for dists in [&dist_time, &dist_text] {
        let all = tape.concat_cols(dists)?;
        let mins = tape.row_min(all)?;
        le_terms.push((tape.sum(mins)?, 1.0));
    }
    let le = tape.weighted_sum(&le_terms)?;
    let dt = tape.diversity_hinge(pt, cfg.d_min_time)?;
    let ds = tape.diversity_hinge(ps, cfg.d_min_text)?;
    let ld = tape.weighted_sum(&[(dt, 1.0), (ds, 1.0)])?;
    let reg = if reg_terms.is_empty() {
        None
    } else {
        Some(tape.weighted_sum(&reg_terms)?)
    };
    let mut total_terms = vec![
        (ce, 1.0),
        (lc, cfg.lambda_clustering),
        (le, cfg.lambda_evidencing),
        (ld, cfg.lambda_diversity),
    ];
    if let Some(r) = reg {
        total_terms.push((r, 1.0));
    }
    let total = tape.weighted_sum(&total_terms)?;

    let item = |id: NodeId| tape.value(id).item();
    let breakdown = LossBreakdown {
        total: item(total),
        ce: item(ce),
        clustering: item(lc),
        evidencing: item(le),
        diversity: item(ld),
        regression: reg.map(item),
    };
    if let Some(term) = breakdown.non_finite_term() {
        return Err(Error::Numeric(format!("loss term `{term}` is not finite")));
    }
    let grads = tape.gradient(total)?;
    Ok((breakdown, params.into_iter().map(|id| grads.get(id)).collect()))
}
