use serde::{Deserialize, Serialize};

use crate::data::MultiModalSample;
use crate::encoder::config::EncoderConfig;
use crate::encoder::loss::{loss_and_gradients, LossBreakdown};
use crate::encoder::model::EncoderModel;
use crate::encoder::project::project_prototypes;
use crate::encoder::regression::{refit_head, regression_forward};
use crate::error::{Error, Result};
use crate::eval::{accuracy, macro_f1, rmse};
use crate::numerics::{argmax, AdamConfig, AdamState, SeededRng};

/// Validation quality of one model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationMetrics {
    pub macro_f1: Option<f64>,
    pub accuracy: Option<f64>,
    pub rmse: Option<f64>,
}

impl ValidationMetrics {
    /// Higher is better: macro-F1, or negated RMSE for regression.
    pub fn score(&self) -> f64 {
        match (self.macro_f1, self.rmse) {
            (Some(f1), _) => f1,
            (None, Some(r)) => -r,
            (None, None) => f64::NEG_INFINITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean over the epoch's mini-batches.
    pub loss: LossBreakdown,
    pub validation: ValidationMetrics,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose projected model was kept; 0 means the initialization.
    pub best_epoch: usize,
}

pub fn evaluate(model: &EncoderModel, samples: &[MultiModalSample]) -> Result<ValidationMetrics> {
    if model.config.regression.is_some() {
        let mut preds = Vec::with_capacity(samples.len());
        let mut targets = Vec::with_capacity(samples.len());
        for s in samples {
            preds.push(regression_forward(model, s)?);
            targets.push(s.label.value().ok_or_else(|| {
                Error::Contract(format!("sample `{}` has no continuous target", s.id))
            })?);
        }
        return Ok(ValidationMetrics {
            macro_f1: None,
            accuracy: None,
            rmse: Some(rmse(&preds, &targets)),
        });
    }
    let mut truth = Vec::with_capacity(samples.len());
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        truth.push(s.class()?);
        preds.push(argmax(&model.predict_proba(s)?));
    }
    Ok(ValidationMetrics {
        macro_f1: Some(macro_f1(&truth, &preds, model.config.classes)?),
        accuracy: Some(accuracy(&truth, &preds)),
        rmse: None,
    })
}

/// One Adam step on `batch`, followed by the non-negativity clamp.
pub fn train_step(model: &mut EncoderModel, adam: &mut AdamState, batch: &[&MultiModalSample]) -> Result<LossBreakdown> {
    let (loss, grads) = loss_and_gradients(batch, model)?;
    if let Some((name, _)) = model
        .params
        .groups()
        .iter()
        .zip(&grads)
        .find(|(_, g)| !g.all_finite())
        .map(|(p, _)| *p)
    {
        return Err(Error::Numeric(format!("gradient of `{name}` is not finite")));
    }
    let mut params: Vec<_> = model.params.groups_mut().into_iter().map(|(_, t)| t).collect();
    adam.step(&mut params, &grads)?;
    model.params.clamp_non_negative();
    Ok(loss)
}

pub fn new_optimizer(model: &EncoderModel) -> AdamState {
    AdamState::new(
        AdamConfig::with_learning_rate(model.config.learning_rate),
        model.params.groups().into_iter().map(|(_, t)| t),
    )
}

/// Projects the prototypes and, for regression, refits the head to them.
pub fn finalize(model: &EncoderModel, train: &[MultiModalSample]) -> Result<EncoderModel> {
    let projected = project_prototypes(model, train)?;
    if projected.config.regression.is_some() {
        refit_head(&projected, train)
    } else {
        Ok(projected)
    }
}

/// Mini-batch Adam on the full objective.
///
/// After every epoch a finalized (projected) copy of the model is scored on
/// `val`; the best-scoring one (earliest on ties, the initialization
/// included) is returned.
pub fn train_encoder(
    train: &[MultiModalSample],
    val: &[MultiModalSample],
    config: &EncoderConfig,
) -> Result<(EncoderModel, TrainingHistory)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput("training and validation splits must be non-empty".into()));
    }
    let mut model = EncoderModel::initialize(config, train)?;
    let mut adam = new_optimizer(&model);
    let mut rng = SeededRng::derived(config.seed, "batches");

    let mut best = finalize(&model, train)?;
    let mut best_score = evaluate(&best, val)?.score();
    let mut history = TrainingHistory::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        rng.shuffle(&mut order);
        let mut sum = LossBreakdown {
            total: 0.0,
            ce: 0.0,
            clustering: 0.0,
            evidencing: 0.0,
            diversity: 0.0,
            regression: config.regression.as_ref().map(|_| 0.0),
        };
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&MultiModalSample> = chunk.iter().map(|&i| &train[i]).collect();
            let loss = train_step(&mut model, &mut adam, &batch)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
                    other => other,
                })?;
            sum.total += loss.total;
            sum.ce += loss.ce;
            sum.clustering += loss.clustering;
            sum.evidencing += loss.evidencing;
            sum.diversity += loss.diversity;
            if let (Some(acc), Some(r)) = (&mut sum.regression, loss.regression) {
                *acc += r;
            }
            batches += 1;
        }
        let n = batches as f64;
        let mean = LossBreakdown {
            total: sum.total / n,
            ce: sum.ce / n,
            clustering: sum.clustering / n,
            evidencing: sum.evidencing / n,
            diversity: sum.diversity / n,
            regression: sum.regression.map(|r| r / n),
        };
        if config.projection_every.is_some_and(|every| epoch % every == 0) {
            model = project_prototypes(&model, train)?;
        }
        let projected = finalize(&model, train)?;
        let validation = evaluate(&projected, val)?;
        tracing::debug!(epoch, loss = mean.total, score = validation.score(), "epoch done");
        if validation.score() > best_score {
            best_score = validation.score();
            best = projected;
            history.best_epoch = epoch;
        }
        history.epochs.push(EpochRecord {
            epoch,
            loss: mean,
            validation,
        });
    }
    Ok((best, history))
}
