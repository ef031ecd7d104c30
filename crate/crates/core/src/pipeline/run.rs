use std::collections::BTreeSet;

use crate::agents::session::usage_delta;
use crate::agents::{AgentSession, LabelPrediction, ReflectionRecord};
use crate::data::{embed_segments, EmbeddingCache, EmbeddingProvider, MultiModalSample, SegmentationPolicy};
use crate::encoder::{explain, train_encoder, EncoderModel, Modality};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::numerics::argmax;
use crate::pipeline::config::{LoopConfig, ReflectionSource};
use crate::pipeline::fusion::{fuse_predictions, fused_metrics, select_alpha, FusionConfig, FusionRecord};
use crate::pipeline::state::{BestState, IterationReport, LoopState};

/// Services shared by every phase.
pub struct Runtime<'a> {
    pub labels: &'a [String],
    pub policy: SegmentationPolicy,
    pub embedder: &'a dyn EmbeddingProvider,
    pub cache: &'a EmbeddingCache,
    pub session: &'a AgentSession<'a>,
}

impl Runtime<'_> {
    pub(crate) fn embed(&self, samples: &mut [MultiModalSample]) -> Result<()> {
        let stats = embed_segments(self.embedder, samples, self.cache)?;
        tracing::debug!(calls = stats.provider_calls, hits = stats.cache_hits, "embedded segments");
        Ok(())
    }
}

/// Encoder probabilities, explanation and LLM answer for one sample.
pub(crate) struct Prediction {
    pub encoder: Vec<f64>,
    pub explanation: crate::encoder::Explanation,
    pub llm: LabelPrediction,
}

impl Prediction {
    /// The LLM label, or the encoder's when the LLM answer failed.
    pub fn llm_or_encoder(&self) -> usize {
        self.llm.class.unwrap_or_else(|| argmax(&self.encoder))
    }
}

pub(crate) fn predict_all(
    rt: &Runtime<'_>,
    model: &EncoderModel,
    samples: &[MultiModalSample],
    omega: usize,
    modality: Modality,
) -> Result<Vec<Prediction>> {
    rt.session.map(samples, |s| {
        let encoder = model.predict_proba(s)?;
        let explanation = explain(s, model, omega, modality)?;
        let llm = rt.session.predict(&s.segments, Some(&explanation), rt.labels)?;
        Ok(Prediction {
            encoder,
            explanation,
            llm,
        })
    })
}

pub(crate) fn truths(samples: &[MultiModalSample]) -> Result<Vec<usize>> {
    samples.iter().map(MultiModalSample::class).collect()
}

/// Encoder, LLM-only and fused metrics at `alpha`.
pub(crate) fn phase_metrics(
    predictions: &[Prediction],
    truth: &[usize],
    alpha: f64,
    classes: usize,
) -> Result<(MetricsReport, MetricsReport, MetricsReport)> {
    let enc_scores: Vec<Vec<f64>> = predictions.iter().map(|p| p.encoder.clone()).collect();
    let enc_preds: Vec<usize> = enc_scores.iter().map(|s| argmax(s)).collect();
    let llm_preds: Vec<usize> = predictions.iter().map(Prediction::llm_or_encoder).collect();
    let llm_scores: Vec<Vec<f64>> = llm_preds
        .iter()
        .map(|&c| (0..classes).map(|k| if k == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let records = fusion_records(predictions, truth);
    Ok((
        MetricsReport::compute(truth, &enc_preds, &enc_scores, classes)?,
        MetricsReport::compute(truth, &llm_preds, &llm_scores, classes)?,
        fused_metrics(&records, alpha, classes)?,
    ))
}

fn fusion_records(predictions: &[Prediction], truth: &[usize]) -> Vec<FusionRecord> {
    predictions
        .iter()
        .zip(truth)
        .map(|(p, &t)| FusionRecord::new(p.encoder.clone(), &p.llm, t))
        .collect()
}

/// One pass of the loop on iteration `state.iteration`.
///
/// Trains the encoder on the current texts, predicts the validation split
/// with explanations and the LLM, selects α, reflects on the training
/// predictions, refines every training and validation text, and keeps the
/// model and reflection when the fused validation macro-F1 improves. The
/// input state is never modified, so an error leaves it intact.
pub fn run_iteration(
    state: &LoopState,
    config: &LoopConfig,
    rt: &Runtime<'_>,
    train: &[MultiModalSample],
    val: &[MultiModalSample],
) -> Result<(LoopState, IterationReport)> {
    if state.is_done() {
        return Err(Error::Contract(format!(
            "iteration {} requested but the loop is limited to {}",
            state.iteration, state.max_iterations
        )));
    }
    if config.encoder.regression.is_some() {
        return Err(Error::InvalidConfig("the refinement loop supports classification only".into()));
    }
    let i = state.iteration;
    let classes = rt.labels.len();
    let usage_before = rt.session.ledger().tokens();
    let _span = tracing::info_span!("iteration", i).entered();

    let mut train = state.apply_texts(train);
    let mut val = state.apply_texts(val);
    rt.embed(&mut train)?;
    rt.embed(&mut val)?;
    let val_truth = truths(&val)?;
    let train_truth = truths(&train)?;

    let (model, history) = train_encoder(&train, &val, &config.encoder)?;
    tracing::info!(best_epoch = history.best_epoch, "encoder trained");

    let probes = rt.session.map(&val, |s| rt.session.probe(&s.segments, rt.labels))?;
    let text_quality = probes
        .iter()
        .zip(&val_truth)
        .filter(|(p, &t)| p.class == Some(t))
        .count() as f64
        / val.len() as f64;

    let omega = config.fusion.omega;
    let predictions = predict_all(rt, &model, &val, omega, config.explanation_modality)?;
    let llm_failures = predictions.iter().filter(|p| p.llm.class.is_none()).count();
    let alpha = select_alpha(&fusion_records(&predictions, &val_truth), classes)?;
    let (encoder, llm, fused) = phase_metrics(&predictions, &val_truth, alpha, classes)?;
    tracing::info!(
        encoder_f1 = encoder.macro_f1,
        llm_f1 = llm.macro_f1,
        fused_f1 = fused.macro_f1,
        alpha,
        text_quality,
        "validation"
    );

    let train_preds: Vec<usize> = match config.reflection_source {
        ReflectionSource::Encoder => train
            .iter()
            .map(|s| Ok(argmax(&model.predict_proba(s)?)))
            .collect::<Result<_>>()?,
        ReflectionSource::Llm => predict_all(rt, &model, &train, omega, config.explanation_modality)?
            .iter()
            .map(Prediction::llm_or_encoder)
            .collect(),
    };
    let records: Vec<ReflectionRecord> = train
        .iter()
        .zip(&train_truth)
        .zip(&train_preds)
        .map(|((s, &truth), &predicted)| ReflectionRecord {
            sample_id: s.id.clone(),
            truth,
            predicted,
            segments: s.segments.clone(),
        })
        .collect();
    let mut reflection = rt.session.reflect(&records, rt.labels)?;
    reflection.iteration = Some(i);
    let guideline = reflection
        .summary
        .clone()
        .ok_or_else(|| Error::Contract("reflection ended without a summary".into()))?;

    let mut correct = BTreeSet::new();
    for (s, (&t, &p)) in train.iter().zip(train_truth.iter().zip(&train_preds)) {
        if t == p {
            correct.insert(s.id.clone());
        }
    }
    for (s, (&t, p)) in val.iter().zip(val_truth.iter().zip(&predictions)) {
        if argmax(&fuse_predictions(&p.encoder, p.llm.class, alpha)) == t {
            correct.insert(s.id.clone());
        }
    }

    let targets: Vec<&MultiModalSample> = train
        .iter()
        .chain(&val)
        .filter(|s| !(config.selective_refinement && state.correct.contains(&s.id)))
        .collect();
    let skipped = train.len() + val.len() - targets.len();
    let min_segments = config.encoder.text_kernel;
    let refinements = rt.session.map(&targets, |s| {
        rt.session.refine_text(&guideline, &s.segments, rt.policy, min_segments)
    })?;
    let mut texts = state.texts.clone();
    let mut changed = 0;
    for (s, r) in targets.iter().zip(&refinements) {
        if r.segments != s.segments {
            changed += 1;
        }
        texts.insert(s.id.clone(), r.segments.clone());
    }
    let fallbacks = refinements.iter().filter(|r| r.fell_back).count();

    let best_before = state.best_f1();
    let improved = best_before.is_none_or(|b| fused.macro_f1 > b);
    let best = if improved {
        Some(BestState {
            iteration: i,
            model: model.clone(),
            reflection,
            fusion: FusionConfig { alpha, omega },
            fused_f1: fused.macro_f1,
        })
    } else {
        state.best.clone()
    };
    let best_after = best.as_ref().map_or(0.0, |b| b.fused_f1);
    let gain = best_after - best_before.unwrap_or(0.0);
    let stalled = match &config.early_stop {
        Some(stop) if gain < stop.epsilon => state.stalled + 1,
        _ => 0,
    };
    let mut history_f1 = state.history.clone();
    history_f1.push(fused.macro_f1);

    let report = IterationReport {
        iteration: i,
        encoder,
        llm,
        fused,
        alpha,
        text_quality,
        llm_failures,
        improved,
        best_fused_f1: best_after,
        best_iteration: best.as_ref().map_or(i, |b| b.iteration),
        refined: changed,
        refine_fallbacks: fallbacks,
        refine_skipped: skipped,
        encoder_best_epoch: history.best_epoch,
        usage: usage_delta(&rt.session.ledger().tokens(), &usage_before),
    };
    let next = LoopState {
        iteration: i + 1,
        max_iterations: state.max_iterations,
        texts,
        model: Some(model),
        best,
        history: history_f1,
        stalled,
        correct,
    };
    Ok((next, report))
}

/// Runs iterations from `state` until `τ` is reached or early stopping
/// triggers. `on_iteration` sees every new state and report as soon as it
/// exists, so a later failure does not lose finished iterations.
pub fn run_loop(
    mut state: LoopState,
    config: &LoopConfig,
    rt: &Runtime<'_>,
    train: &[MultiModalSample],
    val: &[MultiModalSample],
    mut on_iteration: impl FnMut(&LoopState, &IterationReport) -> Result<()>,
) -> Result<(LoopState, Vec<IterationReport>)> {
    config.validate()?;
    let mut reports = Vec::new();
    while !state.is_done() {
        let (next, report) = run_iteration(&state, config, rt, train, val)?;
        state = next;
        on_iteration(&state, &report)?;
        reports.push(report);
        if let Some(stop) = &config.early_stop {
            if state.stalled >= stop.patience {
                tracing::info!(iteration = state.iteration, "early stop: no improvement above threshold");
                break;
            }
        }
    }
    Ok((state, reports))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::session::TranscriptRecord;
    use crate::agents::{AgentConfig, CallCategory, Response, Script, ScriptedClient, TemplateId, Transcript};
    use crate::pipeline::fixture::{cleaning, fixture, identity, rule, script};
    use crate::pipeline::EarlyStop;

    fn session<'a>(client: &'a ScriptedClient, batch: usize) -> AgentSession<'a> {
        AgentSession::new(
            client,
            AgentConfig {
                reflection_batch_size: batch,
                ..Default::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn one_iteration_sequences_and_counts_calls() {
        let f = fixture(40, 0.0);
        let client = script(cleaning());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.jsonl");
        let s = session(&client, 10).with_transcript(Transcript::open(&path).unwrap());
        let rt = f.runtime(&s);
        let (train, val) = (&f.splits.train, &f.splits.val);
        let state = LoopState::initial(train, val, 1).unwrap();
        let (next, report) = run_iteration(&state, &f.config, &rt, train, val).unwrap();

        let calls = |c: CallCategory| report.usage.get(&c).map_or(0, |u| u.calls) as usize;
        assert_eq!(calls(CallCategory::Predict), val.len());
        assert_eq!(calls(CallCategory::Probe), val.len());
        assert_eq!(calls(CallCategory::Refine), train.len() + val.len());
        assert_eq!(calls(CallCategory::Reflect), train.len().div_ceil(10) + 1);
        assert_eq!((next.iteration, next.history.len()), (1, 1));
        assert!(next.is_done());

        let log: Vec<TranscriptRecord> = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        let mut phases: Vec<TemplateId> = log
            .iter()
            .filter(|r| r.category != CallCategory::Probe)
            .map(|r| r.template)
            .collect();
        phases.dedup();
        assert_eq!(
            phases,
            [
                TemplateId::Prediction,
                TemplateId::ReflectionGenerate,
                TemplateId::ReflectionUpdate,
                TemplateId::ReflectionSummarize,
                TemplateId::Refinement,
            ]
        );
        assert!(run_iteration(&next, &f.config, &rt, train, val).is_err());
    }

    #[test]
    fn best_state_moves_only_on_improvement() {
        let f = fixture(40, 0.0);
        let client = script(identity());
        let s = session(&client, 50);
        let rt = f.runtime(&s);
        let (train, val) = (&f.splits.train, &f.splits.val);
        let state = LoopState::initial(train, val, 3).unwrap();
        let (first, r0) = run_iteration(&state, &f.config, &rt, train, val).unwrap();
        let best = first.best.clone().unwrap();
        assert!(r0.improved);
        assert_eq!((best.iteration, best.reflection.iteration), (0, Some(0)));
        assert_eq!(Some(&best.model), first.model.as_ref());

        // identity refinement and a seeded encoder repeat the same iteration
        let (second, r1) = run_iteration(&first, &f.config, &rt, train, val).unwrap();
        assert!(!r1.improved);
        assert_eq!(second.best, first.best);
        assert_eq!(second.history.len(), 2);
        assert_eq!(r1.refined, 0);
        assert_eq!(r1.best_fused_f1, r0.best_fused_f1);
    }

    #[test]
    fn agent_failure_leaves_state_untouched() {
        let f = fixture(40, 0.0);
        let reflection = |text: &str| Response::Text { text: text.into() };
        // no refinement rule: the first refine call fails
        let client = ScriptedClient::new(Script {
            model: "scripted".into(),
            rules: vec![
                rule(TemplateId::Prediction, Response::Guess { seed: 0 }),
                rule(TemplateId::PredictionTextOnly, Response::Guess { seed: 0 }),
                rule(TemplateId::ReflectionGenerate, reflection("CLASS: up\nx.")),
                rule(TemplateId::ReflectionUpdate, reflection("CLASS: up\nx.")),
                rule(TemplateId::ReflectionSummarize, reflection("guide")),
            ],
        });
        let s = session(&client, 50);
        let rt = f.runtime(&s);
        let (train, val) = (&f.splits.train, &f.splits.val);
        let state = LoopState::initial(train, val, 2).unwrap();
        let before = state.clone();
        let err = run_iteration(&state, &f.config, &rt, train, val).unwrap_err();
        assert!(err.is_external(), "{err}");
        assert_eq!(state, before);
    }

    #[test]
    fn infinite_threshold_stops_after_patience() {
        let f = fixture(40, 0.0);
        let client = script(identity());
        let s = session(&client, 50);
        let rt = f.runtime(&s);
        let (train, val) = (&f.splits.train, &f.splits.val);
        for patience in [1, 2] {
            let mut config = f.config.clone();
            config.max_iterations = 4;
            config.early_stop = Some(EarlyStop {
                epsilon: f64::INFINITY,
                patience,
            });
            let state = LoopState::initial(train, val, 4).unwrap();
            let (end, reports) = run_loop(state, &config, &rt, train, val, |_, _| Ok(())).unwrap();
            assert_eq!((reports.len(), end.iteration), (patience, patience));
        }
    }

    #[test]
    fn without_early_stop_all_iterations_run() {
        let f = fixture(40, 0.0);
        let client = script(identity());
        let s = session(&client, 50);
        let rt = f.runtime(&s);
        let (train, val) = (&f.splits.train, &f.splits.val);
        let mut config = f.config.clone();
        config.max_iterations = 3;
        let state = LoopState::initial(train, val, 3).unwrap();
        let mut seen = Vec::new();
        let (end, reports) = run_loop(state, &config, &rt, train, val, |st, r| {
            seen.push((st.iteration, r.iteration));
            Ok(())
        })
        .unwrap();
        assert_eq!(reports.len(), 3);
        assert_eq!(seen, [(1, 0), (2, 1), (3, 2)]);
        let best: Vec<f64> = reports.iter().map(|r| r.best_fused_f1).collect();
        assert!(best.windows(2).all(|w| w[1] >= w[0]));
        assert_eq!(end.best_f1(), Some(end.history.iter().copied().fold(f64::MIN, f64::max)));
    }

    #[test]
    fn selective_refinement_skips_correct_samples() {
        let f = fixture(40, 0.3);
        let client = script(cleaning());
        let s = session(&client, 50);
        let rt = f.runtime(&s);
        let (train, val) = (&f.splits.train, &f.splits.val);
        let mut config = f.config.clone();
        config.selective_refinement = true;
        let state = LoopState::initial(train, val, 2).unwrap();
        let (first, r0) = run_iteration(&state, &config, &rt, train, val).unwrap();
        assert_eq!(r0.refine_skipped, 0);
        let (_, r1) = run_iteration(&first, &config, &rt, train, val).unwrap();
        assert_eq!(r1.refine_skipped, first.correct.len());
        let refines = r1.usage[&CallCategory::Refine].calls as usize;
        assert_eq!(refines, train.len() + val.len() - first.correct.len());
    }

    #[test]
    fn regression_configs_are_rejected() {
        let f = fixture(40, 0.0);
        let client = script(identity());
        let s = session(&client, 50);
        let rt = f.runtime(&s);
        let mut config = f.config.clone();
        config.encoder.classes = 1;
        config.encoder.regression = Some(crate::encoder::RegressionConfig {
            loss: crate::encoder::RegressionLoss::Mse,
        });
        let state = LoopState::initial(&f.splits.train, &f.splits.val, 1).unwrap();
        let err = run_iteration(&state, &config, &rt, &f.splits.train, &f.splits.val).unwrap_err();
        assert!(matches!(err, Error::InvalidConfig(_)));
        assert_eq!(client.calls(), 0);
    }
}
