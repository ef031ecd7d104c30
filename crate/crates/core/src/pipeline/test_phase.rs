use serde::{Deserialize, Serialize};

use crate::agents::LabelPrediction;
use crate::data::MultiModalSample;
use crate::encoder::{Explanation, Modality};
use crate::error::{Error, Result};
use crate::eval::MetricsReport;
use crate::numerics::argmax;
use crate::pipeline::fusion::{fuse_predictions, FusionConfig};
use crate::pipeline::run::{phase_metrics, predict_all, truths, Runtime};
use crate::pipeline::state::BestState;

/// Everything predicted for one test sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestRecord {
    pub id: String,
    pub truth: usize,
    /// Text after refinement with the best reflection.
    pub segments: Vec<String>,
    pub encoder: Vec<f64>,
    pub llm: LabelPrediction,
    pub fused: Vec<f64>,
    pub predicted: usize,
    pub explanation: Explanation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub alpha: f64,
    pub encoder: MetricsReport,
    pub llm: MetricsReport,
    pub fused: MetricsReport,
    pub records: Vec<TestRecord>,
}

/// Refines every test text once with the best reflection, then predicts with
/// the best encoder, its explanations and the LLM, fused at `fusion.alpha`.
pub fn test_phase(
    best: Option<&BestState>,
    test: &[MultiModalSample],
    rt: &Runtime<'_>,
    fusion: &FusionConfig,
    modality: Modality,
) -> Result<TestOutcome> {
    let best = best.ok_or_else(|| Error::Contract("test phase needs a best model and reflection".into()))?;
    fusion.validate()?;
    if test.is_empty() {
        return Err(Error::InvalidInput("test split is empty".into()));
    }
    let guideline = best.guideline()?;
    let min_segments = best.model.config.text_kernel;
    let refinements = rt.session.map(test, |s| {
        rt.session.refine_text(guideline, &s.segments, rt.policy, min_segments)
    })?;
    let mut samples: Vec<MultiModalSample> = test.to_vec();
    for (s, r) in samples.iter_mut().zip(refinements) {
        s.set_segments(r.segments);
    }
    rt.embed(&mut samples)?;

    let truth = truths(&samples)?;
    let predictions = predict_all(rt, &best.model, &samples, fusion.omega, modality)?;
    let classes = rt.labels.len();
    let (encoder, llm, fused) = phase_metrics(&predictions, &truth, fusion.alpha, classes)?;
    let records = samples
        .into_iter()
        .zip(predictions)
        .zip(truth)
        .map(|((s, p), t)| {
            let fused = fuse_predictions(&p.encoder, p.llm.class, fusion.alpha);
            TestRecord {
                id: s.id,
                truth: t,
                segments: s.segments,
                predicted: argmax(&fused),
                encoder: p.encoder,
                llm: p.llm,
                fused,
                explanation: p.explanation,
            }
        })
        .collect();
    Ok(TestOutcome {
        alpha: fusion.alpha,
        encoder,
        llm,
        fused,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{AgentConfig, AgentSession};
    use crate::pipeline::fixture::{cleaning, fixture, identity, script};
    use crate::pipeline::{load_checkpoint, run_loop, save_checkpoint, Checkpoint, LoopState};

    #[test]
    fn identity_refinement_matches_the_plain_baseline() {
        let f = fixture(40, 0.0);
        let client = script(identity());
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let rt = f.runtime(&s);
        let (train, val, test) = (&f.splits.train, &f.splits.val, &f.splits.test);
        let state = LoopState::initial(train, val, 1).unwrap();
        let (state, _) = run_loop(state, &f.config, &rt, train, val, |_, _| Ok(())).unwrap();
        let best = state.best.as_ref().unwrap();
        let out = test_phase(Some(best), test, &rt, &best.fusion, f.config.explanation_modality).unwrap();
        assert_eq!(out.records.len(), test.len());

        let mut plain = test.clone();
        rt.embed(&mut plain).unwrap();
        let baseline = predict_all(&rt, &best.model, &plain, best.fusion.omega, f.config.explanation_modality).unwrap();
        for ((r, b), s) in out.records.iter().zip(&baseline).zip(test) {
            assert_eq!(r.segments, s.segments);
            assert_eq!((&r.encoder, &r.llm), (&b.encoder, &b.llm));
        }
    }

    #[test]
    fn alpha_one_reproduces_encoder_metrics() {
        let f = fixture(40, 0.3);
        let client = script(cleaning());
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let rt = f.runtime(&s);
        let (train, val) = (&f.splits.train, &f.splits.val);
        let state = LoopState::initial(train, val, 1).unwrap();
        let (state, _) = run_loop(state, &f.config, &rt, train, val, |_, _| Ok(())).unwrap();
        let fusion = FusionConfig { alpha: 1.0, omega: 3 };
        let out = test_phase(state.best.as_ref(), &f.splits.test, &rt, &fusion, Modality::Text).unwrap();
        assert_eq!(out.fused, out.encoder);
        assert!(out.records.iter().all(|r| r.fused == r.encoder));
    }

    #[test]
    fn missing_best_state_is_a_contract_error() {
        let f = fixture(40, 0.0);
        let client = script(identity());
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let err = test_phase(None, &f.splits.test, &f.runtime(&s), &FusionConfig::default(), Modality::Text)
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        assert_eq!(client.calls(), 0);
    }

    #[test]
    fn reloaded_checkpoint_gives_identical_test_outputs() {
        let f = fixture(40, 0.3);
        let client = script(cleaning());
        let s = AgentSession::new(&client, AgentConfig::default()).unwrap();
        let rt = f.runtime(&s);
        let (train, val, test) = (&f.splits.train, &f.splits.val, &f.splits.test);
        let state = LoopState::initial(train, val, 2).unwrap();
        let (state, _) = run_loop(state, &f.config, &rt, train, val, |_, _| Ok(())).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let cp = Checkpoint {
            config: f.config.clone(),
            state,
        };
        save_checkpoint(&path, &cp).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, cp);

        let run = |cp: &Checkpoint| {
            let best = cp.state.best.as_ref().unwrap();
            test_phase(Some(best), test, &rt, &best.fusion, cp.config.explanation_modality).unwrap()
        };
        let (a, b) = (run(&cp), run(&back));
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
