//! Finite-difference verification of the objective's gradients on random
//! small encoders.

use serde::{Deserialize, Serialize};

use crate::data::{MultiModalSample, Target};
use crate::encoder::config::{EncoderConfig, RegressionConfig, RegressionLoss};
use crate::encoder::loss::{loss_and_gradients, loss_total};
use crate::encoder::model::EncoderModel;
use crate::error::{Error, Result};
use crate::numerics::finite_diff::{central_differences, relative_error, ABS_TOLERANCE};
use crate::numerics::{SeededRng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub seed: u64,
    /// Random classification configurations.
    pub cases: usize,
    /// Random regression configurations.
    pub regression_cases: usize,
    pub step: f64,
    /// Maximum relative error; differences below an absolute `1e-6` pass.
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            cases: 20,
            regression_cases: 6,
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

/// Outcome for one parameter group of one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub case: usize,
    pub regression: bool,
    pub group: String,
    pub coordinates: usize,
    /// Coordinates whose probe straddled a relu, min/max or hinge kink.
    pub skipped: usize,
    /// Over coordinates whose gradient magnitude exceeds the absolute floor.
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub groups: Vec<GroupCheck>,
    pub passed: bool,
}

/// A random configuration within `C ∈ {2, 3}`, `N ≤ 3`, `T ≤ 16`,
/// `k, k′ ≤ 3`, together with a batch containing every class.
pub fn random_case(rng: &mut SeededRng, regression: Option<RegressionLoss>) -> (EncoderConfig, Vec<MultiModalSample>) {
    let classes = if regression.is_some() { 1 } else { 2 + rng.below(2) };
    let time_steps = 6 + rng.below(11);
    let segments = 2 + rng.below(3);
    let config = EncoderConfig {
        classes,
        channels: 1 + rng.below(3),
        time_steps,
        embedding_dim: 3 + rng.below(4),
        time_kernel: 2 + rng.below(3),
        time_features: 2 + rng.below(3),
        text_kernel: 1 + rng.below(2),
        text_features: 2 + rng.below(3),
        time_prototypes: 1 + rng.below(3),
        text_prototypes: 1 + rng.below(3),
        lambda_clustering: rng.uniform_range(0.05, 0.5),
        lambda_evidencing: rng.uniform_range(0.05, 0.5),
        lambda_diversity: rng.uniform_range(0.05, 0.5),
        d_min_time: rng.uniform_range(0.1, 2.0),
        d_min_text: rng.uniform_range(0.1, 2.0),
        seed: rng.below(1 << 30) as u64,
        regression: regression.map(|loss| RegressionConfig { loss }),
        ..Default::default()
    };
    let batch = (0..2 * classes + 1)
        .map(|i| {
            let series = (0..config.channels)
                .map(|_| (0..time_steps).map(|_| rng.gaussian()).collect())
                .collect();
            let emb: Vec<f64> = (0..config.embedding_dim * segments).map(|_| rng.gaussian()).collect();
            MultiModalSample {
                id: format!("g{i}"),
                timestamp: None,
                series,
                segments: (0..segments).map(|j| format!("segment {j}.")).collect(),
                label: match regression {
                    Some(_) => Target::Value(rng.uniform_range(-2.0, 2.0)),
                    None => Target::Class(i % classes),
                },
                split: None,
                embeddings: Some(Tensor::new(vec![config.embedding_dim, segments], emb).expect("finite")),
            }
        })
        .collect();
    (config, batch)
}

/// Moves the model away from its warm start so no prototype sits exactly
/// on a segment and every fusion and head weight is strictly positive.
fn perturb(model: &mut EncoderModel, rng: &mut SeededRng) {
    for t in [&mut model.params.time_prototypes, &mut model.params.text_prototypes] {
        for v in t.data_mut() {
            *v += 0.3 * rng.gaussian();
        }
    }
    for v in model.params.fusion.data_mut() {
        *v = (*v + 0.3 * rng.gaussian()).abs() + 0.05;
    }
    if let Some(w) = &mut model.params.head_weight {
        for v in w.data_mut() {
            *v = v.abs() + 0.05;
        }
    }
}

fn check_case(
    case: usize,
    config: &EncoderConfig,
    batch: &[MultiModalSample],
    settings: &GradcheckConfig,
    rng: &mut SeededRng,
) -> Result<Vec<GroupCheck>> {
    let mut model = EncoderModel::initialize(config, batch)?;
    perturb(&mut model, rng);
    let (_, grads) = loss_and_gradients(batch, &model)?;
    let names: Vec<&'static str> = model.params.groups().iter().map(|(n, _)| *n).collect();
    let mut out = Vec::with_capacity(names.len());
    for (g, name) in names.iter().enumerate() {
        let x = model.params.groups()[g].1.data().to_vec();
        let mut probe_model = model.clone();
        let probes = central_differences(
            |v| {
                probe_model.params.groups_mut()[g].1.data_mut().copy_from_slice(v);
                Ok(loss_total(batch, &probe_model)?.total)
            },
            &x,
            settings.step,
        )?;
        let mut skipped = 0;
        let mut worst: f64 = 0.0;
        let mut passed = true;
        for (probe, &analytic) in probes.iter().zip(grads[g].data()) {
            if probe.straddles_kink() {
                skipped += 1;
                continue;
            }
            let rel = relative_error(analytic, probe.numeric);
            if analytic.abs().max(probe.numeric.abs()) > ABS_TOLERANCE {
                worst = worst.max(rel);
            }
            passed &= rel <= settings.tolerance || (analytic - probe.numeric).abs() <= ABS_TOLERANCE;
        }
        out.push(GroupCheck {
            case,
            regression: config.regression.is_some(),
            group: name.to_string(),
            coordinates: x.len(),
            skipped,
            max_rel_error: worst,
            passed,
        });
    }
    Ok(out)
}

/// Checks every parameter group of `cases` classification and
/// `regression_cases` regression encoders. Half of the regression cases
/// zero the auxiliary loss weights so the objective is the regression
/// term alone.
pub fn run_gradcheck(settings: &GradcheckConfig) -> Result<GradcheckReport> {
    if !(settings.step > 0.0 && settings.tolerance > 0.0) {
        return Err(Error::InvalidConfig("step and tolerance must be > 0".into()));
    }
    let mut rng = SeededRng::derived(settings.seed, "gradcheck");
    let mut groups = Vec::new();
    for case in 0..settings.cases {
        let (config, batch) = random_case(&mut rng, None);
        groups.extend(check_case(case, &config, &batch, settings, &mut rng)?);
    }
    for r in 0..settings.regression_cases {
        let loss = if r % 3 == 2 { RegressionLoss::Mae } else { RegressionLoss::Mse };
        let (mut config, batch) = random_case(&mut rng, Some(loss));
        if r % 2 == 0 {
            config.lambda_clustering = 0.0;
            config.lambda_evidencing = 0.0;
            config.lambda_diversity = 0.0;
        }
        groups.extend(check_case(settings.cases + r, &config, &batch, settings, &mut rng)?);
    }
    let passed = groups.iter().all(|g| g.passed);
    Ok(GradcheckReport { groups, passed })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_cases_respect_the_bounds() {
        let mut rng = SeededRng::new(3);
        for _ in 0..50 {
            let (c, batch) = random_case(&mut rng, None);
            c.validate().unwrap();
            assert!((2..=3).contains(&c.classes) && c.channels <= 3 && c.time_steps <= 16);
            assert!(c.time_prototypes <= 3 && c.text_prototypes <= 3);
            for class in 0..c.classes {
                assert!(batch.iter().any(|s| s.label == Target::Class(class)));
            }
        }
    }

    #[test]
    fn small_run_passes() {
        let report = run_gradcheck(&GradcheckConfig {
            cases: 3,
            regression_cases: 2,
            ..Default::default()
        })
        .unwrap();
        assert!(report.passed, "{:#?}", report.groups.iter().filter(|g| !g.passed).collect::<Vec<_>>());
        assert_eq!(report.groups.iter().filter(|g| g.regression).count(), 2 * 9);
    }

    #[test]
    fn a_wrong_gradient_is_caught() {
        let mut rng = SeededRng::new(5);
        let (config, batch) = random_case(&mut rng, None);
        let mut model = EncoderModel::initialize(&config, &batch).unwrap();
        perturb(&mut model, &mut rng);
        let (_, grads) = loss_and_gradients(&batch, &model).unwrap();
        let x = model.params.fusion.data().to_vec();
        let probes = central_differences(
            |v| {
                let mut m = model.clone();
                m.params.fusion.data_mut().copy_from_slice(v);
                Ok(loss_total(&batch, &m)?.total)
            },
            &x,
            1e-5,
        )
        .unwrap();
        let doubled = 2.0 * grads[6].data()[0];
        assert!(relative_error(doubled, probes[0].numeric) > 0.1);
    }
}
