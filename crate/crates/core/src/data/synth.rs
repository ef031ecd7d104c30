//! Synthetic planted-motif datasets.
//!
//! Each sample's series is Gaussian noise with one class motif injected at a
//! random offset. Its text is a run of filler sentences, each mentioning the
//! sample's hint class through an indicator token. With probability
//! `hint_corruption_rate` the hint class is redrawn uniformly over all
//! classes. Whenever corruption is enabled, every text ends with a revision
//! note `outlook <marker> from <a> to <b>.` whose target `<b>` is the true
//! class and whose source `<a>` is the hinted class for corrupted texts and a
//! random other class otherwise. As a bag of words the note reads the same
//! in both directions, so only an order-aware reader can use it. Noise tokens
//! are sprinkled into sentences at `noise_token_rate`.

use serde::{Deserialize, Serialize};

use crate::data::embed::tokenize;
use crate::data::sample::{DatasetManifest, MultiModalSample, SplitRatios, Target, Task};
use crate::data::segment::SegmentationPolicy;
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

pub const FILLER_WORDS: &[&str] = &[
    "the", "report", "notes", "conditions", "across", "region", "observed", "during", "period",
    "levels", "remain", "within", "usual", "range", "recent", "update", "mentions", "local",
    "activity", "readings", "station", "summary", "overall", "pattern", "measured", "values",
    "continue", "as", "expected", "today",
];

pub const NOISE_TOKENS: &[&str] = &["zzq", "qxv", "vkj", "jjx", "xqz"];

/// Regression variant: one motif whose amplitude drives the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionSynth {
    pub slope: f64,
    pub intercept: f64,
    pub noise_std: f64,
    pub amplitude_min: f64,
    pub amplitude_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub num_samples: usize,
    pub channels: usize,
    pub time_steps: usize,
    pub class_names: Vec<String>,
    /// Per class, a bank of motif templates. Generated when empty.
    pub motif_bank: Vec<Vec<Vec<f64>>>,
    pub motif_length: usize,
    pub motif_amplitude: f64,
    pub noise_amplitude: f64,
    /// Per class, indicator tokens. Generated from class names when empty.
    pub vocabulary: Vec<Vec<String>>,
    pub segments_per_sample: usize,
    pub noise_token_rate: f64,
    pub hint_corruption_rate: f64,
    /// Marker word of the revision note.
    pub revision_marker: String,
    pub timestamps: bool,
    pub regression: Option<RegressionSynth>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            num_samples: 600,
            channels: 1,
            time_steps: 48,
            class_names: vec!["down".into(), "up".into()],
            motif_bank: Vec::new(),
            motif_length: 12,
            motif_amplitude: 2.0,
            noise_amplitude: 1.0,
            vocabulary: Vec::new(),
            segments_per_sample: 6,
            noise_token_rate: 0.2,
            hint_corruption_rate: 0.0,
            revision_marker: "revised".into(),
            timestamps: true,
            regression: None,
        }
    }
}

impl SyntheticSpec {
    pub fn num_classes(&self) -> usize {
        if self.regression.is_some() {
            1
        } else {
            self.class_names.len()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_samples == 0 || self.channels == 0 || self.time_steps == 0 {
            return bad("sample count, channels and time steps must be ≥ 1".into());
        }
        if self.class_names.is_empty() {
            return bad("at least one class name is required".into());
        }
        if self.motif_length == 0 || self.motif_length > self.time_steps {
            return bad(format!(
                "motif length {} must be in 1..={}",
                self.motif_length, self.time_steps
            ));
        }
        for bank in &self.motif_bank {
            if let Some(m) = bank.iter().find(|m| m.len() > self.time_steps || m.is_empty()) {
                return bad(format!("motif of length {} does not fit T={}", m.len(), self.time_steps));
            }
        }
        for (name, r) in [
            ("noise_token_rate", self.noise_token_rate),
            ("hint_corruption_rate", self.hint_corruption_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{name} = {r} is outside [0, 1]"));
            }
        }
        if self.segments_per_sample < 2 {
            return bad("need at least two segments per sample".into());
        }
        Ok(())
    }

    pub fn motifs(&self) -> Vec<Vec<Vec<f64>>> {
        if !self.motif_bank.is_empty() {
            return self.motif_bank.clone();
        }
        let m = self.motif_length;
        (0..self.num_classes())
            .map(|c| {
                let freq = (c + 1) as f64;
                let template = (0..m)
                    .map(|t| {
                        let u = (t as f64 + 0.5) / m as f64;
                        (std::f64::consts::PI * freq * u).sin()
                    })
                    .collect();
                vec![template]
            })
            .collect()
    }

    pub fn class_vocabulary(&self) -> Vec<Vec<String>> {
        if !self.vocabulary.is_empty() {
            return self.vocabulary.clone();
        }
        self.class_names
            .iter()
            .map(|n| vec![format!("signal_{}", n.to_lowercase())])
            .collect()
    }
}

/// Builds the dataset described by `spec`. Class labels are balanced within
/// one sample across classes.
pub fn synthesize_dataset(spec: &SyntheticSpec) -> Result<(DatasetManifest, Vec<MultiModalSample>)> {
    spec.validate()?;
    let c = spec.num_classes();
    let motifs = spec.motifs();
    if motifs.len() < c {
        return Err(Error::InvalidConfig(format!("motif bank has {} classes, need {c}", motifs.len())));
    }
    let vocab = spec.class_vocabulary();
    if vocab.len() < spec.class_names.len() || vocab.iter().any(Vec::is_empty) {
        return Err(Error::InvalidConfig("every class needs at least one indicator token".into()));
    }
    let mut rng = SeededRng::derived(spec.seed, "synth");

    let mut labels: Vec<usize> = (0..spec.num_samples).map(|i| i % c).collect();
    rng.shuffle(&mut labels);

    let mut samples = Vec::with_capacity(spec.num_samples);
    for (i, &class) in labels.iter().enumerate() {
        let bank = &motifs[class];
        let motif = &bank[rng.below(bank.len())];
        let (amplitude, label) = match &spec.regression {
            Some(r) => {
                let amp = rng.uniform_range(r.amplitude_min, r.amplitude_max);
                let y = r.slope * amp + r.intercept + r.noise_std * rng.gaussian();
                (amp, Target::Value(y))
            }
            None => (spec.motif_amplitude, Target::Class(class)),
        };
        let offset = rng.below(spec.time_steps - motif.len() + 1);
        let series = (0..spec.channels)
            .map(|_| {
                let mut ch: Vec<f64> = (0..spec.time_steps)
                    .map(|_| spec.noise_amplitude * rng.gaussian())
                    .collect();
                for (t, m) in motif.iter().enumerate() {
                    ch[offset + t] += amplitude * m;
                }
                ch
            })
            .collect();
        let segments = if spec.regression.is_some() {
            filler_text(&mut rng, spec, None)
        } else {
            let hint_class = if rng.bernoulli(spec.hint_corruption_rate) {
                rng.below(spec.class_names.len())
            } else {
                class
            };
            let mut segs = filler_text(&mut rng, spec, Some(&vocab[hint_class]));
            let n_classes = spec.class_names.len();
            if spec.hint_corruption_rate > 0.0 && n_classes > 1 {
                let source = if hint_class != class {
                    hint_class
                } else {
                    (class + 1 + rng.below(n_classes - 1)) % n_classes
                };
                let pick = |rng: &mut SeededRng, c: usize| vocab[c][rng.below(vocab[c].len())].clone();
                let (from, to) = (pick(&mut rng, source), pick(&mut rng, class));
                let last = segs.len() - 1;
                segs[last] = format!("outlook {} from {from} to {to}.", spec.revision_marker);
            }
            segs
        };
        samples.push(MultiModalSample {
            id: format!("s{i:05}"),
            timestamp: spec.timestamps.then_some(i as i64),
            series,
            segments,
            label,
            split: None,
            embeddings: None,
        });
    }

    let manifest = DatasetManifest {
        label_names: if spec.regression.is_some() {
            vec!["value".into()]
        } else {
            spec.class_names.clone()
        },
        channels: spec.channels,
        time_steps: spec.time_steps,
        task: if spec.regression.is_some() {
            Task::Regression
        } else {
            Task::Classification
        },
        segmentation: SegmentationPolicy::Sentence,
        split_ratios: SplitRatios::default(),
        normalization: None,
    };
    Ok((manifest, samples))
}

fn filler_text(rng: &mut SeededRng, spec: &SyntheticSpec, hint: Option<&[String]>) -> Vec<String> {
    (0..spec.segments_per_sample)
        .map(|_| {
            let n_words = 3 + rng.below(3);
            let mut words: Vec<String> = (0..n_words)
                .map(|_| FILLER_WORDS[rng.below(FILLER_WORDS.len())].to_string())
                .collect();
            if let Some(tokens) = hint {
                let pos = rng.below(words.len() + 1);
                words.insert(pos, tokens[rng.below(tokens.len())].clone());
            }
            if rng.bernoulli(spec.noise_token_rate) {
                let pos = rng.below(words.len() + 1);
                words.insert(pos, NOISE_TOKENS[rng.below(NOISE_TOKENS.len())].to_string());
            }
            format!("{}.", words.join(" "))
        })
        .collect()
}

/// Class whose indicator tokens occur most often in the text (ties to the
/// smallest class index); `None` when no indicator token occurs.
pub fn majority_token_class(segments: &[String], vocabulary: &[Vec<String>]) -> Option<usize> {
    let mut counts = vec![0usize; vocabulary.len()];
    for seg in segments {
        for tok in tokenize(seg) {
            for (c, words) in vocabulary.iter().enumerate() {
                if words.iter().any(|w| w.eq_ignore_ascii_case(&tok)) {
                    counts[c] += 1;
                }
            }
        }
    }
    let best = counts.iter().copied().max()?;
    (best > 0).then(|| counts.iter().position(|&n| n == best).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_dataset() {
        let spec = SyntheticSpec {
            num_samples: 40,
            ..Default::default()
        };
        let a = synthesize_dataset(&spec).unwrap();
        let b = synthesize_dataset(&spec).unwrap();
        assert_eq!(serde_json::to_string(&a.1).unwrap(), serde_json::to_string(&b.1).unwrap());
    }

    #[test]
    fn classes_balanced_within_one() {
        let spec = SyntheticSpec {
            num_samples: 101,
            class_names: vec!["a".into(), "b".into(), "c".into()],
            ..Default::default()
        };
        let (_, samples) = synthesize_dataset(&spec).unwrap();
        let mut counts = [0usize; 3];
        for s in &samples {
            counts[s.label.class().unwrap()] += 1;
        }
        assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
    }

    #[test]
    fn clean_hints_give_perfect_token_classifier() {
        let spec = SyntheticSpec {
            num_samples: 200,
            noise_token_rate: 0.0,
            hint_corruption_rate: 0.0,
            ..Default::default()
        };
        let (_, samples) = synthesize_dataset(&spec).unwrap();
        let vocab = spec.class_vocabulary();
        assert!(samples
            .iter()
            .all(|s| majority_token_class(&s.segments, &vocab) == s.label.class()));
    }

    #[test]
    fn motif_longer_than_series_is_rejected() {
        let spec = SyntheticSpec {
            motif_length: 60,
            ..Default::default()
        };
        assert!(matches!(synthesize_dataset(&spec), Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn revision_note_names_the_true_class() {
        let spec = SyntheticSpec {
            num_samples: 300,
            hint_corruption_rate: 0.5,
            ..Default::default()
        };
        let (_, samples) = synthesize_dataset(&spec).unwrap();
        let vocab = spec.class_vocabulary();
        let mut wrong = 0;
        for s in &samples {
            let note = s.segments.last().unwrap();
            assert!(note.contains(" revised from "), "{note}");
            let target = note.trim_end_matches('.').rsplit(' ').next().unwrap();
            assert_eq!(target, vocab[s.label.class().unwrap()][0]);
            if majority_token_class(&s.segments, &vocab) != s.label.class() {
                wrong += 1;
            }
        }
        // expected rate r·(C−1)/C = 0.25
        assert!((50..100).contains(&wrong), "{wrong}");
    }

    #[test]
    fn revision_note_is_direction_free_as_a_bag_of_words() {
        let spec = SyntheticSpec {
            num_samples: 200,
            hint_corruption_rate: 1.0,
            ..Default::default()
        };
        let (_, samples) = synthesize_dataset(&spec).unwrap();
        let bag = |s: &str| {
            let mut t = tokenize(s);
            t.sort();
            t
        };
        let notes: std::collections::BTreeSet<_> =
            samples.iter().map(|s| bag(s.segments.last().unwrap())).collect();
        assert_eq!(notes.len(), 1);
    }

    #[test]
    fn clean_data_has_no_revision_note() {
        let (_, samples) = synthesize_dataset(&SyntheticSpec::default()).unwrap();
        assert!(samples.iter().all(|s| s.segments.iter().all(|g| !g.contains("revised"))));
    }

    #[test]
    fn regression_targets_follow_amplitude() {
        let spec = SyntheticSpec {
            num_samples: 50,
            regression: Some(RegressionSynth {
                slope: 2.0,
                intercept: 1.0,
                noise_std: 0.0,
                amplitude_min: 1.0,
                amplitude_max: 3.0,
            }),
            ..Default::default()
        };
        let (manifest, samples) = synthesize_dataset(&spec).unwrap();
        assert_eq!(manifest.task, Task::Regression);
        for s in &samples {
            let y = s.label.value().unwrap();
            assert!((3.0..=7.0).contains(&y));
        }
    }
}
