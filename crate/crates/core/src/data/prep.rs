use crate::data::sample::{DatasetManifest, MultiModalSample, NormalizationStats, Split, SplitRatios, Splits};
use crate::error::{Error, Result};
use crate::numerics::SeededRng;

const STD_FLOOR: f64 = 1e-8;

/// Tags every sample with a split.
///
/// When every sample carries a timestamp the split is chronological (train
/// precedes validation precedes test); otherwise the order is a seeded
/// shuffle. Validation and test get `⌊ratio · n⌋` samples, training gets the
/// remainder. Input order is preserved in the output.
pub fn split_dataset(
    mut samples: Vec<MultiModalSample>,
    ratios: SplitRatios,
    seed: u64,
) -> Result<Vec<MultiModalSample>> {
    ratios.validate()?;
    let n = samples.len();
    let n_val = (ratios.val * n as f64 + 1e-9).floor() as usize;
    let n_test = (ratios.test * n as f64 + 1e-9).floor() as usize;
    let n_train = n.saturating_sub(n_val + n_test);
    for (name, size) in [("train", n_train), ("val", n_val), ("test", n_test)] {
        if size == 0 {
            return Err(Error::InvalidInput(format!(
                "split `{name}` would be empty for {n} samples with ratios {ratios:?}"
            )));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    if samples.iter().all(|s| s.timestamp.is_some()) {
        order.sort_by(|&a, &b| {
            samples[a]
                .timestamp
                .cmp(&samples[b].timestamp)
                .then_with(|| samples[a].id.cmp(&samples[b].id))
        });
    } else {
        SeededRng::derived(seed, "split").shuffle(&mut order);
    }
    for (rank, &idx) in order.iter().enumerate() {
        samples[idx].split = Some(if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        });
    }
    Ok(samples)
}

/// Per-channel mean and population standard deviation over the given
/// (training) samples. Only the series are read.
pub fn fit_normalization(train: &[MultiModalSample]) -> Result<NormalizationStats> {
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidInput("cannot fit normalization on zero samples".into()))?;
    let channels = first.series.len();
    let mut mean = vec![0.0; channels];
    let mut std = vec![0.0; channels];
    for ch in 0..channels {
        let values: Vec<f64> = train.iter().flat_map(|s| s.series[ch].iter().copied()).collect();
        let count = values.len() as f64;
        let m = values.iter().sum::<f64>() / count;
        let var = values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / count;
        mean[ch] = m;
        std[ch] = var.sqrt();
    }
    Ok(NormalizationStats { mean, std })
}

/// Z-scores every channel with the given statistics. Channels whose standard
/// deviation is below `1e-8` are only centered.
pub fn normalize(samples: &mut [MultiModalSample], stats: &NormalizationStats) {
    for s in samples {
        for (ch, values) in s.series.iter_mut().enumerate() {
            let (m, sd) = (stats.mean[ch], stats.std[ch]);
            for v in values.iter_mut() {
                *v = if sd < STD_FLOOR { *v - m } else { (*v - m) / sd };
            }
        }
    }
}

/// Tags untagged samples with `manifest.split_ratios`, then fits
/// normalization on the training split and applies it everywhere. Samples
/// that already carry split tags keep them; a mix of tagged and untagged
/// samples is rejected.
pub fn prepare_splits(
    manifest: &DatasetManifest,
    samples: Vec<MultiModalSample>,
    seed: u64,
) -> Result<(DatasetManifest, Splits)> {
    let tagged = samples.iter().filter(|s| s.split.is_some()).count();
    let samples = match tagged {
        0 => split_dataset(samples, manifest.split_ratios, seed)?,
        n if n == samples.len() => samples,
        n => {
            return Err(Error::InvalidInput(format!(
                "{n} of {} samples carry a split tag; tag all or none",
                samples.len()
            )))
        }
    };
    let mut splits = Splits::from_tagged(samples)?;
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(Error::InvalidInput("training and validation splits must be non-empty".into()));
    }
    let stats = fit_normalization(&splits.train)?;
    for part in [&mut splits.train, &mut splits.val, &mut splits.test] {
        normalize(part, &stats);
    }
    let mut manifest = manifest.clone();
    manifest.normalization = Some(stats);
    Ok((manifest, splits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::sample::Target;

    fn sample(i: usize, ts: Option<i64>) -> MultiModalSample {
        MultiModalSample {
            id: format!("s{i:03}"),
            timestamp: ts,
            series: vec![vec![i as f64, 2.0 * i as f64], vec![5.0, 5.0]],
            segments: vec!["x.".into()],
            label: Target::Class(i % 2),
            split: None,
            embeddings: None,
        }
    }

    fn sizes(samples: &[MultiModalSample]) -> (usize, usize, usize) {
        let count = |s: Split| samples.iter().filter(|x| x.split == Some(s)).count();
        (count(Split::Train), count(Split::Val), count(Split::Test))
    }

    #[test]
    fn six_two_two_on_ten() {
        let samples: Vec<_> = (0..10).map(|i| sample(i, None)).collect();
        let out = split_dataset(samples, SplitRatios::default(), 3).unwrap();
        assert_eq!(sizes(&out), (6, 2, 2));
    }

    #[test]
    fn remainder_goes_to_train() {
        let samples: Vec<_> = (0..13).map(|i| sample(i, None)).collect();
        let out = split_dataset(samples, SplitRatios::default(), 3).unwrap();
        assert_eq!(sizes(&out), (9, 2, 2));
    }

    #[test]
    fn timestamped_split_is_chronological() {
        let samples: Vec<_> = (0..20).rev().map(|i| sample(i, Some(i as i64 * 10))).collect();
        let out = split_dataset(samples, SplitRatios::default(), 0).unwrap();
        let max_ts = |s: Split| out.iter().filter(|x| x.split == Some(s)).filter_map(|x| x.timestamp).max().unwrap();
        let min_ts = |s: Split| out.iter().filter(|x| x.split == Some(s)).filter_map(|x| x.timestamp).min().unwrap();
        assert!(max_ts(Split::Train) <= min_ts(Split::Val));
        assert!(max_ts(Split::Val) <= min_ts(Split::Test));
    }

    #[test]
    fn same_seed_same_assignment() {
        let make = || (0..30).map(|i| sample(i, None)).collect::<Vec<_>>();
        let a = split_dataset(make(), SplitRatios::default(), 9).unwrap();
        let b = split_dataset(make(), SplitRatios::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_split_is_an_error() {
        let samples: Vec<_> = (0..3).map(|i| sample(i, None)).collect();
        assert!(split_dataset(samples, SplitRatios::default(), 0).is_err());
    }

    #[test]
    fn constant_channel_is_centered() {
        let mut samples: Vec<_> = (0..4).map(|i| sample(i, None)).collect();
        let stats = fit_normalization(&samples).unwrap();
        normalize(&mut samples, &stats);
        assert!(samples.iter().all(|s| s.series[1].iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn standardized_channel_is_unchanged() {
        let mut samples: Vec<_> = (0..4).map(|i| sample(i, None)).collect();
        let stats = fit_normalization(&samples).unwrap();
        normalize(&mut samples, &stats);
        let before = samples.clone();
        let again = fit_normalization(&samples).unwrap();
        normalize(&mut samples, &again);
        for (a, b) in before.iter().zip(&samples) {
            for (x, y) in a.series[0].iter().zip(&b.series[0]) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn validation_uses_training_statistics() {
        let train: Vec<_> = (0..4).map(|i| sample(i, None)).collect();
        let stats = fit_normalization(&train).unwrap();
        let mut val = vec![sample(10, None)];
        normalize(&mut val, &stats);
        let expected = (10.0 - stats.mean[0]) / stats.std[0];
        assert_eq!(val[0].series[0][0], expected);
        let own = fit_normalization(&[sample(10, None)]).unwrap();
        assert_ne!(own.mean[0], stats.mean[0]);
    }

    #[test]
    fn prepare_keeps_existing_tags_and_rejects_a_mix() {
        let manifest = crate::data::synth::synthesize_dataset(&crate::data::SyntheticSpec {
            num_samples: 10,
            ..Default::default()
        })
        .unwrap()
        .0;
        let untagged: Vec<_> = (0..10).map(|i| sample(i, Some(i as i64))).collect();
        let (m, splits) = prepare_splits(&manifest, untagged.clone(), 1).unwrap();
        assert!(m.normalization.is_some());
        assert_eq!((splits.train.len(), splits.val.len(), splits.test.len()), (6, 2, 2));

        let mut mixed = untagged;
        mixed[0].split = Some(Split::Test);
        assert!(prepare_splits(&manifest, mixed, 1).is_err());
    }

    #[test]
    fn labels_do_not_affect_normalization() {
        let train: Vec<_> = (0..4).map(|i| sample(i, None)).collect();
        let mut poisoned = train.clone();
        for s in &mut poisoned {
            s.label = Target::Class(99);
        }
        assert_eq!(fit_normalization(&train).unwrap(), fit_normalization(&poisoned).unwrap());
    }
}
