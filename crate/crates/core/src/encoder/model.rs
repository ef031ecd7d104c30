use serde::{Deserialize, Serialize};

use crate::data::MultiModalSample;
use crate::encoder::config::EncoderConfig;
use crate::error::{Error, Result};
use crate::numerics::{conv1d_relu, pairwise_sq_dist, softmax, SeededRng, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Time,
    Text,
}

impl std::fmt::Display for Modality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Modality::Time => "time",
            Modality::Text => "text",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "time" => Ok(Modality::Time),
            "text" => Ok(Modality::Text),
            other => Err(Error::InvalidInput(format!("unknown modality `{other}`"))),
        }
    }
}

/// Human-readable content of one segment: a series window (`N × w`) or the
/// raw text segments covered by a text window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegmentContent {
    Series(Vec<Vec<f64>>),
    Text(Vec<String>),
}

impl SegmentContent {
    pub fn of(sample: &MultiModalSample, modality: Modality, start: usize, width: usize) -> Self {
        match modality {
            Modality::Time => SegmentContent::Series(
                sample.series.iter().map(|ch| ch[start..start + width].to_vec()).collect(),
            ),
            Modality::Text => SegmentContent::Text(sample.segments[start..start + width].to_vec()),
        }
    }

    pub fn render(&self) -> String {
        match self {
            SegmentContent::Text(parts) => parts.join(" "),
            SegmentContent::Series(channels) => channels
                .iter()
                .map(|ch| {
                    let vals: Vec<String> = ch.iter().map(|v| format!("{v:.3}")).collect();
                    format!("[{}]", vals.join(", "))
                })
                .collect::<Vec<_>>()
                .join(" "),
        }
    }
}

/// Training segment a projected prototype was copied from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub modality: Modality,
    pub class: usize,
    pub sample_id: String,
    pub segment: usize,
    pub content: SegmentContent,
}

/// Every trainable array. Prototype matrices hold one row per prototype,
/// grouped by class: rows `c·k .. (c+1)·k` belong to class `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    /// `h × N × w`.
    pub time_kernels: Tensor,
    pub time_bias: Tensor,
    /// `h′ × d_s × w′`.
    pub text_kernels: Tensor,
    pub text_bias: Tensor,
    /// `kC × h`.
    pub time_prototypes: Tensor,
    /// `k′C × h′`.
    pub text_prototypes: Tensor,
    /// `C × (kC + k′C)`, non-negative.
    pub fusion: Tensor,
    /// Regression head weights (`h`, non-negative) and scalar bias.
    pub head_weight: Option<Tensor>,
    pub head_bias: Option<Tensor>,
}

impl Params {
    pub fn groups(&self) -> Vec<(&'static str, &Tensor)> {
        let mut out = vec![
            ("time_kernels", &self.time_kernels),
            ("time_bias", &self.time_bias),
            ("text_kernels", &self.text_kernels),
            ("text_bias", &self.text_bias),
            ("time_prototypes", &self.time_prototypes),
            ("text_prototypes", &self.text_prototypes),
            ("fusion", &self.fusion),
        ];
        if let (Some(w), Some(b)) = (&self.head_weight, &self.head_bias) {
            out.push(("head_weight", w));
            out.push(("head_bias", b));
        }
        out
    }

    pub fn groups_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut out = vec![
            ("time_kernels", &mut self.time_kernels),
            ("time_bias", &mut self.time_bias),
            ("text_kernels", &mut self.text_kernels),
            ("text_bias", &mut self.text_bias),
            ("time_prototypes", &mut self.time_prototypes),
            ("text_prototypes", &mut self.text_prototypes),
            ("fusion", &mut self.fusion),
        ];
        if let (Some(w), Some(b)) = (&mut self.head_weight, &mut self.head_bias) {
            out.push(("head_weight", w));
            out.push(("head_bias", b));
        }
        out
    }

    /// Clamps the fusion matrix and regression head weights to `≥ 0`.
    pub fn clamp_non_negative(&mut self) {
        for v in self.fusion.data_mut() {
            *v = v.max(0.0);
        }
        if let Some(w) = &mut self.head_weight {
            for v in w.data_mut() {
                *v = v.max(0.0);
            }
        }
    }
}

/// Per-prototype similarities of one modality.
#[derive(Debug, Clone, PartialEq)]
pub struct Similarities {
    /// `m × S` with `Sim[i, j] = exp(−‖p_i − z_j‖²)`.
    pub full: Tensor,
    pub maxima: Vec<f64>,
    /// Segment achieving each maximum; the smallest index on ties.
    pub argmax: Vec<usize>,
}

/// Intermediates of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub z_time: Tensor,
    pub z_text: Tensor,
    pub time: Similarities,
    pub text: Similarities,
    pub logits: Vec<f64>,
    pub probabilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub config: EncoderConfig,
    pub params: Params,
    /// Set by projection; time prototypes first, then text prototypes.
    pub provenance: Option<Vec<Provenance>>,
}

/// Class used to group a sample's segments; regression samples all belong
/// to class 0.
pub(crate) fn group_of(sample: &MultiModalSample, config: &EncoderConfig) -> Result<usize> {
    if config.regression.is_some() {
        Ok(0)
    } else {
        let c = sample.class()?;
        if c >= config.classes {
            return Err(Error::InvalidInput(format!(
                "sample `{}` has label {c} outside 0..{}",
                sample.id, config.classes
            )));
        }
        Ok(c)
    }
}

fn gaussian_tensor(rng: &mut SeededRng, shape: &[usize], std: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| std * rng.gaussian()).collect();
    Tensor::new(shape.to_vec(), data).expect("finite gaussian draws")
}

impl EncoderModel {
    /// Seeded initialization. Convolution parameters are drawn from
    /// `N(0, 1/√fan_in)`; each class's prototypes copy distinct random
    /// segment representations of that class's training samples; the fusion
    /// matrix links each prototype to its own class with weight 1.
    pub fn initialize(config: &EncoderConfig, train: &[MultiModalSample]) -> Result<Self> {
        config.validate()?;
        let mut rng = SeededRng::derived(config.seed, "encoder-init");
        let (n, w, h) = (config.channels, config.time_kernel, config.time_features);
        let (ds, w2, h2) = (config.embedding_dim, config.text_kernel, config.text_features);
        let time_std = 1.0 / ((n * w) as f64).sqrt();
        let text_std = 1.0 / ((ds * w2) as f64).sqrt();
        let time_kernels = gaussian_tensor(&mut rng, &[h, n, w], time_std);
        let time_bias = gaussian_tensor(&mut rng, &[h], time_std);
        let text_kernels = gaussian_tensor(&mut rng, &[h2, ds, w2], text_std);
        let text_bias = gaussian_tensor(&mut rng, &[h2], text_std);

        let (c, k, k2) = (config.classes, config.time_prototypes, config.text_prototypes);
        let cols = k * c + k2 * c;
        let mut fusion = vec![0.0; c * cols];
        for class in 0..c {
            for i in 0..k {
                fusion[class * cols + class * k + i] = 1.0;
            }
            for i in 0..k2 {
                fusion[class * cols + k * c + class * k2 + i] = 1.0;
            }
        }

        let (head_weight, head_bias) = if config.regression.is_some() {
            let weight = (0..h).map(|_| rng.gaussian().abs() / (h as f64).sqrt()).collect();
            let targets: Vec<f64> = train.iter().filter_map(|s| s.label.value()).collect();
            let mean = targets.iter().sum::<f64>() / targets.len().max(1) as f64;
            (Some(Tensor::vector(weight)), Some(Tensor::scalar(mean)))
        } else {
            (None, None)
        };

        let mut model = EncoderModel {
            config: config.clone(),
            params: Params {
                time_kernels,
                time_bias,
                text_kernels,
                text_bias,
                time_prototypes: Tensor::zeros(&[k * c, h]),
                text_prototypes: Tensor::zeros(&[k2 * c, h2]),
                fusion: Tensor::new(vec![c, cols], fusion)?,
                head_weight,
                head_bias,
            },
            provenance: None,
        };
        let (time_protos, text_protos) = model.warm_start_prototypes(train, &mut rng)?;
        model.params.time_prototypes = time_protos;
        model.params.text_prototypes = text_protos;
        Ok(model)
    }

    fn warm_start_prototypes(
        &self,
        train: &[MultiModalSample],
        rng: &mut SeededRng,
    ) -> Result<(Tensor, Tensor)> {
        let cfg = &self.config;
        let mut reps: Vec<(usize, Tensor, Tensor)> = Vec::with_capacity(train.len());
        for s in train {
            let group = group_of(s, cfg)?;
            let zt = self.encode_time(&s.series_tensor()?)?;
            let zs = self.encode_text(s.embeddings()?)?;
            reps.push((group, zt, zs));
        }
        let mut time = Vec::with_capacity(cfg.total_time_prototypes() * cfg.time_features);
        let mut text = Vec::with_capacity(cfg.total_text_prototypes() * cfg.text_features);
        for class in 0..cfg.classes {
            let own: Vec<&(usize, Tensor, Tensor)> = reps.iter().filter(|r| r.0 == class).collect();
            if own.is_empty() {
                return Err(Error::Projection { class });
            }
            for (modality, count, out) in [
                (Modality::Time, cfg.time_prototypes, &mut time),
                (Modality::Text, cfg.text_prototypes, &mut text),
            ] {
                let z = |r: &(usize, Tensor, Tensor)| -> Tensor {
                    match modality {
                        Modality::Time => r.1.clone(),
                        Modality::Text => r.2.clone(),
                    }
                };
                let mut candidates: Vec<(usize, usize)> = own
                    .iter()
                    .enumerate()
                    .flat_map(|(si, r)| (0..z(r).cols()).map(move |j| (si, j)))
                    .collect();
                rng.shuffle(&mut candidates);
                for pick in 0..count {
                    let (si, j) = candidates[pick % candidates.len()];
                    out.extend(z(own[si]).column(j));
                }
            }
        }
        Ok((
            Tensor::new(vec![cfg.total_time_prototypes(), cfg.time_features], time)?,
            Tensor::new(vec![cfg.total_text_prototypes(), cfg.text_features], text)?,
        ))
    }

    /// `Z_time`, `h × (T − w + 1)`.
    pub fn encode_time(&self, x: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        if x.shape() != [cfg.channels, cfg.time_steps] {
            return Err(Error::Shape(format!(
                "series shape {:?}, expected [{}, {}]",
                x.shape(),
                cfg.channels,
                cfg.time_steps
            )));
        }
        conv1d_relu(x, &self.params.time_kernels, &self.params.time_bias)
    }

    /// `Z_text`, `h′ × (L − w′ + 1)`. Texts shorter than the kernel are
    /// rejected.
    pub fn encode_text(&self, embeddings: &Tensor) -> Result<Tensor> {
        let cfg = &self.config;
        if embeddings.shape().len() != 2 || embeddings.rows() != cfg.embedding_dim {
            return Err(Error::Shape(format!(
                "embedding shape {:?}, expected [{}, L]",
                embeddings.shape(),
                cfg.embedding_dim
            )));
        }
        if embeddings.cols() < cfg.text_kernel {
            return Err(Error::InvalidInput(format!(
                "text has {} segments, fewer than the text kernel width {}",
                embeddings.cols(),
                cfg.text_kernel
            )));
        }
        conv1d_relu(embeddings, &self.params.text_kernels, &self.params.text_bias)
    }

    pub fn prototypes(&self, modality: Modality) -> &Tensor {
        match modality {
            Modality::Time => &self.params.time_prototypes,
            Modality::Text => &self.params.text_prototypes,
        }
    }

    pub fn prototypes_per_class(&self, modality: Modality) -> usize {
        match modality {
            Modality::Time => self.config.time_prototypes,
            Modality::Text => self.config.text_prototypes,
        }
    }

    pub fn kernel_width(&self, modality: Modality) -> usize {
        match modality {
            Modality::Time => self.config.time_kernel,
            Modality::Text => self.config.text_kernel,
        }
    }

    pub fn forward(&self, sample: &MultiModalSample) -> Result<ForwardTrace> {
        let z_time = self.encode_time(&sample.series_tensor()?)?;
        let z_text = self.encode_text(sample.embeddings()?)?;
        let time = prototype_similarities(&z_time, &self.params.time_prototypes)?;
        let text = prototype_similarities(&z_text, &self.params.text_prototypes)?;
        let (logits, probabilities) = classify_logits(&time.maxima, &text.maxima, &self.params.fusion)?;
        Ok(ForwardTrace {
            z_time,
            z_text,
            time,
            text,
            logits,
            probabilities,
        })
    }

    /// Encoder class probabilities `ŷ_enc`.
    pub fn predict_proba(&self, sample: &MultiModalSample) -> Result<Vec<f64>> {
        Ok(self.forward(sample)?.probabilities)
    }

    pub fn is_projected(&self) -> bool {
        self.provenance.is_some()
    }
}

pub fn prototype_similarities(z: &Tensor, prototypes: &Tensor) -> Result<Similarities> {
    if prototypes.shape().len() != 2 || z.shape().len() != 2 || prototypes.cols() != z.rows() {
        return Err(Error::Shape(format!(
            "prototypes {:?} vs representations {:?}",
            prototypes.shape(),
            z.shape()
        )));
    }
    let d = pairwise_sq_dist(prototypes, z);
    let (m, s) = (d.rows(), d.cols());
    let sims: Vec<f64> = d.data().iter().map(|v| (-v).exp()).collect();
    let mut maxima = Vec::with_capacity(m);
    let mut argmax = Vec::with_capacity(m);
    for i in 0..m {
        let row = &sims[i * s..(i + 1) * s];
        let j = crate::numerics::argmax(row);
        maxima.push(row[j]);
        argmax.push(j);
    }
    Ok(Similarities {
        full: Tensor::new(vec![m, s], sims)?,
        maxima,
        argmax,
    })
}

fn classify_logits(sim_time: &[f64], sim_text: &[f64], fusion: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let width = sim_time.len() + sim_text.len();
    if fusion.shape().len() != 2 || fusion.cols() != width {
        return Err(Error::Shape(format!(
            "fusion matrix {:?} vs {width} similarities",
            fusion.shape()
        )));
    }
    let logits: Vec<f64> = (0..fusion.rows())
        .map(|c| {
            let row = fusion.row(c);
            row.iter().zip(sim_time.iter().chain(sim_text)).map(|(w, s)| w * s).sum()
        })
        .collect();
    let probs = softmax(&logits)?;
    Ok((logits, probs))
}

/// `ŷ_enc = softmax(W · [Sim_time ‖ Sim_text])`.
pub fn classify(sim_time: &[f64], sim_text: &[f64], fusion: &Tensor) -> Result<Vec<f64>> {
    Ok(classify_logits(sim_time, sim_text, fusion)?.1)
}
