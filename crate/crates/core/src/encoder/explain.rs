use serde::{Deserialize, Serialize};

use crate::data::MultiModalSample;
use crate::encoder::model::{prototype_similarities, EncoderModel, Modality, SegmentContent};
use crate::error::{Error, Result};

/// One prototype–segment match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplanationItem {
    pub class: usize,
    /// Prototype index within its class.
    pub prototype: usize,
    pub prototype_sample: String,
    pub prototype_content: SegmentContent,
    pub segment: usize,
    pub segment_content: SegmentContent,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub sample_id: String,
    pub modality: Modality,
    pub items: Vec<ExplanationItem>,
}

/// The `omega` highest-similarity prototype–segment pairs of one modality,
/// best first. Ties go to the smaller class, then prototype, then segment.
pub fn explain(
    sample: &MultiModalSample,
    model: &EncoderModel,
    omega: usize,
    modality: Modality,
) -> Result<Explanation> {
    let Some(provenance) = &model.provenance else {
        return Err(Error::Contract("explanations require a projected model".into()));
    };
    if omega == 0 {
        return Err(Error::InvalidInput("omega must be ≥ 1".into()));
    }
    let z = match modality {
        Modality::Time => model.encode_time(&sample.series_tensor()?)?,
        Modality::Text => model.encode_text(sample.embeddings()?)?,
    };
    let sims = prototype_similarities(&z, model.prototypes(modality))?;
    let per_class = model.prototypes_per_class(modality);
    let offset = match modality {
        Modality::Time => 0,
        Modality::Text => model.config.total_time_prototypes(),
    };
    let (m, s) = (sims.full.rows(), sims.full.cols());
    let mut pairs: Vec<(usize, usize, f64)> = (0..m)
        .flat_map(|i| (0..s).map(move |j| (i, j)))
        .map(|(i, j)| (i, j, sims.full.at(i, j)))
        .collect();
    // row index order already equals (class, prototype) order
    pairs.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    let width = model.kernel_width(modality);
    let items = pairs
        .into_iter()
        .take(omega)
        .map(|(i, j, score)| {
            let prov = &provenance[offset + i];
            ExplanationItem {
                class: i / per_class,
                prototype: i % per_class,
                prototype_sample: prov.sample_id.clone(),
                prototype_content: prov.content.clone(),
                segment: j,
                segment_content: SegmentContent::of(sample, modality, j, width),
                score,
            }
        })
        .collect();
    Ok(Explanation {
        sample_id: sample.id.clone(),
        modality,
        items,
    })
}
